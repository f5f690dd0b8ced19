#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "metapn/mlp.h"
#include "metapn/propagation.h"

namespace metapn {

struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<double> values;

  bool operator==(const NamedTensor&) const = default;
};

// Layout: "MPN1", then one record per tensor until end of file:
//   u32 name_len | name bytes | u32 rank | u64 dims[rank] | f64 payload
// All integers and floats little-endian.
std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

// Names: theta.<layer>.weight / theta.<layer>.bias, phi.attn / phi.weight.
std::vector<NamedTensor> to_tensors(const MlpParams& theta);
std::vector<NamedTensor> to_tensors(const PropagatorParams& phi);
MlpParams mlp_from_tensors(std::span<const NamedTensor> tensors, double dropout_rate);
PropagatorParams propagator_from_tensors(std::span<const NamedTensor> tensors);

}  // namespace metapn
