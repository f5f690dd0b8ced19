#include "metapn/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "metapn/error.h"

namespace metapn {
namespace {

constexpr char kMagic[4] = {'M', 'P', 'N', '1'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  template <typename T>
  T get_le() {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    need(sizeof(U));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return std::bit_cast<T>(bits);
  }

  std::string get_string(std::size_t len) {
    need(len);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorCode::kMalformedInput, "checkpoint truncated at byte " + std::to_string(pos_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

const NamedTensor& find(std::span<const NamedTensor> tensors, const std::string& name) {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw Error(ErrorCode::kMalformedInput, "checkpoint has no tensor '" + name + "'");
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> tensors) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  for (const auto& t : tensors) {
    std::uint64_t count = 1;
    for (auto d : t.dims) count *= d;
    if (count != t.values.size()) {
      throw Error(ErrorCode::kShapeMismatch, "tensor '" + t.name + "' dims disagree with payload");
    }
    put_le(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put_le(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) put_le(out, d);
    for (double v : t.values) put_le(out, v);
  }
  return out;
}

std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorCode::kMalformedInput, "missing MPN1 magic");
  }
  Reader reader(bytes.subspan(4));
  std::vector<NamedTensor> out;
  while (!reader.done()) {
    NamedTensor t;
    t.name = reader.get_string(reader.get_le<std::uint32_t>());
    const auto rank = reader.get_le<std::uint32_t>();
    std::uint64_t count = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.dims.push_back(reader.get_le<std::uint64_t>());
      count *= t.dims.back();
    }
    if (count > bytes.size() / 8) {
      throw Error(ErrorCode::kMalformedInput, "tensor '" + t.name + "' larger than file");
    }
    t.values.resize(count);
    for (auto& v : t.values) v = reader.get_le<double>();
    out.push_back(std::move(t));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  const auto bytes = encode_checkpoint(tensors);
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  file.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!file) throw Error(ErrorCode::kIo, "short write to " + path.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw Error(ErrorCode::kMissingFile, path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(file)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

std::vector<NamedTensor> to_tensors(const MlpParams& theta) {
  std::vector<NamedTensor> out;
  for (std::size_t l = 0; l < theta.layers.size(); ++l) {
    const auto& layer = theta.layers[l];
    const std::string prefix = "theta." + std::to_string(l);
    auto w = layer.weight.data();
    out.push_back({prefix + ".weight", {layer.in_dim(), layer.out_dim()}, {w.begin(), w.end()}});
    out.push_back({prefix + ".bias", {layer.out_dim()}, layer.bias});
  }
  return out;
}

std::vector<NamedTensor> to_tensors(const PropagatorParams& phi) {
  auto w = phi.weight.data();
  return {{"phi.attn", {phi.attn.size()}, phi.attn},
          {"phi.weight", {phi.weight.rows(), phi.weight.cols()}, {w.begin(), w.end()}}};
}

MlpParams mlp_from_tensors(std::span<const NamedTensor> tensors, double dropout_rate) {
  MlpParams theta;
  theta.dropout_rate = dropout_rate;
  for (std::size_t l = 0;; ++l) {
    const std::string prefix = "theta." + std::to_string(l);
    bool present = false;
    for (const auto& t : tensors) present = present || t.name == prefix + ".weight";
    if (!present) break;
    const auto& w = find(tensors, prefix + ".weight");
    const auto& b = find(tensors, prefix + ".bias");
    if (w.dims.size() != 2 || b.dims.size() != 1 || b.dims[0] != w.dims[1]) {
      throw Error(ErrorCode::kMalformedInput, "layer " + std::to_string(l) + " shapes");
    }
    theta.layers.push_back({DenseMatrix(w.dims[0], w.dims[1], w.values), b.values});
  }
  if (theta.layers.empty()) throw Error(ErrorCode::kMalformedInput, "checkpoint has no MLP layers");
  return theta;
}

PropagatorParams propagator_from_tensors(std::span<const NamedTensor> tensors) {
  const auto& a = find(tensors, "phi.attn");
  const auto& w = find(tensors, "phi.weight");
  if (a.dims.size() != 1 || w.dims.size() != 2 || w.dims[0] != a.dims[0] || w.dims[1] != a.dims[0]) {
    throw Error(ErrorCode::kMalformedInput, "propagator tensor shapes");
  }
  return {a.values, DenseMatrix(w.dims[0], w.dims[1], w.values)};
}

}  // namespace metapn
