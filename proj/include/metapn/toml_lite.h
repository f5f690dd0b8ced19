#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace metapn::toml {

// The subset of TOML the experiment configs use: [tables], key = value with
// strings, integers, floats, booleans and single-line arrays of those.
using Scalar = std::variant<std::string, std::int64_t, double, bool>;
using Value = std::variant<Scalar, std::vector<Scalar>>;

// Keys are fully qualified: "train.eta_theta" for eta_theta under [train].
using Document = std::map<std::string, Value>;

Document parse(const std::string& text);
Document parse_file(const std::filesystem::path& path);

}  // namespace metapn::toml
