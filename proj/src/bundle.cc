#include "metapn/bundle.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "json.hpp"
#include "metapn/error.h"

namespace metapn {
namespace fs = std::filesystem;

namespace {

std::ifstream open_input(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw Error(ErrorCode::kMissingFile, path.string());
  return in;
}

std::size_t parse_index(const std::string& token, const fs::path& file, std::size_t line) {
  std::size_t value = 0;
  std::size_t used = 0;
  try {
    if (token.empty() || token[0] == '-') throw std::invalid_argument(token);
    value = std::stoull(token, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != token.size()) {
    throw Error(ErrorCode::kMalformedInput, file.filename().string() + " line " +
                                                std::to_string(line) + ": '" + token + "'");
  }
  return value;
}

}  // namespace

void validate(const GraphBundle& bundle) {
  if (bundle.features.rows() != bundle.n || bundle.features.cols() != bundle.f) {
    throw Error(ErrorCode::kShapeMismatch, "features are " +
                                               std::to_string(bundle.features.rows()) + "x" +
                                               std::to_string(bundle.features.cols()) +
                                               ", meta says " + std::to_string(bundle.n) + "x" +
                                               std::to_string(bundle.f));
  }
  if (bundle.labels.size() != bundle.n) {
    throw Error(ErrorCode::kShapeMismatch, "label count " + std::to_string(bundle.labels.size()) +
                                               " != n=" + std::to_string(bundle.n));
  }
  for (std::size_t i = 0; i < bundle.labels.size(); ++i) {
    if (bundle.labels[i] >= bundle.c) {
      throw Error(ErrorCode::kLabelOutOfRange,
                  "node " + std::to_string(i) + " has class " + std::to_string(bundle.labels[i]) +
                      ", c=" + std::to_string(bundle.c));
    }
  }
  for (std::size_t e = 0; e < bundle.edges.size(); ++e) {
    const auto [u, v] = bundle.edges[e];
    if (u >= bundle.n || v >= bundle.n) {
      throw Error(ErrorCode::kOutOfRange, "edge #" + std::to_string(e) + " (" +
                                              std::to_string(u) + ", " + std::to_string(v) + ")");
    }
    if (u == v) {
      throw Error(ErrorCode::kMalformedInput, "edge #" + std::to_string(e) + " is a self-loop");
    }
  }
  for (double x : bundle.features.data()) {
    if (!std::isfinite(x)) throw Error(ErrorCode::kMalformedInput, "non-finite feature value");
  }
}

GraphBundle load_bundle(const fs::path& dir) {
  GraphBundle bundle;
  {
    auto in = open_input(dir / "meta.json");
    nlohmann::json meta;
    try {
      in >> meta;
      bundle.n = meta.at("n").get<std::size_t>();
      bundle.f = meta.at("f").get<std::size_t>();
      bundle.c = meta.at("c").get<std::size_t>();
      bundle.name = meta.value("name", dir.filename().string());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kMalformedInput, "meta.json: " + std::string(e.what()));
    }
  }
  for (const char* required : {"edges.tsv", "labels.tsv", "features.bin"}) {
    if (!fs::exists(dir / required)) throw Error(ErrorCode::kMissingFile, (dir / required).string());
  }

  {
    auto in = open_input(dir / "edges.tsv");
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
      if (line.empty()) continue;
      std::istringstream fields(line);
      std::string a, b, extra;
      std::getline(fields, a, '\t');
      std::getline(fields, b, '\t');
      if (fields >> extra || b.empty()) {
        throw Error(ErrorCode::kMalformedInput,
                    "edges.tsv line " + std::to_string(lineno) + " needs two tab-separated ids");
      }
      bundle.edges.emplace_back(parse_index(a, dir / "edges.tsv", lineno),
                                parse_index(b, dir / "edges.tsv", lineno));
    }
  }

  {
    auto in = open_input(dir / "labels.tsv");
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
      if (line.empty()) continue;
      bundle.labels.push_back(parse_index(line, dir / "labels.tsv", lineno));
    }
  }

  {
    const auto expected = bundle.n * bundle.f * sizeof(double);
    const auto actual = fs::file_size(dir / "features.bin");
    if (actual != expected) {
      throw Error(ErrorCode::kFeaturePayloadSize,
                  "features.bin has " + std::to_string(actual) + " bytes, expected n*f*8 = " +
                      std::to_string(expected));
    }
    auto in = open_input(dir / "features.bin", std::ios::binary);
    std::vector<unsigned char> raw((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    std::vector<double> values(bundle.n * bundle.f);
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::uint64_t bits = 0;
      for (std::size_t b = 0; b < 8; ++b) bits |= std::uint64_t{raw[8 * i + b]} << (8 * b);
      values[i] = std::bit_cast<double>(bits);
    }
    bundle.features = DenseMatrix(bundle.n, bundle.f, std::move(values));
  }

  validate(bundle);
  return bundle;
}

void store_bundle(const GraphBundle& bundle, const fs::path& dir) {
  validate(bundle);
  fs::create_directories(dir);
  {
    nlohmann::json meta = {{"n", bundle.n}, {"f", bundle.f}, {"c", bundle.c}, {"name", bundle.name}};
    std::ofstream out(dir / "meta.json");
    out << meta.dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "edges.tsv");
    for (const auto& [u, v] : bundle.edges) out << u << '\t' << v << '\n';
  }
  {
    std::ofstream out(dir / "labels.tsv");
    for (auto label : bundle.labels) out << label << '\n';
  }
  {
    std::vector<char> raw;
    raw.reserve(bundle.features.data().size() * 8);
    for (double x : bundle.features.data()) {
      const auto bits = std::bit_cast<std::uint64_t>(x);
      for (std::size_t b = 0; b < 8; ++b) raw.push_back(static_cast<char>(bits >> (8 * b)));
    }
    std::ofstream out(dir / "features.bin", std::ios::binary | std::ios::trunc);
    out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + (dir / "features.bin").string());
  }
}

std::vector<NodeIndex> unlabeled_nodes(const SplitSpec& split, std::size_t n) {
  std::vector<bool> labeled(n, false);
  for (auto node : split.train) labeled.at(node) = true;
  std::vector<NodeIndex> out;
  for (NodeIndex i = 0; i < n; ++i) {
    if (!labeled[i]) out.push_back(i);
  }
  return out;
}

SplitSpec sample_kshot_split(const GraphBundle& bundle, std::size_t shots,
                             std::size_t val_per_class, std::uint64_t seed) {
  std::vector<std::vector<NodeIndex>> by_class(bundle.c);
  for (NodeIndex i = 0; i < bundle.labels.size(); ++i) by_class.at(bundle.labels[i]).push_back(i);

  std::mt19937_64 rng(seed);
  SplitSpec split;
  split.shots = shots;
  for (std::size_t cls = 0; cls < bundle.c; ++cls) {
    auto& members = by_class[cls];
    if (members.size() < shots + val_per_class) {
      throw Error(ErrorCode::kClassTooSmall,
                  "class " + std::to_string(cls) + " has " + std::to_string(members.size()) +
                      " nodes, needs " + std::to_string(shots + val_per_class));
    }
    std::shuffle(members.begin(), members.end(), rng);
    split.train.insert(split.train.end(), members.begin(), members.begin() + shots);
    split.val.insert(split.val.end(), members.begin() + shots,
                     members.begin() + shots + val_per_class);
    split.test.insert(split.test.end(), members.begin() + shots + val_per_class, members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

GraphBundle generate_sbm(const SbmSpec& spec) {
  if (spec.blocks == 0 || spec.n < spec.blocks) {
    throw Error(ErrorCode::kInvalidArgument, "SBM needs 1 <= blocks <= n");
  }
  if (!(0.0 <= spec.p_out && spec.p_out <= spec.p_in && spec.p_in <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "SBM needs 0 <= p_out <= p_in <= 1");
  }
  if (!(spec.feature_noise_sigma >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "feature noise sigma must be >= 0");
  }

  GraphBundle bundle;
  bundle.name = "sbm";
  bundle.n = spec.n;
  bundle.c = spec.blocks;
  bundle.f = spec.blocks;
  bundle.labels.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) bundle.labels[i] = i * spec.blocks / spec.n;

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (std::size_t u = 0; u < spec.n; ++u) {
    for (std::size_t v = u + 1; v < spec.n; ++v) {
      const double p = bundle.labels[u] == bundle.labels[v] ? spec.p_in : spec.p_out;
      if (coin(rng) < p) bundle.edges.emplace_back(u, v);
    }
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  bundle.features = DenseMatrix(spec.n, spec.blocks);
  for (std::size_t i = 0; i < spec.n; ++i) {
    for (std::size_t b = 0; b < spec.blocks; ++b) {
      bundle.features(i, b) =
          (bundle.labels[i] == b ? 1.0 : 0.0) + spec.feature_noise_sigma * noise(rng);
    }
  }
  return bundle;
}

}  // namespace metapn
