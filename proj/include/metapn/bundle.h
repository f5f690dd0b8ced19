#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metapn/dense_matrix.h"
#include "metapn/propagation.h"
#include "metapn/sparse_graph.h"

namespace metapn {

// A node-classification dataset as stored on disk:
//   meta.json     {"n", "f", "c", "name", ...}
//   edges.tsv     "u<TAB>v" per line, undirected, each edge once
//   labels.tsv    one class id per line, line number = node id
//   features.bin  n*f f64 little-endian, row-major, no header
struct GraphBundle {
  std::string name;
  std::size_t n = 0;
  std::size_t f = 0;
  std::size_t c = 0;
  std::vector<Edge> edges;
  DenseMatrix features;
  std::vector<ClassIndex> labels;
};

// Checks the bundle invariants, throwing the matching structured error.
void validate(const GraphBundle& bundle);

GraphBundle load_bundle(const std::filesystem::path& dir);
void store_bundle(const GraphBundle& bundle, const std::filesystem::path& dir);

// Disjoint node sets. Every node outside `train` is unlabeled from the
// training loop's point of view, including validation and test nodes.
struct SplitSpec {
  std::vector<NodeIndex> train;
  std::vector<NodeIndex> val;
  std::vector<NodeIndex> test;
  std::size_t shots = 0;

  bool operator==(const SplitSpec&) const = default;
};

std::vector<NodeIndex> unlabeled_nodes(const SplitSpec& split, std::size_t n);

// Stratified sampling: `shots` train and `val_per_class` validation nodes per
// class, every other node goes to test.
SplitSpec sample_kshot_split(const GraphBundle& bundle, std::size_t shots,
                             std::size_t val_per_class, std::uint64_t seed);

struct SbmSpec {
  std::size_t n = 200;
  std::size_t blocks = 2;
  double p_in = 0.2;
  double p_out = 0.01;
  double feature_noise_sigma = 0.5;
  std::uint64_t seed = 0;
};

// Planted partition with contiguous equal-size blocks (block = i * blocks / n).
// Features are the one-hot block indicator plus N(0, sigma^2) noise.
GraphBundle generate_sbm(const SbmSpec& spec);

}  // namespace metapn
