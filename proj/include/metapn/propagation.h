#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "metapn/dense_matrix.h"
#include "metapn/sparse_graph.h"

namespace metapn {

using LabelMatrix = DenseMatrix;
using ClassIndex = std::size_t;

// Rows whose combined label mass falls below this are treated as unreachable.
inline constexpr double kUnreachableMass = 1e-8;

// Y^(0), Y^(1), ..., Y^(K) with Y^(k+1) = T Y^(k).
struct PropagationTrace {
  std::vector<LabelMatrix> steps;

  std::size_t k_max() const noexcept { return steps.empty() ? 0 : steps.size() - 1; }
  std::size_t num_nodes() const noexcept { return steps.empty() ? 0 : steps[0].rows(); }
  std::size_t num_classes() const noexcept { return steps.empty() ? 0 : steps[0].cols(); }
};

// Attention parameters of the adaptive propagator: score_k = attn . ReLU(weight y_k).
struct PropagatorParams {
  std::vector<double> attn;  // length c
  DenseMatrix weight;        // c x c

  std::size_t num_classes() const noexcept { return attn.size(); }
  bool operator==(const PropagatorParams&) const = default;
};

struct PprConfig {
  double alpha = 0.1;
  std::size_t k_max = 10;
};

// Near-uniform attention: attn ~ U[-0.01, 0.01], weight = I + U[-0.01, 0.01].
PropagatorParams init_propagator(std::size_t num_classes, std::mt19937_64& rng);

// One-hot rows for the labeled training nodes, zero rows everywhere else.
// `labels` is indexed by node id; only the entries listed in `train` are read.
LabelMatrix seed_labels(std::span<const ClassIndex> labels, std::span<const NodeIndex> train,
                        std::size_t n, std::size_t c);

PropagationTrace power_iterate(const CsrMatrix& t, const LabelMatrix& y0, std::size_t k_max);

// K steps of Y <- (1 - alpha) T Y + alpha Y^(0).
LabelMatrix ppr_iterate(const CsrMatrix& t, const LabelMatrix& y0, const PprConfig& cfg);

// Softmax over depths of attn . ReLU(weight Y_i^(k)); length K+1.
std::vector<double> attention_weights(const PropagatorParams& params,
                                      const PropagationTrace& trace, NodeIndex node);

struct PseudoLabels {
  LabelMatrix rows;                // one row per requested node, sums to 1 when reachable
  std::vector<bool> unreachable;   // pre-normalization mass below kUnreachableMass
};

// Sum_k gamma_ik Y_i^(k), renormalized to a distribution per row. Unreachable
// rows are returned as zeros.
PseudoLabels adaptive_propagate(const PropagatorParams& params, const PropagationTrace& trace,
                                std::span<const NodeIndex> nodes);

// Same layout as PropagatorParams.
using PropagatorGrad = PropagatorParams;

PropagatorGrad zeros_like(const PropagatorParams& params);

// Vector-Jacobian product of adaptive_propagate with respect to (attn, weight).
// `cotangent` holds dJ/dYhat, one row per entry of `nodes`. Unreachable nodes
// contribute nothing.
PropagatorGrad propagator_grad(const PropagatorParams& params, const PropagationTrace& trace,
                               std::span<const NodeIndex> nodes, const DenseMatrix& cotangent);

}  // namespace metapn
