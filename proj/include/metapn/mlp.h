#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "metapn/dense_matrix.h"

namespace metapn {

// Log-clamp floor inside the cross-entropy.
inline constexpr double kLogClamp = 1e-12;

struct DenseLayer {
  DenseMatrix weight;          // in_dim x out_dim
  std::vector<double> bias;    // out_dim

  std::size_t in_dim() const noexcept { return weight.rows(); }
  std::size_t out_dim() const noexcept { return weight.cols(); }
  bool operator==(const DenseLayer&) const = default;
};

// Feature-to-label MLP: ReLU between layers, softmax on the last one.
// Gradients share this layout.
struct MlpParams {
  std::vector<DenseLayer> layers;
  double dropout_rate = 0.3;

  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }
  bool operator==(const MlpParams&) const = default;
};

// Glorot-uniform weights, zero biases. `dims` lists in, hidden..., out.
MlpParams init_mlp(std::span<const std::size_t> dims, double dropout_rate,
                   std::mt19937_64& rng);

MlpParams zeros_like(const MlpParams& params);

// Inverted dropout: one keep mask per layer input, entries in {0, 1/(1-rate)}.
struct DropoutMask {
  std::uint64_t seed = 0;
  std::vector<DenseMatrix> keep;
};

DropoutMask make_dropout_mask(const MlpParams& params, std::size_t rows, std::uint64_t seed);

struct ForwardCache {
  std::uint64_t params_fingerprint = 0;
  std::vector<DenseMatrix> inputs;       // input to each layer, after dropout
  std::vector<DenseMatrix> pre_hidden;   // pre-activations of the hidden layers
  std::optional<DropoutMask> mask;
  DenseMatrix probs;
};

std::uint64_t fingerprint(const MlpParams& params);

// Row-wise class probabilities. No mask means evaluation mode.
ForwardCache forward(const MlpParams& params, const DenseMatrix& x_rows,
                     const DropoutMask* mask = nullptr);

// Mean over rows of -sum_k target_k log(max(p_k, 1e-12)). Targets need not be
// normalized; the loss is linear in them.
double soft_cross_entropy(const DenseMatrix& probs, const DenseMatrix& targets);

// (lambda / 2) ||W_first||_F^2
double l2_penalty(const MlpParams& params, double l2_lambda);

// Gradient of soft_cross_entropy(probs, targets) + l2_penalty. Throws kStaleCache
// when `params` differ from the ones the cache was computed with.
MlpParams backward(const MlpParams& params, const ForwardCache& cache,
                   const DenseMatrix& targets, double l2_lambda);

// Row-wise argmax, ties to the lowest class.
std::vector<std::size_t> predict(const DenseMatrix& probs);

// Flat views in a fixed order: layer0.weight, layer0.bias, layer1.weight, ...
std::vector<std::span<double>> tensors(MlpParams& params);
std::vector<std::span<const double>> tensors(const MlpParams& params);

// theta + scale * direction, layer by layer.
MlpParams axpy(const MlpParams& theta, double scale, const MlpParams& direction);
double squared_norm(const MlpParams& params);

}  // namespace metapn
