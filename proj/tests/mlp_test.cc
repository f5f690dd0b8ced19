#include "metapn/mlp.h"

#include <cmath>
#include <random>

#include "gtest/gtest.h"
#include "metapn/adam.h"
#include "metapn/error.h"
#include "test_util.h"

namespace metapn {
namespace {

using testing::objective;
using testing::random_mlp;

TEST(Forward, ZeroParametersGiveUniformRows) {
  const std::size_t dims[] = {3, 5, 4};
  std::mt19937_64 rng(0);
  const auto params = zeros_like(init_mlp(dims, 0.0, rng));
  std::mt19937_64 data_rng(1);
  const auto probs = forward(params, testing::random_dense(6, 3, data_rng)).probs;
  for (double p : probs.data()) EXPECT_DOUBLE_EQ(p, 0.25);
}

TEST(Forward, HandSoftmax) {
  MlpParams params;
  params.layers.push_back({DenseMatrix::from_rows({{0.0, std::log(3.0)}}), {0.0, 0.0}});
  const auto probs = forward(params, DenseMatrix::from_rows({{1.0}})).probs;
  EXPECT_NEAR(probs(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(probs(0, 1), 0.75, 1e-15);
}

TEST(Forward, EvalModeIsDeterministic) {
  std::mt19937_64 rng(2);
  const auto params = random_mlp(rng, 4, 8, 3);
  const auto x = testing::random_dense(10, 4, rng);
  EXPECT_EQ(forward(params, x).probs, forward(params, x).probs);
}

TEST(Forward, FixedMaskIsDeterministic) {
  std::mt19937_64 rng(3);
  const auto params = random_mlp(rng, 4, 8, 3);
  const auto x = testing::random_dense(10, 4, rng);
  const auto mask = make_dropout_mask(params, 10, 77);
  EXPECT_EQ(forward(params, x, &mask).probs, forward(params, x, &mask).probs);
  EXPECT_EQ(make_dropout_mask(params, 10, 77).keep, mask.keep);
}

TEST(Forward, RowsSumToOne) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto params = random_mlp(rng, 5, 16, 4);
    const auto probs = forward(params, testing::random_dense(12, 5, rng, -5.0, 5.0)).probs;
    for (std::size_t i = 0; i < probs.rows(); ++i) {
      double total = 0.0;
      for (double p : probs.row(i)) {
        EXPECT_GT(p, 0.0);
        total += p;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Forward, ShapeMismatch) {
  std::mt19937_64 rng(5);
  const auto params = random_mlp(rng, 4, 8, 3);
  EXPECT_THROW(forward(params, DenseMatrix(2, 5)), Error);
}

TEST(DropoutMask, EntriesAreZeroOrScaled) {
  std::mt19937_64 rng(6);
  const auto params = random_mlp(rng, 4, 8, 3);
  const auto mask = make_dropout_mask(params, 50, 9);
  const double scale = 1.0 / 0.7;
  for (const auto& keep : mask.keep) {
    for (double v : keep.data()) EXPECT_TRUE(v == 0.0 || v == scale);
  }
}

TEST(DropoutMask, PreservesMeanActivation) {
  // Mean over fresh masks of the summed first-layer pre-activation matches the
  // evaluation-mode value within two Monte-Carlo standard errors.
  std::mt19937_64 rng(7);
  const auto params = random_mlp(rng, 6, 5, 2);
  const auto x = testing::random_dense(1, 6, rng);
  const auto& layer = params.layers.front();
  auto summed_pre = [&](const DenseMatrix* keep) {
    double total = 0.0;
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
      double z = layer.bias[o];
      for (std::size_t j = 0; j < layer.in_dim(); ++j) {
        z += x(0, j) * (keep ? (*keep)(0, j) : 1.0) * layer.weight(j, o);
      }
      total += z;
    }
    return total;
  };
  const double expected = summed_pre(nullptr);
  constexpr int kSamples = 10000;
  double sum = 0.0, sum_sq = 0.0;
  for (int s = 0; s < kSamples; ++s) {
    const auto mask = make_dropout_mask(params, 1, 1000 + s);
    const double v = summed_pre(&mask.keep.front());
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / kSamples;
  const double var = (sum_sq - kSamples * mean * mean) / (kSamples - 1);
  EXPECT_LE(std::abs(mean - expected), 2.0 * std::sqrt(var / kSamples));
}

TEST(SoftCrossEntropy, Examples) {
  EXPECT_NEAR(soft_cross_entropy(DenseMatrix::from_rows({{0.5, 0.5}}),
                                 DenseMatrix::from_rows({{1.0, 0.0}})),
              std::log(2.0), 1e-15);
  EXPECT_NEAR(soft_cross_entropy(DenseMatrix::from_rows({{1.0, 0.0}}),
                                 DenseMatrix::from_rows({{1.0, 0.0}})),
              0.0, 1e-15);
  EXPECT_NEAR(soft_cross_entropy(DenseMatrix::from_rows({{0.5, 0.5}}),
                                 DenseMatrix::from_rows({{0.5, 0.5}})),
              std::log(2.0), 1e-15);
}

TEST(SoftCrossEntropy, ClampsConfidentMistakes) {
  const double loss = soft_cross_entropy(DenseMatrix::from_rows({{0.0, 1.0}}),
                                         DenseMatrix::from_rows({{1.0, 0.0}}));
  EXPECT_NEAR(loss, -std::log(kLogClamp), 1e-9);
}

TEST(SoftCrossEntropy, ShapeMismatch) {
  EXPECT_THROW(soft_cross_entropy(DenseMatrix(2, 2), DenseMatrix(2, 3)), Error);
}

TEST(Backward, TargetsEqualToPredictionsLeaveOnlyL2) {
  std::mt19937_64 rng(8);
  const auto params = random_mlp(rng, 3, 4, 2);
  const auto x = testing::random_dense(5, 3, rng);
  const auto cache = forward(params, x);
  const double lambda = 0.25;
  const auto grad = backward(params, cache, cache.probs, lambda);
  auto w = params.layers[0].weight.data();
  auto gw = grad.layers[0].weight.data();
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(gw[i], lambda * w[i], 1e-15);
  for (double g : grad.layers[0].bias) EXPECT_NEAR(g, 0.0, 1e-15);
  for (double g : grad.layers[1].weight.data()) EXPECT_NEAR(g, 0.0, 1e-15);
  for (double g : grad.layers[1].bias) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(Backward, ZeroInputsKillFirstLayerWeightGradient) {
  std::mt19937_64 rng(9);
  const auto params = random_mlp(rng, 3, 4, 2);
  const auto x = DenseMatrix(4, 3);
  const auto targets = testing::random_distributions(4, 2, rng);
  const auto grad = backward(params, forward(params, x), targets, 0.0);
  for (double g : grad.layers[0].weight.data()) EXPECT_EQ(g, 0.0);
  double bias_mass = 0.0;
  for (double g : grad.layers[1].bias) bias_mass += std::abs(g);
  EXPECT_GT(bias_mass, 0.0);
}

TEST(Backward, StaleCache) {
  std::mt19937_64 rng(10);
  auto params = random_mlp(rng, 3, 4, 2);
  const auto x = testing::random_dense(4, 3, rng);
  const auto cache = forward(params, x);
  params.layers[1].bias[0] += 1e-3;
  try {
    backward(params, cache, testing::random_distributions(4, 2, rng), 0.0);
    FAIL() << "expected a stale-cache error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kStaleCache);
  }
}

TEST(Backward, MatchesCentralDifferences) {
  std::mt19937_64 rng(2025);
  for (int trial = 0; trial < 20; ++trial) {
    auto params = random_mlp(rng, 3, 4, 2);
    const auto x = testing::random_dense(5, 3, rng);
    const auto targets = testing::random_distributions(5, 2, rng);
    const double lambda = 0.1;
    const auto analytic =
        testing::flatten(tensors(backward(params, forward(params, x), targets, lambda)));
    std::vector<double> numeric;
    for (auto t : tensors(params)) {
      auto g = testing::central_differences(t, [&] { return objective(params, x, targets, lambda); },
                                            1e-5);
      numeric.insert(numeric.end(), g.begin(), g.end());
    }
    EXPECT_LE(testing::max_relative_error(analytic, numeric), 1e-6) << "trial " << trial;
  }
}

TEST(Backward, RespectsTheDropoutMask) {
  std::mt19937_64 rng(11);
  auto params = random_mlp(rng, 3, 6, 2);
  const auto x = testing::random_dense(5, 3, rng);
  const auto targets = testing::random_distributions(5, 2, rng);
  const auto mask = make_dropout_mask(params, 5, 4);
  const auto analytic =
      testing::flatten(tensors(backward(params, forward(params, x, &mask), targets, 0.0)));
  std::vector<double> numeric;
  for (auto t : tensors(params)) {
    auto g = testing::central_differences(t, [&] { return objective(params, x, targets, 0.0, &mask); },
                                          1e-5);
    numeric.insert(numeric.end(), g.begin(), g.end());
  }
  EXPECT_LE(testing::max_relative_error(analytic, numeric), 1e-6);
}

// Training against propagated labels T*Y equals the t_ij-weighted sum of
// per-pair cross-entropies, for the loss and for every parameter gradient.
TEST(Backward, PropagatedTargetsDecomposeOverLabeledPairs) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 9, c = 3;
    auto edges = testing::random_edges(n, 0.35, rng);
    const auto t = sym_normalize_with_self_loops(from_edge_list(n, edges)).to_dense();
    std::vector<ClassIndex> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = i % c;
    const std::vector<NodeIndex> labeled = {0, 1, 2, 4};
    const auto y = seed_labels(labels, labeled, n, c);
    const auto ty = testing::dense_matmul(t, y);

    const auto params = random_mlp(rng, 4, 5, c);
    const auto x = testing::random_dense(n, 4, rng);
    const auto cache = forward(params, x);
    const double loss = soft_cross_entropy(cache.probs, ty);
    const auto grad = testing::flatten(tensors(backward(params, cache, ty, 0.0)));

    double pair_loss = 0.0;
    std::vector<double> pair_grad(grad.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::vector<std::size_t> row = {i};
      const auto xi = x.gather_rows(row);
      const auto ci = forward(params, xi);
      for (NodeIndex j : labeled) {
        if (t(i, j) == 0.0) continue;
        DenseMatrix yj(1, c);
        yj(0, labels[j]) = 1.0;
        pair_loss += t(i, j) * soft_cross_entropy(ci.probs, yj);
        const auto g = testing::flatten(tensors(backward(params, ci, yj, 0.0)));
        for (std::size_t k = 0; k < g.size(); ++k) pair_grad[k] += t(i, j) * g[k];
      }
    }
    pair_loss /= static_cast<double>(n);
    for (double& g : pair_grad) g /= static_cast<double>(n);

    EXPECT_NEAR(loss, pair_loss, 1e-10);
    for (std::size_t k = 0; k < grad.size(); ++k) EXPECT_NEAR(grad[k], pair_grad[k], 1e-10);
  }
}

TEST(Adam, ZeroGradientKeepsParameters) {
  std::mt19937_64 rng(13);
  auto params = random_mlp(rng, 3, 4, 2);
  const auto before = params;
  AdamState state(0.01);
  adam_step(state, params, zeros_like(params));
  EXPECT_EQ(params, before);
  EXPECT_EQ(state.step_count, 1u);
}

TEST(Adam, FirstStep) {
  std::vector<double> value = {0.0};
  const std::vector<double> grad = {1.0};
  AdamState state(0.01);
  const std::span<double> p[] = {value};
  const std::span<const double> g[] = {grad};
  adam_step(state, p, g);
  EXPECT_NEAR(value[0], -0.01, 1e-8 * 0.01);
}

TEST(Adam, ConstantGradientApproachesLearningRate) {
  std::vector<double> value = {0.0};
  const std::vector<double> grad = {3.7};
  AdamState state(0.01);
  const std::span<double> p[] = {value};
  const std::span<const double> g[] = {grad};
  double last = 0.0;
  for (int i = 0; i < 1000; ++i) {
    last = value[0];
    adam_step(state, p, g);
  }
  EXPECT_NEAR(std::abs(value[0] - last), 0.01, 0.01 * 0.01);
}

TEST(Adam, ShapeMismatch) {
  std::vector<double> value = {0.0, 1.0};
  const std::vector<double> grad = {1.0};
  AdamState state(0.01);
  const std::span<double> p[] = {value};
  const std::span<const double> g[] = {grad};
  EXPECT_THROW(adam_step(state, p, g), Error);
}

TEST(InitMlp, GlorotRangeAndZeroBias) {
  std::mt19937_64 rng(14);
  const std::size_t dims[] = {10, 64, 7};
  const auto params = init_mlp(dims, 0.3, rng);
  ASSERT_EQ(params.layers.size(), 2u);
  EXPECT_EQ(params.out_dim(), 7u);
  const double r0 = std::sqrt(6.0 / 74.0);
  for (double w : params.layers[0].weight.data()) EXPECT_LE(std::abs(w), r0);
  for (double b : params.layers[0].bias) EXPECT_EQ(b, 0.0);
}

}  // namespace
}  // namespace metapn
