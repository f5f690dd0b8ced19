#include "metapn/meta_trainer.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "gtest/gtest.h"
#include "metapn/error.h"
#include "test_util.h"

namespace metapn {
namespace {

using testing::cosine;
using testing::flatten;
using testing::make_tiny_bilevel;
using testing::relative_norm_error;

// Path 0-1-2-3 with the two ends labeled by different classes. With a zero
// propagator and a zero MLP the batch {1, 2} has mirrored pseudo-labels whose
// mean equals the uniform prediction, so every gradient vanishes.
struct MirroredPath {
  GraphBundle bundle;
  SplitSpec split;
  MetaProblem problem;
  MlpParams theta;
  PropagatorParams phi;
  std::vector<NodeIndex> batch{1, 2};
};

MirroredPath make_mirrored_path() {
  MirroredPath m;
  m.bundle.n = 4;
  m.bundle.f = 2;
  m.bundle.c = 2;
  m.bundle.edges = {{0, 1}, {1, 2}, {2, 3}};
  m.bundle.features = DenseMatrix::from_rows({{1, 0}, {0.5, 0.2}, {0.2, 0.5}, {0, 1}});
  m.bundle.labels = {0, 0, 1, 1};
  m.split.train = {0, 3};
  m.split.test = {1, 2};
  m.problem = make_problem(from_edge_list(4, m.bundle.edges), m.bundle.features, m.bundle.labels,
                           m.split, 2, 3);
  std::mt19937_64 rng(0);
  const std::size_t dims[] = {2, 3, 2};
  m.theta = init_mlp(dims, 0.0, rng);
  for (auto t : tensors(m.theta)) std::fill(t.begin(), t.end(), 0.0);
  m.phi = init_propagator(2, rng);
  for (auto t : tensors(m.phi)) std::fill(t.begin(), t.end(), 0.0);
  return m;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.hidden_dim = 16;
  cfg.max_epochs = 40;
  cfg.patience = 10;
  cfg.finetune_epochs = 10;
  cfg.batch_size = 64;
  cfg.k_max = 5;
  cfg.rng_seed = 3;
  return cfg;
}

struct SbmProblem {
  GraphBundle bundle;
  SplitSpec split;
  MetaProblem problem;
};

SbmProblem make_sbm_problem(std::size_t k_max) {
  SbmProblem s;
  s.bundle = generate_sbm({120, 2, 0.2, 0.01, 0.5, 1});
  s.split = sample_kshot_split(s.bundle, 3, 10, 4);
  s.problem = make_problem(from_edge_list(s.bundle.n, s.bundle.edges), s.bundle.features,
                           s.bundle.labels, s.split, 2, k_max);
  return s;
}

TEST(SampleBatch, ExhaustsSmallPool) {
  const std::vector<NodeIndex> unlabeled = {1, 4, 6};
  const std::vector<bool> reachable(8, true);
  std::mt19937_64 rng(1);
  EXPECT_EQ(sample_unlabeled_batch(unlabeled, reachable, 10, rng), unlabeled);
}

TEST(SampleBatch, RespectsReachabilityAndSize) {
  std::vector<NodeIndex> unlabeled;
  for (NodeIndex i = 0; i < 100; i += 2) unlabeled.push_back(i);
  std::vector<bool> reachable(100, true);
  for (NodeIndex i = 0; i < 100; i += 4) reachable[i] = false;
  std::mt19937_64 rng(2);
  const auto batch = sample_unlabeled_batch(unlabeled, reachable, 10, rng);
  ASSERT_EQ(batch.size(), 10u);
  EXPECT_TRUE(std::is_sorted(batch.begin(), batch.end()));
  EXPECT_EQ(std::adjacent_find(batch.begin(), batch.end()), batch.end());
  for (auto node : batch) {
    EXPECT_EQ(node % 2, 0u);
    EXPECT_TRUE(reachable[node]);
  }
}

TEST(SampleBatch, DeterministicInSeed) {
  std::vector<NodeIndex> unlabeled(50);
  for (NodeIndex i = 0; i < 50; ++i) unlabeled[i] = i;
  const std::vector<bool> reachable(50, true);
  std::mt19937_64 a(9), b(9);
  EXPECT_EQ(sample_unlabeled_batch(unlabeled, reachable, 7, a),
            sample_unlabeled_batch(unlabeled, reachable, 7, b));
}

TEST(SampleBatch, EmptyPool) {
  const std::vector<NodeIndex> unlabeled = {0, 1};
  const std::vector<bool> reachable(2, false);
  std::mt19937_64 rng(0);
  try {
    sample_unlabeled_batch(unlabeled, reachable, 4, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyPool);
  }
}

TEST(MakeProblem, UnlabeledExcludesTrainAndKeepsValidation) {
  auto s = make_sbm_problem(3);
  for (auto node : s.split.train) {
    EXPECT_FALSE(std::binary_search(s.problem.unlabeled.begin(), s.problem.unlabeled.end(), node));
  }
  for (auto node : s.split.val) {
    EXPECT_TRUE(std::binary_search(s.problem.unlabeled.begin(), s.problem.unlabeled.end(), node));
  }
  EXPECT_EQ(s.problem.unlabeled.size(), s.bundle.n - s.split.train.size());
}

TEST(MakeProblem, EmptyClass) {
  const auto bundle = generate_sbm({20, 2, 0.3, 0.05, 0.5, 0});
  SplitSpec split;
  split.train = {0, 1};
  try {
    make_problem(from_edge_list(20, bundle.edges), bundle.features, bundle.labels, split, 2, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyClass);
  }
}

TEST(Reachability, IsolatedNodeHasNoMass) {
  const std::vector<Edge> edges = {{0, 1}, {1, 2}};
  const auto features = DenseMatrix(4, 1, 1.0);
  const std::vector<ClassIndex> labels = {0, 1, 1, 0};
  SplitSpec split;
  split.train = {0, 2};
  const auto problem = make_problem(from_edge_list(4, edges), features, labels, split, 2, 2);
  EXPECT_EQ(problem.reachable, (std::vector<bool>{true, true, true, false}));

  std::mt19937_64 rng(0);
  const std::size_t dims[] = {1, 2, 2};
  const auto theta = init_mlp(dims, 0.0, rng);
  const auto phi = init_propagator(2, rng);
  const std::vector<NodeIndex> batch = {1, 3};
  try {
    pseudo_loss(theta, phi, problem, batch, nullptr, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnreachableNode);
  }
}

TEST(InnerUpdate, ZeroLearningRateKeepsTheta) {
  auto t = make_tiny_bilevel(1);
  TrainConfig cfg;
  MetaState state{t.theta, t.phi, AdamState(0.0), AdamState(0.01)};
  const auto step = inner_update(state, t.problem, t.batch, nullptr, cfg);
  EXPECT_EQ(state.theta, t.theta);
  EXPECT_TRUE(std::isfinite(step.j_pseudo));
  EXPECT_GT(step.j_pseudo, 0.0);
}

TEST(InnerUpdate, ZeroGradientKeepsTheta) {
  auto m = make_mirrored_path();
  TrainConfig cfg;
  cfg.l2_lambda = 0.0;
  MetaState state{m.theta, m.phi, AdamState(0.1), AdamState(0.1)};
  const auto step = inner_update(state, m.problem, m.batch, nullptr, cfg);
  EXPECT_DOUBLE_EQ(squared_norm(step.grad), 0.0);
  EXPECT_EQ(state.theta, m.theta);
}

TEST(InnerUpdate, SmallStepDescends) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto t = make_tiny_bilevel(seed);
    TrainConfig cfg;
    MetaState state{t.theta, t.phi, AdamState(1e-3), AdamState(0.01)};
    const auto step = inner_update(state, t.problem, t.batch, nullptr, cfg);
    const double after = pseudo_loss(state.theta, t.phi, t.problem, t.batch, nullptr,
                                     cfg.l2_lambda).loss;
    EXPECT_LT(after, step.j_pseudo) << "seed " << seed;
    EXPECT_EQ(step.theta_before, t.theta);
  }
}

TEST(Hypergradient, ZeroWhenGoldGradientVanishes) {
  auto m = make_mirrored_path();
  TrainConfig cfg;
  cfg.l2_lambda = 0.0;
  const auto hg = hypergradient(m.theta, m.phi, m.problem, m.batch, nullptr, cfg);
  for (auto t : tensors(hg.grad)) {
    for (double v : t) EXPECT_EQ(v, 0.0);
  }
}

TEST(Hypergradient, ZeroForZeroInnerRate) {
  auto t = make_tiny_bilevel(2);
  const auto pseudo = pseudo_loss(t.theta, t.phi, t.problem, t.batch, nullptr, 0.005);
  const auto hg = hypergradient(t.theta, pseudo.grad, t.phi, t.problem, t.batch, nullptr, 0.0,
                                0.01);
  for (auto g : tensors(hg.grad)) {
    for (double v : g) EXPECT_EQ(v, 0.0);
  }
  const auto oracle = testing::brute_force_hypergradient(t.theta, t.phi, t.problem, t.batch,
                                                         nullptr, 0.0, 0.005, 1e-4);
  for (double v : oracle) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Hypergradient, MatchesBiLevelOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto t = make_tiny_bilevel(seed);
    const TrainConfig cfg;
    const auto hg = hypergradient(t.theta, t.phi, t.problem, t.batch, nullptr, cfg);
    const auto approx = flatten(tensors(hg.grad));
    const auto exact = testing::brute_force_hypergradient(
        t.theta, t.phi, t.problem, t.batch, nullptr, cfg.eta_theta, cfg.l2_lambda, 1e-4);
    EXPECT_GE(cosine(approx, exact), 0.99) << "seed " << seed;
    EXPECT_LE(relative_norm_error(approx, exact), 5e-2) << "seed " << seed;
  }
}

// Instance 106 has a hidden pre-activation within the default perturbation
// of zero, so theta+/- straddle a ReLU kink. A smaller step restores agreement.
TEST(Hypergradient, KinkInstanceRecoversWithSmallerStep) {
  auto t = make_tiny_bilevel(106);
  TrainConfig cfg;
  const auto exact = testing::brute_force_hypergradient(
      t.theta, t.phi, t.problem, t.batch, nullptr, cfg.eta_theta, cfg.l2_lambda, 1e-4);
  const auto coarse = hypergradient(t.theta, t.phi, t.problem, t.batch, nullptr, cfg);
  EXPECT_GT(relative_norm_error(flatten(tensors(coarse.grad)), exact), 5e-2);
  cfg.epsilon_scale = 1e-3;
  const auto fine = hypergradient(t.theta, t.phi, t.problem, t.batch, nullptr, cfg);
  EXPECT_LE(relative_norm_error(flatten(tensors(fine.grad)), exact), 1e-4);
}

TEST(OuterUpdate, ZeroHypergradientKeepsPhi) {
  auto t = make_tiny_bilevel(3);
  MetaState state{t.theta, t.phi, AdamState(0.01), AdamState(0.01)};
  outer_update(state, zeros_like(t.phi));
  EXPECT_EQ(state.phi, t.phi);
}

TEST(OuterUpdate, Deterministic) {
  auto t = make_tiny_bilevel(4);
  const auto hg = hypergradient(t.theta, t.phi, t.problem, t.batch, nullptr, TrainConfig{});
  MetaState a{t.theta, t.phi, AdamState(0.01), AdamState(0.01)};
  MetaState b = a;
  outer_update(a, hg.grad);
  outer_update(b, hg.grad);
  EXPECT_EQ(a.phi, b.phi);
}

TEST(OuterUpdate, FixedDirectionMovesMonotonically) {
  auto t = make_tiny_bilevel(5);
  auto direction = zeros_like(t.phi);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto g : tensors(direction)) {
    for (double& v : g) v = normal(rng);
  }
  MetaState state{t.theta, t.phi, AdamState(0.01), AdamState(0.01)};
  for (int step = 0; step < 10; ++step) {
    const auto before = state.phi;
    outer_update(state, direction);
    auto now = tensors(state.phi);
    auto prev = tensors(before);
    auto dir = tensors(direction);
    for (std::size_t k = 0; k < dir.size(); ++k) {
      for (std::size_t i = 0; i < dir[k].size(); ++i) {
        if (dir[k][i] > 0) EXPECT_LT(now[k][i], prev[k][i]);
        if (dir[k][i] < 0) EXPECT_GT(now[k][i], prev[k][i]);
      }
    }
  }
}

TEST(EarlyStopping, PatienceOneConstantMetricStopsAfterTwoEpochs) {
  EarlyStopping stopper(1);
  std::size_t epochs = 0;
  while (!stopper.should_stop()) {
    stopper.update(0.5, 1.0);
    ++epochs;
  }
  EXPECT_EQ(epochs, 2u);
}

TEST(EarlyStopping, EitherImprovementResets) {
  EarlyStopping stopper(3);
  EXPECT_TRUE(stopper.update(0.5, 1.0));
  EXPECT_FALSE(stopper.update(0.5, 1.0));
  EXPECT_FALSE(stopper.update(0.4, 1.1));
  EXPECT_EQ(stopper.epochs_since_improve(), 2u);
  EXPECT_FALSE(stopper.update(0.4, 0.9));
  EXPECT_EQ(stopper.epochs_since_improve(), 0u);
  EXPECT_TRUE(stopper.update(0.6, 2.0));
  EXPECT_EQ(stopper.epochs_since_improve(), 0u);
  EXPECT_DOUBLE_EQ(stopper.best_acc(), 0.6);
}

TEST(Train, DeterministicLog) {
  const auto s = make_sbm_problem(5);
  const auto a = train(s.problem, small_config());
  const auto b = train(s.problem, small_config());
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(to_json_line(a.log[i]), to_json_line(b.log[i]));
  }
  EXPECT_EQ(a.state.theta, b.state.theta);
  EXPECT_EQ(a.state.phi, b.state.phi);
}

TEST(Train, CheckpointIsEarliestBestValidationEpoch) {
  const auto s = make_sbm_problem(5);
  const auto result = train(s.problem, small_config());
  double best = -1.0;
  std::size_t best_epoch = 0;
  for (const auto& entry : result.log) {
    if (entry.val_acc > best) {
      best = entry.val_acc;
      best_epoch = entry.epoch;
    }
  }
  EXPECT_EQ(result.best_epoch, best_epoch);
  EXPECT_DOUBLE_EQ(result.state.best_val_acc, best);
  EXPECT_DOUBLE_EQ(evaluate(result.state.theta, s.problem.val_features, s.problem.val_labels).accuracy,
                   best);
}

TEST(Train, LossesStayFiniteAndPhasesAreOrdered) {
  const auto s = make_sbm_problem(5);
  const auto result = train(s.problem, small_config());
  ASSERT_FALSE(result.log.empty());
  EXPECT_EQ(result.log.front().phase, "meta");
  bool in_finetune = false;
  for (std::size_t i = 0; i < result.log.size(); ++i) {
    const auto& entry = result.log[i];
    EXPECT_EQ(entry.epoch, i + 1);
    EXPECT_TRUE(std::isfinite(entry.j_pseudo));
    EXPECT_TRUE(std::isfinite(entry.j_gold));
    EXPECT_TRUE(std::isfinite(entry.val_loss));
    if (entry.phase == "finetune") in_finetune = true;
    else EXPECT_FALSE(in_finetune) << "meta epoch after fine-tuning started";
  }
}

TEST(Train, StopsEarlyWithPatience) {
  const auto s = make_sbm_problem(5);
  auto cfg = small_config();
  cfg.patience = 1;
  cfg.max_epochs = 1000;
  const auto result = train(s.problem, cfg);
  const auto meta = std::count_if(result.log.begin(), result.log.end(),
                                  [](const EpochLog& e) { return e.phase == "meta"; });
  EXPECT_LT(meta, 1000);
}

TEST(TrainStatic, UsesFixedPseudoLabels) {
  const auto s = make_sbm_problem(5);
  const auto seeds = seed_labels(s.bundle.labels, s.split.train, s.bundle.n, 2);
  const auto pseudo = ppr_iterate(s.problem.transition, seeds, {0.1, 5});
  const auto result = train_static(s.problem, pseudo, small_config());
  EXPECT_EQ(result.log.front().phase, "static");
  EXPECT_GT(result.state.best_val_acc, 0.5);
}

TEST(TrainSupervised, OnlyFineTunePhase) {
  const auto s = make_sbm_problem(5);
  const auto result = train_supervised(s.problem, small_config());
  for (const auto& entry : result.log) EXPECT_EQ(entry.phase, "supervised");
}

TEST(EpochLogJson, FieldOrder) {
  const EpochLog entry{3, "meta", 0.5, 0.25, 0.75, 1.5, 0.125};
  EXPECT_EQ(to_json_line(entry),
            R"({"epoch":3,"phase":"meta","j_pseudo":0.5,"j_gold":0.25,"val_acc":0.75,)"
            R"("val_loss":1.5,"phi_grad_norm":0.125})");
}

TEST(ConfigValidation, RejectsBadFields) {
  TrainConfig cfg;
  EXPECT_NO_THROW(validate(cfg));
  cfg.eta_theta = 0.0;
  EXPECT_THROW(validate(cfg), Error);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(validate(cfg), Error);
  cfg = TrainConfig{};
  cfg.patience = 0;
  EXPECT_THROW(validate(cfg), Error);
  cfg = TrainConfig{};
  cfg.dropout = 1.0;
  EXPECT_THROW(validate(cfg), Error);
}

}  // namespace
}  // namespace metapn
