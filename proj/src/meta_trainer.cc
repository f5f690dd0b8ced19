#include "metapn/meta_trainer.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "json.hpp"
#include "metapn/error.h"

namespace metapn {
namespace {

double norm(const PropagatorGrad& g) {
  double sq = 0.0;
  for (const auto& t : tensors(g)) {
    for (double v : t) sq += v * v;
  }
  return std::sqrt(sq);
}

// d J_pseudo / d Yhat for a mean soft cross-entropy over the batch rows.
DenseMatrix pseudo_label_cotangent(const DenseMatrix& probs) {
  DenseMatrix cot(probs.rows(), probs.cols());
  const double inv_rows = probs.rows() == 0 ? 0.0 : 1.0 / static_cast<double>(probs.rows());
  auto p = probs.data();
  auto out = cot.data();
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = -std::log(std::max(p[i], kLogClamp)) * inv_rows;
  return cot;
}

// Best-by-validation-accuracy checkpoint shared by all phases of one run.
struct BestTracker {
  double acc = -1.0;
  MlpParams theta;
  PropagatorParams phi;
  std::size_t epoch = 0;

  void offer(double val_acc, const MlpParams& t, const PropagatorParams& p, std::size_t ep) {
    if (val_acc > acc) {
      acc = val_acc;
      theta = t;
      phi = p;
      epoch = ep;
    }
  }
};

// Hard-label training of theta on the labeled nodes with early stopping on
// validation. Used for fine-tuning and for the supervised baseline.
void supervised_phase(MlpParams theta, const PropagatorParams& phi, const MetaProblem& problem,
                      const TrainConfig& cfg, std::size_t max_epochs, const std::string& phase,
                      std::mt19937_64& rng, BestTracker& best, TrainResult& result) {
  AdamState adam(cfg.eta_theta);
  EarlyStopping stopper(cfg.patience);
  std::size_t epoch = result.log.empty() ? 0 : result.log.back().epoch;
  for (std::size_t step = 0; step < max_epochs; ++step) {
    ++epoch;
    const auto mask = make_dropout_mask(theta, problem.gold_features.rows(), rng());
    const auto cache = forward(theta, problem.gold_features, &mask);
    const double loss = soft_cross_entropy(cache.probs, problem.gold_targets) +
                        l2_penalty(theta, cfg.l2_lambda);
    adam_step(adam, theta, backward(theta, cache, problem.gold_targets, cfg.l2_lambda));

    const auto val = evaluate(theta, problem.val_features, problem.val_labels);
    result.log.push_back({epoch, phase, 0.0, loss, val.accuracy, val.loss, 0.0});
    best.offer(val.accuracy, theta, phi, epoch);
    stopper.update(val.accuracy, val.loss);
    if (stopper.should_stop()) break;
  }
}

void finish(TrainResult& result, const BestTracker& best) {
  result.state.theta = best.theta;
  result.state.phi = best.phi;
  result.state.best_val_acc = best.acc;
  result.best_epoch = best.epoch;
}

}  // namespace

void validate(const TrainConfig& cfg) {
  if (!(cfg.eta_theta > 0.0) || !(cfg.eta_phi > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "learning rates must be > 0");
  }
  if (!(cfg.epsilon_scale > 0.0)) throw Error(ErrorCode::kInvalidArgument, "epsilon_scale must be > 0");
  if (cfg.batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  if (cfg.max_epochs < 1) throw Error(ErrorCode::kInvalidArgument, "max_epochs must be >= 1");
  if (cfg.patience < 1) throw Error(ErrorCode::kInvalidArgument, "patience must be >= 1");
  if (cfg.hidden_dim < 1) throw Error(ErrorCode::kInvalidArgument, "hidden_dim must be >= 1");
  if (!(cfg.l2_lambda >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "l2_lambda must be >= 0");
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "dropout must lie in [0, 1)");
  }
}

std::vector<bool> reachable_nodes(const PropagationTrace& trace) {
  std::vector<bool> out(trace.num_nodes(), false);
  const double depth = static_cast<double>(trace.steps.size());
  for (NodeIndex i = 0; i < trace.num_nodes(); ++i) {
    double mass = 0.0;
    for (const auto& step : trace.steps) {
      for (double v : step.row(i)) mass += v;
    }
    out[i] = mass / depth >= kUnreachableMass;
  }
  return out;
}

MetaProblem make_problem(const CsrMatrix& adjacency, const DenseMatrix& features,
                         std::span<const ClassIndex> labels, const SplitSpec& split,
                         std::size_t num_classes, std::size_t k_max) {
  const std::size_t n = adjacency.rows();
  if (features.rows() != n || labels.size() != n) {
    throw Error(ErrorCode::kShapeMismatch, "graph, features and labels disagree on n");
  }
  std::vector<std::size_t> per_class(num_classes, 0);
  for (NodeIndex node : split.train) {
    if (node >= n) throw Error(ErrorCode::kOutOfRange, "train node " + std::to_string(node));
    if (labels[node] >= num_classes) {
      throw Error(ErrorCode::kLabelOutOfRange, "train node " + std::to_string(node));
    }
    ++per_class[labels[node]];
  }
  for (std::size_t cls = 0; cls < num_classes; ++cls) {
    if (per_class[cls] == 0) {
      throw Error(ErrorCode::kEmptyClass, "class " + std::to_string(cls) + " has no training node");
    }
  }

  MetaProblem problem;
  problem.features = &features;
  problem.num_classes = num_classes;
  problem.transition = sym_normalize_with_self_loops(adjacency);
  problem.trace = power_iterate(problem.transition, seed_labels(labels, split.train, n, num_classes),
                                k_max);

  problem.gold_nodes = split.train;
  problem.gold_features = features.gather_rows(split.train);
  problem.gold_targets = DenseMatrix(split.train.size(), num_classes);
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    problem.gold_targets(i, labels[split.train[i]]) = 1.0;
  }

  problem.val_nodes = split.val;
  problem.val_features = features.gather_rows(split.val);
  for (NodeIndex node : split.val) {
    if (node >= n) throw Error(ErrorCode::kOutOfRange, "validation node " + std::to_string(node));
    problem.val_labels.push_back(labels[node]);
  }

  problem.unlabeled = unlabeled_nodes(split, n);
  problem.reachable = reachable_nodes(problem.trace);
  return problem;
}

MetaState init_state(const MetaProblem& problem, const TrainConfig& cfg, std::mt19937_64& rng) {
  const std::size_t dims[] = {problem.features->cols(), cfg.hidden_dim, problem.num_classes};
  MetaState state;
  state.theta = init_mlp(dims, cfg.dropout, rng);
  state.phi = init_propagator(problem.num_classes, rng);
  state.adam_theta = AdamState(cfg.eta_theta);
  state.adam_phi = AdamState(cfg.eta_phi);
  return state;
}

std::vector<NodeIndex> sample_unlabeled_batch(std::span<const NodeIndex> unlabeled,
                                              const std::vector<bool>& reachable, std::size_t b,
                                              std::mt19937_64& rng) {
  std::vector<NodeIndex> pool;
  for (NodeIndex node : unlabeled) {
    if (node < reachable.size() && reachable[node]) pool.push_back(node);
  }
  if (pool.empty()) {
    throw Error(ErrorCode::kEmptyPool,
                "no unlabeled node receives label mass; the unlabeled set is disconnected from "
                "every labeled node");
  }
  const std::size_t take = std::min(b, pool.size());
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(take);
  std::sort(pool.begin(), pool.end());
  return pool;
}

LossAndGrad pseudo_loss(const MlpParams& theta, const PropagatorParams& phi,
                        const MetaProblem& problem, std::span<const NodeIndex> batch,
                        const DropoutMask* mask, double l2_lambda) {
  const auto targets = adaptive_propagate(phi, problem.trace, batch);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (targets.unreachable[i]) {
      throw Error(ErrorCode::kUnreachableNode,
                  "node " + std::to_string(batch[i]) + " has no pseudo-label mass");
    }
  }
  const auto cache = forward(theta, problem.features->gather_rows(batch), mask);
  return {soft_cross_entropy(cache.probs, targets.rows) + l2_penalty(theta, l2_lambda),
          backward(theta, cache, targets.rows, l2_lambda)};
}

LossAndGrad gold_loss(const MlpParams& theta, const MetaProblem& problem) {
  const auto cache = forward(theta, problem.gold_features);
  return {soft_cross_entropy(cache.probs, problem.gold_targets),
          backward(theta, cache, problem.gold_targets, 0.0)};
}

InnerStep inner_update(MetaState& state, const MetaProblem& problem,
                       std::span<const NodeIndex> batch, const DropoutMask* mask,
                       const TrainConfig& cfg) {
  if (batch.empty()) throw Error(ErrorCode::kInvalidArgument, "inner update on an empty batch");
  auto [loss, grad] = pseudo_loss(state.theta, state.phi, problem, batch, mask, cfg.l2_lambda);
  InnerStep step{loss, state.theta, std::move(grad)};
  adam_step(state.adam_theta, state.theta, step.grad);
  return step;
}

HyperGradient hypergradient(const MlpParams& theta, const MlpParams& pseudo_grad,
                            const PropagatorParams& phi, const MetaProblem& problem,
                            std::span<const NodeIndex> batch, const DropoutMask* mask,
                            double eta, double epsilon_scale) {
  HyperGradient out{zeros_like(phi), 0.0, 0.0};
  const MlpParams theta_prime = axpy(theta, -eta, pseudo_grad);
  auto gold = gold_loss(theta_prime, problem);
  out.j_gold = gold.loss;

  const double gold_norm = std::sqrt(squared_norm(gold.grad));
  if (gold_norm == 0.0 || eta == 0.0) return out;
  out.epsilon = epsilon_scale / (gold_norm + 1e-12);

  const DenseMatrix x_batch = problem.features->gather_rows(batch);
  auto phi_grad_at = [&](double sign) {
    const MlpParams shifted = axpy(theta, sign * out.epsilon, gold.grad);
    const auto cache = forward(shifted, x_batch, mask);
    return propagator_grad(phi, problem.trace, batch, pseudo_label_cotangent(cache.probs));
  };
  const PropagatorGrad plus = phi_grad_at(+1.0);
  const PropagatorGrad minus = phi_grad_at(-1.0);

  const double scale = -eta / (2.0 * out.epsilon);
  auto dst = tensors(out.grad);
  auto p = tensors(plus);
  auto m = tensors(minus);
  for (std::size_t t = 0; t < dst.size(); ++t) {
    for (std::size_t i = 0; i < dst[t].size(); ++i) dst[t][i] = scale * (p[t][i] - m[t][i]);
  }
  return out;
}

HyperGradient hypergradient(const MlpParams& theta, const PropagatorParams& phi,
                            const MetaProblem& problem, std::span<const NodeIndex> batch,
                            const DropoutMask* mask, const TrainConfig& cfg) {
  const auto pseudo = pseudo_loss(theta, phi, problem, batch, mask, cfg.l2_lambda);
  return hypergradient(theta, pseudo.grad, phi, problem, batch, mask, cfg.eta_theta,
                       cfg.epsilon_scale);
}

void outer_update(MetaState& state, const PropagatorGrad& hypergrad) {
  adam_step(state.adam_phi, state.phi, hypergrad);
}

bool EarlyStopping::update(double val_acc, double val_loss) {
  const bool better_acc = val_acc > best_acc_;
  const bool better_loss = val_loss < best_loss_;
  if (better_acc) best_acc_ = val_acc;
  if (better_loss) best_loss_ = val_loss;
  since_improve_ = (better_acc || better_loss) ? 0 : since_improve_ + 1;
  return better_acc;
}

std::string to_json_line(const EpochLog& entry) {
  nlohmann::ordered_json j;
  j["epoch"] = entry.epoch;
  j["phase"] = entry.phase;
  j["j_pseudo"] = entry.j_pseudo;
  j["j_gold"] = entry.j_gold;
  j["val_acc"] = entry.val_acc;
  j["val_loss"] = entry.val_loss;
  j["phi_grad_norm"] = entry.phi_grad_norm;
  return j.dump();
}

Evaluation evaluate(const MlpParams& theta, const DenseMatrix& x_rows,
                    std::span<const ClassIndex> labels) {
  if (x_rows.rows() != labels.size()) {
    throw Error(ErrorCode::kShapeMismatch, "evaluation rows and labels differ");
  }
  if (labels.empty()) return {};
  const auto cache = forward(theta, x_rows);
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto p = cache.probs.row(i);
    if (argmax(p) == labels[i]) ++correct;
    loss -= std::log(std::max(p[labels[i]], kLogClamp));
  }
  const double rows = static_cast<double>(labels.size());
  return {static_cast<double>(correct) / rows, loss / rows};
}

TrainResult train(const MetaProblem& problem, const TrainConfig& cfg) {
  validate(cfg);
  std::mt19937_64 rng(cfg.rng_seed);
  TrainResult result;
  result.state = init_state(problem, cfg, rng);
  MetaState& state = result.state;
  EarlyStopping stopper(cfg.patience);
  BestTracker best;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto batch = sample_unlabeled_batch(problem.unlabeled, problem.reachable, cfg.batch_size, rng);
    const auto pseudo = adaptive_propagate(state.phi, problem.trace, batch);
    std::erase_if(batch, [&, i = std::size_t{0}](NodeIndex) mutable {
      return pseudo.unreachable[i++];
    });
    if (batch.empty()) throw Error(ErrorCode::kEmptyPool, "every sampled node lost its label mass");

    const auto mask = make_dropout_mask(state.theta, batch.size(), rng());
    const auto inner = inner_update(state, problem, batch, &mask, cfg);
    const auto hyper = hypergradient(inner.theta_before, inner.grad, state.phi, problem, batch,
                                     &mask, state.adam_theta.lr, cfg.epsilon_scale);
    outer_update(state, hyper.grad);

    const double j_gold = gold_loss(state.theta, problem).loss;
    const auto val = evaluate(state.theta, problem.val_features, problem.val_labels);
    result.log.push_back({epoch, "meta", inner.j_pseudo, j_gold, val.accuracy, val.loss,
                          norm(hyper.grad)});
    best.offer(val.accuracy, state.theta, state.phi, epoch);
    stopper.update(val.accuracy, val.loss);
    state.best_val_acc = best.acc;
    state.epochs_since_improve = stopper.epochs_since_improve();
    if (stopper.should_stop()) break;
  }

  supervised_phase(best.theta, best.phi, problem, cfg, cfg.finetune_epochs, "finetune", rng, best,
                   result);
  finish(result, best);
  return result;
}

TrainResult train_static(const MetaProblem& problem, const LabelMatrix& pseudo_labels,
                         const TrainConfig& cfg) {
  validate(cfg);
  if (pseudo_labels.rows() != problem.trace.num_nodes() ||
      pseudo_labels.cols() != problem.num_classes) {
    throw Error(ErrorCode::kShapeMismatch, "static pseudo-labels must be n x c");
  }
  std::mt19937_64 rng(cfg.rng_seed);
  TrainResult result;
  result.state = init_state(problem, cfg, rng);
  MetaState& state = result.state;
  BestTracker best;

  // Row-normalized targets; nodes without mass never enter a batch.
  LabelMatrix targets = pseudo_labels;
  std::vector<bool> has_mass(targets.rows(), false);
  for (std::size_t i = 0; i < targets.rows(); ++i) {
    auto row = targets.row(i);
    double mass = 0.0;
    for (double v : row) mass += v;
    if (mass < kUnreachableMass) continue;
    has_mass[i] = true;
    for (double& v : row) v /= mass;
  }
  const bool any_pool = std::any_of(problem.unlabeled.begin(), problem.unlabeled.end(),
                                    [&](NodeIndex node) { return has_mass[node]; });

  if (any_pool) {
    EarlyStopping stopper(cfg.patience);
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
      const auto batch = sample_unlabeled_batch(problem.unlabeled, has_mass, cfg.batch_size, rng);
      const auto mask = make_dropout_mask(state.theta, batch.size(), rng());
      const auto cache = forward(state.theta, problem.features->gather_rows(batch), &mask);
      const auto batch_targets = targets.gather_rows(batch);
      const double j_pseudo = soft_cross_entropy(cache.probs, batch_targets) +
                              l2_penalty(state.theta, cfg.l2_lambda);
      adam_step(state.adam_theta, state.theta,
                backward(state.theta, cache, batch_targets, cfg.l2_lambda));

      const double j_gold = gold_loss(state.theta, problem).loss;
      const auto val = evaluate(state.theta, problem.val_features, problem.val_labels);
      result.log.push_back({epoch, "static", j_pseudo, j_gold, val.accuracy, val.loss, 0.0});
      best.offer(val.accuracy, state.theta, state.phi, epoch);
      stopper.update(val.accuracy, val.loss);
      state.epochs_since_improve = stopper.epochs_since_improve();
      if (stopper.should_stop()) break;
    }
  } else {
    best.theta = state.theta;
    best.phi = state.phi;
  }

  supervised_phase(best.theta, best.phi, problem, cfg, cfg.finetune_epochs, "finetune", rng, best,
                   result);
  finish(result, best);
  return result;
}

TrainResult train_supervised(const MetaProblem& problem, const TrainConfig& cfg) {
  validate(cfg);
  std::mt19937_64 rng(cfg.rng_seed);
  TrainResult result;
  result.state = init_state(problem, cfg, rng);
  BestTracker best;
  supervised_phase(result.state.theta, result.state.phi, problem, cfg, cfg.max_epochs,
                   "supervised", rng, best, result);
  finish(result, best);
  return result;
}

}  // namespace metapn
