#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "metapn/adam.h"
#include "metapn/bundle.h"
#include "metapn/mlp.h"
#include "metapn/propagation.h"
#include "metapn/sparse_graph.h"

namespace metapn {

struct TrainConfig {
  double eta_theta = 0.01;       // inner (target model) learning rate
  double eta_phi = 0.01;         // outer (propagator) learning rate
  double epsilon_scale = 0.01;   // finite-difference step is epsilon_scale / ||grad J_gold||
  std::size_t batch_size = 1024;
  std::size_t k_max = 10;
  std::size_t hidden_dim = 64;
  double l2_lambda = 0.005;
  double dropout = 0.3;
  std::size_t patience = 100;
  std::size_t max_epochs = 10000;
  std::size_t finetune_epochs = 100;
  std::uint64_t rng_seed = 0;
};

// Throws kInvalidArgument when a field is outside its domain.
void validate(const TrainConfig& cfg);

// Everything a training run reads about the graph. Only the labels of the
// training nodes are kept for optimization; validation labels are kept for
// metrics only and test labels are never stored.
struct MetaProblem {
  const DenseMatrix* features = nullptr;  // all nodes, borrowed
  std::size_t num_classes = 0;
  CsrMatrix transition;
  PropagationTrace trace;

  std::vector<NodeIndex> gold_nodes;
  DenseMatrix gold_features;
  DenseMatrix gold_targets;  // one-hot

  std::vector<NodeIndex> val_nodes;
  DenseMatrix val_features;
  std::vector<ClassIndex> val_labels;

  std::vector<NodeIndex> unlabeled;   // every node outside the training set
  std::vector<bool> reachable;        // per node: receives label mass within K steps
};

// Throws kEmptyClass when some class has no training node.
MetaProblem make_problem(const CsrMatrix& adjacency, const DenseMatrix& features,
                         std::span<const ClassIndex> labels, const SplitSpec& split,
                         std::size_t num_classes, std::size_t k_max);

// Per node, whether the mean label mass over Y^(0..K) reaches kUnreachableMass.
std::vector<bool> reachable_nodes(const PropagationTrace& trace);

struct MetaState {
  MlpParams theta;
  PropagatorParams phi;
  AdamState adam_theta;
  AdamState adam_phi;
  double best_val_acc = -1.0;
  std::size_t epochs_since_improve = 0;
};

MetaState init_state(const MetaProblem& problem, const TrainConfig& cfg, std::mt19937_64& rng);

// Uniform sample without replacement of min(b, |pool|) nodes from the
// unlabeled, reachable nodes, returned in ascending order.
std::vector<NodeIndex> sample_unlabeled_batch(std::span<const NodeIndex> unlabeled,
                                              const std::vector<bool>& reachable, std::size_t b,
                                              std::mt19937_64& rng);

struct LossAndGrad {
  double loss = 0.0;
  MlpParams grad;
};

// J_pseudo(theta, phi) on a batch: soft cross-entropy against the propagator's
// pseudo-labels plus L2 on the first layer. Throws kUnreachableNode when a
// batch node has no label mass.
LossAndGrad pseudo_loss(const MlpParams& theta, const PropagatorParams& phi,
                        const MetaProblem& problem, std::span<const NodeIndex> batch,
                        const DropoutMask* mask, double l2_lambda);

// J_gold on the training nodes: hard cross-entropy, no dropout, no L2.
LossAndGrad gold_loss(const MlpParams& theta, const MetaProblem& problem);

struct InnerStep {
  double j_pseudo = 0.0;
  MlpParams theta_before;
  MlpParams grad;
};

// One Adam step of theta on J_pseudo. Returns the pre-update parameters and
// gradient so the hypergradient can be formed around them.
InnerStep inner_update(MetaState& state, const MetaProblem& problem,
                       std::span<const NodeIndex> batch, const DropoutMask* mask,
                       const TrainConfig& cfg);

struct HyperGradient {
  PropagatorGrad grad;
  double j_gold = 0.0;   // at the virtual one-step SGD point theta'
  double epsilon = 0.0;
};

// d J_gold(theta'(phi)) / d phi with theta' = theta - eta * grad_theta J_pseudo,
// approximated by a central difference of grad_phi J_pseudo at
// theta +/- epsilon * grad J_gold(theta'), scaled by -eta / (2 epsilon).
// `pseudo_grad` must be grad_theta J_pseudo(theta, phi) under the same mask.
HyperGradient hypergradient(const MlpParams& theta, const MlpParams& pseudo_grad,
                            const PropagatorParams& phi, const MetaProblem& problem,
                            std::span<const NodeIndex> batch, const DropoutMask* mask,
                            double eta, double epsilon_scale);

// Convenience overload that computes grad_theta J_pseudo itself.
HyperGradient hypergradient(const MlpParams& theta, const PropagatorParams& phi,
                            const MetaProblem& problem, std::span<const NodeIndex> batch,
                            const DropoutMask* mask, const TrainConfig& cfg);

void outer_update(MetaState& state, const PropagatorGrad& hypergrad);

// Patience resets whenever validation accuracy rises or validation loss falls.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // Returns true when `val_acc` is a new strict best.
  bool update(double val_acc, double val_loss);
  bool should_stop() const noexcept { return since_improve_ >= patience_; }
  std::size_t epochs_since_improve() const noexcept { return since_improve_; }
  double best_acc() const noexcept { return best_acc_; }

 private:
  std::size_t patience_;
  std::size_t since_improve_ = 0;
  double best_acc_ = -1.0;
  double best_loss_ = std::numeric_limits<double>::infinity();
};

struct EpochLog {
  std::size_t epoch = 0;
  std::string phase;  // "meta", "static", "supervised" or "finetune"
  double j_pseudo = 0.0;
  double j_gold = 0.0;
  double val_acc = 0.0;
  double val_loss = 0.0;
  double phi_grad_norm = 0.0;
};

std::string to_json_line(const EpochLog& entry);

struct Evaluation {
  double accuracy = 0.0;
  double loss = 0.0;
};

Evaluation evaluate(const MlpParams& theta, const DenseMatrix& x_rows,
                    std::span<const ClassIndex> labels);

struct TrainResult {
  MetaState state;                 // theta/phi at the best validation epoch
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
};

// Alternating inner/outer updates, early stopping, then fine-tuning on the
// training nodes. Returns the checkpoint with the best validation accuracy.
TrainResult train(const MetaProblem& problem, const TrainConfig& cfg);

// Same target-model loop with fixed pseudo-labels (rows of `pseudo_labels`,
// one per node) and no propagator updates, followed by fine-tuning.
TrainResult train_static(const MetaProblem& problem, const LabelMatrix& pseudo_labels,
                         const TrainConfig& cfg);

// Target model trained on the labeled nodes only.
TrainResult train_supervised(const MetaProblem& problem, const TrainConfig& cfg);

}  // namespace metapn
