#include "metapn/propagation.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "metapn/error.h"

namespace metapn {
namespace {

// Pre-activation W y and the attention score a . ReLU(W y) for one label row.
double attention_score(const PropagatorParams& params, std::span<const double> y,
                       std::span<double> pre) {
  const std::size_t c = params.num_classes();
  double score = 0.0;
  for (std::size_t r = 0; r < c; ++r) {
    double h = 0.0;
    auto w = params.weight.row(r);
    for (std::size_t j = 0; j < c; ++j) h += w[j] * y[j];
    pre[r] = h;
    if (h > 0.0) score += params.attn[r] * h;
  }
  return score;
}

void softmax_inplace(std::span<double> v) {
  const double peak = *std::max_element(v.begin(), v.end());
  double total = 0.0;
  for (double& x : v) {
    x = std::exp(x - peak);
    total += x;
  }
  for (double& x : v) x /= total;
}

void check_trace(const PropagatorParams& params, const PropagationTrace& trace) {
  if (trace.steps.empty()) throw Error(ErrorCode::kInvalidArgument, "empty propagation trace");
  if (params.num_classes() != trace.num_classes() ||
      params.weight.rows() != params.num_classes() ||
      params.weight.cols() != params.num_classes()) {
    throw Error(ErrorCode::kShapeMismatch, "propagator parameters do not match class count " +
                                               std::to_string(trace.num_classes()));
  }
}

void check_node(const PropagationTrace& trace, NodeIndex node) {
  if (node >= trace.num_nodes()) {
    throw Error(ErrorCode::kOutOfRange, "node " + std::to_string(node) + " >= n=" +
                                            std::to_string(trace.num_nodes()));
  }
}

}  // namespace

PropagatorParams init_propagator(std::size_t num_classes, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> noise(-0.01, 0.01);
  PropagatorParams params{std::vector<double>(num_classes),
                          DenseMatrix(num_classes, num_classes)};
  for (double& a : params.attn) a = noise(rng);
  for (std::size_t r = 0; r < num_classes; ++r) {
    for (std::size_t c = 0; c < num_classes; ++c) {
      params.weight(r, c) = (r == c ? 1.0 : 0.0) + noise(rng);
    }
  }
  return params;
}

LabelMatrix seed_labels(std::span<const ClassIndex> labels, std::span<const NodeIndex> train,
                        std::size_t n, std::size_t c) {
  LabelMatrix y(n, c);
  for (NodeIndex node : train) {
    if (node >= n || node >= labels.size()) {
      throw Error(ErrorCode::kOutOfRange, "labeled node " + std::to_string(node));
    }
    if (labels[node] >= c) {
      throw Error(ErrorCode::kLabelOutOfRange,
                  "node " + std::to_string(node) + " has class " +
                      std::to_string(labels[node]) + ", expected < " + std::to_string(c));
    }
    y(node, labels[node]) = 1.0;
  }
  return y;
}

PropagationTrace power_iterate(const CsrMatrix& t, const LabelMatrix& y0, std::size_t k_max) {
  if (t.rows() != t.cols() || t.cols() != y0.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "transition matrix does not match seed labels");
  }
  PropagationTrace trace;
  trace.steps.reserve(k_max + 1);
  trace.steps.push_back(y0);
  for (std::size_t k = 0; k < k_max; ++k) trace.steps.push_back(spmm(t, trace.steps.back()));
  return trace;
}

LabelMatrix ppr_iterate(const CsrMatrix& t, const LabelMatrix& y0, const PprConfig& cfg) {
  if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                "teleport probability " + std::to_string(cfg.alpha) + " outside [0, 1]");
  }
  if (t.rows() != t.cols() || t.cols() != y0.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "transition matrix does not match seed labels");
  }
  LabelMatrix y = y0;
  for (std::size_t k = 0; k < cfg.k_max; ++k) {
    LabelMatrix next = spmm(t, y);
    auto out = next.data();
    auto seed = y0.data();
    if (cfg.alpha != 0.0) {
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = (1.0 - cfg.alpha) * out[i] + cfg.alpha * seed[i];
      }
    }
    y = std::move(next);
  }
  return y;
}

std::vector<double> attention_weights(const PropagatorParams& params,
                                      const PropagationTrace& trace, NodeIndex node) {
  check_trace(params, trace);
  check_node(trace, node);
  std::vector<double> pre(params.num_classes());
  std::vector<double> gamma(trace.steps.size());
  for (std::size_t k = 0; k < trace.steps.size(); ++k) {
    gamma[k] = attention_score(params, trace.steps[k].row(node), pre);
  }
  softmax_inplace(gamma);
  return gamma;
}

PseudoLabels adaptive_propagate(const PropagatorParams& params, const PropagationTrace& trace,
                                std::span<const NodeIndex> nodes) {
  check_trace(params, trace);
  const std::size_t c = trace.num_classes();
  PseudoLabels out{LabelMatrix(nodes.size(), c), std::vector<bool>(nodes.size(), false)};
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto gamma = attention_weights(params, trace, nodes[i]);
    auto dst = out.rows.row(i);
    for (std::size_t k = 0; k < gamma.size(); ++k) {
      auto y = trace.steps[k].row(nodes[i]);
      for (std::size_t j = 0; j < c; ++j) dst[j] += gamma[k] * y[j];
    }
    double mass = 0.0;
    for (double v : dst) mass += v;
    if (mass < kUnreachableMass) {
      out.unreachable[i] = true;
      std::fill(dst.begin(), dst.end(), 0.0);
      continue;
    }
    for (double& v : dst) v /= mass;
  }
  return out;
}

PropagatorGrad zeros_like(const PropagatorParams& params) {
  return {std::vector<double>(params.attn.size(), 0.0),
          DenseMatrix(params.weight.rows(), params.weight.cols())};
}

PropagatorGrad propagator_grad(const PropagatorParams& params, const PropagationTrace& trace,
                               std::span<const NodeIndex> nodes, const DenseMatrix& cotangent) {
  check_trace(params, trace);
  const std::size_t c = trace.num_classes();
  const std::size_t depth = trace.steps.size();
  if (cotangent.rows() != nodes.size() || cotangent.cols() != c) {
    throw Error(ErrorCode::kShapeMismatch, "cotangent must be |nodes| x c");
  }

  PropagatorGrad grad = zeros_like(params);
  std::vector<double> pre(depth * c);
  std::vector<double> gamma(depth);
  std::vector<double> combined(c);
  std::vector<double> d_combined(c);
  std::vector<double> d_gamma(depth);

  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const NodeIndex node = nodes[i];
    check_node(trace, node);
    for (std::size_t k = 0; k < depth; ++k) {
      gamma[k] = attention_score(params, trace.steps[k].row(node),
                                 std::span<double>(pre.data() + k * c, c));
    }
    softmax_inplace(gamma);

    std::fill(combined.begin(), combined.end(), 0.0);
    for (std::size_t k = 0; k < depth; ++k) {
      auto y = trace.steps[k].row(node);
      for (std::size_t j = 0; j < c; ++j) combined[j] += gamma[k] * y[j];
    }
    double mass = 0.0;
    for (double v : combined) mass += v;
    if (mass < kUnreachableMass) continue;

    // Through the renormalization yhat = z / sum(z).
    auto g = cotangent.row(i);
    double g_dot_yhat = 0.0;
    for (std::size_t j = 0; j < c; ++j) g_dot_yhat += g[j] * combined[j] / mass;
    for (std::size_t j = 0; j < c; ++j) d_combined[j] = (g[j] - g_dot_yhat) / mass;

    // Through the convex combination, then the softmax.
    double gamma_dot = 0.0;
    for (std::size_t k = 0; k < depth; ++k) {
      auto y = trace.steps[k].row(node);
      double acc = 0.0;
      for (std::size_t j = 0; j < c; ++j) acc += y[j] * d_combined[j];
      d_gamma[k] = acc;
      gamma_dot += gamma[k] * acc;
    }

    for (std::size_t k = 0; k < depth; ++k) {
      const double d_score = gamma[k] * (d_gamma[k] - gamma_dot);
      if (d_score == 0.0) continue;
      auto y = trace.steps[k].row(node);
      const double* h = pre.data() + k * c;
      for (std::size_t r = 0; r < c; ++r) {
        if (h[r] <= 0.0) continue;  // ReLU subgradient 0 at the kink
        grad.attn[r] += d_score * h[r];
        const double d_h = d_score * params.attn[r];
        auto w_row = grad.weight.row(r);
        for (std::size_t j = 0; j < c; ++j) w_row[j] += d_h * y[j];
      }
    }
  }
  return grad;
}

}  // namespace metapn
