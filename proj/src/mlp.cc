#include "metapn/mlp.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "metapn/error.h"

namespace metapn {
namespace {

// out += x * w for row-major x (rows x in) and w (in x out). Zero inputs are
// skipped, which matters for sparse bag-of-words features.
void accumulate_product(const DenseMatrix& x, const DenseMatrix& w, DenseMatrix& out) {
  const std::size_t out_dim = w.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xi = x.row(i);
    auto dst = out.row(i);
    for (std::size_t j = 0; j < xi.size(); ++j) {
      const double v = xi[j];
      if (v == 0.0) continue;
      auto wj = w.row(j);
      for (std::size_t o = 0; o < out_dim; ++o) dst[o] += v * wj[o];
    }
  }
}

void softmax_rows(DenseMatrix& logits) {
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    const double peak = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double& v : row) {
      v = std::exp(v - peak);
      total += v;
    }
    for (double& v : row) v /= total;
  }
}

void mix(std::uint64_t& h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
}

}  // namespace

MlpParams init_mlp(std::span<const std::size_t> dims, double dropout_rate,
                   std::mt19937_64& rng) {
  if (dims.size() < 2) throw Error(ErrorCode::kInvalidArgument, "MLP needs at least 2 dims");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "dropout rate must lie in [0, 1)");
  }
  MlpParams params;
  params.dropout_rate = dropout_rate;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double range = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
    std::uniform_real_distribution<double> dist(-range, range);
    DenseLayer layer{DenseMatrix(dims[l], dims[l + 1]), std::vector<double>(dims[l + 1], 0.0)};
    for (double& w : layer.weight.data()) w = dist(rng);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

MlpParams zeros_like(const MlpParams& params) {
  MlpParams out;
  out.dropout_rate = params.dropout_rate;
  for (const auto& layer : params.layers) {
    out.layers.push_back({DenseMatrix(layer.in_dim(), layer.out_dim()),
                          std::vector<double>(layer.out_dim(), 0.0)});
  }
  return out;
}

DropoutMask make_dropout_mask(const MlpParams& params, std::size_t rows, std::uint64_t seed) {
  DropoutMask mask{seed, {}};
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - params.dropout_rate);
  const double scale = 1.0 / (1.0 - params.dropout_rate);
  for (const auto& layer : params.layers) {
    DenseMatrix m(rows, layer.in_dim());
    for (double& v : m.data()) v = keep(rng) ? scale : 0.0;
    mask.keep.push_back(std::move(m));
  }
  return mask;
}

std::uint64_t fingerprint(const MlpParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tensors(params)) {
    mix(h, t.size());
    for (double v : t) mix(h, std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

ForwardCache forward(const MlpParams& params, const DenseMatrix& x_rows,
                     const DropoutMask* mask) {
  if (params.layers.empty()) throw Error(ErrorCode::kInvalidArgument, "MLP has no layers");
  if (x_rows.cols() != params.in_dim()) {
    throw Error(ErrorCode::kShapeMismatch, "input has " + std::to_string(x_rows.cols()) +
                                               " columns, first layer expects " +
                                               std::to_string(params.in_dim()));
  }
  if (mask != nullptr && mask->keep.size() != params.layers.size()) {
    throw Error(ErrorCode::kShapeMismatch, "dropout mask layer count");
  }

  ForwardCache cache;
  cache.params_fingerprint = fingerprint(params);
  if (mask != nullptr) cache.mask = *mask;

  DenseMatrix activation = x_rows;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    if (mask != nullptr) {
      const auto& keep = mask->keep[l];
      if (keep.rows() != activation.rows() || keep.cols() != activation.cols()) {
        throw Error(ErrorCode::kShapeMismatch, "dropout mask shape for layer " +
                                                   std::to_string(l));
      }
      auto a = activation.data();
      auto k = keep.data();
      for (std::size_t i = 0; i < a.size(); ++i) a[i] *= k[i];
    }
    DenseMatrix z(activation.rows(), layer.out_dim());
    for (std::size_t i = 0; i < z.rows(); ++i) {
      auto row = z.row(i);
      std::copy(layer.bias.begin(), layer.bias.end(), row.begin());
    }
    accumulate_product(activation, layer.weight, z);
    cache.inputs.push_back(std::move(activation));

    if (l + 1 == params.layers.size()) {
      softmax_rows(z);
      cache.probs = std::move(z);
      break;
    }
    activation = z;
    for (double& v : activation.data()) v = std::max(v, 0.0);
    cache.pre_hidden.push_back(std::move(z));
  }
  return cache;
}

double soft_cross_entropy(const DenseMatrix& probs, const DenseMatrix& targets) {
  if (probs.rows() != targets.rows() || probs.cols() != targets.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "probabilities and targets differ in shape");
  }
  if (probs.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    auto p = probs.row(i);
    auto t = targets.row(i);
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (t[k] != 0.0) total -= t[k] * std::log(std::max(p[k], kLogClamp));
    }
  }
  return total / static_cast<double>(probs.rows());
}

double l2_penalty(const MlpParams& params, double l2_lambda) {
  double sq = 0.0;
  for (double w : params.layers.front().weight.data()) sq += w * w;
  return 0.5 * l2_lambda * sq;
}

MlpParams backward(const MlpParams& params, const ForwardCache& cache,
                   const DenseMatrix& targets, double l2_lambda) {
  if (cache.params_fingerprint != fingerprint(params) ||
      cache.inputs.size() != params.layers.size()) {
    throw Error(ErrorCode::kStaleCache, "forward cache was built with different parameters");
  }
  const DenseMatrix& probs = cache.probs;
  if (targets.rows() != probs.rows() || targets.cols() != probs.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "targets do not match forward batch");
  }
  const std::size_t rows = probs.rows();
  MlpParams grad = zeros_like(params);
  if (rows == 0) {
    if (l2_lambda != 0.0) {
      auto g = grad.layers.front().weight.data();
      auto w = params.layers.front().weight.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = l2_lambda * w[i];
    }
    return grad;
  }

  // Softmax + clamped log: d/dlogit_j = -y'_j + p_j sum(y'), y' = y masked where p > clamp.
  DenseMatrix delta(rows, probs.cols());
  const double inv_rows = 1.0 / static_cast<double>(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    auto p = probs.row(i);
    auto t = targets.row(i);
    auto d = delta.row(i);
    double active_mass = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (p[k] > kLogClamp) active_mass += t[k];
    }
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double active = p[k] > kLogClamp ? t[k] : 0.0;
      d[k] = (p[k] * active_mass - active) * inv_rows;
    }
  }

  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const auto& layer = params.layers[l];
    auto& g = grad.layers[l];
    const DenseMatrix& input = cache.inputs[l];
    for (std::size_t i = 0; i < rows; ++i) {
      auto a = input.row(i);
      auto d = delta.row(i);
      for (std::size_t o = 0; o < d.size(); ++o) g.bias[o] += d[o];
      for (std::size_t j = 0; j < a.size(); ++j) {
        if (a[j] == 0.0) continue;
        auto gw = g.weight.row(j);
        for (std::size_t o = 0; o < d.size(); ++o) gw[o] += a[j] * d[o];
      }
    }
    if (l == 0) break;

    DenseMatrix prev(rows, layer.in_dim());
    const DenseMatrix& pre = cache.pre_hidden[l - 1];
    for (std::size_t i = 0; i < rows; ++i) {
      auto d = delta.row(i);
      auto dst = prev.row(i);
      for (std::size_t j = 0; j < dst.size(); ++j) {
        if (pre(i, j) <= 0.0) continue;
        auto w = layer.weight.row(j);
        double acc = 0.0;
        for (std::size_t o = 0; o < d.size(); ++o) acc += w[o] * d[o];
        if (cache.mask) acc *= cache.mask->keep[l](i, j);
        dst[j] = acc;
      }
    }
    delta = std::move(prev);
  }

  if (l2_lambda != 0.0) {
    auto g = grad.layers.front().weight.data();
    auto w = params.layers.front().weight.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += l2_lambda * w[i];
  }
  return grad;
}

std::vector<std::size_t> predict(const DenseMatrix& probs) {
  std::vector<std::size_t> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) out[i] = argmax(probs.row(i));
  return out;
}

std::vector<std::span<double>> tensors(MlpParams& params) {
  std::vector<std::span<double>> out;
  for (auto& layer : params.layers) {
    out.emplace_back(layer.weight.data());
    out.emplace_back(layer.bias);
  }
  return out;
}

std::vector<std::span<const double>> tensors(const MlpParams& params) {
  std::vector<std::span<const double>> out;
  for (const auto& layer : params.layers) {
    out.emplace_back(layer.weight.data());
    out.emplace_back(layer.bias);
  }
  return out;
}

MlpParams axpy(const MlpParams& theta, double scale, const MlpParams& direction) {
  MlpParams out = theta;
  auto dst = tensors(out);
  auto dir = tensors(direction);
  if (dst.size() != dir.size()) throw Error(ErrorCode::kShapeMismatch, "axpy layer count");
  for (std::size_t t = 0; t < dst.size(); ++t) {
    if (dst[t].size() != dir[t].size()) throw Error(ErrorCode::kShapeMismatch, "axpy tensor");
    for (std::size_t i = 0; i < dst[t].size(); ++i) dst[t][i] += scale * dir[t][i];
  }
  return out;
}

double squared_norm(const MlpParams& params) {
  double sq = 0.0;
  for (const auto& t : tensors(params)) {
    for (double v : t) sq += v * v;
  }
  return sq;
}

}  // namespace metapn
