#pragma once

// Fully-connected ReLU networks over a flat parameter vector.
//
// Parameter layout: for each layer l = 0..L-1 the weight matrix W_l
// (n_{l+1} x n_l, row-major) followed by the bias b_l (n_{l+1}) when biases
// are enabled. Hidden layers use ReLU with derivative 0 at exactly 0; the
// output layer is the identity. A mask multiplies the parameters
// element-wise, so a masked network evaluates f at m * theta.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "awt/numerics.hpp"

namespace awt {

enum class LossKind { squared, cross_entropy, logistic };

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "squared") return LossKind::squared;
  if (s == "cross_entropy" || s == "ce") return LossKind::cross_entropy;
  if (s == "logistic") return LossKind::logistic;
  throw std::invalid_argument("unknown loss kind '" + s + "'");
}

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::squared: return "squared";
    case LossKind::cross_entropy: return "cross_entropy";
    case LossKind::logistic: return "logistic";
  }
  return "unknown";
}

struct MlpSpec {
  std::vector<std::size_t> layer_sizes;
  bool bias = true;

  void validate() const {
    if (layer_sizes.size() < 2)
      throw std::invalid_argument("MlpSpec: need at least input and output sizes");
    for (auto n : layer_sizes)
      if (n == 0) throw std::invalid_argument("MlpSpec: layer sizes must be >= 1");
  }

  std::size_t num_layers() const { return layer_sizes.size() - 1; }
  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  std::size_t fan_in(std::size_t l) const { return layer_sizes[l]; }
  std::size_t fan_out(std::size_t l) const { return layer_sizes[l + 1]; }

  std::size_t layer_param_count(std::size_t l) const {
    return fan_in(l) * fan_out(l) + (bias ? fan_out(l) : 0);
  }

  std::size_t weight_offset(std::size_t l) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < l; ++i) off += layer_param_count(i);
    return off;
  }

  std::size_t bias_offset(std::size_t l) const {
    return weight_offset(l) + fan_in(l) * fan_out(l);
  }

  std::size_t param_count() const {
    std::size_t p = 0;
    for (std::size_t l = 0; l < num_layers(); ++l) p += layer_param_count(l);
    return p;
  }

  std::size_t weight_count() const {
    std::size_t p = 0;
    for (std::size_t l = 0; l < num_layers(); ++l) p += fan_in(l) * fan_out(l);
    return p;
  }

  /// 1 at weight coordinates, 0 at bias coordinates.
  std::vector<bool> weight_indicator() const {
    std::vector<bool> out(param_count(), false);
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const auto off = weight_offset(l);
      std::fill(out.begin() + static_cast<std::ptrdiff_t>(off),
                out.begin() + static_cast<std::ptrdiff_t>(off + fan_in(l) * fan_out(l)), true);
    }
    return out;
  }

  bool operator==(const MlpSpec&) const = default;
};

struct Params {
  MlpSpec spec;
  Vector theta;
};

/// Binary mask over the flat parameter vector. Bias coordinates are always 1.
struct Mask {
  Vector values;
  double density = 1.0;

  std::size_t size() const { return static_cast<std::size_t>(values.size()); }

  static Mask all_ones(const MlpSpec& spec) {
    return Mask{Vector::Ones(static_cast<Eigen::Index>(spec.param_count())), 1.0};
  }

  std::size_t kept() const {
    return static_cast<std::size_t>(std::count_if(values.begin(), values.end(),
                                                   [](double v) { return v != 0.0; }));
  }
};

inline Eigen::Map<const Matrix> layer_weight(const MlpSpec& s, const Vector& theta,
                                             std::size_t l) {
  return {theta.data() + s.weight_offset(l), static_cast<Eigen::Index>(s.fan_out(l)),
          static_cast<Eigen::Index>(s.fan_in(l))};
}

inline Eigen::Map<const Vector> layer_bias(const MlpSpec& s, const Vector& theta, std::size_t l) {
  return {theta.data() + s.bias_offset(l), static_cast<Eigen::Index>(s.fan_out(l))};
}

inline Eigen::Map<Matrix> layer_weight(const MlpSpec& s, Vector& theta, std::size_t l) {
  return {theta.data() + s.weight_offset(l), static_cast<Eigen::Index>(s.fan_out(l)),
          static_cast<Eigen::Index>(s.fan_in(l))};
}

inline Eigen::Map<Vector> layer_bias(const MlpSpec& s, Vector& theta, std::size_t l) {
  return {theta.data() + s.bias_offset(l), static_cast<Eigen::Index>(s.fan_out(l))};
}

inline void check_mask(const MlpSpec& spec, const Mask* mask) {
  if (mask && mask->size() != spec.param_count())
    throw std::invalid_argument("mask length does not match parameter count");
}

/// m * theta, or theta itself when no mask is given.
inline Vector effective_params(const Params& p, const Mask* mask) {
  if (static_cast<std::size_t>(p.theta.size()) != p.spec.param_count())
    throw std::invalid_argument("parameter vector length does not match spec");
  check_mask(p.spec, mask);
  return mask ? Vector(p.theta.cwiseProduct(mask->values)) : p.theta;
}

/// He-scaled Gaussian weights (variance 2 / fan_in), zero biases.
inline Params init_params(const MlpSpec& spec, Rng& rng) {
  spec.validate();
  Params p{spec, Vector::Zero(static_cast<Eigen::Index>(spec.param_count()))};
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const double scale = std::sqrt(2.0 / static_cast<double>(spec.fan_in(l)));
    auto w = layer_weight(spec, p.theta, l);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = scale * rng.normal();
  }
  return p;
}

/// Activations of a batch (one example per row).
struct ForwardPass {
  std::vector<Matrix> inputs;  // inputs[l] feeds layer l; inputs[0] is X
  std::vector<Matrix> active;  // active[l]: ReLU derivative (0/1) of hidden layer l
  Matrix output;
};

inline ForwardPass forward_pass(const MlpSpec& spec, const Vector& eff, const Matrix& X) {
  if (static_cast<std::size_t>(X.cols()) != spec.input_dim())
    throw std::invalid_argument("input dimension mismatch: expected " +
                                std::to_string(spec.input_dim()) + ", got " +
                                std::to_string(X.cols()));
  const std::size_t L = spec.num_layers();
  ForwardPass fp;
  fp.inputs.reserve(L);
  fp.active.reserve(L - 1);
  fp.inputs.push_back(X);
  for (std::size_t l = 0; l < L; ++l) {
    Matrix z = fp.inputs[l] * layer_weight(spec, eff, l).transpose();
    if (spec.bias) z.rowwise() += layer_bias(spec, eff, l).transpose();
    if (l + 1 == L) {
      fp.output = std::move(z);
    } else {
      fp.active.push_back((z.array() > 0.0).cast<double>().matrix());
      fp.inputs.push_back(z.cwiseMax(0.0));
    }
  }
  return fp;
}

inline Matrix forward_batch(const Params& p, const Mask* mask, const Matrix& X) {
  return forward_pass(p.spec, effective_params(p, mask), X).output;
}

inline Vector forward(const Params& p, const Mask* mask, const Vector& x) {
  return forward_batch(p, mask, x.transpose()).row(0).transpose();
}

/// Reverse pass for the scalar sum_n out_adjoint[n] . f(x_n).
/// Returns the gradient with respect to the effective parameters and, when
/// requested, with respect to each input row.
struct BackwardResult {
  Vector params;
  Matrix inputs;
};

inline BackwardResult backward_pass(const MlpSpec& spec, const Vector& eff, const ForwardPass& fp,
                                    const Matrix& out_adjoint, bool want_params,
                                    bool want_inputs) {
  const std::size_t L = spec.num_layers();
  BackwardResult r;
  if (want_params) r.params = Vector::Zero(eff.size());
  Matrix delta = out_adjoint;
  for (std::size_t li = L; li-- > 0;) {
    if (want_params) {
      Eigen::Map<Matrix>(r.params.data() + spec.weight_offset(li),
                         static_cast<Eigen::Index>(spec.fan_out(li)),
                         static_cast<Eigen::Index>(spec.fan_in(li))) .noalias() =
          delta.transpose() * fp.inputs[li];
      if (spec.bias)
        Eigen::Map<Vector>(r.params.data() + spec.bias_offset(li),
                           static_cast<Eigen::Index>(spec.fan_out(li))) =
            delta.colwise().sum().transpose();
    }
    if (li == 0 && !want_inputs) break;
    Matrix prev = delta * layer_weight(spec, eff, li);
    if (li > 0) prev.array() *= fp.active[li - 1].array();
    delta = std::move(prev);
  }
  if (want_inputs) r.inputs = std::move(delta);
  return r;
}

/// Per-example losses and their derivatives with respect to the outputs.
/// Squared: 0.5 |f - y|^2. Cross-entropy with (possibly soft) target y:
/// -sum_j y_j log softmax(f)_j, evaluated with a max-shifted log-sum-exp.
/// Logistic, for one output and targets in {-1, +1}: log(1 + exp(-y f)).
struct OutputLoss {
  Vector losses;
  Matrix grad;
};

inline OutputLoss output_loss(const Matrix& out, const Matrix& targets, LossKind kind) {
  if (out.rows() != targets.rows() || out.cols() != targets.cols())
    throw std::invalid_argument("output/target shape mismatch");
  OutputLoss r{Vector(out.rows()), Matrix(out.rows(), out.cols())};
  switch (kind) {
    case LossKind::squared:
      r.grad = out - targets;
      r.losses = 0.5 * r.grad.rowwise().squaredNorm();
      return r;
    case LossKind::cross_entropy:
      for (Eigen::Index n = 0; n < out.rows(); ++n) {
        const double mx = out.row(n).maxCoeff();
        const Eigen::RowVectorXd e = (out.row(n).array() - mx).exp().matrix();
        const double s = e.sum();
        const double lse = mx + std::log(s);
        const double mass = targets.row(n).sum();
        r.losses(n) = mass * lse - targets.row(n).dot(out.row(n));
        r.grad.row(n) = (e / s) * mass - targets.row(n);
      }
      return r;
    case LossKind::logistic:
      if (out.cols() != 1) throw std::invalid_argument("logistic loss needs a single output");
      for (Eigen::Index n = 0; n < out.rows(); ++n) {
        const double m = -targets(n, 0) * out(n, 0);
        r.losses(n) = m > 0.0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
        r.grad(n, 0) = -targets(n, 0) / (1.0 + std::exp(-m));
      }
      return r;
  }
  throw std::invalid_argument("unknown loss kind");
}

struct LossAndGrads {
  double loss = 0.0;
  Vector grad_params;
  Vector grad_input;
};

/// Single-example loss with gradients. grad_params already carries the mask
/// factor, so pruned coordinates are exactly zero.
inline LossAndGrads loss_and_grads(const Params& p, const Mask* mask, const Vector& x,
                                   const Vector& y, LossKind kind) {
  const Vector eff = effective_params(p, mask);
  const ForwardPass fp = forward_pass(p.spec, eff, x.transpose());
  const OutputLoss ol = output_loss(fp.output, y.transpose(), kind);
  BackwardResult br = backward_pass(p.spec, eff, fp, ol.grad, true, true);
  if (mask) br.params.array() *= mask->values.array();
  return {ol.losses(0), std::move(br.params), br.inputs.row(0).transpose()};
}

/// Mean loss over a batch, mean parameter gradient (mask applied), and the
/// per-example input gradients of the per-example losses.
struct BatchLossAndGrads {
  double loss = 0.0;
  Vector grad_params;
  Matrix grad_inputs;
  Matrix outputs;
};

inline BatchLossAndGrads batch_loss_and_grads(const Params& p, const Mask* mask, const Matrix& X,
                                              const Matrix& Y, LossKind kind,
                                              bool want_inputs = false) {
  const Vector eff = effective_params(p, mask);
  const ForwardPass fp = forward_pass(p.spec, eff, X);
  OutputLoss ol = output_loss(fp.output, Y, kind);
  const double inv_n = 1.0 / static_cast<double>(X.rows());
  BackwardResult br = backward_pass(p.spec, eff, fp, ol.grad, true, want_inputs);
  br.params *= inv_n;
  if (mask) br.params.array() *= mask->values.array();
  BatchLossAndGrads r;
  r.loss = ol.losses.mean();
  r.grad_params = std::move(br.params);
  if (want_inputs) r.grad_inputs = std::move(br.inputs);
  r.outputs = fp.output;
  return r;
}

/// Input gradients of the per-example losses, without parameter gradients.
inline Matrix input_gradients(const MlpSpec& spec, const Vector& eff, const Matrix& X,
                              const Matrix& Y, LossKind kind, Vector* losses = nullptr) {
  const ForwardPass fp = forward_pass(spec, eff, X);
  OutputLoss ol = output_loss(fp.output, Y, kind);
  if (losses) *losses = ol.losses;
  return backward_pass(spec, eff, fp, ol.grad, false, true).inputs;
}

/// Backpropagated output sensitivities of every output coordinate.
/// signals[l] has k*N rows (row n*k + a) holding d f_a(x_n) / d z_l, where
/// z_l is the pre-activation of layer l.
inline std::vector<Matrix> output_signals(const MlpSpec& spec, const Vector& eff,
                                          const ForwardPass& fp) {
  const std::size_t L = spec.num_layers();
  const auto k = static_cast<Eigen::Index>(spec.output_dim());
  const Eigen::Index N = fp.inputs[0].rows();
  std::vector<Matrix> sig(L);
  sig[L - 1] = Matrix::Zero(k * N, k);
  for (Eigen::Index n = 0; n < N; ++n)
    sig[L - 1].block(n * k, 0, k, k).setIdentity();
  for (std::size_t l = L - 1; l-- > 0;) {
    sig[l].noalias() = sig[l + 1] * layer_weight(spec, eff, l + 1);
    for (Eigen::Index n = 0; n < N; ++n)
      sig[l].block(n * k, 0, k, sig[l].cols()).array().rowwise() *= fp.active[l].row(n).array();
  }
  return sig;
}

/// Per-example parameter Jacobian, rows n*k + a, columns over the flat
/// parameter vector. Columns of pruned coordinates are zero.
inline Matrix jacobian(const Params& p, const Mask* mask, const Matrix& X) {
  if (X.rows() == 0) throw std::invalid_argument("jacobian: empty batch");
  const MlpSpec& spec = p.spec;
  const Vector eff = effective_params(p, mask);
  const ForwardPass fp = forward_pass(spec, eff, X);
  const auto sig = output_signals(spec, eff, fp);
  const auto k = static_cast<Eigen::Index>(spec.output_dim());
  Matrix J = Matrix::Zero(k * X.rows(), static_cast<Eigen::Index>(spec.param_count()));
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const auto nout = static_cast<Eigen::Index>(spec.fan_out(l));
    const auto nin = static_cast<Eigen::Index>(spec.fan_in(l));
    const auto woff = static_cast<Eigen::Index>(spec.weight_offset(l));
    for (Eigen::Index r = 0; r < J.rows(); ++r) {
      const Eigen::Index n = r / k;
      for (Eigen::Index i = 0; i < nout; ++i)
        J.row(r).segment(woff + i * nin, nin) = sig[l](r, i) * fp.inputs[l].row(n);
      if (spec.bias)
        J.row(r).segment(static_cast<Eigen::Index>(spec.bias_offset(l)), nout) = sig[l].row(r);
    }
  }
  if (mask) J.array().rowwise() *= mask->values.transpose().array();
  return J;
}

/// Keeps the round(density * W) weights of largest magnitude; ties go to the
/// smaller flat index. `is_weight` marks which coordinates compete; the rest
/// (biases) are always kept.
inline Mask topk_mask(const Vector& w, double density, const std::vector<bool>& is_weight) {
  if (!(density > 0.0) || density > 1.0)
    throw std::invalid_argument("density must be in (0,1]");
  if (is_weight.size() != static_cast<std::size_t>(w.size()))
    throw std::invalid_argument("topk_mask: indicator length mismatch");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < is_weight.size(); ++i)
    if (is_weight[i]) idx.push_back(i);
  const auto keep = static_cast<std::size_t>(std::llround(density * static_cast<double>(idx.size())));
  auto better = [&](std::size_t a, std::size_t b) {
    const double ma = std::abs(w(static_cast<Eigen::Index>(a)));
    const double mb = std::abs(w(static_cast<Eigen::Index>(b)));
    return ma > mb || (ma == mb && a < b);
  };
  if (keep < idx.size())
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(),
                     better);
  Mask m{Vector::Ones(w.size()), density};
  for (std::size_t j = keep; j < idx.size(); ++j) m.values(static_cast<Eigen::Index>(idx[j])) = 0.0;
  return m;
}

/// Every coordinate treated as a weight.
inline Mask topk_mask(const Vector& w, double density) {
  return topk_mask(w, density, std::vector<bool>(static_cast<std::size_t>(w.size()), true));
}

inline Mask topk_mask(const Params& p, double density) {
  return topk_mask(p.theta, density, p.spec.weight_indicator());
}

/// Uniformly random mask with the same weight count as topk_mask.
inline Mask random_mask(const MlpSpec& spec, double density, Rng& rng) {
  if (!(density > 0.0) || density > 1.0)
    throw std::invalid_argument("density must be in (0,1]");
  Vector scores(static_cast<Eigen::Index>(spec.param_count()));
  for (auto& s : scores) s = rng.uniform();
  return topk_mask(scores, density, spec.weight_indicator());
}

/// Index of the predicted class; ties resolve to the lowest index. With a
/// single output the class is 1 when f > 0, else 0.
inline int predict_class(const Eigen::Ref<const Eigen::RowVectorXd>& out) {
  if (out.size() == 1) return out(0) > 0.0 ? 1 : 0;
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < out.size(); ++j)
    if (out(j) > out(best)) best = j;
  return static_cast<int>(best);
}

}  // namespace awt
