#pragma once

// Adversarial winning ticket search: the dense network at theta0 is the
// teacher, the masked student m * w is moved so that its outputs on its own
// adversarial examples and its mixed tangent kernel track the teacher's,
// and the mask is periodically reset to the largest-magnitude weights.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "awt/attacks.hpp"
#include "awt/data.hpp"
#include "awt/kernels.hpp"
#include "awt/network.hpp"
#include "awt/optim.hpp"

namespace awt {

enum class KernelMode { full, diagonal };

inline KernelMode parse_kernel_mode(const std::string& s) {
  if (s == "full") return KernelMode::full;
  if (s == "diagonal" || s == "diag") return KernelMode::diagonal;
  throw std::invalid_argument("unknown kernel mode '" + s + "'");
}

inline std::string to_string(KernelMode m) { return m == KernelMode::full ? "full" : "diagonal"; }

/// Attack used inside the search: l_inf, 10 steps of 2.5 * eps / 10, no
/// random start so the objective is a deterministic function of the batch.
inline AttackConfig search_attack_config(double epsilon) {
  AttackConfig c;
  c.norm = NormOrder::linf;
  c.epsilon = epsilon;
  c.steps = 10;
  c.step_size = 2.5 * epsilon / 10.0;
  c.clip_box = std::make_pair(0.0, 1.0);
  c.random_start = false;
  return c;
}

struct AwtConfig {
  double density = 0.5;
  double kernel_weight = 1e-3;  // gamma
  double weight_decay = 1e-4;   // beta
  std::size_t mask_update_every = 10;
  double learning_rate = 5e-4;
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  AttackConfig attack = search_attack_config(0.3);
  LossKind attack_loss = LossKind::cross_entropy;
  KernelMode kernel_mode = KernelMode::full;
  OptimizerKind optimizer = OptimizerKind::adam;
  bool freeze_sparse_adv = false;  // attack the student once, at m0 * theta0
  std::uint64_t seed = 0;

  void validate() const {
    if (!(density > 0.0) || density > 1.0) throw std::invalid_argument("density must be in (0,1]");
    if (!(kernel_weight >= 0.0)) throw std::invalid_argument("kernel weight must be >= 0");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be >= 0");
    if (mask_update_every < 1) throw std::invalid_argument("mask update interval must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    attack.validate();
    if (attack.random_start)
      throw std::invalid_argument("mask-search attacks must not use a random start");
  }
};

struct AwtLossBreakdown {
  double total = 0.0;
  double target_term = 0.0;
  double kernel_term = 0.0;
};

/// Objective on a batch whose adversarial examples are already fixed.
struct AwtObjective {
  AwtLossBreakdown loss;
  double target_distance = 0.0;  // |fd(Xd) - fs(Xs)|
  double kernel_distance = 0.0;  // Frobenius (full) or vector (diagonal) distance
  Vector grad;                   // d loss / d w, mask applied; empty unless requested
};

/// (1/N) |fd(Xd) - fs(Xs)|^2 + (gamma^2 / N^2) |Theta_d(X, Xd) - Theta_s(X, Xs)|^2
/// with the student evaluated at m * w. Xd and Xs are treated as constants.
/// The kernel distance is computed whenever gamma > 0 or want_distances is set.
inline AwtObjective awt_objective(const Params& dense, const Vector& w, const Mask& m,
                                  const Matrix& X, const Matrix& Xd, const Matrix& Xs,
                                  double gamma, KernelMode mode, bool want_grad,
                                  bool want_distances = false) {
  const MlpSpec& spec = dense.spec;
  if (X.rows() == 0) throw std::invalid_argument("empty batch");
  if (Xd.rows() != X.rows() || Xs.rows() != X.rows())
    throw std::invalid_argument("example count mismatch between clean and adversarial batch");
  if (w.size() != dense.theta.size()) throw std::invalid_argument("student length mismatch");
  check_mask(spec, &m);
  const Vector eff = w.cwiseProduct(m.values);
  const double N = static_cast<double>(X.rows());
  const bool need_kernel = gamma > 0.0 || want_distances;

  AwtObjective r;
  TangentSide Ad, Bd, As, Bs;
  if (need_kernel) {
    Ad = tangent_side(spec, dense.theta, X);
    Bd = tangent_side(spec, dense.theta, Xd);
    As = tangent_side(spec, eff, X);
    Bs = tangent_side(spec, eff, Xs);
  } else {
    Bd.fp = forward_pass(spec, dense.theta, Xd);
    Bs.fp = forward_pass(spec, eff, Xs);
  }
  const Matrix out_diff = Bs.fp.output - Bd.fp.output;
  r.target_distance = out_diff.norm();
  r.loss.target_term = out_diff.squaredNorm() / N;

  Vector g_eff;
  if (want_grad)
    g_eff = backward_pass(spec, eff, Bs.fp, (2.0 / N) * out_diff, true, false).params;

  if (need_kernel) {
    const double scale = gamma * gamma / (N * N);
    if (mode == KernelMode::full) {
      const Matrix diff = tangent_kernel(spec, eff, &m.values, As, Bs) -
                          tangent_kernel(spec, dense.theta, nullptr, Ad, Bd);
      r.kernel_distance = diff.norm();
      r.loss.kernel_term = scale * diff.squaredNorm();
      if (want_grad && gamma > 0.0)
        g_eff += tangent_kernel_vjp(spec, eff, &m.values, As, Bs, (2.0 * scale) * diff);
    } else {
      const Vector diff = tangent_kernel_diagonal(spec, eff, &m.values, As, Bs) -
                          tangent_kernel_diagonal(spec, dense.theta, nullptr, Ad, Bd);
      r.kernel_distance = diff.norm();
      r.loss.kernel_term = scale * diff.squaredNorm();
      if (want_grad && gamma > 0.0)
        g_eff +=
            tangent_kernel_diagonal_vjp(spec, eff, &m.values, As, Bs, (2.0 * scale) * diff);
    }
    if (gamma == 0.0) r.loss.kernel_term = 0.0;
  }
  r.loss.total = r.loss.target_term + r.loss.kernel_term;
  if (want_grad) r.grad = g_eff.cwiseProduct(m.values);
  return r;
}

/// Adversarial examples of the dense teacher and of the student m * w.
struct AwtAdversarialPair {
  Matrix dense;
  Matrix sparse;
};

inline AwtAdversarialPair awt_attacks(const Params& dense, const Vector& w, const Mask& m,
                                      const Matrix& X, const Matrix& Y, const AwtConfig& cfg) {
  cfg.validate();
  return {iterative_attack(dense.spec, dense.theta, X, Y, cfg.attack_loss, cfg.attack),
          iterative_attack(dense.spec, w.cwiseProduct(m.values), X, Y, cfg.attack_loss,
                           cfg.attack)};
}

inline AwtLossBreakdown awt_loss(const Params& dense, const Vector& w, const Mask& m,
                                 const Matrix& X, const Matrix& Y, const AwtConfig& cfg) {
  const auto adv = awt_attacks(dense, w, m, X, Y, cfg);
  return awt_objective(dense, w, m, X, adv.dense, adv.sparse, cfg.kernel_weight,
                       cfg.kernel_mode, false)
      .loss;
}

/// Gradient of awt_loss in w with both adversarial batches held fixed.
/// Excludes the weight-decay term, which the search applies separately.
inline Vector awt_grad(const Params& dense, const Vector& w, const Mask& m, const Matrix& X,
                       const Matrix& Y, const AwtConfig& cfg) {
  const auto adv = awt_attacks(dense, w, m, X, Y, cfg);
  return awt_objective(dense, w, m, X, adv.dense, adv.sparse, cfg.kernel_weight,
                       cfg.kernel_mode, true)
      .grad;
}

/// (1/N) |dL/df at the teacher's adversarial outputs - dL/df at the student's|,
/// Frobenius over the batch.
inline double grad_distance_term(const Params& dense, const Vector& w, const Mask& m,
                                 const Matrix& X, const Matrix& Y, const AwtConfig& cfg,
                                 LossKind loss) {
  const auto adv = awt_attacks(dense, w, m, X, Y, cfg);
  const Matrix fd = forward_pass(dense.spec, dense.theta, adv.dense).output;
  const Matrix fs = forward_pass(dense.spec, w.cwiseProduct(m.values), adv.sparse).output;
  const Matrix gd = output_loss(fd, Y, loss).grad;
  const Matrix gs = output_loss(fs, Y, loss).grad;
  return (gd - gs).norm() / static_cast<double>(X.rows());
}

struct AwtSearchResult {
  Mask mask;
  MetricsTrace trace;
  Vector weights;               // final student w
  std::size_t steps = 0;
  double step_seconds = 0.0;    // wall time inside update steps, logging excluded
  std::size_t mask_changes = 0; // mask updates that altered at least one coordinate
};

namespace detail {

inline Matrix attack_rows_chunked(const MlpSpec& spec, const Vector& eff, const Matrix& X,
                                  const Matrix& Y, LossKind loss, const AttackConfig& cfg) {
  const Eigen::Index chunk = 256;
  Matrix out(X.rows(), X.cols());
  for (Eigen::Index s = 0; s < X.rows(); s += chunk) {
    const Eigen::Index n = std::min(chunk, X.rows() - s);
    out.middleRows(s, n) = iterative_attack(spec, eff, X.middleRows(s, n), Y.middleRows(s, n),
                                            loss, cfg);
  }
  return out;
}

constexpr std::uint64_t kOrderStream = 0x6f72;
constexpr std::uint64_t kProbeStream = 0x7072;

}  // namespace detail

/// Runs the search for cfg.epochs passes over the data and returns the final
/// mask. The teacher's adversarial examples depend only on theta0 and are
/// computed once; the student's are regenerated every step unless frozen.
/// A fixed probe batch is evaluated at step 0 and after every mask update.
inline AwtSearchResult awt_search(const Params& dense, const Dataset& data, const AwtConfig& cfg) {
  cfg.validate();
  data.validate();
  if (data.empty()) throw std::invalid_argument("awt_search: empty dataset");
  const MlpSpec& spec = dense.spec;
  const auto is_weight = spec.weight_indicator();
  const auto N = data.size();
  const double total_weights = static_cast<double>(spec.weight_count());

  Vector w = dense.theta;
  Mask m = topk_mask(w, cfg.density, is_weight);
  Optimizer opt(cfg.optimizer, cfg.learning_rate, w.size());

  const Matrix Xd_all = detail::attack_rows_chunked(spec, dense.theta, data.inputs, data.targets,
                                                    cfg.attack_loss, cfg.attack);
  Matrix Xs_frozen;
  if (cfg.freeze_sparse_adv)
    Xs_frozen = detail::attack_rows_chunked(spec, w.cwiseProduct(m.values), data.inputs,
                                            data.targets, cfg.attack_loss, cfg.attack);

  Rng probe_rng(cfg.seed, detail::kProbeStream);
  auto probe_idx = permutation(N, probe_rng);
  probe_idx.resize(std::min(cfg.batch_size, N));
  const Matrix Xp = gather_rows(data.inputs, probe_idx);
  const Matrix Yp = gather_rows(data.targets, probe_idx);
  const Matrix Xdp = gather_rows(Xd_all, probe_idx);

  AwtSearchResult res;
  auto log_probe = [&](std::size_t step, std::vector<std::pair<std::string, double>> vals) {
    const Matrix Xsp =
        cfg.freeze_sparse_adv
            ? gather_rows(Xs_frozen, probe_idx)
            : iterative_attack(spec, w.cwiseProduct(m.values), Xp, Yp, cfg.attack_loss, cfg.attack);
    const auto o = awt_objective(dense, w, m, Xp, Xdp, Xsp, cfg.kernel_weight, cfg.kernel_mode,
                                 false, true);
    vals.emplace_back("probe_total", o.loss.total);
    vals.emplace_back("kernel_distance", o.kernel_distance);
    vals.emplace_back("target_distance", o.target_distance);
    vals.emplace_back("density", static_cast<double>(m.kept() - (spec.param_count() -
                                                                  spec.weight_count())) /
                                     total_weights);
    res.trace.add(step, std::move(vals));
  };
  log_probe(0, {});

  Rng order_rng(cfg.seed, detail::kOrderStream);
  std::size_t step = 0;
  double acc_target = 0.0, acc_kernel = 0.0, acc_total = 0.0;
  std::size_t acc_n = 0;
  using clock = std::chrono::steady_clock;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = permutation(N, order_rng);
    for (std::size_t start = 0; start < N; start += cfg.batch_size) {
      const auto t0 = clock::now();
      const std::vector<std::size_t> idx(
          order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(N, start + cfg.batch_size)));
      const Matrix X = gather_rows(data.inputs, idx);
      const Matrix Xd = gather_rows(Xd_all, idx);
      const Matrix Xs = cfg.freeze_sparse_adv
                            ? gather_rows(Xs_frozen, idx)
                            : iterative_attack(spec, w.cwiseProduct(m.values), X,
                                               gather_rows(data.targets, idx), cfg.attack_loss,
                                               cfg.attack);
      const auto o =
          awt_objective(dense, w, m, X, Xd, Xs, cfg.kernel_weight, cfg.kernel_mode, true);
      w += opt.step(o.grad).cwiseProduct(m.values) - cfg.weight_decay * w.cwiseProduct(m.values);
      ++step;
      acc_target += o.loss.target_term;
      acc_kernel += o.loss.kernel_term;
      acc_total += o.loss.total;
      ++acc_n;
      const bool update = step % cfg.mask_update_every == 0;
      if (update) {
        Mask next = topk_mask(w, cfg.density, is_weight);
        if (next.values != m.values) ++res.mask_changes;
        m = std::move(next);
        opt.reset_where_zero(m.values);
      }
      res.step_seconds += std::chrono::duration<double>(clock::now() - t0).count();
      if (update) {
        log_probe(step, {{"target_term", acc_target / acc_n},
                         {"kernel_term", acc_kernel / acc_n},
                         {"total", acc_total / acc_n}});
        acc_target = acc_kernel = acc_total = 0.0;
        acc_n = 0;
      }
    }
  }
  res.mask = std::move(m);
  res.weights = std::move(w);
  res.steps = step;
  return res;
}

}  // namespace awt
