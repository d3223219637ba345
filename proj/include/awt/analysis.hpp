#pragma once

// Empirical checks of the perturbation lemma and the dense/sparse dynamics
// bound, estimation of the input-derivative constants they use, and the
// two-Gaussian linear toy problem with its closed-form robust accuracy.

#include <cmath>
#include <concepts>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "awt/attacks.hpp"
#include "awt/data.hpp"
#include "awt/network.hpp"
#include "awt/ticket.hpp"
#include "awt/training.hpp"

namespace awt {

// ---------------------------------------------------------------------------
// Derivative constants

/// Anything with k outputs whose input gradients can be evaluated on a batch.
template <typename F>
concept InputDifferentiable = requires(const F& f, const Matrix& X, std::size_t a) {
  { f.output_dim() } -> std::convertible_to<std::size_t>;
  { f.outputs(X) } -> std::convertible_to<Matrix>;
  { f.input_gradient(X, a) } -> std::convertible_to<Matrix>;  // rows: d f_a / d x
};

/// A (masked) MLP viewed as a function of its input.
struct NetworkFunction {
  MlpSpec spec;
  Vector eff;

  NetworkFunction(const Params& p, const Mask* mask)
      : spec(p.spec), eff(effective_params(p, mask)) {}

  std::size_t output_dim() const { return spec.output_dim(); }
  Matrix outputs(const Matrix& X) const { return forward_pass(spec, eff, X).output; }
  Matrix input_gradient(const Matrix& X, std::size_t a) const {
    const ForwardPass fp = forward_pass(spec, eff, X);
    Matrix adj = Matrix::Zero(X.rows(), static_cast<Eigen::Index>(spec.output_dim()));
    adj.col(static_cast<Eigen::Index>(a)).setOnes();
    return backward_pass(spec, eff, fp, adj, false, true).inputs;
  }
};

struct DerivativeBounds {
  double C1 = 0.0;  // max row-wise q-norm of the input Jacobian
  double C2 = 0.0;  // max (p,q) operator-norm estimate of the input Hessian rows
  NormOrder p = NormOrder::linf;
  NormOrder q = NormOrder::l1;
  std::size_t sample_count = 0;
  bool c2_is_estimate = true;  // directions lower-bound the operator norm

  double Cq(double epsilon) const { return C1 + epsilon * C2; }

  /// Elementwise max, for pooling constants over several networks or times.
  void merge(const DerivativeBounds& o) {
    if (o.p != p) throw std::invalid_argument("merging bounds of different norm orders");
    C1 = std::max(C1, o.C1);
    C2 = std::max(C2, o.C2);
    sample_count += o.sample_count;
  }
};

struct DerivativeOptions {
  std::size_t directions = 32;
  double fd_step = 1e-4;
  std::uint64_t seed = 0;
};

namespace detail {

// Direction with unit l_p norm; sign vectors for l_inf, which are extreme
// points of the unit ball.
inline void unit_direction(Eigen::Ref<Eigen::RowVectorXd> u, NormOrder p, Rng& rng) {
  switch (p) {
    case NormOrder::linf:
      for (auto& v : u) v = rng.uniform() < 0.5 ? -1.0 : 1.0;
      return;
    case NormOrder::l2: {
      for (auto& v : u) v = rng.normal();
      const double n = u.norm();
      if (n == 0.0) u(0) = 1.0; else u /= n;
      return;
    }
    case NormOrder::l1: {
      u.setZero();
      const auto i = static_cast<Eigen::Index>(rng.uniform() * static_cast<double>(u.size()));
      u(std::min(i, u.size() - 1)) = rng.uniform() < 0.5 ? -1.0 : 1.0;
      return;
    }
  }
}

}  // namespace detail

/// C1 and C2 over the rows of X. Directions for sample n come from
/// Rng(seed).fork(n), so appending samples never lowers either constant.
template <InputDifferentiable F>
DerivativeBounds estimate_derivative_bounds(const F& f, const Matrix& X, NormOrder p,
                                            const DerivativeOptions& opt = {}) {
  if (X.rows() == 0) throw std::invalid_argument("derivative bounds need at least one sample");
  if (!(opt.fd_step > 0.0) || opt.directions < 1)
    throw std::invalid_argument("derivative bounds: bad finite-difference options");
  DerivativeBounds b;
  b.p = p;
  b.q = conjugate(p);
  b.sample_count = static_cast<std::size_t>(X.rows());
  const std::size_t k = f.output_dim();
  for (std::size_t a = 0; a < k; ++a) {
    const Matrix G = f.input_gradient(X, a);
    for (Eigen::Index n = 0; n < G.rows(); ++n) b.C1 = std::max(b.C1, lp_norm(G.row(n), b.q));
  }
  const auto D = static_cast<Eigen::Index>(opt.directions);
  const Rng base(opt.seed, 0x6332);
  const Eigen::Index chunk = std::max<Eigen::Index>(1, 4096 / D);
  for (Eigen::Index s = 0; s < X.rows(); s += chunk) {
    const Eigen::Index m = std::min(chunk, X.rows() - s);
    Matrix U(m * D, X.cols());
    for (Eigen::Index n = 0; n < m; ++n) {
      Rng r = base.fork(static_cast<std::uint64_t>(s + n));
      for (Eigen::Index j = 0; j < D; ++j) detail::unit_direction(U.row(n * D + j), p, r);
    }
    Matrix Xp(m * D, X.cols());
    for (Eigen::Index n = 0; n < m; ++n)
      Xp.middleRows(n * D, D) = X.row(s + n).replicate(D, 1);
    const Matrix Xm = Xp - opt.fd_step * U;
    Xp += opt.fd_step * U;
    for (std::size_t a = 0; a < k; ++a) {
      const Matrix H = (f.input_gradient(Xp, a) - f.input_gradient(Xm, a)) / (2.0 * opt.fd_step);
      for (Eigen::Index r = 0; r < H.rows(); ++r) b.C2 = std::max(b.C2, lp_norm(H.row(r), b.q));
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Perturbation lemma

struct LemmaReport {
  double max_deviation = 0.0;  // max over points and outputs of |f_a(x~) - f_a(x)|
  double bound = 0.0;          // 2 eps C1 + 2 eps^2 C2
  std::size_t points = 0;
  std::size_t points_holding = 0;
  bool precondition_met = true;  // k * delta <= 2 eps for the attack used
  bool holds = false;            // every point within the bound
};

template <InputDifferentiable F>
LemmaReport check_lemma_bound(const F& f, const Matrix& X, const Matrix& X_adv,
                              const DerivativeBounds& bounds, double epsilon,
                              const AttackConfig& attack) {
  if (X.rows() != X_adv.rows() || X.cols() != X_adv.cols())
    throw std::invalid_argument("lemma check: clean and adversarial batches differ in shape");
  LemmaReport r;
  r.points = static_cast<std::size_t>(X.rows());
  r.bound = 2.0 * epsilon * bounds.C1 + 2.0 * epsilon * epsilon * bounds.C2;
  r.precondition_met = attack.path_within_twice_budget();
  const Matrix dev = (f.outputs(X_adv) - f.outputs(X)).cwiseAbs();
  for (Eigen::Index n = 0; n < dev.rows(); ++n) {
    const double m = dev.row(n).maxCoeff();
    r.max_deviation = std::max(r.max_deviation, m);
    r.points_holding += m <= r.bound;
  }
  r.holds = r.points_holding == r.points;
  return r;
}

// ---------------------------------------------------------------------------
// Dense versus sparse dynamics bound

struct TheoremRecord {
  std::size_t epoch = 0;
  double lhs = 0.0;  // mean over points of |f_t(x) - f^s_t(x)|^2
  double rhs = 0.0;  // 4 (alpha + 4 Cq eps)^2
};

struct BoundCheckReport {
  double alpha = 0.0;
  double epsilon = 0.0;
  double Cq = 0.0;
  std::vector<TheoremRecord> records;
  std::size_t stop_time = 0;  // number of recorded epochs
  bool schedule_ok = true;    // learning rate <= 1 / stop_time
  bool holds = false;
};

inline double theorem_rhs(double alpha, double Cq, double epsilon) {
  const double s = alpha + 4.0 * Cq * epsilon;
  return 4.0 * s * s;
}

/// Outputs of the dense and sparse runs on fixed evaluation points, one
/// matrix per epoch, plus derivative constants pooled over both runs.
struct PairedRuns {
  std::vector<Matrix> dense_outputs;
  std::vector<Matrix> sparse_outputs;
  DerivativeBounds bounds;
  double learning_rate = 0.0;
};

/// Trains theta0 and m * theta0 with the same config (same data order and
/// attack streams) and records both on X_eval after every epoch. Constants
/// are taken over X_eval and the attack trajectories from it, at every epoch.
inline PairedRuns paired_adversarial_runs(const Params& theta0, const Mask& mask,
                                          const Dataset& data, const Matrix& X_eval,
                                          const Matrix& Y_eval, const TrainConfig& cfg,
                                          const DerivativeOptions& dopt = {}) {
  if (!cfg.attack) throw std::invalid_argument("paired runs need an attack");
  PairedRuns out;
  out.learning_rate = cfg.learning_rate;
  out.bounds.p = cfg.attack->norm;
  out.bounds.q = conjugate(cfg.attack->norm);
  auto observe = [&](std::vector<Matrix>& sink, const Params& p, const Mask* m) {
    const NetworkFunction f(p, m);
    sink.push_back(f.outputs(X_eval));
    const auto traj =
        attack_trajectory(p.spec, f.eff, X_eval, Y_eval, cfg.loss, *cfg.attack);
    Matrix pts(X_eval.rows() * static_cast<Eigen::Index>(traj.size()), X_eval.cols());
    for (std::size_t i = 0; i < traj.size(); ++i)
      pts.middleRows(static_cast<Eigen::Index>(i) * X_eval.rows(), X_eval.rows()) = traj[i];
    out.bounds.merge(estimate_derivative_bounds(f, pts, cfg.attack->norm, dopt));
  };
  Params sparse0 = theta0;
  sparse0.theta = effective_params(theta0, &mask);
  adversarial_train(theta0, nullptr, data, cfg,
                    [&](std::size_t, const Params& p) { observe(out.dense_outputs, p, nullptr); });
  adversarial_train(sparse0, &mask, data, cfg,
                    [&](std::size_t, const Params& p) { observe(out.sparse_outputs, p, &mask); });
  return out;
}

inline BoundCheckReport check_theorem_bound(const std::vector<Matrix>& dense_outputs,
                                            const std::vector<Matrix>& sparse_outputs,
                                            double alpha, double epsilon,
                                            const DerivativeBounds& bounds,
                                            double learning_rate) {
  if (dense_outputs.size() != sparse_outputs.size())
    throw std::invalid_argument("theorem check: runs have different lengths");
  if (!(alpha >= 0.0) || !(epsilon >= 0.0))
    throw std::invalid_argument("theorem check: alpha and epsilon must be >= 0");
  BoundCheckReport r;
  r.alpha = alpha;
  r.epsilon = epsilon;
  r.Cq = bounds.Cq(epsilon);
  r.stop_time = dense_outputs.size();
  r.schedule_ok = r.stop_time == 0 || learning_rate <= 1.0 / static_cast<double>(r.stop_time);
  const double rhs = theorem_rhs(alpha, r.Cq, epsilon);
  r.holds = true;
  for (std::size_t t = 0; t < dense_outputs.size(); ++t) {
    const Matrix& a = dense_outputs[t];
    const Matrix& b = sparse_outputs[t];
    if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() == 0)
      throw std::invalid_argument("theorem check: output shape mismatch");
    const double lhs = (a - b).rowwise().squaredNorm().mean();
    r.records.push_back({t + 1, lhs, rhs});
    r.holds = r.holds && lhs <= rhs;
  }
  return r;
}

inline BoundCheckReport check_theorem_bound(const PairedRuns& runs, double alpha, double epsilon) {
  return check_theorem_bound(runs.dense_outputs, runs.sparse_outputs, alpha, epsilon, runs.bounds,
                             runs.learning_rate);
}

// ---------------------------------------------------------------------------
// Two-Gaussian toy problem

/// Classes +1 / -1 with means +mu / -mu, mu = (mean_norm, 0, ..., 0), and
/// isotropic noise sigma. Targets are the signed labels; labels are 1 for +1.
struct GaussianToySpec {
  std::size_t dimension = 100;
  double mean_norm = 3.0;
  double sigma = 1.0;
  std::size_t samples = 5000;
  double epsilon = 2.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (dimension < 1) throw std::invalid_argument("toy: dimension must be >= 1");
    if (!(sigma > 0.0)) throw std::invalid_argument("toy: sigma must be > 0");
    if (samples < 1) throw std::invalid_argument("toy: sample count must be >= 1");
    if (!(epsilon >= 0.0)) throw std::invalid_argument("toy: epsilon must be >= 0");
  }

  Vector mean() const {
    Vector mu = Vector::Zero(static_cast<Eigen::Index>(dimension));
    mu(0) = mean_norm;
    return mu;
  }
};

/// `stream` separates the training draw (0) from held-out draws.
inline Dataset sample_toy(const GaussianToySpec& spec, std::uint64_t stream = 0) {
  spec.validate();
  Rng rng(spec.seed, 0x746f79 + stream);
  const auto n = static_cast<Eigen::Index>(spec.samples);
  const auto d = static_cast<Eigen::Index>(spec.dimension);
  const Vector mu = spec.mean();
  Dataset data{Matrix(n, d), Matrix(n, 1), std::vector<int>(spec.samples)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const double y = rng.uniform() < 0.5 ? 1.0 : -1.0;
    for (Eigen::Index j = 0; j < d; ++j) data.inputs(i, j) = y * mu(j) + spec.sigma * rng.normal();
    data.targets(i, 0) = y;
    data.labels[static_cast<std::size_t>(i)] = y > 0.0 ? 1 : 0;
  }
  return data;
}

/// l2 PGD on the squared loss, unclipped, used for training on the toy data.
inline AttackConfig toy_attack_config(double epsilon, std::size_t steps = 10,
                                      std::uint64_t seed = 0) {
  AttackConfig c;
  c.norm = NormOrder::l2;
  c.epsilon = epsilon;
  c.steps = steps;
  c.step_size = 2.5 * epsilon / static_cast<double>(steps);
  c.random_start = true;
  c.rng = Rng(seed, 0x7461);
  return c;
}

/// Deterministic variant for the mask search.
inline AttackConfig toy_search_attack_config(double epsilon, std::size_t steps = 10) {
  AttackConfig c = toy_attack_config(epsilon, steps);
  c.random_start = false;
  return c;
}

inline double cosine(const Vector& a, const Vector& b) {
  const double n = a.norm() * b.norm();
  if (n == 0.0) throw std::invalid_argument("cosine of a zero vector");
  return std::clamp(a.dot(b) / n, -1.0, 1.0);
}

/// Radians between theta and the class mean.
inline double deflection_angle(const Vector& theta, const GaussianToySpec& spec) {
  if (theta == spec.mean()) return 0.0;
  return std::acos(cosine(theta, spec.mean()));
}

inline double toy_margin(const Vector& theta, const GaussianToySpec& spec) {
  if (theta.size() != static_cast<Eigen::Index>(spec.dimension))
    throw std::invalid_argument("toy: direction length mismatch");
  const double n = theta.norm();
  if (n == 0.0) throw std::invalid_argument("closed-form accuracy needs a nonzero direction");
  return theta.dot(spec.mean()) / (n * spec.sigma);
}

/// p_m + Phi(a - eps / sigma) with a = theta . mu / (|theta| sigma) and
/// p_m = 1 - Phi(a). At eps = 0 this exceeds the clean accuracy; kept as is.
inline double closed_form_adv_acc(const Vector& theta, const GaussianToySpec& spec) {
  const double a = toy_margin(theta, spec);
  return (1.0 - std_normal_cdf(a)) + std_normal_cdf(a - spec.epsilon / spec.sigma);
}

inline double closed_form_clean_acc(const Vector& theta, const GaussianToySpec& spec) {
  return std_normal_cdf(toy_margin(theta, spec));
}

/// Accuracy of sgn(theta . x) on clean points and under the exact l2 worst
/// case x - eps * y * theta / |theta|.
struct LinearAccuracy {
  double clean = 0.0;
  double robust = 0.0;
};

inline LinearAccuracy linear_accuracy(const Vector& theta, const Dataset& data, double epsilon) {
  if (data.empty()) throw std::invalid_argument("linear accuracy: empty dataset");
  const double n = theta.norm();
  if (n == 0.0) throw std::invalid_argument("linear accuracy: zero direction");
  const Vector s = data.inputs * theta;
  std::size_t clean = 0, robust = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double margin = data.targets(i, 0) * s(i);
    clean += margin > 0.0;
    robust += margin - epsilon * n > 0.0;
  }
  const double N = static_cast<double>(data.size());
  return {static_cast<double>(clean) / N, static_cast<double>(robust) / N};
}

struct SvmOptions {
  double C = 1.0;           // hinge penalty; objective 0.5 |w|^2 + C sum_i hinge_i
  double tolerance = 1e-6;  // stop once the projected-gradient spread falls below this
  std::size_t max_epochs = 5000;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(C > 0.0)) throw std::invalid_argument("svm: C must be > 0");
    if (!(tolerance > 0.0)) throw std::invalid_argument("svm: tolerance must be > 0");
  }
};

/// 0.5 |w|^2 + C sum_i max(0, 1 - y_i w.x_i); targets are the signs y_i.
inline double svm_primal_objective(const Dataset& data, const Vector& w, double C) {
  const Vector m = (data.inputs * w).cwiseProduct(data.targets.col(0));
  return 0.5 * w.squaredNorm() + C * (1.0 - m.array()).max(0.0).sum();
}

/// Linear soft-margin SVM without intercept, solved by dual coordinate
/// descent over the box 0 <= alpha_i <= C with w = sum_i alpha_i y_i x_i.
inline Vector fit_linear_svm(const Dataset& data, const SvmOptions& opt = {}) {
  opt.validate();
  data.validate();
  if (data.empty()) throw std::invalid_argument("svm: empty dataset");
  const auto N = data.size();
  const Vector q = data.inputs.rowwise().squaredNorm();
  Vector alpha = Vector::Zero(static_cast<Eigen::Index>(N));
  Vector w = Vector::Zero(data.inputs.cols());
  Rng rng(opt.seed, 0x73766d);
  for (std::size_t epoch = 0; epoch < opt.max_epochs; ++epoch) {
    double pg_max = -std::numeric_limits<double>::infinity();
    double pg_min = std::numeric_limits<double>::infinity();
    for (const auto i_ : permutation(N, rng)) {
      const auto i = static_cast<Eigen::Index>(i_);
      if (q(i) == 0.0) continue;
      const double y = data.targets(i, 0);
      const double g = y * data.inputs.row(i).dot(w) - 1.0;
      double pg = g;
      if (alpha(i) == 0.0) pg = std::min(g, 0.0);
      else if (alpha(i) == opt.C) pg = std::max(g, 0.0);
      pg_max = std::max(pg_max, pg);
      pg_min = std::min(pg_min, pg);
      if (pg == 0.0) continue;
      const double a = std::clamp(alpha(i) - g / q(i), 0.0, opt.C);
      w += (a - alpha(i)) * y * data.inputs.row(i).transpose();
      alpha(i) = a;
    }
    if (pg_max - pg_min < opt.tolerance) break;
  }
  return w;
}

struct ToyRow {
  std::string name;
  double acc = 0.0;           // empirical, held-out
  double angle = 0.0;         // radians
  double cos = 0.0;
  double rob = 0.0;           // closed form
  double rob_mc = 0.0;        // exact worst-case attack, held-out
  double acc_analytic = 0.0;
  Vector theta;
};

struct ToyOptions {
  std::size_t train_epochs = 20;
  OptimizerKind train_optimizer = OptimizerKind::adam;
  double train_learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::size_t attack_steps = 10;
  std::size_t search_epochs = 10;
  std::size_t search_batch_size = 64;
  std::size_t search_attack_steps = 10;
  double kernel_weight = 0.1;
  double search_learning_rate = 1e-2;
  SvmOptions svm;
};

/// Squared-loss adversarial training of the linear toy model.
inline TrainConfig toy_train_config(const GaussianToySpec& spec, const ToyOptions& opt) {
  TrainConfig tc;
  tc.loss = LossKind::squared;
  tc.optimizer = opt.train_optimizer;
  tc.learning_rate = opt.train_learning_rate;
  tc.epochs = opt.train_epochs;
  tc.batch_size = opt.batch_size;
  tc.attack = toy_attack_config(spec.epsilon, opt.attack_steps, spec.seed);
  tc.seed = spec.seed;
  return tc;
}

inline AwtConfig toy_search_config(const GaussianToySpec& spec, double density,
                                   const ToyOptions& opt) {
  AwtConfig ac;
  ac.density = density;
  ac.epochs = opt.search_epochs;
  ac.batch_size = opt.search_batch_size;
  ac.kernel_weight = opt.kernel_weight;
  ac.learning_rate = opt.search_learning_rate;
  ac.attack = toy_search_attack_config(spec.epsilon, opt.search_attack_steps);
  ac.attack_loss = LossKind::squared;
  ac.seed = spec.seed;
  return ac;
}

inline Params toy_initial_params(const GaussianToySpec& spec) {
  Rng init_rng(spec.seed, 0x696e);
  return init_params(MlpSpec{{spec.dimension, 1}, false}, init_rng);
}

/// The dense adversarially trained linear model; it doubles as the AWT
/// teacher because a random linear teacher carries no information about the
/// mean direction.
inline Params toy_teacher(const GaussianToySpec& spec, const Dataset& train,
                          const ToyOptions& opt) {
  return adversarial_train(toy_initial_params(spec), nullptr, train, toy_train_config(spec, opt))
      .params;
}

struct ToyResult {
  std::vector<ToyRow> rows;  // Bayes, SVM, Adv.Tr, AWT
  Mask awt_mask;
  Params awt_params;  // trained sparse model, pruned coordinates zeroed
  MetricsTrace search_trace;
  MetricsTrace train_trace;  // phase two of the AWT row
};

/// Rows: Bayes, SVM, dense adversarial training, and AWT (mask searched
/// against the dense model, then adversarially trained from m * teacher).
inline ToyResult run_toy_experiment(const GaussianToySpec& spec, double density,
                                    const ToyOptions& opt = {}) {
  spec.validate();
  const Dataset train = sample_toy(spec, 0);
  const Dataset test = sample_toy(spec, 1);
  ToyResult res;
  auto row = [&](std::string name, const Vector& theta) {
    ToyRow r;
    r.name = std::move(name);
    r.theta = theta;
    const auto la = linear_accuracy(theta, test, spec.epsilon);
    r.acc = la.clean;
    r.rob_mc = la.robust;
    r.angle = deflection_angle(theta, spec);
    r.cos = cosine(theta, spec.mean());
    r.rob = closed_form_adv_acc(theta, spec);
    r.acc_analytic = closed_form_clean_acc(theta, spec);
    res.rows.push_back(std::move(r));
  };
  row("Bayes", spec.mean());
  row("SVM", fit_linear_svm(train, opt.svm));

  const TrainConfig tc = toy_train_config(spec, opt);
  const Params dense = toy_teacher(spec, train, opt);
  row("Adv.Tr", dense.theta);

  auto search = awt_search(dense, train, toy_search_config(spec, density, opt));
  Params sparse0 = dense;
  sparse0.theta = effective_params(dense, &search.mask);
  auto sparse = adversarial_train(sparse0, &search.mask, train, tc);
  row("AWT", effective_params(sparse.params, &search.mask));
  res.awt_params = sparse.params;
  res.awt_params.theta = effective_params(sparse.params, &search.mask);
  res.train_trace = std::move(sparse.trace);
  res.awt_mask = std::move(search.mask);
  res.search_trace = std::move(search.trace);
  return res;
}

// ---------------------------------------------------------------------------
// Bound checks on the toy problem

struct LemmaExperiment {
  LemmaReport report;
  DerivativeBounds bounds;
  double clean_acc = 0.0;
};

struct LemmaOptions {
  std::size_t hidden = 64;
  std::size_t train_epochs = 10;
  std::size_t attack_steps = 40;
  std::size_t test_points = 5000;
  DerivativeOptions derivatives;
};

/// Trains a one-hidden-layer ReLU net on the toy data, attacks held-out points
/// with l2 PGD (k steps of 2 eps / k) and checks the lemma with constants
/// estimated over the held-out points and every attack iterate.
inline LemmaExperiment run_toy_lemma_check(const GaussianToySpec& spec,
                                           const LemmaOptions& opt = {}) {
  spec.validate();
  const Dataset train = sample_toy(spec, 0);
  GaussianToySpec test_spec = spec;
  test_spec.samples = opt.test_points;
  const Dataset test = sample_toy(test_spec, 1);
  const MlpSpec net{{spec.dimension, opt.hidden, 1}};
  Rng init_rng(spec.seed, 0x6c6d);
  TrainConfig tc;
  tc.loss = LossKind::logistic;
  tc.epochs = opt.train_epochs;
  tc.seed = spec.seed;
  const Params p = natural_train(init_params(net, init_rng), nullptr, train, tc).params;

  AttackConfig a;
  a.norm = NormOrder::l2;
  a.epsilon = spec.epsilon;
  a.steps = opt.attack_steps;
  a.step_size = 2.0 * spec.epsilon / static_cast<double>(opt.attack_steps);
  a.random_start = false;
  const NetworkFunction f(p, nullptr);
  const auto traj = attack_trajectory(net, f.eff, test.inputs, test.targets, tc.loss, a);
  const Eigen::Index n = test.inputs.rows();
  Matrix pts(n * static_cast<Eigen::Index>(traj.size()), test.inputs.cols());
  for (std::size_t i = 0; i < traj.size(); ++i)
    pts.middleRows(static_cast<Eigen::Index>(i) * n, n) = traj[i];

  LemmaExperiment e;
  e.bounds = estimate_derivative_bounds(f, pts, a.norm, opt.derivatives);
  e.report = check_lemma_bound(f, test.inputs, traj.back(), e.bounds, spec.epsilon, a);
  e.clean_acc = accuracy(f.outputs(test.inputs), test.labels);
  return e;
}

struct TheoremExperiment {
  BoundCheckReport report;
  Mask mask;
  double awt_loss = 0.0;  // alpha^2
};

struct TheoremOptions {
  ToyOptions toy;
  std::size_t epochs = 10;
  std::size_t eval_points = 1000;
  DerivativeOptions derivatives;
};

/// Dense teacher and AWT mask as in the toy table, then side-by-side
/// adversarial training of theta0 and m * theta0 with identical streams.
/// alpha^2 is the objective at the end of the search on the evaluation points.
inline TheoremExperiment run_toy_theorem_check(const GaussianToySpec& spec, double density,
                                               const TheoremOptions& opt = {}) {
  spec.validate();
  const Dataset train = sample_toy(spec, 0);
  GaussianToySpec eval_spec = spec;
  eval_spec.samples = opt.eval_points;
  const Dataset eval = sample_toy(eval_spec, 2);
  TrainConfig tc = toy_train_config(spec, opt.toy);
  const Params teacher = toy_teacher(spec, train, opt.toy);
  const AwtConfig ac = toy_search_config(spec, density, opt.toy);
  auto search = awt_search(teacher, train, ac);

  TheoremExperiment e;
  e.awt_loss = awt_loss(teacher, search.weights, search.mask, eval.inputs, eval.targets, ac).total;
  tc.epochs = opt.epochs;
  const auto runs = paired_adversarial_runs(teacher, search.mask, train, eval.inputs,
                                            eval.targets, tc, opt.derivatives);
  e.report = check_theorem_bound(runs, std::sqrt(e.awt_loss), spec.epsilon);
  e.mask = std::move(search.mask);
  return e;
}

}  // namespace awt
