#pragma once

// Iterative l_p attacks (projected gradient ascent on the per-example loss).

#include <optional>
#include <stdexcept>
#include <utility>

#include "awt/network.hpp"
#include "awt/numerics.hpp"

namespace awt {

struct AttackConfig {
  NormOrder norm = NormOrder::linf;
  double epsilon = 0.0;
  std::size_t steps = 1;
  double step_size = 0.0;
  std::optional<std::pair<double, double>> clip_box;
  bool random_start = false;
  Rng rng{0};

  void validate() const {
    if (norm != NormOrder::l2 && norm != NormOrder::linf)
      throw std::invalid_argument("attack norm must be l2 or linf");
    if (epsilon < 0.0) throw std::invalid_argument("attack epsilon must be >= 0");
    if (steps < 1) throw std::invalid_argument("attack steps must be >= 1");
    // A zero step is only meaningful for the zero budget, where it is the identity.
    if (!(step_size > 0.0) && !(step_size == 0.0 && epsilon == 0.0))
      throw std::invalid_argument("attack step size must be > 0");
    if (clip_box && clip_box->first > clip_box->second)
      throw std::invalid_argument("attack clip box is empty");
  }

  /// Whether steps * step_size <= 2 * epsilon, the regime covered by the
  /// deviation bound in analysis.hpp.
  bool path_within_twice_budget() const {
    return static_cast<double>(steps) * step_size <= 2.0 * epsilon * (1.0 + 1e-12);
  }
};

/// Evaluation protocol: 100 l_inf iterations of size 2.5 * eps / 100 from a
/// random start, clipped to the unit box.
inline AttackConfig eval_attack_config(double epsilon, std::uint64_t seed = 0) {
  if (epsilon < 0.0) throw std::invalid_argument("attack epsilon must be >= 0");
  AttackConfig c;
  c.norm = NormOrder::linf;
  c.epsilon = epsilon;
  c.steps = 100;
  c.step_size = 2.5 * epsilon / 100.0;
  c.clip_box = std::make_pair(0.0, 1.0);
  c.random_start = true;
  c.rng = Rng(seed, 0xe7a1);
  return c;
}

namespace detail {

inline void random_ball_point(Eigen::Ref<Eigen::RowVectorXd> out, NormOrder p, double eps,
                              Rng& rng) {
  const auto d = out.size();
  if (p == NormOrder::linf) {
    for (Eigen::Index i = 0; i < d; ++i) out(i) = rng.uniform(-eps, eps);
    return;
  }
  double n2 = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    out(i) = rng.normal();
    n2 += out(i) * out(i);
  }
  const double radius = eps * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
  out *= n2 > 0.0 ? radius / std::sqrt(n2) : 0.0;
}

inline void clip_rows(Matrix& X, const std::optional<std::pair<double, double>>& box) {
  if (box) X = X.cwiseMax(box->first).cwiseMin(box->second);
}

}  // namespace detail

namespace detail {

inline void random_start_rows(Matrix& adv, const Matrix& X, const AttackConfig& cfg) {
  for (Eigen::Index n = 0; n < X.rows(); ++n) {
    Rng r = cfg.rng.fork(static_cast<std::uint64_t>(n));
    random_ball_point(adv.row(n), cfg.norm, cfg.epsilon, r);
  }
  adv += X;
  clip_rows(adv, cfg.clip_box);
}

// One ascent step from cur, with the budget measured from the clean X.
inline void attack_step(const MlpSpec& spec, const Vector& eff, const Matrix& X, Matrix& cur,
                        const Matrix& Y, LossKind loss, const AttackConfig& cfg) {
  const Matrix g = input_gradients(spec, eff, cur, Y, loss);
  Eigen::RowVectorXd step(g.cols());
  for (Eigen::Index n = 0; n < X.rows(); ++n) {
    if (cfg.norm == NormOrder::linf) {
      step = g.row(n).unaryExpr([](double v) { return double((v > 0.0) - (v < 0.0)); });
    } else {
      const double gn = g.row(n).norm();
      if (gn > 0.0)
        step = g.row(n) / gn;
      else
        step.setZero();
    }
    const Vector delta = (cur.row(n) + cfg.step_size * step - X.row(n)).transpose();
    cur.row(n) = X.row(n) + lp_project(delta, cfg.norm, cfg.epsilon).transpose();
  }
  clip_rows(cur, cfg.clip_box);
}

}  // namespace detail

/// Attacks every row of X against the (masked) network. Each step moves by
/// step_size along sign(grad) (linf) or grad/|grad| (l2); the cumulative
/// perturbation is projected back into the eps-ball and the result clipped to
/// the box after every step. A vanishing gradient yields a zero step.
/// Example n draws its random start from cfg.rng.fork(n).
inline Matrix iterative_attack(const MlpSpec& spec, const Vector& eff, const Matrix& X,
                               const Matrix& Y, LossKind loss, const AttackConfig& cfg) {
  cfg.validate();
  Matrix adv = X;
  if (cfg.epsilon == 0.0) return adv;
  if (cfg.random_start) detail::random_start_rows(adv, X, cfg);
  for (std::size_t t = 0; t < cfg.steps; ++t) detail::attack_step(spec, eff, X, adv, Y, loss, cfg);
  return adv;
}

inline Matrix iterative_attack(const Params& p, const Mask* mask, const Matrix& X,
                               const Matrix& Y, LossKind loss, const AttackConfig& cfg) {
  return iterative_attack(p.spec, effective_params(p, mask), X, Y, loss, cfg);
}

/// Iterates of the attack, starting point included: steps + 1 matrices.
inline std::vector<Matrix> attack_trajectory(const MlpSpec& spec, const Vector& eff,
                                             const Matrix& X, const Matrix& Y, LossKind loss,
                                             const AttackConfig& cfg) {
  cfg.validate();
  std::vector<Matrix> path;
  path.reserve(cfg.steps + 1);
  Matrix cur = X;
  if (cfg.epsilon > 0.0 && cfg.random_start) detail::random_start_rows(cur, X, cfg);
  path.push_back(cur);
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    if (cfg.epsilon > 0.0) detail::attack_step(spec, eff, X, cur, Y, loss, cfg);
    path.push_back(cur);
  }
  return path;
}

}  // namespace awt
