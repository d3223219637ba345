#pragma once

// First-order update rules over a flat parameter vector.

#include <cmath>
#include <stdexcept>
#include <string>

#include "awt/numerics.hpp"

namespace awt {

enum class OptimizerKind { sgd, adam };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd" || s == "plain_gd" || s == "gd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

/// Produces the additive step for a gradient. Coordinates whose gradient has
/// always been exactly zero receive an exactly zero step under both rules.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, Eigen::Index dim, double beta1 = 0.9,
            double beta2 = 0.999, double eps = 1e-8)
      : kind_(kind), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
    if (kind == OptimizerKind::adam) {
      m_ = Vector::Zero(dim);
      v_ = Vector::Zero(dim);
    }
  }

  Vector step(const Vector& grad) {
    if (kind_ == OptimizerKind::sgd) return -lr_ * grad;
    ++t_;
    m_ = b1_ * m_ + (1.0 - b1_) * grad;
    v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    return (-lr_ / c1) * (m_.array() / ((v_.array() / c2).sqrt() + eps_)).matrix();
  }

  /// Clears the moment estimates where keep == 0.
  void reset_where_zero(const Vector& keep) {
    if (kind_ != OptimizerKind::adam) return;
    m_.array() *= keep.array();
    v_.array() *= keep.array();
  }

  OptimizerKind kind() const { return kind_; }
  double learning_rate() const { return lr_; }

 private:
  OptimizerKind kind_;
  double lr_, b1_, b2_, eps_;
  Vector m_, v_;
  long t_ = 0;
};

}  // namespace awt
