#pragma once

// Dense linear algebra aliases, norms, ball projections, a reproducible
// counter-based random generator and the standard normal CDF.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace awt {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class NormOrder { l1, l2, linf };

inline std::string to_string(NormOrder p) {
  switch (p) {
    case NormOrder::l1: return "l1";
    case NormOrder::l2: return "l2";
    case NormOrder::linf: return "linf";
  }
  return "?";
}

inline NormOrder parse_norm_order(const std::string& s) {
  if (s == "1" || s == "l1") return NormOrder::l1;
  if (s == "2" || s == "l2") return NormOrder::l2;
  if (s == "inf" || s == "linf") return NormOrder::linf;
  throw std::invalid_argument("unknown norm order '" + s + "'");
}

/// Hoelder conjugate: 1/p + 1/q = 1, with q = 1 for p = inf.
inline NormOrder conjugate(NormOrder p) {
  switch (p) {
    case NormOrder::l1: return NormOrder::linf;
    case NormOrder::l2: return NormOrder::l2;
    case NormOrder::linf: return NormOrder::l1;
  }
  return NormOrder::l2;
}

template <typename Derived>
double lp_norm(const Eigen::MatrixBase<Derived>& v, NormOrder p) {
  if (v.size() == 0) throw std::invalid_argument("lp_norm: empty vector");
  switch (p) {
    case NormOrder::l1: return v.template lpNorm<1>();
    case NormOrder::l2: return v.norm();
    case NormOrder::linf: return v.template lpNorm<Eigen::Infinity>();
  }
  throw std::invalid_argument("lp_norm: unsupported norm order");
}

/// Closest point to v inside the radius-eps ball of the given norm.
/// Vectors already inside the ball are returned unchanged.
template <typename Derived>
Vector lp_project(const Eigen::MatrixBase<Derived>& v, NormOrder p, double eps) {
  if (eps < 0.0) throw std::invalid_argument("lp_project: negative radius");
  Vector out = v;
  switch (p) {
    case NormOrder::l2: {
      const double n = out.norm();
      if (n > eps) {
        out *= eps / n;
        // Rounding can leave the norm an ulp above eps; shrink until inside so
        // a second projection is the identity.
        while (out.norm() > eps) out *= 1.0 - 0x1.0p-52;
      }
      return out;
    }
    case NormOrder::linf:
      for (auto& x : out) x = std::clamp(x, -eps, eps);
      return out;
    case NormOrder::l1:
      break;
  }
  throw std::invalid_argument("lp_project: only l2 and linf balls are supported");
}

/// Phi(z) via the C library erfc, accurate to a few ulp over the whole line.
inline double std_normal_cdf(double z) {
  return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

inline double std_normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

/// Counter-based generator: output i of stream s is a SplitMix64 finaliser
/// applied to (key(seed, s) + i * golden). Identical (seed, stream, call
/// sequence) gives identical bits on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream), key_(mix(seed ^ mix(stream + 0x632be59bd9b4e019ULL))) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t position() const { return counter_; }

  std::uint64_t next_u64() { return mix(key_ + kGolden * ++counter_); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal by Box-Muller; consumes two draws per call.
  double normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: empty range");
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  /// Independent child stream; does not advance this generator.
  Rng fork(std::uint64_t stream) const { return Rng(mix(key_ ^ mix(stream + 1)), stream); }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  static std::uint64_t mix(std::uint64_t z) {
    z += kGolden;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace awt
