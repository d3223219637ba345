#include <gtest/gtest.h>

#include <chrono>
#include <functional>
#include <sstream>

#include "awt/kernels.hpp"

using namespace awt;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (auto& x : m.reshaped()) x = scale * rng.normal();
  return m;
}

double rel_err(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-300});
}

// Jacobian of the (masked) network by central differences over theta.
Matrix fd_jacobian(const Params& p, const Mask* mask, const Matrix& X, double h = 1e-6) {
  const auto k = static_cast<Eigen::Index>(p.spec.output_dim());
  Matrix J(X.rows() * k, p.theta.size());
  Params q = p;
  for (Eigen::Index i = 0; i < p.theta.size(); ++i) {
    q.theta(i) = p.theta(i) + h;
    const Matrix fp = forward_batch(q, mask, X);
    q.theta(i) = p.theta(i) - h;
    const Matrix fm = forward_batch(q, mask, X);
    q.theta(i) = p.theta(i);
    const Matrix d = (fp - fm) / (2 * h);
    J.col(i) = Eigen::Map<const Vector>(d.data(), d.size());
  }
  return J;
}

struct Case {
  MlpSpec spec;
  double density;  // 1 means no mask
  bool prune_bias;
};

std::vector<Case> cases() {
  return {{{{3, 4, 2}, true}, 1.0, false},     {{{3, 4, 2}, true}, 0.5, false},
          {{{5, 6, 4, 3}, true}, 0.4, true},   {{{4, 7, 5, 3}, false}, 0.6, false},
          {{{2, 8, 1}, true}, 1.0, false},     {{{6, 5, 5, 5, 2}, true}, 0.3, false},
          {{{3, 2}, false}, 1.0, false}};
}

Mask make_mask(const Case& c, Rng& r) {
  Mask m = random_mask(c.spec, c.density, r);
  if (c.prune_bias && c.spec.bias) m.values(static_cast<Eigen::Index>(c.spec.bias_offset(0))) = 0;
  return m;
}

// He init leaves biases at zero, which can put a dead unit exactly on the
// ReLU kink; finite-difference oracles use generic biases instead.
Params generic_params(const MlpSpec& s, Rng& r) {
  Params p = init_params(s, r);
  if (s.bias)
    for (std::size_t l = 0; l < s.num_layers(); ++l)
      for (auto& b : layer_bias(s, p.theta, l)) b = 0.1 * r.normal();
  return p;
}

}  // namespace

TEST(Ntk, LinearModelIsInputGram) {
  const MlpSpec s{{4, 1}, false};
  Rng r(1);
  const Params p = init_params(s, r);
  const Matrix X = random_matrix(5, 4, r);
  const auto K = empirical_ntk(p, nullptr, X);
  EXPECT_EQ(K.tag, KernelTag::ntk);
  EXPECT_LT(rel_err(K.values, X * X.transpose()), 1e-14);
}

TEST(Ntk, SingleExampleIsSquaredGradientNorm) {
  const MlpSpec s{{3, 5, 1}};
  Rng r(2);
  const Params p = init_params(s, r);
  const Matrix X = random_matrix(1, 3, r);
  const auto K = empirical_ntk(p, nullptr, X);
  ASSERT_EQ(K.rows(), 1);
  EXPECT_NEAR(K.values(0, 0), jacobian(p, nullptr, X).squaredNorm(), 1e-12);
}

TEST(Ntk, MatchesFiniteDifferenceJacobians) {
  Rng r(3);
  for (const Case& c : cases()) {
    const Params p = generic_params(c.spec, r);
    const Matrix X = random_matrix(3, static_cast<Eigen::Index>(c.spec.input_dim()), r);
    const Matrix J = fd_jacobian(p, nullptr, X);
    EXPECT_LT(rel_err(empirical_ntk(p, nullptr, X).values, J * J.transpose()), 1e-4);
  }
}

TEST(Ntk, SymmetricAndPsd) {
  Rng r(4);
  const MlpSpec s{{8, 16, 12, 3}};
  for (int t = 0; t < 5; ++t) {
    const Params p = init_params(s, r);
    const Mask m = random_mask(s, 0.3, r);
    const Matrix X = random_matrix(32, 8, r);
    for (const Mask* mk : {static_cast<const Mask*>(nullptr), &m}) {
      const Matrix K = empirical_ntk(p, mk, X).values;
      EXPECT_LE((K - K.transpose()).cwiseAbs().maxCoeff(), 1e-9 * K.norm());
      const Matrix Ks = 0.5 * (K + K.transpose());
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Ks);
      EXPECT_GE(es.eigenvalues().minCoeff(), -1e-8 * K.trace());
    }
  }
}

TEST(Mtk, ReducesToNtkExactly) {
  Rng r(5);
  const MlpSpec s{{4, 6, 3}};
  const Params p = init_params(s, r);
  const Mask m = random_mask(s, 0.5, r);
  const Matrix X = random_matrix(6, 4, r);
  EXPECT_EQ(empirical_mtk(p, nullptr, X, X).values, empirical_ntk(p, nullptr, X).values);
  EXPECT_EQ(empirical_mtk(p, &m, X, X).values, empirical_ntk(p, &m, X).values);
}

TEST(Mtk, LinearHandExample) {
  const MlpSpec s{{2, 1}, false};
  const Params p{s, Vector::Ones(2)};
  Matrix X(2, 2), Xt(2, 2);
  X << 1, 0, 0, 1;
  Xt << 1, 0.1, 0, 1;
  const auto K = empirical_mtk(p, nullptr, X, Xt);
  Matrix expect(2, 2);
  expect << 1, 0, 0.1, 1;
  EXPECT_LT((K.values - expect).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NE(K.values(0, 1), K.values(1, 0));
}

TEST(Mtk, CountMismatchThrows) {
  const MlpSpec s{{2, 3, 1}};
  Rng r(6);
  const Params p = init_params(s, r);
  EXPECT_THROW(empirical_mtk(p, nullptr, random_matrix(3, 2, r), random_matrix(2, 2, r)),
               std::invalid_argument);
  EXPECT_THROW(diag_mtk(p, nullptr, random_matrix(3, 2, r), random_matrix(2, 2, r)),
               std::invalid_argument);
}

TEST(Mtk, MatchesJacobianProducts) {
  Rng r(7);
  for (const Case& c : cases()) {
    const Params p = generic_params(c.spec, r);
    const Mask m = make_mask(c, r);
    const Mask* mk = c.density < 1.0 ? &m : nullptr;
    const auto d = static_cast<Eigen::Index>(c.spec.input_dim());
    const Matrix X = random_matrix(4, d, r);
    const Matrix Xt = X + random_matrix(4, d, r, 0.1);
    const Matrix expect = jacobian(p, mk, X) * jacobian(p, mk, Xt).transpose();
    EXPECT_LT(rel_err(empirical_mtk(p, mk, X, Xt).values, expect), 1e-12);
    const Matrix fd = fd_jacobian(p, mk, X) * fd_jacobian(p, mk, Xt).transpose();
    EXPECT_LT(rel_err(empirical_mtk(p, mk, X, Xt).values, fd), 1e-4);
  }
}

TEST(Mtk, MaskedEqualsZeroedDenseWithZeroedColumns) {
  Rng r(8);
  const MlpSpec s{{5, 7, 3}};
  const Params p = init_params(s, r);
  const Mask m = random_mask(s, 0.35, r);
  const Params zeroed{s, p.theta.cwiseProduct(m.values)};
  const Matrix X = random_matrix(4, 5, r), Xt = random_matrix(4, 5, r);
  Matrix JA = jacobian(zeroed, nullptr, X), JB = jacobian(zeroed, nullptr, Xt);
  JA.array().rowwise() *= m.values.transpose().array();
  JB.array().rowwise() *= m.values.transpose().array();
  EXPECT_LT(rel_err(empirical_mtk(p, &m, X, Xt).values, JA * JB.transpose()), 1e-12);
}

TEST(DiagMtk, EqualsDiagonalOfFull) {
  Rng r(9);
  for (const Case& c : cases()) {
    const Params p = generic_params(c.spec, r);
    const Mask m = make_mask(c, r);
    const Mask* mk = c.density < 1.0 ? &m : nullptr;
    const auto d = static_cast<Eigen::Index>(c.spec.input_dim());
    const Matrix X = random_matrix(5, d, r);
    const Matrix Xt = X + random_matrix(5, d, r, 0.2);
    const auto D = diag_mtk(p, mk, X, Xt);
    EXPECT_EQ(D.tag, KernelTag::mtk_diagonal);
    const Vector full = empirical_mtk(p, mk, X, Xt).values.diagonal();
    EXPECT_LT(rel_err(D.values, full), 1e-10);
  }
}

TEST(DiagMtk, CleanSingleOutputIsGradientNorm) {
  const MlpSpec s{{3, 6, 1}};
  Rng r(10);
  const Params p = init_params(s, r);
  const Matrix X = random_matrix(4, 3, r);
  const Matrix J = jacobian(p, nullptr, X);
  const auto D = diag_mtk(p, nullptr, X, X);
  for (Eigen::Index i = 0; i < 4; ++i)
    EXPECT_NEAR(D.values(i, 0), J.row(i).squaredNorm(), 1e-12 * J.row(i).squaredNorm());
}

TEST(DiagMtk, AtLeastTenTimesCheaperAtBatch256) {
  const MlpSpec s{{784, 300, 100, 10}};
  Rng r(11);
  const Params p = init_params(s, r);
  const Mask m = topk_mask(p, 0.1);
  const Matrix X = random_matrix(256, 784, r).cwiseAbs().cwiseMin(1.0);
  const Matrix Xt = (X + random_matrix(256, 784, r, 0.1)).cwiseMax(0.0).cwiseMin(1.0);
  using clock = std::chrono::steady_clock;
  auto t0 = clock::now();
  const auto full = empirical_mtk(p, &m, X, Xt);
  auto t1 = clock::now();
  const auto diag = diag_mtk(p, &m, X, Xt);
  auto t2 = clock::now();
  const double tf = std::chrono::duration<double>(t1 - t0).count();
  const double td = std::chrono::duration<double>(t2 - t1).count();
  EXPECT_GE(tf / td, 10.0) << "full " << tf << " s, diagonal " << td << " s";
  EXPECT_LT(rel_err(diag.values, full.values.diagonal()), 1e-10);
}

TEST(KernelDistance, Examples) {
  Matrix A = Matrix::Identity(2, 2);
  EXPECT_EQ(kernel_distance(A, A), 0.0);
  EXPECT_DOUBLE_EQ(kernel_distance(A, Matrix::Zero(2, 2)), std::sqrt(2.0));
  EXPECT_THROW(kernel_distance(A, Matrix::Zero(2, 3)), std::invalid_argument);
}

TEST(KernelDistance, LoopOracle) {
  Rng r(12);
  for (int t = 0; t < 10; ++t) {
    const Matrix A = random_matrix(6, 9, r), B = random_matrix(6, 9, r);
    double s = 0;
    for (Eigen::Index i = 0; i < 6; ++i)
      for (Eigen::Index j = 0; j < 9; ++j) s += (A(i, j) - B(i, j)) * (A(i, j) - B(i, j));
    EXPECT_LE(std::abs(kernel_distance(A, B) - std::sqrt(s)), 1e-12 * std::sqrt(s));
  }
}

TEST(TargetDistance, ExamplesAndOracle) {
  Vector fd(2), fs(2);
  fd << 1, 2;
  fs << 1, 0;
  EXPECT_DOUBLE_EQ(target_distance(fd, fs), 2.0);
  EXPECT_EQ(target_distance(fd, fd), 0.0);
  EXPECT_THROW(target_distance(fd, Vector::Zero(3)), std::invalid_argument);
  Rng r(13);
  const Vector a = random_matrix(30, 1, r).col(0), b = random_matrix(30, 1, r).col(0);
  double s = 0;
  for (Eigen::Index i = 0; i < 30; ++i) s += (a(i) - b(i)) * (a(i) - b(i));
  EXPECT_LE(std::abs(target_distance(a, b) - std::sqrt(s)), 1e-12 * std::sqrt(s));
}

TEST(TargetDistance, FlattenIsExampleMajor) {
  Matrix out(2, 3);
  out << 1, 2, 3, 4, 5, 6;
  const Vector v = flatten_outputs(out);
  for (Eigen::Index i = 0; i < 6; ++i) EXPECT_EQ(v(i), double(i + 1));
}

// d/d(eff) of sum(Omega .* K) against central differences over eff.
TEST(KernelVjp, FullMatchesFiniteDifferences) {
  Rng r(14);
  for (const Case& c : cases()) {
    const Params p = generic_params(c.spec, r);
    const Mask m = make_mask(c, r);
    const Vector* mv = c.density < 1.0 ? &m.values : nullptr;
    const Vector eff = mv ? Vector(p.theta.cwiseProduct(*mv)) : p.theta;
    const auto d = static_cast<Eigen::Index>(c.spec.input_dim());
    const Matrix X = random_matrix(3, d, r), Xt = X + random_matrix(3, d, r, 0.3);
    const auto k = static_cast<Eigen::Index>(c.spec.output_dim());
    const Matrix Omega = random_matrix(3 * k, 3 * k, r);
    auto S = [&](const Vector& e) {
      const auto A = tangent_side(c.spec, e, X), B = tangent_side(c.spec, e, Xt);
      return (Omega.array() * tangent_kernel(c.spec, e, mv, A, B).array()).sum();
    };
    const auto A = tangent_side(c.spec, eff, X), B = tangent_side(c.spec, eff, Xt);
    const Vector g = tangent_kernel_vjp(c.spec, eff, mv, A, B, Omega);
    // Pruned coordinates are left out: moving one can revive a unit whose
    // pre-activation is exactly zero, where the ReLU is not differentiable.
    Vector fd = Vector::Zero(eff.size());
    Vector gk = g;
    Vector e = eff;
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < eff.size(); ++i) {
      if (mv && (*mv)(i) == 0.0) {
        gk(i) = 0.0;
        continue;
      }
      e(i) = eff(i) + h;
      const double sp = S(e);
      e(i) = eff(i) - h;
      const double sm = S(e);
      e(i) = eff(i);
      fd(i) = (sp - sm) / (2 * h);
    }
    EXPECT_LT(rel_err(gk, fd), 1e-6) << "case " << c.spec.layer_sizes.size() << " density " << c.density;
  }
}

TEST(KernelVjp, DiagonalMatchesFiniteDifferences) {
  Rng r(15);
  for (const Case& c : cases()) {
    const Params p = generic_params(c.spec, r);
    const Mask m = make_mask(c, r);
    const Vector* mv = c.density < 1.0 ? &m.values : nullptr;
    const Vector eff = mv ? Vector(p.theta.cwiseProduct(*mv)) : p.theta;
    const auto d = static_cast<Eigen::Index>(c.spec.input_dim());
    const Matrix X = random_matrix(4, d, r), Xt = X + random_matrix(4, d, r, 0.3);
    const auto k = static_cast<Eigen::Index>(c.spec.output_dim());
    const Vector omega = random_matrix(4 * k, 1, r).col(0);
    auto S = [&](const Vector& e) {
      const auto A = tangent_side(c.spec, e, X), B = tangent_side(c.spec, e, Xt);
      return omega.dot(tangent_kernel_diagonal(c.spec, e, mv, A, B));
    };
    const auto A = tangent_side(c.spec, eff, X), B = tangent_side(c.spec, eff, Xt);
    const Vector g = tangent_kernel_diagonal_vjp(c.spec, eff, mv, A, B, omega);
    // Pruned coordinates are left out: moving one can revive a unit whose
    // pre-activation is exactly zero, where the ReLU is not differentiable.
    Vector fd = Vector::Zero(eff.size());
    Vector gk = g;
    Vector e = eff;
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < eff.size(); ++i) {
      if (mv && (*mv)(i) == 0.0) {
        gk(i) = 0.0;
        continue;
      }
      e(i) = eff(i) + h;
      const double sp = S(e);
      e(i) = eff(i) - h;
      const double sm = S(e);
      e(i) = eff(i);
      fd(i) = (sp - sm) / (2 * h);
    }
    EXPECT_LT(rel_err(gk, fd), 1e-6) << "case " << c.spec.layer_sizes.size() << " density " << c.density;
  }
}

TEST(KernelDump, RoundTrip) {
  Rng r(16);
  KernelMatrix K{random_matrix(3, 5, r), KernelTag::mtk};
  std::stringstream ss;
  write_kernel(ss, K);
  EXPECT_EQ(ss.str().size(), 8u + 8u + 4u + 15u * 8u);
  const auto back = read_kernel(ss);
  EXPECT_EQ(back.tag, KernelTag::mtk);
  EXPECT_EQ(back.values, K.values);
  const std::string bytes = ss.str();
  EXPECT_EQ(static_cast<unsigned char>(bytes[0]), 3u);  // little-endian row count
  std::stringstream cut(bytes.substr(0, 30));
  EXPECT_THROW(read_kernel(cut), std::runtime_error);
}
