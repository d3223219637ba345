#pragma once

// Empirical tangent kernels Theta(X, Y) = J(X) J(Y)^T of an MLP, built from
// per-layer factors instead of explicit Jacobians, plus exact gradients of
// sum(Omega .* Theta) with respect to the effective parameters.
//
// For layer l with inputs h (N x n_in) and output signals g (kN x n_out,
// g[(n,a), i] = d f_a(x_n) / d z_i), the layer's share of the kernel is
//   K[(n,a),(m,b)] = sum_i gA[(n,a),i] gB[(m,b),i] (A_n[m,i] + c_i),
//   A_n[m,i] = sum_j M[i,j] hA[n,j] hB[m,j],
// where M is the weight mask of the layer and c the bias mask (0 without bias).

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "awt/binary_io.hpp"
#include "awt/network.hpp"

namespace awt {

enum class KernelTag : std::uint32_t { ntk = 0, mtk = 1, mtk_diagonal = 2 };

inline std::string to_string(KernelTag t) {
  switch (t) {
    case KernelTag::ntk: return "ntk";
    case KernelTag::mtk: return "mtk";
    case KernelTag::mtk_diagonal: return "mtk_diagonal";
  }
  return "?";
}

/// Kernel Gram matrix with rows ordered example-major (row n*k + a). The
/// diagonal variant stores its kN entries as a kN x 1 column.
struct KernelMatrix {
  Matrix values;
  KernelTag tag = KernelTag::mtk;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

/// Forward activations and output signals of one batch.
struct TangentSide {
  ForwardPass fp;
  std::vector<Matrix> signals;
};

inline TangentSide tangent_side(const MlpSpec& spec, const Vector& eff, const Matrix& X) {
  TangentSide s;
  s.fp = forward_pass(spec, eff, X);
  s.signals = output_signals(spec, eff, s.fp);
  return s;
}

namespace detail {

// Per-layer view of the mask: weight block, bias block, and whether the layer
// can use the rank-structured unmasked formulas.
struct LayerMask {
  const Vector* mask = nullptr;
  std::size_t layer = 0;
  bool uniform = true;  // weight mask all ones and bias mask constant
  double bias_level = 0.0;

  LayerMask(const MlpSpec& spec, const Vector* m, std::size_t l) : mask(m), layer(l) {
    bias_level = spec.bias ? 1.0 : 0.0;
    if (!m) return;
    const auto W = layer_weight(spec, *m, l);
    uniform = (W.array() == 1.0).all();
    if (spec.bias) {
      const auto b = layer_bias(spec, *m, l);
      if (uniform && (b.array() == b(0)).all())
        bias_level = b(0);
      else
        uniform = false;
    }
  }
};

inline Eigen::RowVectorXd bias_row(const MlpSpec& spec, const LayerMask& lm) {
  const auto nout = static_cast<Eigen::Index>(spec.fan_out(lm.layer));
  if (!spec.bias) return Eigen::RowVectorXd::Zero(nout);
  if (!lm.mask) return Eigen::RowVectorXd::Ones(nout);
  return layer_bias(spec, *lm.mask, lm.layer).transpose();
}

// A_n for one clean example n against every row of HB (N_B x n_out).
inline void mixed_block(const MlpSpec& spec, const LayerMask& lm, const Matrix& HA,
                        const Matrix& HB, Eigen::Index n, const Eigen::RowVectorXd& c,
                        Matrix& A) {
  const Matrix P = (HB.array().rowwise() * HA.row(n).array()).matrix();
  A.noalias() = P * layer_weight(spec, *lm.mask, lm.layer).transpose();
  A.rowwise() += c;
}

// Rows (m,b) of G scaled by A[m, :].
inline Matrix scale_blocks(const Matrix& G, const Matrix& A, Eigen::Index k) {
  Matrix out(G.rows(), G.cols());
  for (Eigen::Index m = 0; m < A.rows(); ++m)
    out.middleRows(m * k, k) = (G.middleRows(m * k, k).array().rowwise() * A.row(m).array());
  return out;
}

// Rows of an (N*k x c) matrix summed within each example block.
inline Matrix block_row_sums(const Matrix& G, Eigen::Index k) {
  const Eigen::Index N = G.rows() / k;
  Matrix out(N, G.cols());
  for (Eigen::Index m = 0; m < N; ++m) out.row(m) = G.middleRows(m * k, k).colwise().sum();
  return out;
}

// Same for a square (kN x kN) matrix reduced over both output indices.
inline Matrix pair_block_sums(const Matrix& Q, Eigen::Index k) {
  const Eigen::Index N = Q.rows() / k, M = Q.cols() / k;
  Matrix out(N, M);
  for (Eigen::Index n = 0; n < N; ++n)
    for (Eigen::Index m = 0; m < M; ++m) out(n, m) = Q.block(n * k, m * k, k, k).sum();
  return out;
}

inline Matrix expand_pairs(const Matrix& S, Eigen::Index k) {
  Matrix out(S.rows() * k, S.cols() * k);
  for (Eigen::Index n = 0; n < S.rows(); ++n)
    for (Eigen::Index m = 0; m < S.cols(); ++m) out.block(n * k, m * k, k, k).setConstant(S(n, m));
  return out;
}

inline void check_sides(const MlpSpec& spec, const Vector& eff, const Vector* mask) {
  if (static_cast<std::size_t>(eff.size()) != spec.param_count())
    throw std::invalid_argument("parameter length mismatch");
  if (mask && mask->size() != eff.size()) throw std::invalid_argument("mask length mismatch");
}

}  // namespace detail

/// Full kernel J_m(XA) J_m(XB)^T, where J_m has the pruned columns removed.
/// `eff` is the effective (already masked) parameter vector; `mask` selects
/// which Jacobian columns take part (null keeps all).
inline Matrix tangent_kernel(const MlpSpec& spec, const Vector& eff, const Vector* mask,
                             const TangentSide& A, const TangentSide& B) {
  detail::check_sides(spec, eff, mask);
  const auto k = static_cast<Eigen::Index>(spec.output_dim());
  const Eigen::Index NA = A.fp.inputs[0].rows(), NB = B.fp.inputs[0].rows();
  Matrix K = Matrix::Zero(NA * k, NB * k);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const detail::LayerMask lm(spec, mask, l);
    const Matrix& HA = A.fp.inputs[l];
    const Matrix& HB = B.fp.inputs[l];
    const Matrix& GA = A.signals[l];
    const Matrix& GB = B.signals[l];
    if (lm.uniform) {
      Matrix H = HA * HB.transpose();
      H.array() += lm.bias_level;
      K.array() += (GA * GB.transpose()).array() * detail::expand_pairs(H, k).array();
      continue;
    }
    const Eigen::RowVectorXd c = detail::bias_row(spec, lm);
    Matrix An(NB, GB.cols());
    for (Eigen::Index n = 0; n < NA; ++n) {
      detail::mixed_block(spec, lm, HA, HB, n, c, An);
      K.middleRows(n * k, k).noalias() += GA.middleRows(n * k, k) *
                                          detail::scale_blocks(GB, An, k).transpose();
    }
  }
  return K;
}

/// Diagonal of tangent_kernel for row-aligned batches, as a kN vector.
inline Vector tangent_kernel_diagonal(const MlpSpec& spec, const Vector& eff, const Vector* mask,
                                      const TangentSide& A, const TangentSide& B) {
  detail::check_sides(spec, eff, mask);
  const auto k = static_cast<Eigen::Index>(spec.output_dim());
  const Eigen::Index N = A.fp.inputs[0].rows();
  if (B.fp.inputs[0].rows() != N) throw std::invalid_argument("batch size mismatch");
  Vector d = Vector::Zero(N * k);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const detail::LayerMask lm(spec, mask, l);
    const Matrix P = A.fp.inputs[l].cwiseProduct(B.fp.inputs[l]);
    Matrix Ad;
    if (lm.uniform) {
      Ad = (P.rowwise().sum().array() + lm.bias_level).matrix().replicate(1, A.signals[l].cols());
    } else {
      Ad = P * layer_weight(spec, *mask, l).transpose();
      Ad.rowwise() += detail::bias_row(spec, lm);
    }
    const Matrix GG = A.signals[l].cwiseProduct(B.signals[l]);
    for (Eigen::Index n = 0; n < N; ++n)
      d.segment(n * k, k) += GG.middleRows(n * k, k) * Ad.row(n).transpose();
  }
  return d;
}

namespace detail {

// Adjoints of the per-layer factors of one side.
struct SideAdjoint {
  std::vector<Matrix> signals;  // same shapes as TangentSide::signals
  std::vector<Matrix> inputs;   // same shapes as fp.inputs; entry 0 unused
};

inline SideAdjoint zero_adjoint(const TangentSide& s) {
  SideAdjoint a;
  for (const auto& g : s.signals) a.signals.push_back(Matrix::Zero(g.rows(), g.cols()));
  for (const auto& h : s.fp.inputs) a.inputs.push_back(Matrix::Zero(h.rows(), h.cols()));
  return a;
}

// Pulls factor adjoints back to the effective parameters, treating the ReLU
// derivative pattern as locally constant.
inline void accumulate_param_grad(const MlpSpec& spec, const Vector& eff, const TangentSide& s,
                                  SideAdjoint& adj, Vector& grad) {
  const std::size_t L = spec.num_layers();
  const auto k = static_cast<Eigen::Index>(spec.output_dim());
  // signals[l] = (signals[l+1] W_{l+1}) .* D_l, walked from the input side up.
  for (std::size_t l = 0; l + 1 < L; ++l) {
    Matrix u = adj.signals[l];
    const Matrix& D = s.fp.active[l];
    for (Eigen::Index n = 0; n < D.rows(); ++n)
      u.middleRows(n * k, k).array().rowwise() *= D.row(n).array();
    const auto W = layer_weight(spec, eff, l + 1);
    Eigen::Map<Matrix>(grad.data() + spec.weight_offset(l + 1), W.rows(), W.cols()).noalias() +=
        s.signals[l + 1].transpose() * u;
    adj.signals[l + 1].noalias() += u * W.transpose();
  }
  // inputs[l] = relu(inputs[l-1] W_{l-1}^T + b_{l-1}), walked downward.
  for (std::size_t l = L; l-- > 1;) {
    const Matrix z = adj.inputs[l].cwiseProduct(s.fp.active[l - 1]);
    const auto W = layer_weight(spec, eff, l - 1);
    Eigen::Map<Matrix>(grad.data() + spec.weight_offset(l - 1), W.rows(), W.cols()).noalias() +=
        z.transpose() * s.fp.inputs[l - 1];
    if (spec.bias)
      Eigen::Map<Vector>(grad.data() + spec.bias_offset(l - 1), W.rows()) +=
          z.colwise().sum().transpose();
    if (l - 1 > 0) adj.inputs[l - 1].noalias() += z * W;
  }
}

}  // namespace detail

/// Gradient of sum_ij Omega_ij * tangent_kernel(A, B)_ij with respect to the
/// effective parameters (both sides depend on them). The caller applies the
/// mask chain factor.
inline Vector tangent_kernel_vjp(const MlpSpec& spec, const Vector& eff, const Vector* mask,
                                 const TangentSide& A, const TangentSide& B,
                                 const Matrix& Omega) {
  detail::check_sides(spec, eff, mask);
  const auto k = static_cast<Eigen::Index>(spec.output_dim());
  const Eigen::Index NA = A.fp.inputs[0].rows(), NB = B.fp.inputs[0].rows();
  if (Omega.rows() != NA * k || Omega.cols() != NB * k)
    throw std::invalid_argument("kernel adjoint shape mismatch");
  auto adjA = detail::zero_adjoint(A);
  auto adjB = detail::zero_adjoint(B);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const detail::LayerMask lm(spec, mask, l);
    const Matrix& HA = A.fp.inputs[l];
    const Matrix& HB = B.fp.inputs[l];
    const Matrix& GA = A.signals[l];
    const Matrix& GB = B.signals[l];
    const bool need_inputs = l > 0;
    if (lm.uniform) {
      Matrix H = HA * HB.transpose();
      H.array() += lm.bias_level;
      const Matrix OH = (Omega.array() * detail::expand_pairs(H, k).array()).matrix();
      adjA.signals[l].noalias() += OH * GB;
      adjB.signals[l].noalias() += OH.transpose() * GA;
      if (need_inputs) {
        const Matrix Q = (Omega.array() * (GA * GB.transpose()).array()).matrix();
        const Matrix C = detail::pair_block_sums(Q, k);
        adjA.inputs[l].noalias() += C * HB;
        adjB.inputs[l].noalias() += C.transpose() * HA;
      }
      continue;
    }
    const Eigen::RowVectorXd c = detail::bias_row(spec, lm);
    const auto Wm = layer_weight(spec, *mask, l);
    Matrix An(NB, GB.cols());
    for (Eigen::Index n = 0; n < NA; ++n) {
      detail::mixed_block(spec, lm, HA, HB, n, c, An);
      const auto On = Omega.middleRows(n * k, k);
      const auto GAn = GA.middleRows(n * k, k);
      adjA.signals[l].middleRows(n * k, k).noalias() += On * detail::scale_blocks(GB, An, k);
      const Matrix T = On.transpose() * GAn;  // (NB*k) x n_out
      adjB.signals[l] += detail::scale_blocks(T, An, k);
      if (need_inputs) {
        const Matrix C = detail::block_row_sums(T.cwiseProduct(GB), k);  // NB x n_out
        const Matrix E = C * Wm;                                          // NB x n_in
        adjA.inputs[l].row(n) += E.cwiseProduct(HB).colwise().sum();
        adjB.inputs[l].array() += E.array().rowwise() * HA.row(n).array();
      }
    }
  }
  Vector grad = Vector::Zero(eff.size());
  detail::accumulate_param_grad(spec, eff, A, adjA, grad);
  detail::accumulate_param_grad(spec, eff, B, adjB, grad);
  return grad;
}

/// Gradient of sum_i omega_i * tangent_kernel_diagonal(A, B)_i.
inline Vector tangent_kernel_diagonal_vjp(const MlpSpec& spec, const Vector& eff,
                                          const Vector* mask, const TangentSide& A,
                                          const TangentSide& B, const Vector& omega) {
  detail::check_sides(spec, eff, mask);
  const auto k = static_cast<Eigen::Index>(spec.output_dim());
  const Eigen::Index N = A.fp.inputs[0].rows();
  if (B.fp.inputs[0].rows() != N || omega.size() != N * k)
    throw std::invalid_argument("kernel adjoint shape mismatch");
  auto adjA = detail::zero_adjoint(A);
  auto adjB = detail::zero_adjoint(B);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const detail::LayerMask lm(spec, mask, l);
    const Matrix& HA = A.fp.inputs[l];
    const Matrix& HB = B.fp.inputs[l];
    const Matrix& GA = A.signals[l];
    const Matrix& GB = B.signals[l];
    const Matrix P = HA.cwiseProduct(HB);
    Matrix Ad;
    if (lm.uniform) {
      Ad = (P.rowwise().sum().array() + lm.bias_level).matrix().replicate(1, GA.cols());
    } else {
      Ad = P * layer_weight(spec, *mask, l).transpose();
      Ad.rowwise() += detail::bias_row(spec, lm);
    }
    const Matrix OA = detail::scale_blocks((GA.array().colwise() * omega.array()).matrix(), Ad, k);
    const Matrix OB = detail::scale_blocks((GB.array().colwise() * omega.array()).matrix(), Ad, k);
    adjA.signals[l] += OB;
    adjB.signals[l] += OA;
    if (l == 0) continue;
    const Matrix C = detail::block_row_sums(
        (GA.cwiseProduct(GB).array().colwise() * omega.array()).matrix(), k);  // N x n_out
    Matrix E;
    if (lm.uniform)
      E = C.rowwise().sum().replicate(1, HA.cols());
    else
      E = C * layer_weight(spec, *mask, l);
    adjA.inputs[l] += E.cwiseProduct(HB);
    adjB.inputs[l] += E.cwiseProduct(HA);
  }
  Vector grad = Vector::Zero(eff.size());
  detail::accumulate_param_grad(spec, eff, A, adjA, grad);
  detail::accumulate_param_grad(spec, eff, B, adjB, grad);
  return grad;
}

/// Mixed tangent kernel Theta(X, Xt) = J(X) J(Xt)^T of the (masked) network.
/// Xt must be row-aligned with X.
inline KernelMatrix empirical_mtk(const Params& p, const Mask* mask, const Matrix& X,
                                  const Matrix& Xt) {
  if (X.rows() == 0) throw std::invalid_argument("empty batch");
  if (X.rows() != Xt.rows())
    throw std::invalid_argument("example count mismatch between clean and adversarial batch");
  const Vector eff = effective_params(p, mask);
  const Vector* mv = mask ? &mask->values : nullptr;
  const TangentSide A = tangent_side(p.spec, eff, X);
  const TangentSide B = tangent_side(p.spec, eff, Xt);
  return {tangent_kernel(p.spec, eff, mv, A, B), KernelTag::mtk};
}

/// Empirical NTK; the same computation as empirical_mtk(X, X).
inline KernelMatrix empirical_ntk(const Params& p, const Mask* mask, const Matrix& X) {
  KernelMatrix K = empirical_mtk(p, mask, X, X);
  K.tag = KernelTag::ntk;
  return K;
}

inline KernelMatrix diag_mtk(const Params& p, const Mask* mask, const Matrix& X,
                             const Matrix& Xt) {
  if (X.rows() == 0) throw std::invalid_argument("empty batch");
  if (X.rows() != Xt.rows())
    throw std::invalid_argument("example count mismatch between clean and adversarial batch");
  const Vector eff = effective_params(p, mask);
  const Vector* mv = mask ? &mask->values : nullptr;
  const TangentSide A = tangent_side(p.spec, eff, X);
  const TangentSide B = tangent_side(p.spec, eff, Xt);
  return {tangent_kernel_diagonal(p.spec, eff, mv, A, B), KernelTag::mtk_diagonal};
}

/// Frobenius norm of A - B (not squared).
inline double kernel_distance(const Matrix& A, const Matrix& B) {
  if (A.rows() != B.rows() || A.cols() != B.cols())
    throw std::invalid_argument("kernel shape mismatch");
  return (A - B).norm();
}

inline double kernel_distance(const KernelMatrix& A, const KernelMatrix& B) {
  return kernel_distance(A.values, B.values);
}

/// Euclidean distance between two flattened output vectors.
inline double target_distance(const Vector& fd, const Vector& fs) {
  if (fd.size() != fs.size()) throw std::invalid_argument("output length mismatch");
  return (fd - fs).norm();
}

/// Row-major flattening of a batch of outputs: entry n*k + a.
inline Vector flatten_outputs(const Matrix& out) {
  return Eigen::Map<const Vector>(out.data(), out.size());
}

/// Binary layout: u64 rows, u64 cols, u32 tag, then rows*cols little-endian
/// doubles in row-major order.
inline void write_kernel(std::ostream& os, const KernelMatrix& K) {
  write_le<std::uint64_t>(os, static_cast<std::uint64_t>(K.rows()));
  write_le<std::uint64_t>(os, static_cast<std::uint64_t>(K.cols()));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(K.tag));
  write_le_doubles(os, K.values.data(), static_cast<std::size_t>(K.values.size()));
  if (!os) throw std::runtime_error("kernel write failed");
}

inline KernelMatrix read_kernel(std::istream& is) {
  const auto r = read_le<std::uint64_t>(is, "kernel rows");
  const auto c = read_le<std::uint64_t>(is, "kernel cols");
  const auto t = read_le<std::uint32_t>(is, "kernel tag");
  if (t > 2) throw std::runtime_error("kernel tag: unknown value " + std::to_string(t));
  KernelMatrix K{Matrix(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)),
                 static_cast<KernelTag>(t)};
  read_le_doubles(is, K.values.data(), static_cast<std::size_t>(K.values.size()),
                  "kernel payload");
  return K;
}

}  // namespace awt
