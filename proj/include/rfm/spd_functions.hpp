#ifndef RFM_SPD_FUNCTIONS_HPP_
#define RFM_SPD_FUNCTIONS_HPP_

// Symmetric matrix functions via eigendecomposition, generic over the Eigen
// matrix type (fixed 2x2/3x3 or dynamic) and scalar.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <cmath>

#include "rfm/errors.hpp"

namespace rfm::spd {

template <typename Derived>
typename Derived::PlainObject symmetrize(const Eigen::MatrixBase<Derived>& a) {
  return (a + a.transpose()) * typename Derived::Scalar(0.5);
}

template <typename Derived>
Eigen::SelfAdjointEigenSolver<typename Derived::PlainObject> eigen_sym(
    const Eigen::MatrixBase<Derived>& a) {
  Eigen::SelfAdjointEigenSolver<typename Derived::PlainObject> es(a.derived());
  if (es.info() != Eigen::Success) {
    throw NumericFailure("symmetric eigensolver did not converge");
  }
  return es;
}

/// f(A) = Q diag(f(lambda)) Q^T for symmetric A.
template <typename Derived, typename F>
typename Derived::PlainObject apply(const Eigen::MatrixBase<Derived>& a, F f) {
  const auto es = eigen_sym(a);
  const auto& q = es.eigenvectors();
  auto values = es.eigenvalues().unaryExpr(f).eval();
  typename Derived::PlainObject out = q * values.asDiagonal() * q.transpose();
  return symmetrize(out);
}

template <typename Derived>
void require_positive(const Eigen::MatrixBase<Derived>& eigenvalues) {
  if (!(eigenvalues.minCoeff() > 0)) {
    throw DomainError("matrix is not positive definite");
  }
}

template <typename Derived>
typename Derived::PlainObject expm(const Eigen::MatrixBase<Derived>& a) {
  using S = typename Derived::Scalar;
  return apply(a, [](S x) { return std::exp(x); });
}

template <typename Derived>
typename Derived::PlainObject logm(const Eigen::MatrixBase<Derived>& a) {
  using S = typename Derived::Scalar;
  const auto es = eigen_sym(a);
  require_positive(es.eigenvalues());
  const auto& q = es.eigenvectors();
  auto values = es.eigenvalues().unaryExpr([](S x) { return std::log(x); }).eval();
  typename Derived::PlainObject out = q * values.asDiagonal() * q.transpose();
  return symmetrize(out);
}

/// A^p for symmetric positive definite A.
template <typename Derived>
typename Derived::PlainObject powm(const Eigen::MatrixBase<Derived>& a,
                                   typename Derived::Scalar p) {
  using S = typename Derived::Scalar;
  const auto es = eigen_sym(a);
  require_positive(es.eigenvalues());
  const auto& q = es.eigenvectors();
  auto values = es.eigenvalues().unaryExpr([p](S x) { return std::pow(x, p); }).eval();
  typename Derived::PlainObject out = q * values.asDiagonal() * q.transpose();
  return symmetrize(out);
}

/// X^{1/2} and X^{-1/2} from a single decomposition.
template <typename Mat>
struct Whitening {
  Mat half;
  Mat inv_half;
};

template <typename Derived>
Whitening<typename Derived::PlainObject> whitening(const Eigen::MatrixBase<Derived>& x) {
  using S = typename Derived::Scalar;
  const auto es = eigen_sym(x);
  require_positive(es.eigenvalues());
  const auto& q = es.eigenvectors();
  auto s = es.eigenvalues().unaryExpr([](S v) { return std::sqrt(v); }).eval();
  auto si = s.cwiseInverse().eval();
  Whitening<typename Derived::PlainObject> w;
  w.half = symmetrize((q * s.asDiagonal() * q.transpose()).eval());
  w.inv_half = symmetrize((q * si.asDiagonal() * q.transpose()).eval());
  return w;
}

/// Affine-invariant exponential map Exp_X(V).
template <typename DX, typename DV>
typename DX::PlainObject exp_map(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DV>& v) {
  const auto w = whitening(x);
  auto inner = symmetrize((w.inv_half * v * w.inv_half).eval());
  return symmetrize((w.half * expm(inner) * w.half).eval());
}

/// Affine-invariant logarithm Log_X(Y).
template <typename DX, typename DY>
typename DX::PlainObject log_map(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y) {
  const auto w = whitening(x);
  auto inner = symmetrize((w.inv_half * y * w.inv_half).eval());
  return symmetrize((w.half * logm(inner) * w.half).eval());
}

/// d(X, Y) = || logm(X^{-1/2} Y X^{-1/2}) ||_F.
template <typename DX, typename DY>
typename DX::Scalar distance(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y) {
  const auto w = whitening(x);
  auto inner = symmetrize((w.inv_half * y * w.inv_half).eval());
  const auto es = eigen_sym(inner);
  require_positive(es.eigenvalues());
  return es.eigenvalues().array().log().matrix().norm();
}

/// g_X(U, V) = tr(X^-1 U X^-1 V).
template <typename DX, typename DU, typename DV>
typename DX::Scalar inner(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DU>& u,
                          const Eigen::MatrixBase<DV>& v) {
  const typename DX::PlainObject xi = x.derived().ldlt().solve(
      DX::PlainObject::Identity(x.rows(), x.cols()));
  return (xi * u * xi * v).trace();
}

/// Parallel transport along the minimizing geodesic: E -> G E G^T with
/// G = X^{1/2} (X^{-1/2} Y X^{-1/2})^{1/2} X^{-1/2}.
template <typename DX, typename DY, typename DE>
typename DX::PlainObject transport(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y,
                                   const Eigen::MatrixBase<DE>& e) {
  const auto w = whitening(x);
  auto inner = symmetrize((w.inv_half * y * w.inv_half).eval());
  auto g = (w.half * powm(inner, typename DX::Scalar(0.5)) * w.inv_half).eval();
  return symmetrize((g * e * g.transpose()).eval());
}

}  // namespace rfm::spd

#endif  // RFM_SPD_FUNCTIONS_HPP_
