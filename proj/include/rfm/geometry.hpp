#ifndef RFM_GEOMETRY_HPP_
#define RFM_GEOMETRY_HPP_

// Closed-form Riemannian primitives on S^d, SPD(n) (affine-invariant metric)
// and R^d. Every function is pure; tangent vectors are ambient vectors whose
// base point is the point argument of the call.

#include <Eigen/Core>
#include <utility>

#include "rfm/errors.hpp"
#include "rfm/field.hpp"
#include "rfm/manifold.hpp"
#include "rfm/random.hpp"

namespace rfm {

/// Sphere points closer than this to antipodal are treated as on the cut locus.
inline constexpr double kCutLocusMargin = 1e-6;

void require_finite(const Eigen::VectorXd& v, const char* what);

/// Throws InvalidArgument unless x is a valid point of m (unit norm, SPD, ...).
void check_point(const Manifold& m, const Point& x);

/// Retraction of ambient coordinates back onto the manifold (sphere
/// renormalization, SPD symmetrization).
Point normalize_point(const Manifold& m, const Point& x);

/// Orthogonal projection of an ambient vector onto T_x M.
Eigen::VectorXd project_tangent(const Manifold& m, const Point& x, const Eigen::VectorXd& v);

double inner(const Manifold& m, const Point& x, const Eigen::VectorXd& u, const Eigen::VectorXd& v);
double norm(const Manifold& m, const Point& x, const Eigen::VectorXd& v);

Point exp_map(const Manifold& m, const Point& x, const Eigen::VectorXd& v);
inline Point exp_map(const Manifold& m, const Tangent& v) { return exp_map(m, v.base, v.vec); }

/// Log_x(y). Throws DomainError on the sphere cut locus.
Eigen::VectorXd log_map(const Manifold& m, const Point& x, const Point& y);

double distance(const Manifold& m, const Point& x, const Point& y);

/// Transport of v in T_x M to T_y M along the minimizing geodesic.
Eigen::VectorXd parallel_transport(const Manifold& m, const Point& x, const Point& y,
                                   const Eigen::VectorXd& v);

/// X_t = Exp_{x0}(t Log_{x0}(x1)).
Point geodesic_point(const Manifold& m, const Point& x0, const Point& x1, double t);

/// Velocity of the geodesic bridge at X_t, computed as Log_{X_t}(x1) / (1 - t).
Eigen::VectorXd bridge_velocity(const Manifold& m, const Point& x0, const Point& x1, double t);

/// Same velocity computed by transporting Log_{x0}(x1) from x0 to X_t.
Eigen::VectorXd bridge_velocity_transported(const Manifold& m, const Point& x0, const Point& x1,
                                            double t);

Frame orthonormal_frame(const Manifold& m, const Point& x);

/// Gram matrix of a frame under the metric at its base point.
Eigen::MatrixXd frame_gram(const Manifold& m, const Frame& f);

/// Coordinates of v in the frame.
Eigen::VectorXd frame_coordinates(const Manifold& m, const Frame& f, const Eigen::VectorXd& v);

/// Reference point: north pole e_{d+1}, identity matrix, origin.
Point origin(const Manifold& m);

/// Random point: uniform on the sphere, Exp_I of a Gaussian tangent of the
/// given scale on SPD, Gaussian on R^d.
Point random_point(const Manifold& m, Rng& rng, double scale = 1.0);

/// Gaussian tangent vector at x with metric-isotropic covariance scale^2 I.
Eigen::VectorXd random_tangent(const Manifold& m, const Point& x, Rng& rng, double scale = 1.0);

/// s_k(r) and s_k'(r): sin(r sqrt k)/sqrt k, r, or sinh(r sqrt(-k))/sqrt(-k).
struct ModelValue {
  double value;
  double derivative;
};
ModelValue model_function_s(double k, double r);

/// The companion solution with s(0) = 1, s'(0) = 0: cos, 1 or cosh.
ModelValue model_function_c(double k, double r);

/// Norm of a normal Jacobi field on a space of constant curvature c with
/// |J(0)| = j0 and |J'(0)| = dj0 (initial data parallel).
double jacobi_closed_form(double c, double t, double j0, double dj0);

/// Central finite-difference divergence along frame geodesics, pulling the
/// field values back to T_x M by parallel transport.
template <typename F>
double divergence_fd(const Manifold& m, F&& field, const Point& x, double step) {
  if (!(step > 0)) throw InvalidArgument("divergence_fd: step must be positive");
  const Frame frame = orthonormal_frame(m, x);
  double div = 0.0;
  for (const auto& e : frame.vectors) {
    const Point xp = exp_map(m, x, step * e);
    const Point xm = exp_map(m, x, -step * e);
    const Eigen::VectorXd up = parallel_transport(m, xp, x, field(xp));
    const Eigen::VectorXd um = parallel_transport(m, xm, x, field(xm));
    div += inner(m, x, (up - um) / (2.0 * step), e);
  }
  return div;
}

inline double divergence_fd(const Manifold& m, const VelocityField& field, double t, const Point& x,
                            double step) {
  return divergence_fd(m, [&](const Point& y) { return field(t, y); }, x, step);
}

/// Covariant derivative matrix [<nabla_{e_j} u, e_i>] by central differences.
template <typename F>
Eigen::MatrixXd covariant_jacobian_fd(const Manifold& m, F&& field, const Point& x, double step) {
  const Frame frame = orthonormal_frame(m, x);
  const int d = static_cast<int>(frame.vectors.size());
  Eigen::MatrixXd jac(d, d);
  for (int j = 0; j < d; ++j) {
    const Point xp = exp_map(m, x, step * frame.vectors[j]);
    const Point xm = exp_map(m, x, -step * frame.vectors[j]);
    const Eigen::VectorXd up = parallel_transport(m, xp, x, field(xp));
    const Eigen::VectorXd um = parallel_transport(m, xm, x, field(xm));
    jac.col(j) = frame_coordinates(m, frame, (up - um) / (2.0 * step));
  }
  return jac;
}

/// Riemannian gradient of a scalar function by central differences.
template <typename F>
Eigen::VectorXd gradient_fd(const Manifold& m, F&& f, const Point& x, double step) {
  const Frame frame = orthonormal_frame(m, x);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
  for (const auto& e : frame.vectors) {
    const double fp = f(exp_map(m, x, step * e));
    const double fm = f(exp_map(m, x, -step * e));
    g += (fp - fm) / (2.0 * step) * e;
  }
  return g;
}

}  // namespace rfm

#endif  // RFM_GEOMETRY_HPP_
