#ifndef RFM_MANIFOLD_HPP_
#define RFM_MANIFOLD_HPP_

#include <Eigen/Core>
#include <limits>
#include <string>
#include <vector>

namespace rfm {

enum class ManifoldKind { Sphere, Spd, Euclidean };

/// Points live in ambient coordinates: a unit vector in R^{d+1} for the
/// sphere, a column-major flattened symmetric n x n matrix for SPD(n), and a
/// plain vector for R^d.
using Point = Eigen::VectorXd;

/// Curvature and injectivity data for one of the supported manifolds.
///
/// `param` is d for Sphere/Euclidean and n for Spd. The sectional curvature
/// bounds use the metric g_X(U,V) = tr(X^-1 U X^-1 V) on SPD(n), for which
/// the sectional curvatures lie in [-1/2, 0].
class Manifold {
 public:
  static Manifold sphere(int d);
  static Manifold spd(int n);
  static Manifold euclidean(int d);

  ManifoldKind kind() const { return kind_; }
  int param() const { return param_; }
  /// Intrinsic dimension (n(n+1)/2 for SPD(n)).
  int dim() const;
  /// Length of the ambient coordinate vector.
  int ambient_dim() const;

  double k_min() const { return k_min_; }
  double k_max() const { return k_max_; }
  double l_r() const { return l_r_; }
  double inj_radius() const { return inj_radius_; }
  /// Diameter; +infinity for the non-compact manifolds.
  double diameter() const;
  bool compact() const { return kind_ == ManifoldKind::Sphere; }

  std::string name() const;

  bool operator==(const Manifold& other) const {
    return kind_ == other.kind_ && param_ == other.param_;
  }

 private:
  Manifold(ManifoldKind kind, int param, double k_min, double k_max, double l_r,
           double inj)
      : kind_(kind), param_(param), k_min_(k_min), k_max_(k_max), l_r_(l_r),
        inj_radius_(inj) {}

  ManifoldKind kind_;
  int param_;
  double k_min_;
  double k_max_;
  double l_r_;
  double inj_radius_;
};

/// A tangent vector together with its base point.
struct Tangent {
  Point base;
  Eigen::VectorXd vec;
};

/// Orthonormal basis of T_base M under the manifold metric.
struct Frame {
  Point base;
  std::vector<Eigen::VectorXd> vectors;
};

}  // namespace rfm

#endif  // RFM_MANIFOLD_HPP_
