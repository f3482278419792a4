#ifndef RFM_SPHERE_BRIDGE_HPP_
#define RFM_SPHERE_BRIDGE_HPP_

// Geodesic-bridge densities and the population flow-matching field on S^d
// with a uniform prior.
//
// With polar coordinates x1 = Exp_x(r w) around the query point, the volume
// Jacobian J_t(x|x1) depends on r only and J_t(r) sin^{d-1}(r) dr equals
// sin^{d-1}(u) du for u = r / (1 - t). Every conditional integral therefore
// becomes a smooth 1-D integral over u in [0, pi] of an angular average of the
// target over the geodesic sphere of radius (1 - t) u. For targets that are
// mixtures of a uniform floor and von Mises-Fisher bumps the angular averages
// have closed forms in modified Bessel functions.

#include <Eigen/Core>
#include <array>
#include <memory>
#include <span>
#include <vector>

#include "rfm/field.hpp"
#include "rfm/manifold.hpp"
#include "rfm/quadrature.hpp"
#include "rfm/random.hpp"

namespace rfm {

/// J_t(x|x1) as a function of r = d(x, x1); zero for r >= (1-t) pi.
double sphere_jacobian_jt(int d, double t, double r);

/// d/dr log J_t(r) = (d-1) (cot(r/(1-t)) / (1-t) - cot r) on r < (1-t) pi.
double sphere_log_jacobian_dr(int d, double t, double r);

struct VmfBump {
  Eigen::VectorXd mean;  // unit vector in R^{d+1}
  double kappa;          // concentration
  double mass;           // mixture weight
};

/// Target density on S^d: uniform_mass / Vol + sum_k mass_k vMF(mean_k, kappa_k).
/// Densities are with respect to the Riemannian volume.
class SphereTarget {
 public:
  SphereTarget(int d, double uniform_mass, std::vector<VmfBump> bumps);

  static SphereTarget uniform(int d);

  /// Two bumps of equal mass at fixed non-antipodal directions over a uniform
  /// floor; `floor_mass` of the total mass is uniform.
  static SphereTarget two_bump(int d, double kappa = 3.0, double floor_mass = 0.35);

  /// Two equal bumps at orthogonal means over a uniform floor, with
  /// concentration and floor solved so that m1 = lo / Vol and M1 = hi / Vol.
  static SphereTarget two_bump_bounded(int d, double lo = 0.5, double hi = 2.0);

  int dim() const { return d_; }
  const Manifold& manifold() const { return manifold_; }
  double uniform_mass() const { return uniform_mass_; }
  const std::vector<VmfBump>& bumps() const { return bumps_; }

  double density(const Point& x) const;
  /// Riemannian gradient of log p1.
  Eigen::VectorXd log_density_gradient(const Point& x) const;

  /// Density bounds 0 < m1 <= p1 <= M1, located by multi-start ascent.
  double m1() const { return m1_; }
  double big_m1() const { return big_m1_; }
  double ratio() const { return big_m1_ / m1_; }

  Point sample(Rng& rng) const;

  /// Angular averages over the geodesic sphere of radius r around x:
  ///   pbar = int_{S^{d-1}} p1(cos r x + sin r w) dw           (returned)
  ///   qbar = int_{S^{d-1}} w p1(cos r x + sin r w) dw
  ///        = sum_k gamma[k] * (mean_k - along_k x)            (gamma written)
  static constexpr std::size_t kMaxBumps = 8;
  struct BumpCoords {
    std::array<double, kMaxBumps> along{};
  };
  BumpCoords coords(const Point& x) const;
  double angular_moments(const BumpCoords& c, double cos_r, double sin_r, double* gamma) const;

  /// Density normalizer of one bump kernel: int exp(kappa (cos theta - 1)) dV.
  static double kernel_mass(int d, double kappa);

 private:
  void locate_bounds();

  int d_;
  Manifold manifold_;
  double uniform_mass_;
  std::vector<VmfBump> bumps_;
  std::vector<double> coeff_;  // mass_k / int exp(kappa (cos - 1)) dV
  double volume_;
  double sphere_dm1_area_;  // |S^{d-1}|
  double bessel_norm_;      // (2 pi)^{d/2}
  double m1_ = 0.0;
  double big_m1_ = 0.0;
};

/// Sampler for vMF(mean, kappa) on S^d (Wood's algorithm).
Point sample_vmf(const Eigen::VectorXd& mean, double kappa, Rng& rng);

/// Quadrature machinery for the bridge integrals of one target.
class SphereBridge {
 public:
  /// `nodes == 0` chooses the node count by doubling from 8 until
  /// successive estimates agree to `tolerance` (relative) at probe points.
  explicit SphereBridge(SphereTarget target, int nodes = 0, double tolerance = 1e-8);

  const SphereTarget& target() const { return target_; }
  const Manifold& manifold() const { return target_.manifold(); }
  int nodes() const { return static_cast<int>(rule_.size()); }

  /// Per-time node table shared by every evaluation at that time.
  struct Table {
    double t;
    std::vector<double> u;
    std::vector<double> w_sin;  // weight * sin^{d-1}(u)
    std::vector<double> cos_r;
    std::vector<double> sin_r;
    std::vector<double> dlogj;  // d/dr log J_t at r = (1-t) u
  };
  Table table(double t) const;

  /// p_t(x) for the law of X_t.
  double marginal_density(double t, const Point& x) const;
  double marginal_density(const Table& tab, const Point& x) const;

  /// p_t(x1 | x).
  double conditional_density(double t, const Point& x, const Point& x1) const;

  /// v(t, x) = E[Log_x(X1) | X_t = x] / (1 - t).
  Eigen::VectorXd velocity(double t, const Point& x) const;
  Eigen::VectorXd velocity(const Table& tab, const Point& x) const;

  /// grad log p_t(x) = E[grad_x log J_t(x | X1) | X_t = x].
  Eigen::VectorXd score(double t, const Point& x) const;
  Eigen::VectorXd score(const Table& tab, const Point& x) const;

  /// Exact sample of X_t = Exp_{X0}(t Log_{X0}(X1)), X0 uniform, X1 ~ p1.
  Point sample_marginal(double t, Rng& rng) const;

 private:
  // mass = int sin^{d-1} pbar; first/score = per-bump gamma integrals
  // against u and -dlogj.
  using Coeffs = std::array<double, SphereTarget::kMaxBumps>;
  struct Moments {
    double mass = 0.0;
    Coeffs first{};
    Coeffs score{};
    SphereTarget::BumpCoords coords;
  };
  Moments moments(const Table& tab, const Point& x, bool want_score) const;
  Eigen::VectorXd combine(const Moments& mo, const Coeffs& g, const Point& x) const;
  void build_rule(int n);

  SphereTarget target_;
  QuadratureRule rule_;
};

/// The population field v of a sphere bridge. Evaluating at t >= t_max
/// throws DomainError (early stopping).
class SpherePopulationField final : public VelocityField {
 public:
  explicit SpherePopulationField(std::shared_ptr<const SphereBridge> bridge, double t_max = 1.0)
      : bridge_(std::move(bridge)), t_max_(t_max) {}

  const Manifold& manifold() const override { return bridge_->manifold(); }
  FieldVariant variant() const override { return FieldVariant::Population; }
  Eigen::VectorXd operator()(double t, const Point& x) const override;
  void evaluate_many(double t, std::span<const Point> xs,
                     std::span<Eigen::VectorXd> out) const override;

  const SphereBridge& bridge() const { return *bridge_; }

 private:
  std::shared_ptr<const SphereBridge> bridge_;
  double t_max_;
};

/// v(t, x) = Log_x(x1) / (1 - t) for a fixed endpoint x1.
class BridgeConditionalField final : public VelocityField {
 public:
  BridgeConditionalField(Manifold m, Point endpoint) : m_(m), endpoint_(std::move(endpoint)) {}
  const Manifold& manifold() const override { return m_; }
  FieldVariant variant() const override { return FieldVariant::BridgeConditional; }
  Eigen::VectorXd operator()(double t, const Point& x) const override;

 private:
  Manifold m_;
  Point endpoint_;
};

/// Regularity constants of the population field on S^d with uniform prior
/// and a target with density ratio M1/m1, plus the assembled rate constants.
struct RegularityConstants {
  double t;
  double l_v_x;     // sup ||nabla v||_op
  double l_vhat_x;  // l_v_x + eps
  double l_v_t;     // sup ||d/dt v||
  double l_div_x;   // sup ||grad div v||
  double l_div_t;   // sup |d/dt div v|
  double l_score;   // E ||grad log p_t||^2
  double l_v;       // sup ||v||
  double l_r;       // curvature operator bound
  double c_lip;     // coefficient of h in the TV bound
  double c_eps;     // coefficient of eps
  double c_eps2;    // coefficient of eps^2
};

RegularityConstants sphere_constants(double density_ratio, int d, double t, double eps = 0.0);

}  // namespace rfm

#endif  // RFM_SPHERE_BRIDGE_HPP_
