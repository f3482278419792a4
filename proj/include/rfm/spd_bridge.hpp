#ifndef RFM_SPD_BRIDGE_HPP_
#define RFM_SPD_BRIDGE_HPP_

// Bridge densities and the population field on SPD(n) with the affine-invariant
// metric. Points and tangents are column-major flattened n x n matrices.

#include <Eigen/Core>
#include <memory>
#include <span>
#include <vector>

#include "rfm/field.hpp"
#include "rfm/manifold.hpp"
#include "rfm/random.hpp"

namespace rfm {

enum class PriorKind { SphereUniform, SpdRiemannianGaussian };

struct PriorSpec {
  PriorKind kind = PriorKind::SphereUniform;
  double beta = 0.0;

  static PriorSpec sphere_uniform() { return {PriorKind::SphereUniform, 0.0}; }
  /// exp(-beta d(x, I)^2); the default concentration is n(n+1)/2.
  static PriorSpec spd_gaussian(int n) { return {PriorKind::SpdRiemannianGaussian, 0.5 * n * (n + 1)}; }
  static PriorSpec spd_gaussian_beta(double beta) { return {PriorKind::SpdRiemannianGaussian, beta}; }

  /// Sphere: exact log(1/Vol). SPD: -beta d(x, I)^2 (unnormalized).
  double log_density(const Manifold& m, const Point& x) const;

  Point sample(const Manifold& m, Rng& rng) const;
};

/// log(sinh(y) / y), even in y, with series near zero.
double log_sinhc(double y);

/// log |det (dExp_{x1})_v| on SPD(n). Depends only on the eigenvalues
/// lambda of x1^{-1/2} v x1^{-1/2}: sum_{i<j} log sinhc((lambda_i - lambda_j) / 2).
double spd_log_jacobian(const Manifold& m, const Point& x1, const Eigen::VectorXd& v);

/// Wishart-like target X1 = G G^T / dof with G an n x dof standard normal
/// matrix. Its density with respect to the Riemannian volume is proportional
/// to det(X)^{dof/2} exp(-dof tr(X) / 2).
class SpdTarget {
 public:
  SpdTarget(int n, double dof);

  const Manifold& manifold() const { return manifold_; }
  double dof() const { return dof_; }

  double log_density(const Point& x) const;  // unnormalized
  Point sample(Rng& rng) const;

  /// max{E[d(X1,I)^2 e^{lambda d(X1,I)}], E[e^{lambda d(X1,I)}]} over `samples`.
  static double moment(const Manifold& m, std::span<const Point> samples, double lambda);

 private:
  Manifold manifold_;
  double dof_;
};

/// Psi_{t,x1}(x) = Exp_{x1}(Log_{x1}(x) / (1 - t)), the prior point that the
/// bridge to x1 carries to x at time t.
Point spd_psi(const Manifold& m, double t, const Point& x1, const Point& x);

/// log p1(x1) + log p0(Psi) + log J_t(x | x1), unnormalized.
double spd_conditional_log_density(const SpdTarget& target, const PriorSpec& prior, double t,
                                   const Point& x, const Point& x1);

/// Population field estimated by self-normalized importance sampling over a
/// fixed bank of target samples: v(t,x) = sum_i w_i Log_x(x1_i) / (1-t) with
/// w_i proportional to p0(Psi_{t,x1_i}(x)) J_t(x | x1_i).
class SpdPopulationField final : public VelocityField {
 public:
  SpdPopulationField(const SpdTarget& target, PriorSpec prior, int bank_size, std::uint64_t seed,
                     double t_max = 1.0, double ess_floor = 50.0);
  ~SpdPopulationField() override;

  const Manifold& manifold() const override { return manifold_; }
  FieldVariant variant() const override { return FieldVariant::Population; }
  Eigen::VectorXd operator()(double t, const Point& x) const override;

  /// Effective sample size of the weights at (t, x).
  double ess(double t, const Point& x) const;

  const std::vector<Point>& bank() const;

  struct Impl;

 private:
  Manifold manifold_;
  double t_max_;
  double ess_floor_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace rfm

#endif  // RFM_SPD_BRIDGE_HPP_
