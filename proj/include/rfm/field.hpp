#ifndef RFM_FIELD_HPP_
#define RFM_FIELD_HPP_

#include <Eigen/Core>
#include <span>
#include <string>

#include "rfm/manifold.hpp"

namespace rfm {

enum class FieldVariant { Population, Perturbed, FrozenInterpolated, BridgeConditional, Analytic };

std::string to_string(FieldVariant v);

/// Time-dependent tangent vector field (t, x) -> v(t, x) in T_x M.
///
/// Implementations are immutable after construction and must be safe to call
/// concurrently; evaluation is a pure function of (t, x).
class VelocityField {
 public:
  virtual ~VelocityField() = default;

  virtual const Manifold& manifold() const = 0;
  virtual FieldVariant variant() const = 0;

  /// Ambient representation of v(t, x), tangent at x.
  virtual Eigen::VectorXd operator()(double t, const Point& x) const = 0;

  /// Evaluate at many points sharing one time. Overridden where per-time
  /// tables can be reused.
  virtual void evaluate_many(double t, std::span<const Point> xs,
                             std::span<Eigen::VectorXd> out) const {
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = (*this)(t, xs[i]);
  }

  Tangent tangent(double t, const Point& x) const { return {x, (*this)(t, x)}; }
};

}  // namespace rfm

#endif  // RFM_FIELD_HPP_
