#include <limits>
#include <numbers>

#include "rfm/errors.hpp"
#include "rfm/field.hpp"
#include "rfm/manifold.hpp"

namespace rfm {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

Manifold Manifold::sphere(int d) {
  if (d < 1) throw InvalidArgument("sphere dimension must be >= 1");
  return Manifold(ManifoldKind::Sphere, d, 1.0, 1.0, 1.0, std::numbers::pi);
}

Manifold Manifold::spd(int n) {
  if (n < 1) throw InvalidArgument("SPD size must be >= 1");
  // Sectional curvature of the affine-invariant metric lies in [-1/2, 0].
  const double k_min = n >= 2 ? -0.5 : 0.0;
  return Manifold(ManifoldKind::Spd, n, k_min, 0.0, -k_min, kInf);
}

Manifold Manifold::euclidean(int d) {
  if (d < 1) throw InvalidArgument("Euclidean dimension must be >= 1");
  return Manifold(ManifoldKind::Euclidean, d, 0.0, 0.0, 0.0, kInf);
}

int Manifold::dim() const {
  return kind_ == ManifoldKind::Spd ? param_ * (param_ + 1) / 2 : param_;
}

int Manifold::ambient_dim() const {
  switch (kind_) {
    case ManifoldKind::Sphere:
      return param_ + 1;
    case ManifoldKind::Spd:
      return param_ * param_;
    case ManifoldKind::Euclidean:
      return param_;
  }
  return param_;
}

double Manifold::diameter() const { return compact() ? std::numbers::pi : kInf; }

std::string Manifold::name() const {
  switch (kind_) {
    case ManifoldKind::Sphere:
      return "S^" + std::to_string(param_);
    case ManifoldKind::Spd:
      return "SPD(" + std::to_string(param_) + ")";
    case ManifoldKind::Euclidean:
      return "R^" + std::to_string(param_);
  }
  return "?";
}

std::string to_string(FieldVariant v) {
  switch (v) {
    case FieldVariant::Population:
      return "population";
    case FieldVariant::Perturbed:
      return "perturbed";
    case FieldVariant::FrozenInterpolated:
      return "frozen-interpolated";
    case FieldVariant::BridgeConditional:
      return "bridge-conditional";
    case FieldVariant::Analytic:
      return "analytic";
  }
  return "?";
}

}  // namespace rfm
