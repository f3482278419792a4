#include "rfm/perturb.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "rfm/errors.hpp"
#include "rfm/geometry.hpp"
#include "rfm/random.hpp"
#include "rfm/spd_bridge.hpp"
#include "rfm/spd_functions.hpp"

namespace rfm {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd random_orthogonal(int n, Rng& rng) {
  MatrixXd g(n, n);
  for (int j = 0; j < n; ++j) g.col(j) = standard_normal_vector(rng, n);
  Eigen::HouseholderQR<MatrixXd> qr(g);
  MatrixXd q = qr.householderQ();
  // Fix column signs so the result does not depend on the QR convention.
  const MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < n; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  return q;
}

// Block-diagonal complex structure [[0,-1],[1,0]]; a trailing odd
// coordinate is left at zero.
MatrixXd complex_structure(int n) {
  MatrixXd j = MatrixXd::Zero(n, n);
  for (int i = 0; i + 1 < n; i += 2) {
    j(i + 1, i) = 1.0;
    j(i, i + 1) = -1.0;
  }
  return j;
}

MatrixXd random_symmetric_unit(int n, Rng& rng) {
  MatrixXd e(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) e(i, j) = e(j, i) = standard_normal(rng);
  return e / e.norm();
}

Eigen::Map<const MatrixXd> as_matrix(const VectorXd& v, int n) { return {v.data(), n, n}; }

VectorXd flatten(const MatrixXd& a) { return Eigen::Map<const VectorXd>(a.data(), a.size()); }

}  // namespace

PerturbationMode parse_perturbation_mode(const std::string& s) {
  if (s == "uniform_rotation") return PerturbationMode::UniformRotation;
  if (s == "uniform_additive") return PerturbationMode::UniformAdditive;
  if (s == "mean_square") return PerturbationMode::MeanSquare;
  throw InvalidArgument("unknown perturbation mode: " + s);
}

std::string to_string(PerturbationMode m) {
  switch (m) {
    case PerturbationMode::UniformRotation: return "uniform_rotation";
    case PerturbationMode::UniformAdditive: return "uniform_additive";
    case PerturbationMode::MeanSquare: return "mean_square";
  }
  return "unknown";
}

PerturbedField::PerturbedField(std::shared_ptr<const VelocityField> base, double eps,
                               PerturbationMode mode, std::uint64_t seed)
    : base_(std::move(base)), eps_(eps), mode_(mode) {
  if (!std::isfinite(eps)) throw InvalidArgument("perturbation size must be finite");
  const Manifold& m = base_->manifold();
  const int amb = m.ambient_dim();
  Rng rng = make_stream(seed, 0x9e27);
  switch (m.kind()) {
    case ManifoldKind::Sphere: {
      const MatrixXd q = random_orthogonal(amb, rng);
      if (mode == PerturbationMode::UniformRotation ||
          (mode == PerturbationMode::UniformAdditive && amb % 2 == 0)) {
        a_ = q * complex_structure(amb) * q.transpose();
      } else if (mode == PerturbationMode::UniformAdditive) {
        // Template w at pole p, transported along minimizing geodesics.
        a_ = q.leftCols(2);
      } else {
        c_ = standard_normal_vector(rng, amb);
        a_.resize(amb, amb);
        for (int j = 0; j < amb; ++j) a_.col(j) = standard_normal_vector(rng, amb);
        // E ||P_x(c + Bx)||^2 for x uniform on the sphere.
        const double dd = amb;
        const MatrixXd s = 0.5 * (a_ + a_.transpose());
        const double tr = s.trace();
        const double ms = c_.squaredNorm() * (1.0 - 1.0 / dd) + a_.squaredNorm() / dd -
                          (tr * tr + 2.0 * s.squaredNorm()) / (dd * (dd + 2.0));
        scale_ = 1.0 / std::sqrt(ms);
      }
      break;
    }
    case ManifoldKind::Spd: {
      const int n = m.param();
      if (mode == PerturbationMode::UniformRotation)
        throw InvalidArgument("uniform_rotation perturbation is defined on the sphere only");
      if (mode == PerturbationMode::UniformAdditive) {
        a_ = random_symmetric_unit(n, rng);
      } else {
        a_.resize(n, n);
        for (int j = 0; j < n; ++j) a_.col(j) = standard_normal_vector(rng, n);
        c_ = flatten(random_symmetric_unit(n, rng));
        // Normalize E ||u||^2 under the default prior by a fixed Monte Carlo bank.
        const PriorSpec prior = PriorSpec::spd_gaussian(n);
        Rng ref = make_stream(seed, 0x9e28);
        double acc = 0.0;
        const int count = 4096;
        scale_ = 1.0;
        for (int i = 0; i < count; ++i) {
          const Point x = prior.sample(m, ref);
          const VectorXd u = unit_perturbation(x);
          acc += inner(m, x, u, u);
        }
        scale_ = 1.0 / std::sqrt(acc / count);
      }
      break;
    }
    case ManifoldKind::Euclidean: {
      if (mode == PerturbationMode::UniformRotation)
        throw InvalidArgument("uniform_rotation perturbation is defined on the sphere only");
      c_ = standard_normal_vector(rng, amb);
      if (mode == PerturbationMode::UniformAdditive) {
        c_.normalize();
      } else {
        a_.resize(amb, amb);
        for (int j = 0; j < amb; ++j) a_.col(j) = standard_normal_vector(rng, amb);
        // E ||c + Bx||^2 for x standard normal.
        scale_ = 1.0 / std::sqrt(c_.squaredNorm() + a_.squaredNorm());
      }
      break;
    }
  }
}

VectorXd PerturbedField::unit_perturbation(const Point& x) const {
  const Manifold& m = base_->manifold();
  switch (m.kind()) {
    case ManifoldKind::Sphere: {
      if (mode_ == PerturbationMode::MeanSquare) {
        const VectorXd y = c_ + a_ * x;
        return scale_ * (y - x.dot(y) * x);
      }
      if (a_.cols() == 2) {
        const VectorXd p = a_.col(0), w = a_.col(1);
        const double c = 1.0 + p.dot(x);
        if (c < 1e-12) {
          // Antipode of the pole: every direction is a limit; pick -w.
          return -(w - x.dot(w) * x).normalized();
        }
        const VectorXd u = w - (w.dot(x) / c) * (p + x);
        return u;
      }
      return (a_ * x);
    }
    case ManifoldKind::Spd: {
      const int n = m.param();
      const auto w = spd::whitening(MatrixXd(as_matrix(x, n)));
      MatrixXd e;
      if (mode_ == PerturbationMode::UniformAdditive) {
        e = a_;
      } else {
        const MatrixXd l = spd::logm(MatrixXd(as_matrix(x, n)));
        e = as_matrix(c_, n) + 0.5 * (a_ * l + l * a_.transpose());
        e *= scale_;
      }
      return flatten(spd::symmetrize((w.half * e * w.half).eval()));
    }
    case ManifoldKind::Euclidean: {
      if (mode_ == PerturbationMode::UniformAdditive) return c_;
      return scale_ * (c_ + a_ * x);
    }
  }
  return VectorXd::Zero(x.size());
}

VectorXd PerturbedField::perturbation(const Point& x) const { return eps_ * unit_perturbation(x); }

VectorXd PerturbedField::operator()(double t, const Point& x) const {
  if (eps_ == 0.0) return (*base_)(t, x);
  return (*base_)(t, x) + perturbation(x);
}

void PerturbedField::evaluate_many(double t, std::span<const Point> xs,
                                   std::span<Eigen::VectorXd> out) const {
  base_->evaluate_many(t, xs, out);
  if (eps_ == 0.0) return;
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] += perturbation(xs[i]);
}

}  // namespace rfm
