#ifndef RFM_PERTURB_HPP_
#define RFM_PERTURB_HPP_

// Analytic stand-ins for a learned field: the population field plus an
// explicit tangent field u whose size is controlled exactly by eps.

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <string>

#include "rfm/field.hpp"

namespace rfm {

enum class PerturbationMode {
  UniformRotation,  // Killing field eps * A x, A skew with unit operator norm (sphere)
  UniformAdditive,  // pointwise norm exactly eps
  MeanSquare,       // smooth random field with E ||u||^2 = eps^2 under a reference law
};

PerturbationMode parse_perturbation_mode(const std::string& s);
std::string to_string(PerturbationMode m);

class PerturbedField final : public VelocityField {
 public:
  PerturbedField(std::shared_ptr<const VelocityField> base, double eps, PerturbationMode mode,
                 std::uint64_t seed = 0);

  const Manifold& manifold() const override { return base_->manifold(); }
  FieldVariant variant() const override { return FieldVariant::Perturbed; }
  Eigen::VectorXd operator()(double t, const Point& x) const override;
  void evaluate_many(double t, std::span<const Point> xs,
                     std::span<Eigen::VectorXd> out) const override;

  /// The added field u(x) (time independent).
  Eigen::VectorXd perturbation(const Point& x) const;

  double eps() const { return eps_; }
  PerturbationMode mode() const { return mode_; }
  const VelocityField& base() const { return *base_; }

 private:
  Eigen::VectorXd unit_perturbation(const Point& x) const;

  std::shared_ptr<const VelocityField> base_;
  double eps_;
  PerturbationMode mode_;
  Eigen::MatrixXd a_;  // skew generator or linear part
  Eigen::VectorXd c_;  // constant part / template
  double scale_ = 1.0;
};

}  // namespace rfm

#endif  // RFM_PERTURB_HPP_
