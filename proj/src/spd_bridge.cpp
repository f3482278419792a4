#include "rfm/spd_bridge.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "rfm/errors.hpp"
#include "rfm/geometry.hpp"
#include "rfm/quadrature.hpp"
#include "rfm/spd_functions.hpp"

namespace rfm {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Eigen::Map<const MatrixXd> as_matrix(const VectorXd& v, int n) { return {v.data(), n, n}; }

template <typename Mat>
VectorXd flatten(const Mat& a) {
  return Eigen::Map<const VectorXd>(a.data(), a.size());
}

void require_time(double t) {
  if (!(t >= 0.0 && t < 1.0)) throw DomainError("bridge time must lie in [0, 1)");
}

template <typename Vec>
double pair_log_sinhc(const Vec& lambda, double scale) {
  double s = 0.0;
  for (int i = 0; i < lambda.size(); ++i)
    for (int j = i + 1; j < lambda.size(); ++j) s += log_sinhc(0.5 * scale * (lambda[i] - lambda[j]));
  return s;
}

// Symmetric eigen-decomposition with the closed-form path for 2 x 2.
template <typename Mat>
Eigen::SelfAdjointEigenSolver<Mat> decompose(const Mat& a, bool vectors) {
  Eigen::SelfAdjointEigenSolver<Mat> es;
  const int opts = vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly;
  if constexpr (Mat::RowsAtCompileTime == 2) {
    es.computeDirect(a, opts);
  } else {
    es.compute(a, opts);
  }
  if (es.info() != Eigen::Success) throw NumericFailure("symmetric eigensolver did not converge");
  return es;
}

}  // namespace

double log_sinhc(double y) {
  y = std::abs(y);
  if (y < 1e-3) {
    const double y2 = y * y;
    return y2 / 6.0 - y2 * y2 / 180.0;
  }
  if (y > 20.0) return y + std::log1p(-std::exp(-2.0 * y)) - std::log(2.0 * y);
  return std::log(std::sinh(y) / y);
}

double PriorSpec::log_density(const Manifold& m, const Point& x) const {
  if (kind == PriorKind::SphereUniform) {
    if (m.kind() != ManifoldKind::Sphere) throw InvalidArgument("uniform prior needs a sphere");
    return -std::log(sphere_volume(m.param()));
  }
  if (m.kind() != ManifoldKind::Spd) throw InvalidArgument("Riemannian Gaussian prior needs SPD");
  const double r = distance(m, origin(m), x);
  return -beta * r * r;
}

Point PriorSpec::sample(const Manifold& m, Rng& rng) const {
  if (kind == PriorKind::SphereUniform) {
    if (m.kind() != ManifoldKind::Sphere) throw InvalidArgument("uniform prior needs a sphere");
    return standard_normal_vector(rng, m.ambient_dim()).normalized();
  }
  if (m.kind() != ManifoldKind::Spd) throw InvalidArgument("Riemannian Gaussian prior needs SPD");
  // Normal coordinates at I: density exp(-beta |V|^2) |det dExp_I(V)|. The
  // determinant is bounded by exp(n |V|^2 / 24), so a Gaussian proposal with
  // the reduced concentration beta - n/24 dominates the target.
  const int n = m.param();
  const double reduced = beta - n / 24.0;
  if (!(reduced > 0.0)) throw InvalidArgument("prior concentration too small for rejection sampler");
  const double sd = 1.0 / std::sqrt(2.0 * reduced);
  const double root2 = std::sqrt(2.0);
  for (int attempt = 0; attempt < 100000; ++attempt) {
    MatrixXd v = MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
      v(i, i) = sd * standard_normal(rng);
      for (int j = i + 1; j < n; ++j) v(i, j) = v(j, i) = sd * standard_normal(rng) / root2;
    }
    const auto es = decompose(v, false);
    const double log_accept = pair_log_sinhc(es.eigenvalues(), 1.0) - n * v.squaredNorm() / 24.0;
    if (std::log(std::max(uniform01(rng), 1e-300)) < log_accept) return flatten(spd::expm(v));
  }
  throw NumericFailure("Riemannian Gaussian rejection sampler exhausted its attempts");
}

double spd_log_jacobian(const Manifold& m, const Point& x1, const VectorXd& v) {
  if (m.kind() != ManifoldKind::Spd) throw InvalidArgument("spd_log_jacobian needs an SPD manifold");
  const int n = m.param();
  const auto w = spd::whitening(as_matrix(x1, n));
  const MatrixXd inner = spd::symmetrize((w.inv_half * as_matrix(v, n) * w.inv_half).eval());
  return pair_log_sinhc(decompose(inner, false).eigenvalues(), 1.0);
}

SpdTarget::SpdTarget(int n, double dof) : manifold_(Manifold::spd(n)), dof_(dof) {
  if (!(dof > n - 1)) throw InvalidArgument("Wishart dof must exceed n - 1");
}

double SpdTarget::log_density(const Point& x) const {
  const int n = manifold_.param();
  const auto a = as_matrix(x, n);
  const auto es = decompose(MatrixXd(a), false);
  spd::require_positive(es.eigenvalues());
  return 0.5 * dof_ * (es.eigenvalues().array().log().sum() - a.trace());
}

Point SpdTarget::sample(Rng& rng) const {
  // Bartlett decomposition of W_n(dof, I).
  const int n = manifold_.param();
  MatrixXd a = MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    a(i, i) = std::sqrt(2.0 * sample_gamma(0.5 * (dof_ - i), rng));
    for (int j = 0; j < i; ++j) a(i, j) = standard_normal(rng);
  }
  MatrixXd x = a * a.transpose() / dof_;
  return flatten(spd::symmetrize(x));
}

double SpdTarget::moment(const Manifold& m, std::span<const Point> samples, double lambda) {
  if (samples.empty()) throw InvalidArgument("moment needs samples");
  const Point id = origin(m);
  double a = 0.0, b = 0.0;
  for (const auto& x : samples) {
    const double r = distance(m, id, x);
    const double e = std::exp(lambda * r);
    a += r * r * e;
    b += e;
  }
  return std::max(a, b) / static_cast<double>(samples.size());
}

Point spd_psi(const Manifold& m, double t, const Point& x1, const Point& x) {
  require_time(t);
  return exp_map(m, x1, log_map(m, x1, x) / (1.0 - t));
}

double spd_conditional_log_density(const SpdTarget& target, const PriorSpec& prior, double t,
                                   const Point& x, const Point& x1) {
  require_time(t);
  const Manifold& m = target.manifold();
  const VectorXd v = log_map(m, x1, x);
  const VectorXd vs = v / (1.0 - t);
  const Point psi = exp_map(m, x1, vs);
  const double log_jt =
      -m.dim() * std::log(1.0 - t) + spd_log_jacobian(m, x1, vs) - spd_log_jacobian(m, x1, v);
  return target.log_density(x1) + prior.log_density(m, psi) + log_jt;
}

// ---------------------------------------------------------------------------
// Importance-sampled population field

struct SpdPopulationField::Impl {
  virtual ~Impl() = default;
  // Tangent Log_x(x1_i) / (1 - t) averaged with self-normalized weights.
  virtual VectorXd velocity(double t, const Point& x, double& ess) const = 0;
  std::vector<Point> bank;
};

namespace {

template <typename Mat>
struct BankKernel final : SpdPopulationField::Impl {
  std::vector<Mat> half, inv_half;
  double beta = 0.0;
  int n = 0;

  VectorXd velocity(double t, const Point& xf, double& ess) const override {
    const Mat x = as_matrix(xf, n);
    const double s = 1.0 - t;
    const std::size_t m = half.size();
    std::vector<double> logw(m);
    std::vector<Mat> tangents(m);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
      Mat a = inv_half[i] * x * inv_half[i];
      a = spd::symmetrize(a);
      const auto es = decompose(a, true);
      const auto& lam = es.eigenvalues();
      if (!(lam.minCoeff() > 0.0)) throw NumericFailure("lost positive definiteness in bridge weights");
      const auto ell = lam.array().log().matrix().eval();
      const auto& q = es.eigenvectors();
      // Psi = x1^{1/2} Q exp(ell / s) Q^T x1^{1/2}; only its distance to I matters.
      Mat psi = half[i] * q * (ell / s).array().exp().matrix().asDiagonal() * q.transpose() * half[i];
      psi = spd::symmetrize(psi);
      const auto pe = decompose(psi, false).eigenvalues();
      if (!(pe.minCoeff() > 0.0)) throw NumericFailure("lost positive definiteness in bridge weights");
      const double r2 = pe.array().log().matrix().squaredNorm();
      logw[i] = -beta * r2 + pair_log_sinhc(ell, 1.0 / s) - pair_log_sinhc(ell, 1.0);
      top = std::max(top, logw[i]);
      // Log_x(x1) = -x1^{1/2} Q diag(lam log lam) Q^T x1^{1/2}.
      tangents[i] = -(half[i] * q * (lam.array() * ell.array()).matrix().asDiagonal() * q.transpose() *
                      half[i]);
    }
    Mat acc = Mat::Zero(n, n);
    double sw = 0.0, sw2 = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double w = std::exp(logw[i] - top);
      sw += w;
      sw2 += w * w;
      acc += w * tangents[i];
    }
    ess = sw * sw / sw2;
    Mat v = acc / (sw * s);
    return flatten(spd::symmetrize(v));
  }
};

template <typename Mat>
std::unique_ptr<SpdPopulationField::Impl> make_kernel(const std::vector<Point>& bank, int n,
                                                      double beta) {
  auto k = std::make_unique<BankKernel<Mat>>();
  k->n = n;
  k->beta = beta;
  k->bank = bank;
  for (const auto& p : bank) {
    const auto w = spd::whitening(MatrixXd(as_matrix(p, n)));
    k->half.push_back(w.half);
    k->inv_half.push_back(w.inv_half);
  }
  return k;
}

}  // namespace

SpdPopulationField::SpdPopulationField(const SpdTarget& target, PriorSpec prior, int bank_size,
                                       std::uint64_t seed, double t_max, double ess_floor)
    : manifold_(target.manifold()), t_max_(t_max), ess_floor_(ess_floor) {
  if (prior.kind != PriorKind::SpdRiemannianGaussian) throw InvalidArgument("SPD field needs a Gaussian prior");
  if (bank_size < 1) throw InvalidArgument("bank size must be positive");
  std::vector<Point> bank;
  bank.reserve(bank_size);
  for (int i = 0; i < bank_size; ++i) {
    Rng rng = make_stream(seed, 0xba4c, static_cast<std::uint64_t>(i));
    bank.push_back(target.sample(rng));
  }
  const int n = manifold_.param();
  if (n == 2) {
    impl_ = make_kernel<Eigen::Matrix2d>(bank, n, prior.beta);
  } else if (n == 3) {
    impl_ = make_kernel<Eigen::Matrix3d>(bank, n, prior.beta);
  } else {
    impl_ = make_kernel<MatrixXd>(bank, n, prior.beta);
  }
}

SpdPopulationField::~SpdPopulationField() = default;

const std::vector<Point>& SpdPopulationField::bank() const { return impl_->bank; }

VectorXd SpdPopulationField::operator()(double t, const Point& x) const {
  require_time(t);
  if (t >= t_max_) throw DomainError("population field evaluated at or beyond the stopping time");
  double ess = 0.0;
  VectorXd v = impl_->velocity(t, x, ess);
  if (ess < ess_floor_) {
    std::ostringstream msg;
    msg << "importance weights degenerate: effective sample size " << ess << " below floor "
        << ess_floor_ << " at t=" << t;
    throw NumericFailure(msg.str());
  }
  return v;
}

double SpdPopulationField::ess(double t, const Point& x) const {
  require_time(t);
  double e = 0.0;
  impl_->velocity(t, x, e);
  return e;
}

}  // namespace rfm
