#include "rfm/sphere_bridge.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "rfm/errors.hpp"
#include "rfm/geometry.hpp"

namespace rfm {

namespace {

constexpr double kPi = std::numbers::pi;

void require_time(double t) {
  if (!(t >= 0.0 && t < 1.0)) throw DomainError("bridge time must lie in [0, 1)");
}

// exp(lead) * z^{-nu} I_nu(z). The power series has positive terms and is
// used for moderate z; large z falls back to the library Bessel function.
double scaled_bessel(double nu, double z, double lead) {
  if (z < 25.0) {
    const double q = 0.25 * z * z;
    double term = 1.0, sum = 1.0;
    for (int k = 1; k < 200; ++k) {
      term *= q / (k * (nu + k));
      sum += term;
      if (term < 1e-17 * sum) break;
    }
    return std::exp(lead - nu * std::numbers::ln2 - std::lgamma(nu + 1.0)) * sum;
  }
  return std::exp(lead + std::log(std::cyl_bessel_i(nu, z)) - nu * std::log(z));
}

}  // namespace

double sphere_jacobian_jt(int d, double t, double r) {
  require_time(t);
  const double s = 1.0 - t;
  if (r >= s * kPi) return 0.0;
  double ratio;
  if (r < 1e-4) {
    ratio = (1.0 / s) * (1.0 - (1.0 / (s * s) - 1.0) * r * r / 6.0);
  } else {
    ratio = std::sin(r / s) / std::sin(r);
  }
  return std::pow(ratio, d - 1) / s;
}

double sphere_log_jacobian_dr(int d, double t, double r) {
  require_time(t);
  const double s = 1.0 - t;
  if (r < 1e-4) return (d - 1) * r / 3.0 * (1.0 - 1.0 / (s * s));
  return (d - 1) * (1.0 / (std::tan(r / s) * s) - 1.0 / std::tan(r));
}

// ---------------------------------------------------------------------------
// SphereTarget

double SphereTarget::kernel_mass(int d, double kappa) {
  const auto rule = composite_gauss_legendre(32, 64, 0.0, kPi);
  const double area = sphere_volume(d - 1);
  return area * rule.integrate([&](double th) {
    return std::exp(kappa * (std::cos(th) - 1.0)) * std::pow(std::sin(th), d - 1);
  });
}

SphereTarget::SphereTarget(int d, double uniform_mass, std::vector<VmfBump> bumps)
    : d_(d),
      manifold_(Manifold::sphere(d)),
      uniform_mass_(uniform_mass),
      bumps_(std::move(bumps)),
      volume_(sphere_volume(d)),
      sphere_dm1_area_(sphere_volume(d - 1)),
      bessel_norm_(std::pow(2.0 * kPi, 0.5 * d)) {
  if (d < 2) throw InvalidArgument("sphere target needs d >= 2");
  if (uniform_mass < 0.0) throw InvalidArgument("uniform mass must be nonnegative");
  if (bumps_.size() > kMaxBumps) throw InvalidArgument("too many bumps in sphere target");
  double total = uniform_mass;
  for (auto& b : bumps_) {
    if (b.mean.size() != d + 1) throw InvalidArgument("bump mean has wrong dimension");
    if (!(b.kappa > 0.0) || b.kappa > 500.0) throw InvalidArgument("bump kappa must be in (0, 500]");
    if (b.mass < 0.0) throw InvalidArgument("bump mass must be nonnegative");
    b.mean.normalize();
    coeff_.push_back(b.mass / kernel_mass(d, b.kappa));
    total += b.mass;
  }
  if (std::abs(total - 1.0) > 1e-12) throw InvalidArgument("mixture weights must sum to 1");
  if (uniform_mass_ <= 0.0) throw InvalidArgument("target needs a positive uniform floor");
  locate_bounds();
}

SphereTarget SphereTarget::uniform(int d) { return SphereTarget(d, 1.0, {}); }

SphereTarget SphereTarget::two_bump(int d, double kappa, double floor_mass) {
  Eigen::VectorXd a = Eigen::VectorXd::Zero(d + 1), b = Eigen::VectorXd::Zero(d + 1);
  a[0] = 1.0;
  b[0] = 0.5;
  b[1] = std::sqrt(3.0) / 2.0;
  const double m = 0.5 * (1.0 - floor_mass);
  return SphereTarget(d, floor_mass, {{a, kappa, m}, {b, kappa, m}});
}

SphereTarget SphereTarget::two_bump_bounded(int d, double lo, double hi) {
  if (!(lo > 0.0 && lo < 1.0 && hi > 1.0)) throw InvalidArgument("need 0 < lo < 1 < hi");
  const double vol = sphere_volume(d);
  // Unnormalized kernel g(x) = exp(k(x0 - 1)) + exp(k(x1 - 1)) depends on
  // (x0, x1) in the unit disk; its minimum sits at x0 = x1 = -1/sqrt2 and its
  // maximum on the arc between the two means.
  auto extremes = [](double k) {
    const double gmin = 2.0 * std::exp(k * (-std::numbers::sqrt2 / 2.0 - 1.0));
    auto g = [k](double phi) {
      return std::exp(k * (std::cos(phi) - 1.0)) + std::exp(k * (std::sin(phi) - 1.0));
    };
    double best = 0.0, arg = 0.0;
    for (int i = 0; i <= 400; ++i) {
      const double phi = kPi / 4.0 * i / 400.0;
      if (g(phi) > best) best = g(phi), arg = phi;
    }
    double a = std::max(0.0, arg - kPi / 1600.0), b = std::min(kPi / 4.0, arg + kPi / 1600.0);
    for (int i = 0; i < 100; ++i) {
      const double m1 = a + (b - a) / 3.0, m2 = b - (b - a) / 3.0;
      if (g(m1) < g(m2)) a = m1; else b = m2;
    }
    return std::pair{gmin, std::max(best, g(0.5 * (a + b)))};
  };
  // Fraction of the kernel range lying below its mean; the constraints
  // require it to equal (1 - lo) / (hi - lo).
  auto excess = [&](double k) {
    auto [gmin, gmax] = extremes(k);
    const double gbar = 2.0 * kernel_mass(d, k) / vol;
    return (gbar - gmin) / (gmax - gmin) - (1.0 - lo) / (hi - lo);
  };
  double ka = 1e-2, kb = 200.0;
  if (excess(ka) < 0.0 || excess(kb) > 0.0) throw NumericFailure("two-bump constraints have no solution");
  for (int i = 0; i < 200 && kb - ka > 1e-13 * kb; ++i) {
    const double km = 0.5 * (ka + kb);
    if (excess(km) > 0.0) ka = km; else kb = km;
  }
  const double kappa = 0.5 * (ka + kb);
  auto [gmin, gmax] = extremes(kappa);
  const double c = (hi - lo) / (vol * (gmax - gmin));
  const double bump_mass = c * kernel_mass(d, kappa);
  Eigen::VectorXd a = Eigen::VectorXd::Zero(d + 1), b = Eigen::VectorXd::Zero(d + 1);
  a[0] = 1.0;
  b[1] = 1.0;
  const double floor_mass = 1.0 - 2.0 * bump_mass;
  return SphereTarget(d, floor_mass, {{a, kappa, bump_mass}, {b, kappa, bump_mass}});
}

double SphereTarget::density(const Point& x) const {
  double p = uniform_mass_ / volume_;
  for (std::size_t k = 0; k < bumps_.size(); ++k)
    p += coeff_[k] * std::exp(bumps_[k].kappa * (x.dot(bumps_[k].mean) - 1.0));
  return p;
}

Eigen::VectorXd SphereTarget::log_density_gradient(const Point& x) const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
  double p = uniform_mass_ / volume_;
  for (std::size_t k = 0; k < bumps_.size(); ++k) {
    const double a = x.dot(bumps_[k].mean);
    const double e = coeff_[k] * std::exp(bumps_[k].kappa * (a - 1.0));
    p += e;
    g += e * bumps_[k].kappa * (bumps_[k].mean - a * x);
  }
  return g / p;
}

void SphereTarget::locate_bounds() {
  if (bumps_.empty()) {
    m1_ = big_m1_ = uniform_mass_ / volume_;
    return;
  }
  std::vector<Point> starts;
  for (std::size_t i = 0; i < bumps_.size(); ++i) {
    starts.push_back(bumps_[i].mean);
    starts.push_back(-bumps_[i].mean);
    for (std::size_t j = i + 1; j < bumps_.size(); ++j) {
      for (double sgn : {1.0, -1.0}) {
        Point s = bumps_[i].mean + sgn * bumps_[j].mean;
        if (s.norm() > 1e-8) {
          starts.push_back(s.normalized());
          starts.push_back(-s.normalized());
        }
      }
    }
  }
  Rng rng = make_stream(0x5eed, 17);
  for (int i = 0; i < 512; ++i) starts.push_back(standard_normal_vector(rng, d_ + 1).normalized());

  auto climb = [&](Point x, double sign) {
    double step = 0.1;
    double f = sign * density(x);
    for (int it = 0; it < 400 && step > 1e-14; ++it) {
      const Eigen::VectorXd g = sign * density(x) * log_density_gradient(x);
      if (g.norm() < 1e-15) break;
      Point y = (x + step * g / g.norm()).normalized();
      const double fy = sign * density(y);
      if (fy > f) {
        x = y, f = fy, step *= 1.5;
      } else {
        step *= 0.5;
      }
    }
    return sign * f;
  };

  for (double sign : {1.0, -1.0}) {
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t i = 0; i < starts.size(); ++i) ranked.emplace_back(sign * density(starts[i]), i);
    std::sort(ranked.rbegin(), ranked.rend());
    double best = sign > 0 ? 0.0 : std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < std::min<std::size_t>(12, ranked.size()); ++i) {
      const double v = climb(starts[ranked[i].second], sign);
      best = sign > 0 ? std::max(best, v) : std::min(best, v);
    }
    (sign > 0 ? big_m1_ : m1_) = best;
  }
}

SphereTarget::BumpCoords SphereTarget::coords(const Point& x) const {
  BumpCoords c;
  for (std::size_t k = 0; k < bumps_.size(); ++k) c.along[k] = x.dot(bumps_[k].mean);
  return c;
}

double SphereTarget::angular_moments(const BumpCoords& c, double cos_r, double sin_r,
                                     double* gamma) const {
  double pbar = uniform_mass_ / volume_ * sphere_dm1_area_;
  const double nu = 0.5 * d_ - 1.0;
  const double norm = bessel_norm_;
  for (std::size_t k = 0; k < bumps_.size(); ++k) {
    const double kappa = bumps_[k].kappa;
    const double a = c.along[k];
    const double b = std::sqrt(std::max(0.0, 1.0 - a * a));
    const double lead = kappa * (a * cos_r - 1.0);
    const double z = kappa * b * sin_r;
    double s_term, g_term;
    if (d_ == 3) {
      if (z < 1e-2) {
        const double e = std::exp(lead), z2 = z * z;
        s_term = e * (1.0 + z2 / 6.0 + z2 * z2 / 120.0);
        g_term = e * (1.0 / 3.0 + z2 / 30.0 + z2 * z2 / 840.0);
      } else {
        const double ep = std::exp(lead + z), em = std::exp(lead - z);
        const double sh = 0.5 * (ep - em), ch = 0.5 * (ep + em);
        s_term = sh / z;
        g_term = (ch - sh / z) / (z * z);
      }
      s_term *= 4.0 * kPi;
      g_term *= 4.0 * kPi;
    } else {
      s_term = norm * scaled_bessel(nu, z, lead);
      g_term = norm * scaled_bessel(nu + 1.0, z, lead);
    }
    pbar += coeff_[k] * s_term;
    gamma[k] = coeff_[k] * kappa * sin_r * g_term;
  }
  return pbar;
}

Point sample_vmf(const Eigen::VectorXd& mean, double kappa, Rng& rng) {
  const int p = static_cast<int>(mean.size());
  const double m = p - 1;
  const double b = m / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + m * m));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double c = kappa * x0 + m * std::log(1.0 - x0 * x0);
  double w;
  for (;;) {
    const double g1 = sample_gamma(0.5 * m, rng), g2 = sample_gamma(0.5 * m, rng);
    const double z = g1 / (g1 + g2);
    w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
    double u = uniform01(rng);
    while (u <= 0.0) u = uniform01(rng);
    if (kappa * w + m * std::log(1.0 - x0 * w) - c >= std::log(u)) break;
  }
  Eigen::VectorXd v = standard_normal_vector(rng, p);
  v -= v.dot(mean) * mean;
  v.normalize();
  return (w * mean + std::sqrt(std::max(0.0, 1.0 - w * w)) * v).normalized();
}

Point SphereTarget::sample(Rng& rng) const {
  double u = uniform01(rng);
  for (std::size_t k = 0; k < bumps_.size(); ++k) {
    if (u < bumps_[k].mass) return sample_vmf(bumps_[k].mean, bumps_[k].kappa, rng);
    u -= bumps_[k].mass;
  }
  return standard_normal_vector(rng, d_ + 1).normalized();
}

// ---------------------------------------------------------------------------
// SphereBridge

SphereBridge::SphereBridge(SphereTarget target, int nodes, double tolerance)
    : target_(std::move(target)) {
  if (nodes > 0) {
    build_rule(nodes);
    return;
  }
  const int d = target_.dim();
  std::vector<Point> probes;
  for (const auto& b : target_.bumps()) {
    probes.push_back(b.mean);
    probes.push_back(-b.mean);
  }
  Rng rng = make_stream(0x9a0de, 3);
  for (int i = 0; i < 4; ++i) probes.push_back(standard_normal_vector(rng, d + 1).normalized());

  auto evaluate = [&] {
    std::vector<double> out;
    for (double t : {0.0, 0.5, 0.9}) {
      const Table tab = table(t);
      for (const auto& x : probes) {
        const Moments mo = moments(tab, x, true);
        out.push_back(mo.mass);
        for (double g : mo.first) out.push_back(g / mo.mass);
        for (double g : mo.score) out.push_back(g / mo.mass);
      }
    }
    return out;
  };

  int n = 8;
  build_rule(n);
  std::vector<double> prev = evaluate();
  double change = 0.0;
  while (n < 1024) {
    n *= 2;
    build_rule(n);
    std::vector<double> cur = evaluate();
    double scale = 0.0;
    change = 0.0;
    for (std::size_t i = 0; i < cur.size(); ++i) {
      scale = std::max(scale, std::abs(cur[i]));
      change = std::max(change, std::abs(cur[i] - prev[i]));
    }
    change /= std::max(scale, 1e-300);
    // Gauss rules converge geometrically here, so the change bounds the
    // error of the coarser rule, which is the one kept.
    if (change < tolerance) {
      build_rule(n / 2);
      return;
    }
    prev = std::move(cur);
  }
  std::ostringstream msg;
  msg << "sphere quadrature did not converge: relative change " << change << " at " << n << " nodes";
  throw NumericFailure(msg.str());
}

void SphereBridge::build_rule(int n) { rule_ = gauss_legendre(n, 0.0, kPi); }

SphereBridge::Table SphereBridge::table(double t) const {
  require_time(t);
  const int d = target_.dim();
  const double s = 1.0 - t;
  Table tab;
  tab.t = t;
  const std::size_t n = rule_.size();
  tab.u.resize(n);
  tab.w_sin.resize(n);
  tab.cos_r.resize(n);
  tab.sin_r.resize(n);
  tab.dlogj.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double u = rule_.nodes[j];
    const double r = s * u;
    tab.u[j] = u;
    tab.w_sin[j] = rule_.weights[j] * std::pow(std::sin(u), d - 1);
    tab.cos_r[j] = std::cos(r);
    tab.sin_r[j] = std::sin(r);
    tab.dlogj[j] = sphere_log_jacobian_dr(d, t, r);
  }
  return tab;
}

SphereBridge::Moments SphereBridge::moments(const Table& tab, const Point& x,
                                            bool want_score) const {
  Moments mo;
  mo.coords = target_.coords(x);
  const std::size_t nb = target_.bumps().size();
  Coeffs g{};
  for (std::size_t j = 0; j < tab.u.size(); ++j) {
    const double pbar = target_.angular_moments(mo.coords, tab.cos_r[j], tab.sin_r[j], g.data());
    const double w = tab.w_sin[j];
    mo.mass += w * pbar;
    const double wu = w * tab.u[j];
    for (std::size_t k = 0; k < nb; ++k) mo.first[k] += wu * g[k];
    if (want_score) {
      const double wl = w * tab.dlogj[j];
      for (std::size_t k = 0; k < nb; ++k) mo.score[k] -= wl * g[k];
    }
  }
  return mo;
}

Eigen::VectorXd SphereBridge::combine(const Moments& mo, const Coeffs& g, const Point& x) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(x.size());
  double along = 0.0;
  const auto& bumps = target_.bumps();
  for (std::size_t k = 0; k < bumps.size(); ++k) {
    const double c = g[k] / mo.mass;
    out += c * bumps[k].mean;
    along += c * mo.coords.along[k];
  }
  out -= along * x;
  return out;
}

double SphereBridge::marginal_density(double t, const Point& x) const {
  return marginal_density(table(t), x);
}

double SphereBridge::marginal_density(const Table& tab, const Point& x) const {
  std::array<double, SphereTarget::kMaxBumps> g{};
  const auto c = target_.coords(x);
  double mass = 0.0;
  for (std::size_t j = 0; j < tab.u.size(); ++j)
    mass += tab.w_sin[j] * target_.angular_moments(c, tab.cos_r[j], tab.sin_r[j], g.data());
  return mass / sphere_volume(target_.dim());
}

double SphereBridge::conditional_density(double t, const Point& x, const Point& x1) const {
  const double r = distance(manifold(), x, x1);
  const double jt = sphere_jacobian_jt(target_.dim(), t, r);
  if (jt == 0.0) return 0.0;
  return target_.density(x1) * jt / (sphere_volume(target_.dim()) * marginal_density(t, x));
}

Eigen::VectorXd SphereBridge::velocity(double t, const Point& x) const { return velocity(table(t), x); }

Eigen::VectorXd SphereBridge::velocity(const Table& tab, const Point& x) const {
  const Moments mo = moments(tab, x, false);
  return combine(mo, mo.first, x);
}

Eigen::VectorXd SphereBridge::score(double t, const Point& x) const { return score(table(t), x); }

Eigen::VectorXd SphereBridge::score(const Table& tab, const Point& x) const {
  const Moments mo = moments(tab, x, true);
  return combine(mo, mo.score, x);
}

Point SphereBridge::sample_marginal(double t, Rng& rng) const {
  const Manifold& m = manifold();
  const Point x1 = target_.sample(rng);
  for (;;) {
    const Point x0 = standard_normal_vector(rng, target_.dim() + 1).normalized();
    if (x0.dot(x1) > -1.0 + 1e-10) return geodesic_point(m, x0, x1, t);
  }
}

// ---------------------------------------------------------------------------
// Fields

Eigen::VectorXd SpherePopulationField::operator()(double t, const Point& x) const {
  if (t >= t_max_) throw DomainError("population field evaluated at or beyond the stopping time");
  return bridge_->velocity(t, x);
}

void SpherePopulationField::evaluate_many(double t, std::span<const Point> xs,
                                          std::span<Eigen::VectorXd> out) const {
  if (t >= t_max_) throw DomainError("population field evaluated at or beyond the stopping time");
  const auto tab = bridge_->table(t);
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = bridge_->velocity(tab, xs[i]);
}

Eigen::VectorXd BridgeConditionalField::operator()(double t, const Point& x) const {
  require_time(t);
  return log_map(m_, x, endpoint_) / (1.0 - t);
}

RegularityConstants sphere_constants(double density_ratio, int d, double t, double eps) {
  require_time(t);
  const double s = 1.0 - t;
  const double q = density_ratio;
  const double dm1 = d - 1.0;
  RegularityConstants c{};
  c.t = t;
  c.l_v_x = 12.0 * kPi * q * dm1 / s;
  c.l_vhat_x = c.l_v_x + eps;
  c.l_v_t = 8.0 * kPi * kPi * d / s * q;
  c.l_div_x = 128.0 * kPi * dm1 * dm1 / (s * s * s) * q;
  c.l_div_t = 128.0 * kPi * kPi * dm1 * dm1 / (s * s * s) * q;
  c.l_score = 8.0 * dm1 * dm1 / (s * s) * q;
  c.l_v = kPi;
  c.l_r = 1.0;
  const double rs = std::sqrt(c.l_score);
  c.c_lip = 3.0 * rs * c.l_v_x * c.l_v + rs * c.l_v_t + 3.0 * c.l_v * c.l_div_x + c.l_div_t +
            c.l_r * c.l_v * c.l_v * d;
  c.c_eps = std::sqrt(2.0 * c.l_score) + 1.0 + 2.0 * rs * c.l_v + rs * c.l_v_x + c.l_div_x +
            2.0 * c.l_r * d * c.l_v;
  c.c_eps2 = rs + c.l_r * d;
  return c;
}

}  // namespace rfm
