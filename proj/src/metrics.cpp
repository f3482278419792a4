#include "rfm/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "rfm/errors.hpp"
#include "rfm/geometry.hpp"
#include "rfm/quadrature.hpp"
#include "rfm/random.hpp"

namespace rfm {

namespace {

constexpr double kPi = 3.14159265358979323846;

// int_0^psi sin^m
double sin_power_integral(int m, double psi) {
  if (psi <= 0) return 0.0;
  const QuadratureRule rule = composite_gauss_legendre(16, 4, 0.0, psi);
  return rule.integrate([m](double s) { return std::pow(std::sin(s), m); });
}

std::vector<double> equal_measure_edges(int m, int bands) {
  std::vector<double> edges(bands + 1);
  edges[0] = 0.0;
  edges[bands] = kPi;
  const double total = sin_power_integral(m, kPi);
  for (int b = 1; b < bands; ++b) {
    const double target = total * b / bands;
    double lo = 0.0, hi = kPi;
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      (sin_power_integral(m, mid) < target ? lo : hi) = mid;
    }
    edges[b] = 0.5 * (lo + hi);
  }
  return edges;
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / (v.size() - 1));
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

// Multinomial counts by sequential binomials.
std::vector<std::size_t> multinomial(std::size_t n, const std::vector<double>& p, Rng& rng) {
  std::vector<std::size_t> out(p.size(), 0);
  double rest = 1.0;
  std::size_t left = n;
  for (std::size_t k = 0; k + 1 < p.size() && left > 0; ++k) {
    const double q = rest > 0 ? std::clamp(p[k] / rest, 0.0, 1.0) : 0.0;
    std::binomial_distribution<std::size_t> bin(left, q);
    out[k] = bin(rng);
    left -= out[k];
    rest -= p[k];
  }
  if (!p.empty()) out.back() += left;
  return out;
}

double tv_of_counts(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += std::abs(a[k] - b[k]);
  return 0.5 * s;
}

std::vector<double> normalized(const std::vector<std::size_t>& c, std::size_t n) {
  std::vector<double> out(c.size());
  for (std::size_t k = 0; k < c.size(); ++k) out[k] = static_cast<double>(c[k]) / n;
  return out;
}

double w1_sorted(std::vector<double> a, std::vector<double> b) {
  // W1 between empirical laws via quantile functions on a common grid.
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<double> grid;
  grid.reserve(a.size() + b.size());
  grid.insert(grid.end(), a.begin(), a.end());
  grid.insert(grid.end(), b.begin(), b.end());
  std::sort(grid.begin(), grid.end());
  double w = 0.0;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    const double fa = static_cast<double>(std::upper_bound(a.begin(), a.end(), grid[i]) - a.begin()) / a.size();
    const double fb = static_cast<double>(std::upper_bound(b.begin(), b.end(), grid[i]) - b.begin()) / b.size();
    w += std::abs(fa - fb) * (grid[i + 1] - grid[i]);
  }
  return w;
}

}  // namespace

SphereCellPartition::SphereCellPartition(int d, std::vector<int> splits)
    : d_(d), splits_(std::move(splits)) {
  if (d < 1) throw InvalidArgument("partition: dimension must be positive");
  if (static_cast<int>(splits_.size()) != d)
    throw InvalidArgument("partition: need one split count per coordinate");
  for (int s : splits_)
    if (s < 1) throw InvalidArgument("partition: split counts must be positive");
  for (int k = 0; k + 1 < d; ++k) edges_.push_back(equal_measure_edges(d - 1 - k, splits_[k]));
  {
    std::vector<double> arc(splits_.back() + 1);
    for (int j = 0; j <= splits_.back(); ++j) arc[j] = 2.0 * kPi * j / splits_.back();
    edges_.push_back(std::move(arc));
  }
  std::size_t total = 1;
  for (int s : splits_) total *= s;
  const double area = sphere_volume(d) / static_cast<double>(total);
  cells_.resize(total);
  std::vector<int> idx(d, 0);
  for (std::size_t c = 0; c < total; ++c) {
    std::size_t rem = c;
    for (int k = d - 1; k >= 0; --k) {
      idx[k] = static_cast<int>(rem % splits_[k]);
      rem /= splits_[k];
    }
    Cell& cell = cells_[c];
    cell.area = area;
    std::vector<double> mid(d);
    for (int k = 0; k < d; ++k) {
      cell.box.emplace_back(edges_[k][idx[k]], edges_[k][idx[k] + 1]);
      mid[k] = 0.5 * (cell.box.back().first + cell.box.back().second);
    }
    cell.center = from_angles(mid);
  }
}

SphereCellPartition SphereCellPartition::standard(int d) {
  switch (d) {
    case 1: return SphereCellPartition(1, {96});
    case 2: return SphereCellPartition(2, {8, 12});
    case 3: return SphereCellPartition(3, {4, 4, 6});
    case 4: return SphereCellPartition(4, {3, 4, 2, 4});
    default: throw InvalidArgument("partition: no standard layout for this dimension");
  }
}

Point SphereCellPartition::from_angles(std::span<const double> angles) {
  const int d = static_cast<int>(angles.size());
  Point x(d + 1);
  double s = 1.0;
  for (int k = 0; k + 1 < d; ++k) {
    x[k] = s * std::cos(angles[k]);
    s *= std::sin(angles[k]);
  }
  x[d - 1] = s * std::cos(angles[d - 1]);
  x[d] = s * std::sin(angles[d - 1]);
  return x;
}

std::size_t SphereCellPartition::locate(const Point& x) const {
  if (x.size() != d_ + 1) throw InvalidArgument("partition: point has wrong dimension");
  std::size_t c = 0;
  for (int k = 0; k < d_; ++k) {
    double a;
    if (k + 1 < d_) {
      a = std::atan2(x.tail(d_ - k).norm(), x[k]);
    } else {
      a = std::atan2(x[d_], x[d_ - 1]);
      if (a < 0) a += 2.0 * kPi;
    }
    const auto& e = edges_[k];
    int b = static_cast<int>(std::upper_bound(e.begin() + 1, e.end() - 1, a) - (e.begin() + 1));
    c = c * splits_[k] + b;
  }
  return c;
}

std::vector<std::size_t> SphereCellPartition::counts(std::span<const Point> xs) const {
  std::vector<std::size_t> out(size(), 0);
  for (const Point& x : xs) ++out[locate(x)];
  return out;
}

std::vector<double> SphereCellPartition::masses(const std::function<double(const Point&)>& density,
                                                int nodes, int workers) const {
  if (nodes < 1) throw InvalidArgument("partition: need at least one node");
  std::vector<double> out(size(), 0.0);
  parallel_for(size(), workers, [&](std::size_t c) {
    const Cell& cell = cells_[c];
    std::vector<QuadratureRule> rules;
    for (const auto& [lo, hi] : cell.box) rules.push_back(gauss_legendre(nodes, lo, hi));
    std::vector<int> idx(d_, 0);
    std::vector<double> ang(d_);
    double acc = 0.0;
    while (true) {
      double w = 1.0;
      for (int k = 0; k < d_; ++k) {
        ang[k] = rules[k].nodes[idx[k]];
        w *= rules[k].weights[idx[k]];
        if (k + 1 < d_) w *= std::pow(std::sin(ang[k]), d_ - 1 - k);
      }
      acc += w * density(from_angles(ang));
      int k = d_ - 1;
      while (k >= 0 && ++idx[k] == nodes) idx[k--] = 0;
      if (k < 0) break;
    }
    out[c] = acc;
  });
  return out;
}

TvEstimate tv_binned(const SphereCellPartition& partition, std::span<const Point> samples,
                     const std::vector<double>& exact_masses, std::uint64_t seed, int resamples) {
  if (samples.empty()) throw InvalidArgument("tv_binned: no samples");
  if (exact_masses.size() != partition.size())
    throw InvalidArgument("tv_binned: one mass per cell required");
  const std::size_t n = samples.size();
  const std::vector<double> emp = normalized(partition.counts(samples), n);
  TvEstimate est;
  est.tv = est.raw = tv_of_counts(emp, exact_masses);
  Rng rng = make_stream(seed, 0x7b01);
  std::vector<double> reps;
  for (int r = 0; r < resamples; ++r)
    reps.push_back(tv_of_counts(normalized(multinomial(n, emp, rng), n), exact_masses));
  est.std_err = stddev(reps);
  return est;
}

TvEstimate tv_paired(const SphereCellPartition& partition, std::span<const Point> a,
                     std::span<const Point> b, std::uint64_t seed, int resamples) {
  if (a.size() != b.size() || a.empty())
    throw InvalidArgument("tv_paired: need two non-empty sets of equal size");
  const std::size_t n = a.size();
  std::vector<std::uint32_t> ca(n), cb(n);
  for (std::size_t i = 0; i < n; ++i) {
    ca[i] = static_cast<std::uint32_t>(partition.locate(a[i]));
    cb[i] = static_cast<std::uint32_t>(partition.locate(b[i]));
  }
  // Only pairs that land in different cells contribute.
  std::vector<std::size_t> moved;
  for (std::size_t i = 0; i < n; ++i)
    if (ca[i] != cb[i]) moved.push_back(i);
  std::vector<double> diff(partition.size());
  auto tv_from = [&](auto&& weight_of) {
    std::fill(diff.begin(), diff.end(), 0.0);
    for (std::size_t i : moved) {
      const double w = weight_of(i);
      diff[ca[i]] += w;
      diff[cb[i]] -= w;
    }
    double s = 0.0;
    for (double x : diff) s += std::abs(x);
    return 0.5 * s / n;
  };
  TvEstimate est;
  est.tv = tv_from([](std::size_t) { return 1.0; });
  // Bootstrap over pairs: Poisson(1) weights approximate multinomial resampling.
  Rng rng = make_stream(seed, 0x7b02);
  std::poisson_distribution<int> pois(1.0);
  std::vector<double> reps;
  std::vector<int> w(n);
  for (int r = 0; r < resamples; ++r) {
    for (std::size_t i : moved) w[i] = pois(rng);
    reps.push_back(tv_from([&](std::size_t i) { return static_cast<double>(w[i]); }));
  }
  est.std_err = stddev(reps);
  est.raw = est.tv;
  double mean = 0.0;
  for (double r : reps) mean += r;
  if (!reps.empty()) est.tv = std::max(0.0, 2.0 * est.raw - mean / reps.size());
  return est;
}

TvEstimate pushforward_tv(const Manifold& m, const BatchMap& phi, const Density& source,
                          const Density& target, std::span<const Point> x, double fd_step,
                          int workers) {
  if (x.empty()) throw InvalidArgument("pushforward_tv: no points");
  if (!(fd_step > 0)) throw InvalidArgument("pushforward_tv: fd_step must be positive");
  const int d = m.dim();
  const std::size_t n = x.size(), stride = 2 * d + 1;
  // Each point with its 2d displaced copies, mapped in one batch.
  std::vector<Frame> frames(n);
  std::vector<Point> starts(n * stride);
  parallel_for(n, workers, [&](std::size_t i) {
    frames[i] = orthonormal_frame(m, x[i]);
    starts[i * stride] = x[i];
    for (int j = 0; j < d; ++j) {
      starts[i * stride + 1 + 2 * j] = exp_map(m, x[i], fd_step * frames[i].vectors[j]);
      starts[i * stride + 2 + 2 * j] = exp_map(m, x[i], -fd_step * frames[i].vectors[j]);
    }
  });
  const std::vector<Point> ends = phi(starts);
  if (ends.size() != starts.size()) throw InvalidArgument("pushforward_tv: map changed the batch size");
  std::vector<double> g(n);
  parallel_for(n, workers, [&](std::size_t i) {
    const Point& y = ends[i * stride];
    const Frame out = orthonormal_frame(m, y);
    Eigen::MatrixXd jac(d, d);
    for (int j = 0; j < d; ++j) {
      const Eigen::VectorXd a = log_map(m, y, ends[i * stride + 1 + 2 * j]);
      const Eigen::VectorXd b = log_map(m, y, ends[i * stride + 2 + 2 * j]);
      jac.col(j) = frame_coordinates(m, out, (a - b) / (2 * fd_step));
    }
    g[i] = 0.5 * std::abs(1.0 - target(y) * std::abs(jac.determinant()) / source(x[i]));
  });
  TvEstimate est;
  double mean = 0.0;
  for (double v : g) mean += v;
  est.tv = est.raw = mean / n;
  est.std_err = n > 1 ? stddev(g) / std::sqrt(static_cast<double>(n)) : 0.0;
  return est;
}

double w1_from_tv(double tv, double diameter) {
  if (!std::isfinite(diameter))
    throw DomainError("w1_from_tv: manifold has unbounded diameter");
  if (!(tv >= 0)) throw InvalidArgument("w1_from_tv: tv must be non-negative");
  return diameter * tv;
}

double sliced_w1_proxy(std::span<const Point> a, std::span<const Point> b, int directions,
                       std::uint64_t seed) {
  if (a.empty() || b.empty()) throw InvalidArgument("sliced_w1_proxy: empty sample set");
  Rng rng = make_stream(seed, 0x7b03);
  const int amb = static_cast<int>(a[0].size());
  double best = 0.0;
  for (int k = 0; k < directions; ++k) {
    const Eigen::VectorXd e = standard_normal_vector(rng, amb).normalized();
    std::vector<double> pa, pb;
    pa.reserve(a.size());
    pb.reserve(b.size());
    for (const Point& x : a) pa.push_back(std::acos(std::clamp(x.dot(e), -1.0, 1.0)));
    for (const Point& x : b) pb.push_back(std::acos(std::clamp(x.dot(e), -1.0, 1.0)));
    best = std::max(best, w1_sorted(std::move(pa), std::move(pb)));
  }
  return best;
}

std::string RateTable::csv() const {
  std::ostringstream os;
  os << "N,h,eta,eps,T,d,tv_hat,std_err,n_samples,seed\n";
  for (const RateRow& r : rows) {
    os << r.n_steps << ',' << format_double(r.h) << ',' << format_double(r.eta) << ','
       << format_double(r.eps) << ',' << format_double(r.terminal) << ',' << r.d << ','
       << format_double(r.tv) << ',' << format_double(r.std_err) << ',' << r.n_samples << ','
       << r.seed << '\n';
  }
  return os.str();
}

void RateTable::write_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw InvalidArgument("cannot open " + path);
  f << csv();
}

RateFit loglog_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("loglog_fit: need >= 2 points");
  const std::size_t n = x.size();
  Eigen::MatrixXd a(n, 2);
  Eigen::VectorXd b(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(x[i] > 0 && y[i] > 0)) throw InvalidArgument("loglog_fit: values must be positive");
    a(i, 0) = std::log(x[i]);
    a(i, 1) = 1.0;
    b[i] = std::log(y[i]);
  }
  const Eigen::Vector2d coef = a.colPivHouseholderQr().solve(b);
  RateFit fit;
  fit.slope = coef[0];
  fit.intercept = coef[1];
  const double ss_res = (a * coef - b).squaredNorm();
  const double ss_tot = (b.array() - b.mean()).square().sum();
  fit.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
  fit.ci_low = fit.ci_high = fit.slope;
  return fit;
}

RateFit rate_regress(const RateTable& table, RateAxis axis, std::uint64_t seed) {
  if (table.rows.size() < 4) throw InvalidArgument("rate_regress: need at least 4 rows");
  std::vector<double> x, y, se;
  for (const RateRow& r : table.rows) {
    if (!(r.tv > 3.0 * r.std_err))
      throw NumericFailure("rate_regress: row with tv_hat <= 3 std_err (N=" +
                           std::to_string(r.n_steps) + ", eps=" + format_double(r.eps) + ")");
    x.push_back(axis == RateAxis::Eps ? r.eps : (r.h > 0 ? r.h : r.eta));
    y.push_back(r.tv);
    se.push_back(r.std_err);
  }
  RateFit fit = loglog_fit(x, y);
  Rng rng = make_stream(seed, 0x7b04);
  std::vector<double> slopes;
  std::vector<double> yb(y.size());
  for (int r = 0; r < 1000; ++r) {
    for (std::size_t i = 0; i < y.size(); ++i)
      yb[i] = std::max(y[i] + se[i] * standard_normal(rng), 1e-3 * y[i]);
    slopes.push_back(loglog_fit(x, yb).slope);
  }
  std::sort(slopes.begin(), slopes.end());
  fit.ci_low = slopes[25];
  fit.ci_high = slopes[974];
  return fit;
}

std::vector<Point> reference_terminals(const VelocityField& field, const StepSchedule& schedule,
                                       std::span<const Point> x0, int workers) {
  const Manifold& m = field.manifold();
  if (m.kind() == ManifoldKind::Spd)
    throw InvalidArgument("reference_terminals: sphere or Euclidean space only");
  const bool sphere = m.kind() == ManifoldKind::Sphere;
  auto fix = [sphere](Point& p) {
    if (sphere) p.normalize();
  };
  std::vector<Point> out(x0.begin(), x0.end());
  const std::size_t block = 512;
  const std::size_t blocks = (out.size() + block - 1) / block;
  parallel_for(blocks, workers, [&](std::size_t bi) {
    const std::size_t lo = bi * block, hi = std::min(out.size(), lo + block);
    const std::size_t n = hi - lo;
    std::span<Point> x(out.data() + lo, n);
    std::vector<Point> stage(n);
    std::vector<Eigen::VectorXd> k1(n), k2(n), k3(n), k4(n);
    for (int s = 0; s < schedule.steps(); ++s) {
      const double t = schedule.times[s], h = schedule.step(s);
      field.evaluate_many(t, x, k1);
      for (std::size_t i = 0; i < n; ++i) fix(stage[i] = x[i] + 0.5 * h * k1[i]);
      field.evaluate_many(t + 0.5 * h, stage, k2);
      for (std::size_t i = 0; i < n; ++i) fix(stage[i] = x[i] + 0.5 * h * k2[i]);
      field.evaluate_many(t + 0.5 * h, stage, k3);
      for (std::size_t i = 0; i < n; ++i) fix(stage[i] = x[i] + h * k3[i]);
      field.evaluate_many(t + h, stage, k4);
      for (std::size_t i = 0; i < n; ++i)
        fix(x[i] += (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
  });
  return out;
}

Lemma1Result lemma1_diagnostic(const VelocityField& v, const VelocityField& vt,
                               const SphereBridge& bridge, double t, const Lemma1Options& opt) {
  if (!(t >= 0 && t + opt.delta < 1.0)) throw DomainError("lemma1: need 0 <= t < t + delta < 1");
  if (opt.samples < 100 || opt.substeps < 1) throw InvalidArgument("lemma1: bad options");
  const Manifold& m = bridge.manifold();
  const std::size_t n = opt.samples;

  std::vector<Point> x0(n);
  parallel_for(n, opt.workers, [&](std::size_t i) {
    Rng rng = make_stream(opt.seed, 0x1e1, i);
    x0[i] = bridge.sample_marginal(t, rng);
  });
  StepSchedule window;
  for (int k = 0; k <= opt.substeps; ++k) window.times.push_back(t + opt.delta * k / opt.substeps);
  // v carries p_t to p_{t + delta} exactly, so the TV between the two flows
  // is the TV between the vt-pushforward of p_t and p_{t + delta}.
  const SphereBridge::Table tab0 = bridge.table(t), tab1 = bridge.table(t + opt.delta);
  const TvEstimate tv = pushforward_tv(
      m, [&](std::span<const Point> xs) { return reference_terminals(vt, window, xs, opt.workers); },
      [&](const Point& x) { return bridge.marginal_density(tab0, x); },
      [&](const Point& y) { return bridge.marginal_density(tab1, y); }, x0, 1e-5, opt.workers);

  Lemma1Result res;
  res.t = t;
  res.lhs_fd = tv.tv / opt.delta;
  res.lhs_se = tv.std_err / opt.delta;

  // Simpson average of the bound over [t, t + delta] under the exact laws.
  const std::size_t nr = std::min<std::size_t>(n, 20000);
  const double times[3] = {t, t + 0.5 * opt.delta, t + opt.delta};
  const double simpson[3] = {1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0};
  double var = 0.0, score_sq = 0.0, diff_sq = 0.0;
  for (int j = 0; j < 3; ++j) {
    const double s = times[j];
    const SphereBridge::Table tab = bridge.table(s);
    std::vector<double> div(nr), sc(nr), ssq(nr), dsq(nr);
    parallel_for(nr, opt.workers, [&](std::size_t i) {
      Rng rng = make_stream(opt.seed, 0x1e2 + j, i);
      const Point x = bridge.sample_marginal(s, rng);
      auto diff = [&](const Point& y) -> Eigen::VectorXd { return vt(s, y) - v(s, y); };
      div[i] = std::abs(divergence_fd(m, diff, x, opt.fd_step));
      const double g = bridge.score(tab, x).norm();
      const double u = diff(x).norm();
      sc[i] = g * u;
      ssq[i] = g * g;
      dsq[i] = u * u;
    });
    std::vector<double> total(nr);
    for (std::size_t i = 0; i < nr; ++i) total[i] = div[i] + sc[i];
    res.div_term += simpson[j] * mean_of(div);
    res.score_term += simpson[j] * mean_of(sc);
    const double se = stddev(total) / std::sqrt(static_cast<double>(nr));
    var += simpson[j] * simpson[j] * se * se;
    score_sq += simpson[j] * mean_of(ssq);
    diff_sq += simpson[j] * mean_of(dsq);
  }
  res.rhs_bound = res.div_term + res.score_term;
  res.rhs_se = std::sqrt(var);
  res.cauchy_schwarz = std::sqrt(score_sq) * std::sqrt(diff_sq);
  res.holds = res.lhs_fd <= res.rhs_bound + 3.0 * std::hypot(res.lhs_se, res.rhs_se);
  return res;
}

namespace {

std::array<double, 3> spd2_coords(const Point& x) {
  if (x.size() != 4) throw InvalidArgument("spd2_binned_tv: SPD(2) points required");
  const Eigen::Matrix2d a = Eigen::Map<const Eigen::Matrix2d>(x.data());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es;
  es.computeDirect(a);
  const Eigen::Vector2d lam = es.eigenvalues();
  if (!(lam[0] > 0)) throw InvalidArgument("spd2_binned_tv: matrix not positive definite");
  const Eigen::Vector2d e = es.eigenvectors().col(1);
  double ang = std::atan2(e[1], e[0]);
  if (ang < 0) ang += kPi;
  if (ang >= kPi) ang -= kPi;
  return {std::log(lam[1]), std::log(lam[0]), ang};
}

}  // namespace

TvEstimate spd2_binned_tv(std::span<const Point> a, std::span<const Point> b, int bins,
                          std::uint64_t seed, int resamples) {
  if (a.empty() || b.empty() || bins < 1) throw InvalidArgument("spd2_binned_tv: bad input");
  std::vector<std::array<double, 3>> ca, cb;
  for (const Point& x : a) ca.push_back(spd2_coords(x));
  for (const Point& x : b) cb.push_back(spd2_coords(x));
  std::array<std::vector<double>, 3> edges;
  for (int k = 0; k < 3; ++k) {
    std::vector<double> v;
    for (const auto& c : cb) v.push_back(c[k]);
    std::sort(v.begin(), v.end());
    for (int j = 1; j < bins; ++j) edges[k].push_back(v[j * v.size() / bins]);
  }
  auto cell = [&](const std::array<double, 3>& c) {
    std::size_t idx = 0;
    for (int k = 0; k < 3; ++k)
      idx = idx * bins +
            static_cast<std::size_t>(std::upper_bound(edges[k].begin(), edges[k].end(), c[k]) -
                                     edges[k].begin());
    return idx;
  };
  const std::size_t cells = static_cast<std::size_t>(bins) * bins * bins;
  std::vector<std::size_t> na(cells, 0), nb(cells, 0);
  for (const auto& c : ca) ++na[cell(c)];
  for (const auto& c : cb) ++nb[cell(c)];
  const auto pa = normalized(na, a.size()), pb = normalized(nb, b.size());
  TvEstimate est;
  est.tv = est.raw = tv_of_counts(pa, pb);
  Rng rng = make_stream(seed, 0x7b05);
  std::vector<double> reps;
  for (int r = 0; r < resamples; ++r)
    reps.push_back(tv_of_counts(normalized(multinomial(a.size(), pa, rng), a.size()),
                                normalized(multinomial(b.size(), pb, rng), b.size())));
  est.std_err = stddev(reps);
  return est;
}

double energy_distance(const Manifold& m, std::span<const Point> a, std::span<const Point> b,
                       std::size_t max_points) {
  const std::size_t na = std::min(a.size(), max_points), nb = std::min(b.size(), max_points);
  if (na < 2 || nb < 2) throw InvalidArgument("energy_distance: need at least 2 points per set");
  auto mean_dist = [&](std::span<const Point> p, std::size_t np, std::span<const Point> q,
                       std::size_t nq, bool same) {
    double s = 0.0;
    std::size_t c = 0;
    for (std::size_t i = 0; i < np; ++i)
      for (std::size_t j = same ? i + 1 : 0; j < nq; ++j, ++c) s += distance(m, p[i], q[j]);
    return s / c;
  };
  return 2.0 * mean_dist(a, na, b, nb, false) - mean_dist(a, na, a, na, true) -
         mean_dist(b, nb, b, nb, true);
}

}  // namespace rfm
