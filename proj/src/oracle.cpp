#include "rfm/oracle.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "rfm/errors.hpp"
#include "rfm/geometry.hpp"
#include "rfm/quadrature.hpp"
#include "rfm/random.hpp"
#include "rfm/sampler.hpp"

namespace rfm {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct WeightedPoint {
  Eigen::VectorXd x;
  double w;
};

// Product Gauss rule on the unit sphere S^k in R^{k+1}.
std::vector<WeightedPoint> sphere_rule(int k, int nodes) {
  if (k == 0) return {{Eigen::VectorXd::Constant(1, 1.0), 1.0}, {Eigen::VectorXd::Constant(1, -1.0), 1.0}};
  const SphereCellPartition whole(k, std::vector<int>(k, 1));
  const auto& box = whole.cells()[0].box;
  std::vector<QuadratureRule> rules;
  for (const auto& [lo, hi] : box) rules.push_back(gauss_legendre(nodes, lo, hi));
  std::vector<WeightedPoint> out;
  std::vector<int> idx(k, 0);
  std::vector<double> ang(k);
  while (true) {
    double w = 1.0;
    for (int j = 0; j < k; ++j) {
      ang[j] = rules[j].nodes[idx[j]];
      w *= rules[j].weights[idx[j]];
      if (j + 1 < k) w *= std::pow(std::sin(ang[j]), k - 1 - j);
    }
    out.push_back({SphereCellPartition::from_angles(ang), w});
    int j = k - 1;
    while (j >= 0 && ++idx[j] == nodes) idx[j--] = 0;
    if (j < 0) break;
  }
  return out;
}

// Richardson-combined central difference of Exp_{x1} along e at v.
Eigen::VectorXd dexp_column(const Manifold& m, const Point& x1, const Eigen::VectorXd& v,
                            const Eigen::VectorXd& e, double s) {
  auto central = [&](double h) -> Eigen::VectorXd {
    return (exp_map(m, x1, v + h * e) - exp_map(m, x1, v - h * e)) / (2.0 * h);
  };
  return (4.0 * central(0.5 * s) - central(s)) / 3.0;
}

}  // namespace

double numeric_jacobi(double c, double t_end, double j0, double dj0, int steps) {
  if (steps < 16) throw InvalidArgument("numeric_jacobi: need at least 16 steps");
  if (!std::isfinite(c) || !std::isfinite(t_end) || !(t_end >= 0))
    throw InvalidArgument("numeric_jacobi: bad arguments");
  const double h = t_end / steps;
  double j = j0, dj = dj0;
  for (int i = 0; i < steps; ++i) {
    const double jm = j + 0.5 * h * dj;
    const double djm = dj - 0.5 * h * c * j;
    j += h * djm;
    dj -= h * c * jm;
  }
  return j;
}

std::vector<Point> geodesic_path(const Manifold& m, const Point& x, const Point& y, int segments) {
  if (segments < 1) throw InvalidArgument("geodesic_path: need at least one segment");
  const Eigen::VectorXd v = log_map(m, x, y);
  std::vector<Point> path;
  path.reserve(segments + 1);
  for (int k = 0; k <= segments; ++k)
    path.push_back(k == segments ? y : exp_map(m, x, (static_cast<double>(k) / segments) * v));
  return path;
}

Eigen::VectorXd numeric_transport(const Manifold& m, std::span<const Point> path,
                                  const Eigen::VectorXd& v, Ladder ladder) {
  if (path.empty()) throw InvalidArgument("numeric_transport: empty path");
  Eigen::VectorXd w = v;
  const double vn = norm(m, path[0], v);
  if (vn == 0.0) return w;
  for (std::size_t k = 0; k + 1 < path.size(); ++k) {
    const Point& a = path[k];
    const Point& b = path[k + 1];
    const double seg = distance(m, a, b);
    if (!std::isfinite(seg) || seg > 0.25 * std::min(m.inj_radius(), 4.0))
      throw NumericFailure("numeric_transport: degenerate segment " + std::to_string(k));
    if (seg == 0.0) continue;
    // Rungs of length comparable to the segment keep the ladder local.
    const double scale = seg / norm(m, a, w);
    const Point tip = exp_map(m, a, scale * w);
    Eigen::VectorXd next;
    if (ladder == Ladder::Pole) {
      const Point mid = geodesic_point(m, a, b, 0.5);
      const Point refl = exp_map(m, mid, -log_map(m, mid, tip));
      next = -log_map(m, b, refl);
    } else {
      const Point mid = geodesic_point(m, tip, b, 0.5);
      const Point far = geodesic_point(m, a, mid, 2.0);
      next = log_map(m, b, far);
    }
    w = project_tangent(m, b, next / scale);
    require_finite(w, "numeric_transport");
  }
  return w;
}

double numeric_dexp_det(const Manifold& m, const Point& x1, const Eigen::VectorXd& v,
                        double fd_step) {
  if (!(fd_step >= 1e-6 && fd_step <= 1e-3))
    throw InvalidArgument("numeric_dexp_det: fd_step must lie in [1e-6, 1e-3]");
  const Frame frame = orthonormal_frame(m, x1);
  const int d = static_cast<int>(frame.vectors.size());
  const Point y = exp_map(m, x1, v);
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i) {
    const Eigen::VectorXd col = dexp_column(m, x1, v, frame.vectors[i], fd_step);
    const Eigen::VectorXd back = parallel_transport(m, y, x1, project_tangent(m, y, col));
    for (int j = 0; j < d; ++j) a(j, i) = inner(m, x1, back, frame.vectors[j]);
  }
  return a.determinant();
}

RejectionHistogram bridge_rejection_histogram(const SphereBridge& bridge, double t,
                                              const Point& center, double radius,
                                              const SphereCellPartition& partition, std::size_t n,
                                              std::uint64_t seed, int workers) {
  if (!(t >= 0 && t < 1)) throw DomainError("rejection histogram: t must lie in [0, 1)");
  if (!(radius > 0)) throw InvalidArgument("rejection histogram: radius must be positive");
  const Manifold& m = bridge.manifold();
  const std::size_t block = 1 << 14;
  const std::size_t blocks = (n + block - 1) / block;
  std::vector<std::vector<std::size_t>> counts(blocks, std::vector<std::size_t>(partition.size(), 0));
  parallel_for(blocks, workers, [&](std::size_t b) {
    Rng rng = make_stream(seed, 0x0c1, b);
    const std::size_t hi = std::min(n, (b + 1) * block);
    for (std::size_t i = b * block; i < hi; ++i) {
      const Point x0 = random_point(m, rng);
      const Point x1 = bridge.target().sample(rng);
      Point xt;
      try {
        xt = geodesic_point(m, x0, x1, t);
      } catch (const DomainError&) {
        continue;  // antipodal pair, probability zero
      }
      if (distance(m, xt, center) < radius) ++counts[b][partition.locate(x1)];
    }
  });
  RejectionHistogram out;
  out.proposed = n;
  std::vector<std::size_t> total(partition.size(), 0);
  for (const auto& c : counts)
    for (std::size_t k = 0; k < c.size(); ++k) total[k] += c[k];
  for (std::size_t c : total) out.accepted += c;
  if (static_cast<double>(out.accepted) < 1e-5 * static_cast<double>(n) || out.accepted == 0)
    throw NumericFailure("rejection histogram: acceptance rate below 1e-5");
  const double acc = static_cast<double>(out.accepted);
  for (std::size_t c : total) {
    const double p = c / acc;
    out.prob.push_back(p);
    out.std_err.push_back(std::sqrt(std::max(p * (1.0 - p), 1.0 / acc) / acc));
  }
  return out;
}

std::vector<double> cap_conditional_masses(const SphereBridge& bridge, double t,
                                           const Point& center, double radius,
                                           const SphereCellPartition& partition, int workers) {
  const Manifold& m = bridge.manifold();
  const int d = m.dim();
  const double vol = sphere_volume(d);
  // Cap points in geodesic polar coordinates around the center.
  const Frame frame = orthonormal_frame(m, center);
  const QuadratureRule radial = gauss_legendre(6, 0.0, radius);
  const auto dirs = sphere_rule(d - 1, 12);
  std::vector<WeightedPoint> cap;
  for (std::size_t i = 0; i < radial.size(); ++i) {
    const double r = radial.nodes[i];
    for (const auto& dir : dirs) {
      Eigen::VectorXd v = Eigen::VectorXd::Zero(center.size());
      for (int j = 0; j < d; ++j) v += dir.x[j] * frame.vectors[j];
      cap.push_back({exp_map(m, center, r * v),
                     radial.weights[i] * dir.w * std::pow(std::sin(r), d - 1)});
    }
  }
  // Joint density of (X_t, X1) integrated over cap x cell.
  std::vector<std::vector<double>> per(cap.size());
  parallel_for(cap.size(), workers, [&](std::size_t i) {
    const Point& x = cap[i].x;
    per[i] = partition.masses(
        [&](const Point& x1) {
          return bridge.target().density(x1) *
                 sphere_jacobian_jt(d, t, distance(m, x, x1)) / vol;
        },
        8);
  });
  std::vector<double> out(partition.size(), 0.0);
  for (std::size_t i = 0; i < cap.size(); ++i)
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += cap[i].w * per[i][k];
  double total = 0.0;
  for (double v : out) total += v;
  for (double& v : out) v /= total;
  return out;
}

std::string to_string(BoundQuantity q) {
  switch (q) {
    case BoundQuantity::GradVOp: return "grad_v_op";
    case BoundQuantity::DtV: return "dt_v";
    case BoundQuantity::GradDivV: return "grad_div_v";
    case BoundQuantity::DtDivV: return "dt_div_v";
    case BoundQuantity::ScoreSq: return "score_sq";
    case BoundQuantity::VNorm: return "v_norm";
  }
  return "unknown";
}

BoundQuantity parse_bound_quantity(const std::string& s) {
  for (BoundQuantity q : {BoundQuantity::GradVOp, BoundQuantity::DtV, BoundQuantity::GradDivV,
                          BoundQuantity::DtDivV, BoundQuantity::ScoreSq, BoundQuantity::VNorm})
    if (to_string(q) == s) return q;
  throw InvalidArgument("unknown bound quantity: " + s);
}

double BoundReport::max_ratio() const {
  double r = 0.0;
  for (const BoundRow& row : rows)
    if (!row.flagged) r = std::max(r, row.ratio);
  return r;
}

std::size_t BoundReport::flagged() const {
  return static_cast<std::size_t>(
      std::count_if(rows.begin(), rows.end(), [](const BoundRow& r) { return r.flagged; }));
}

std::string BoundReport::csv() const {
  std::ostringstream os;
  os << "quantity,t,node_id,estimate,constant,ratio\n";
  for (const BoundRow& r : rows) {
    os << to_string(r.quantity) << ',' << format_double(r.t) << ',' << r.node_id << ',';
    if (r.flagged)
      os << "nan,";
    else
      os << format_double(r.estimate) << ',';
    os << format_double(r.constant) << ',' << (r.flagged ? "nan" : format_double(r.ratio)) << '\n';
  }
  return os.str();
}

BoundReport bound_sweep(const SphereBridge& bridge, BoundQuantity quantity,
                        std::span<const double> times, std::span<const Point> nodes, int workers,
                        double fd_step) {
  const Manifold& m = bridge.manifold();
  const double ratio = bridge.target().ratio();
  const int d = m.dim();
  BoundReport report;
  report.rows.resize(times.size() * nodes.size());
  parallel_for(report.rows.size(), workers, [&](std::size_t idx) {
    const double t = times[idx / nodes.size()];
    const int node = static_cast<int>(idx % nodes.size());
    const Point& x = nodes[node];
    const RegularityConstants c = sphere_constants(ratio, d, t);
    BoundRow& row = report.rows[idx];
    row.quantity = quantity;
    row.t = t;
    row.node_id = node;
    const double s = fd_step;
    // Time differences stay inside [0, 1).
    const double ta = std::max(0.0, t - s), tb = t + s;
    auto v_at = [&](double tt) { return [&, tt](const Point& y) { return bridge.velocity(tt, y); }; };
    auto div_at = [&](double tt, const Point& y) { return divergence_fd(m, v_at(tt), y, s); };
    try {
      switch (quantity) {
        case BoundQuantity::GradVOp: {
          const Eigen::MatrixXd j = covariant_jacobian_fd(m, v_at(t), x, s);
          row.estimate = Eigen::JacobiSVD<Eigen::MatrixXd>(j).singularValues()[0];
          row.constant = c.l_v_x;
          break;
        }
        case BoundQuantity::DtV:
          row.estimate = ((bridge.velocity(tb, x) - bridge.velocity(ta, x)) / (tb - ta)).norm();
          row.constant = c.l_v_t;
          break;
        case BoundQuantity::GradDivV:
          row.estimate = gradient_fd(m, [&](const Point& y) { return div_at(t, y); }, x, s).norm();
          row.constant = c.l_div_x;
          break;
        case BoundQuantity::DtDivV:
          row.estimate = std::abs((div_at(tb, x) - div_at(ta, x)) / (tb - ta));
          row.constant = c.l_div_t;
          break;
        case BoundQuantity::ScoreSq:
          row.estimate = bridge.score(t, x).squaredNorm();
          row.constant = c.l_score;
          break;
        case BoundQuantity::VNorm:
          row.estimate = bridge.velocity(t, x).norm();
          row.constant = c.l_v;
          break;
      }
      if (!std::isfinite(row.estimate)) throw NumericFailure("non-finite estimate");
      row.ratio = row.constant > 0 ? row.estimate / row.constant : 0.0;
    } catch (const std::exception&) {
      row.flagged = true;
    }
  });
  return report;
}

std::vector<double> bound_times() {
  std::vector<double> t;
  for (int k = 1; k <= 10; ++k) t.push_back(0.09 * k);
  return t;
}

std::vector<Point> bound_nodes(const Manifold& m, int count, std::uint64_t seed) {
  Rng rng = make_stream(seed, 0x0b0);
  std::vector<Point> out;
  for (int i = 0; i < count; ++i) out.push_back(random_point(m, rng));
  return out;
}

}  // namespace rfm
