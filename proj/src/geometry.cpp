#include "rfm/geometry.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "rfm/spd_functions.hpp"

namespace rfm {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Eigen::Map<const MatrixXd> as_matrix(const VectorXd& v, int n) { return {v.data(), n, n}; }

VectorXd flatten(const MatrixXd& a) { return Eigen::Map<const VectorXd>(a.data(), a.size()); }

// sin(s)/s with a Taylor branch near zero.
double sinc(double s) {
  if (std::abs(s) < 1e-4) {
    const double s2 = s * s;
    return 1.0 - s2 / 6.0 + s2 * s2 / 120.0;
  }
  return std::sin(s) / s;
}

Point sphere_exp(const Point& x, const VectorXd& v) {
  const double s = v.norm();
  Point y = std::cos(s) * x + sinc(s) * v;
  return y / y.norm();
}

VectorXd sphere_log(const Point& x, const Point& y) {
  const double c = x.dot(y);
  const VectorXd w = y - c * x;
  const double s = w.norm();
  const double theta = std::atan2(s, c);
  if (theta > std::numbers::pi - kCutLocusMargin) {
    throw DomainError("sphere log: points are (nearly) antipodal, cut locus");
  }
  double scale;
  if (s < 1e-4 && c > 0) {
    // theta/sin(theta) = 1 + theta^2/6 + 7 theta^4/360
    const double t2 = theta * theta;
    scale = 1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0;
  } else {
    scale = theta / s;
  }
  VectorXd v = scale * w;
  return v - x.dot(v) * x;
}

VectorXd sphere_transport(const Point& x, const Point& y, const VectorXd& v) {
  const VectorXd lg = sphere_log(x, y);
  const double theta = lg.norm();
  if (theta < 1e-15) return v - y.dot(v) * y;
  const VectorXd u = lg / theta;
  const double a = u.dot(v);
  VectorXd out = v + (std::cos(theta) - 1.0) * a * u - std::sin(theta) * a * x;
  return out - y.dot(out) * y;
}

int spd_n(const Manifold& m) { return m.param(); }

}  // namespace

void require_finite(const VectorXd& v, const char* what) {
  if (!v.allFinite()) throw InvalidArgument(std::string(what) + ": non-finite input");
}

void check_point(const Manifold& m, const Point& x) {
  if (x.size() != m.ambient_dim()) throw InvalidArgument("point has wrong ambient dimension");
  require_finite(x, "point");
  switch (m.kind()) {
    case ManifoldKind::Sphere:
      if (std::abs(x.norm() - 1.0) > 1e-9) throw InvalidArgument("sphere point is not unit norm");
      break;
    case ManifoldKind::Spd: {
      const auto a = as_matrix(x, spd_n(m));
      if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + a.cwiseAbs().maxCoeff())) {
        throw InvalidArgument("SPD point is not symmetric");
      }
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(a);
      if (es.info() != Eigen::Success || !(es.eigenvalues().minCoeff() > 0)) {
        throw InvalidArgument("SPD point is not positive definite");
      }
      break;
    }
    case ManifoldKind::Euclidean:
      break;
  }
}

Point normalize_point(const Manifold& m, const Point& x) {
  switch (m.kind()) {
    case ManifoldKind::Sphere:
      return x / x.norm();
    case ManifoldKind::Spd:
      return flatten(spd::symmetrize(as_matrix(x, spd_n(m))));
    case ManifoldKind::Euclidean:
      return x;
  }
  return x;
}

VectorXd project_tangent(const Manifold& m, const Point& x, const VectorXd& v) {
  switch (m.kind()) {
    case ManifoldKind::Sphere:
      return v - x.dot(v) * x;
    case ManifoldKind::Spd:
      return flatten(spd::symmetrize(as_matrix(v, spd_n(m))));
    case ManifoldKind::Euclidean:
      return v;
  }
  return v;
}

double inner(const Manifold& m, const Point& x, const VectorXd& u, const VectorXd& v) {
  if (m.kind() == ManifoldKind::Spd) {
    const int n = spd_n(m);
    return spd::inner(as_matrix(x, n), as_matrix(u, n), as_matrix(v, n));
  }
  return u.dot(v);
}

double norm(const Manifold& m, const Point& x, const VectorXd& v) {
  return std::sqrt(std::max(0.0, inner(m, x, v, v)));
}

Point exp_map(const Manifold& m, const Point& x, const VectorXd& v) {
  require_finite(v, "exp_map");
  switch (m.kind()) {
    case ManifoldKind::Sphere:
      return sphere_exp(x, v);
    case ManifoldKind::Spd: {
      const int n = spd_n(m);
      return flatten(spd::exp_map(as_matrix(x, n), spd::symmetrize(as_matrix(v, n))));
    }
    case ManifoldKind::Euclidean:
      return x + v;
  }
  return x;
}

VectorXd log_map(const Manifold& m, const Point& x, const Point& y) {
  switch (m.kind()) {
    case ManifoldKind::Sphere:
      return sphere_log(x, y);
    case ManifoldKind::Spd: {
      const int n = spd_n(m);
      return flatten(spd::log_map(as_matrix(x, n), as_matrix(y, n)));
    }
    case ManifoldKind::Euclidean:
      return y - x;
  }
  return y;
}

double distance(const Manifold& m, const Point& x, const Point& y) {
  switch (m.kind()) {
    case ManifoldKind::Sphere:
      return std::atan2((y - x.dot(y) * x).norm(), x.dot(y));
    case ManifoldKind::Spd: {
      const int n = spd_n(m);
      return spd::distance(as_matrix(x, n), as_matrix(y, n));
    }
    case ManifoldKind::Euclidean:
      return (y - x).norm();
  }
  return 0.0;
}

VectorXd parallel_transport(const Manifold& m, const Point& x, const Point& y, const VectorXd& v) {
  switch (m.kind()) {
    case ManifoldKind::Sphere:
      return sphere_transport(x, y, v);
    case ManifoldKind::Spd: {
      const int n = spd_n(m);
      return flatten(spd::transport(as_matrix(x, n), as_matrix(y, n), as_matrix(v, n)));
    }
    case ManifoldKind::Euclidean:
      return v;
  }
  return v;
}

Point geodesic_point(const Manifold& m, const Point& x0, const Point& x1, double t) {
  if (t == 0.0) return x0;
  if (t == 1.0) return x1;
  return exp_map(m, x0, t * log_map(m, x0, x1));
}

VectorXd bridge_velocity(const Manifold& m, const Point& x0, const Point& x1, double t) {
  if (!(t < 1.0)) throw DomainError("bridge_velocity: t must be < 1");
  const Point xt = geodesic_point(m, x0, x1, t);
  return log_map(m, xt, x1) / (1.0 - t);
}

VectorXd bridge_velocity_transported(const Manifold& m, const Point& x0, const Point& x1,
                                     double t) {
  if (!(t < 1.0)) throw DomainError("bridge_velocity: t must be < 1");
  const Point xt = geodesic_point(m, x0, x1, t);
  return parallel_transport(m, x0, xt, log_map(m, x0, x1));
}

Frame orthonormal_frame(const Manifold& m, const Point& x) {
  Frame f{x, {}};
  switch (m.kind()) {
    case ManifoldKind::Sphere: {
      // Pivoted Gram-Schmidt of the standard basis against x.
      const int amb = static_cast<int>(x.size());
      std::vector<VectorXd> basis{x};
      std::vector<bool> used(amb, false);
      for (int k = 0; k + 1 < amb; ++k) {
        int best = -1;
        double best_norm = -1.0;
        VectorXd best_vec;
        for (int i = 0; i < amb; ++i) {
          if (used[i]) continue;
          VectorXd e = VectorXd::Unit(amb, i);
          for (const auto& b : basis) e -= b.dot(e) * b;
          const double nrm = e.norm();
          if (nrm > best_norm + 1e-12) {
            best = i;
            best_norm = nrm;
            best_vec = e;
          }
        }
        used[best] = true;
        VectorXd e = best_vec / best_norm;
        for (const auto& b : basis) e -= b.dot(e) * b;  // second pass for orthogonality
        e.normalize();
        basis.push_back(e);
        f.vectors.push_back(e);
      }
      break;
    }
    case ManifoldKind::Spd: {
      const int n = spd_n(m);
      const auto w = spd::whitening(as_matrix(x, n));
      for (int j = 0; j < n; ++j) {
        for (int i = 0; i <= j; ++i) {
          MatrixXd b = MatrixXd::Zero(n, n);
          if (i == j) {
            b(i, i) = 1.0;
          } else {
            b(i, j) = b(j, i) = 1.0 / std::sqrt(2.0);
          }
          f.vectors.push_back(flatten(spd::symmetrize((w.half * b * w.half).eval())));
        }
      }
      break;
    }
    case ManifoldKind::Euclidean:
      for (int i = 0; i < m.param(); ++i) f.vectors.push_back(VectorXd::Unit(m.param(), i));
      break;
  }
  return f;
}

MatrixXd frame_gram(const Manifold& m, const Frame& f) {
  const int d = static_cast<int>(f.vectors.size());
  MatrixXd g(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) g(i, j) = inner(m, f.base, f.vectors[i], f.vectors[j]);
  }
  return g;
}

VectorXd frame_coordinates(const Manifold& m, const Frame& f, const VectorXd& v) {
  VectorXd c(f.vectors.size());
  if (m.kind() == ManifoldKind::Spd) {
    const int n = spd_n(m);
    const MatrixXd xi = as_matrix(f.base, n).ldlt().solve(MatrixXd::Identity(n, n));
    const MatrixXd xv = xi * as_matrix(v, n) * xi;
    for (std::size_t i = 0; i < f.vectors.size(); ++i) {
      c[static_cast<Eigen::Index>(i)] = (xv * as_matrix(f.vectors[i], n)).trace();
    }
    return c;
  }
  for (std::size_t i = 0; i < f.vectors.size(); ++i) {
    c[static_cast<Eigen::Index>(i)] = f.vectors[i].dot(v);
  }
  return c;
}

Point origin(const Manifold& m) {
  switch (m.kind()) {
    case ManifoldKind::Sphere:
      return VectorXd::Unit(m.param() + 1, m.param());
    case ManifoldKind::Spd:
      return flatten(MatrixXd::Identity(m.param(), m.param()));
    case ManifoldKind::Euclidean:
      return VectorXd::Zero(m.param());
  }
  return {};
}

Point random_point(const Manifold& m, Rng& rng, double scale) {
  switch (m.kind()) {
    case ManifoldKind::Sphere: {
      VectorXd g = standard_normal_vector(rng, m.param() + 1);
      return g / g.norm();
    }
    case ManifoldKind::Spd: {
      const Point id = origin(m);
      return exp_map(m, id, random_tangent(m, id, rng, scale));
    }
    case ManifoldKind::Euclidean:
      return scale * standard_normal_vector(rng, m.param());
  }
  return {};
}

VectorXd random_tangent(const Manifold& m, const Point& x, Rng& rng, double scale) {
  const Frame f = orthonormal_frame(m, x);
  VectorXd v = VectorXd::Zero(x.size());
  for (const auto& e : f.vectors) v += scale * standard_normal(rng) * e;
  return v;
}

ModelValue model_function_s(double k, double r) {
  if (k > 0) {
    const double q = std::sqrt(k);
    return {std::sin(r * q) / q, std::cos(r * q)};
  }
  if (k < 0) {
    const double q = std::sqrt(-k);
    return {std::sinh(r * q) / q, std::cosh(r * q)};
  }
  return {r, 1.0};
}

ModelValue model_function_c(double k, double r) {
  if (k > 0) {
    const double q = std::sqrt(k);
    return {std::cos(r * q), -q * std::sin(r * q)};
  }
  if (k < 0) {
    const double q = std::sqrt(-k);
    return {std::cosh(r * q), q * std::sinh(r * q)};
  }
  return {1.0, 0.0};
}

double jacobi_closed_form(double c, double t, double j0, double dj0) {
  return j0 * model_function_c(c, t).value + dj0 * model_function_s(c, t).value;
}

}  // namespace rfm
