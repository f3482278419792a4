#include <doctest.h>

#include <cmath>

#include "rfm/geometry.hpp"
#include "rfm/random.hpp"
#include "rfm/spd_functions.hpp"

using namespace rfm;

TEST_SUITE("geometry") {

TEST_CASE("sphere exp/log roundtrip and distance") {
  const Manifold m = Manifold::sphere(3);
  Rng rng = make_stream(1, 1);
  for (int i = 0; i < 200; ++i) {
    const Point x = random_point(m, rng), y = random_point(m, rng);
    const Eigen::VectorXd v = log_map(m, x, y);
    CHECK((exp_map(m, x, v) - y).norm() < 1e-10);
    CHECK(std::abs(v.norm() - std::acos(std::clamp(x.dot(y), -1.0, 1.0))) < 1e-10);
    CHECK(std::abs(v.dot(x)) < 1e-12);
  }
}

TEST_CASE("quarter-circle transport on S^2") {
  const Manifold m = Manifold::sphere(2);
  Point a(3), b(3);
  a << 0, 0, 1;
  b << 1, 0, 0;
  Eigen::VectorXd e1(3), e2(3);
  e1 << 1, 0, 0;
  e2 << 0, 1, 0;
  // Along the great circle through a and b the direction of travel rotates
  // into -a and the normal direction is preserved.
  CHECK((parallel_transport(m, a, b, e1) - (-a)).norm() < 1e-12);
  CHECK((parallel_transport(m, a, b, e2) - e2).norm() < 1e-12);
}

TEST_CASE("SPD distance is affine invariant") {
  const Manifold m = Manifold::spd(3);
  Rng rng = make_stream(2, 1);
  for (int i = 0; i < 50; ++i) {
    const Point x = random_point(m, rng), y = random_point(m, rng);
    Eigen::Matrix3d g = Eigen::Matrix3d::Random() + 3 * Eigen::Matrix3d::Identity();
    auto act = [&](const Point& p) {
      Eigen::Map<const Eigen::Matrix3d> a(p.data());
      Eigen::Matrix3d r = g * a * g.transpose();
      return Point(Eigen::Map<Eigen::VectorXd>(r.data(), 9));
    };
    CHECK(std::abs(distance(m, act(x), act(y)) - distance(m, x, y)) < 1e-8);
  }
}

TEST_CASE("geodesic endpoints and midpoint") {
  for (const Manifold& m : {Manifold::sphere(4), Manifold::spd(2), Manifold::euclidean(3)}) {
    Rng rng = make_stream(3, 1);
    const Point x = random_point(m, rng), y = random_point(m, rng);
    CHECK((geodesic_point(m, x, y, 0.0) - x).norm() < 1e-10);
    CHECK((geodesic_point(m, x, y, 1.0) - y).norm() < 1e-9);
    const Point mid = geodesic_point(m, x, y, 0.5);
    CHECK(std::abs(distance(m, x, mid) - distance(m, mid, y)) < 1e-9);
  }
}

TEST_CASE("bridge velocity points along the geodesic") {
  const Manifold m = Manifold::sphere(2);
  Rng rng = make_stream(4, 1);
  const Point x0 = random_point(m, rng), x1 = random_point(m, rng);
  const double t = 0.3;
  const Point xt = geodesic_point(m, x0, x1, t);
  const Eigen::VectorXd v = bridge_velocity(m, x0, x1, t);
  CHECK((v - log_map(m, xt, x1) / (1 - t)).norm() < 1e-10);
  CHECK(std::abs(v.norm() - distance(m, x0, x1)) < 1e-10);
}

TEST_CASE("Jacobi closed form in the three curvature regimes") {
  CHECK(jacobi_closed_form(1.0, 1.2, 0.0, 1.0) == doctest::Approx(std::sin(1.2)).epsilon(1e-14));
  CHECK(jacobi_closed_form(-4.0, 0.7, 0.0, 1.0) == doctest::Approx(std::sinh(1.4) / 2).epsilon(1e-14));
  CHECK(jacobi_closed_form(0.0, 0.7, 2.0, 3.0) == doctest::Approx(2.0 + 2.1).epsilon(1e-14));
  CHECK(jacobi_closed_form(1.0, 0.5, 1.0, 0.0) == doctest::Approx(std::cos(0.5)).epsilon(1e-14));
}

TEST_CASE("divergence of a linear field") {
  const Manifold e = Manifold::euclidean(3);
  Eigen::Matrix3d a;
  a << 1, 2, 0, 0, -3, 1, 4, 0, 0.5;
  Point x(3);
  x << 0.3, -0.2, 1.0;
  const double div = divergence_fd(e, [&](const Point& y) -> Eigen::VectorXd { return a * y; }, x, 1e-4);
  CHECK(div == doctest::Approx(a.trace()).epsilon(1e-8));
}

TEST_CASE("matrix functions") {
  Eigen::Matrix2d a;
  a << 2, 0.5, 0.5, 1;
  CHECK((spd::expm(spd::logm(a)) - a).norm() < 1e-12);
  CHECK((spd::powm(a, 0.5) * spd::powm(a, 0.5) - a).norm() < 1e-12);
  Eigen::Matrix2d bad;
  bad << 1, 2, 2, 1;
  CHECK_THROWS(spd::logm(bad));
}

TEST_CASE("invalid inputs are rejected") {
  const Manifold m = Manifold::sphere(2);
  Point off(3);
  off << 1, 1, 0;
  CHECK_THROWS(check_point(m, off));
  CHECK_THROWS(Manifold::sphere(0));
}

}
