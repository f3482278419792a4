#include <doctest.h>

#include <cmath>

#include "rfm/geometry.hpp"
#include "rfm/oracle.hpp"
#include "rfm/random.hpp"
#include "rfm/spd_bridge.hpp"

using namespace rfm;

TEST_SUITE("oracle") {

TEST_CASE("numeric Jacobi agrees with the closed form") {
  for (double c : {1.0, -1.0, 0.0, 0.25}) {
    const double num = numeric_jacobi(c, 1.5, 0.3, 0.8, 4096);
    CHECK(std::abs(num - jacobi_closed_form(c, 1.5, 0.3, 0.8)) < 1e-6);
  }
  // Past the first zero of j0 cos t the field changes sign.
  CHECK(numeric_jacobi(1.0, 2.0, 0.9, 0.0) == doctest::Approx(0.9 * std::cos(2.0)).epsilon(1e-7));
  CHECK_THROWS(numeric_jacobi(1.0, 1.0, 0.0, 1.0, 4));
}

TEST_CASE("pole ladder is exact on the sphere, Schild's is first order") {
  const Manifold m = Manifold::sphere(2);
  Rng rng = make_stream(1, 5);
  const Point x = random_point(m, rng), y = random_point(m, rng);
  const Eigen::VectorXd v = random_tangent(m, x, rng);
  const Eigen::VectorXd exact = parallel_transport(m, x, y, v);
  const auto path = geodesic_path(m, x, y, 64);
  CHECK((numeric_transport(m, path, v, Ladder::Pole) - exact).norm() < 1e-9);
  const double e64 = (numeric_transport(m, path, v, Ladder::Schild) - exact).norm();
  const double e128 = (numeric_transport(m, geodesic_path(m, x, y, 128), v, Ladder::Schild) - exact).norm();
  CHECK(e128 < 0.7 * e64);
}

TEST_CASE("numeric dexp determinant") {
  const Manifold s = Manifold::sphere(3);
  Rng rng = make_stream(2, 5);
  const Point x = random_point(s, rng);
  Eigen::VectorXd v = random_tangent(s, x, rng);
  v *= 1.7 / v.norm();
  CHECK(numeric_dexp_det(s, x, v, 1e-4) == doctest::Approx(std::pow(std::sin(1.7) / 1.7, 2)).epsilon(1e-6));
  const Manifold p = Manifold::spd(2);
  const Point y = random_point(p, rng);
  const Eigen::VectorXd w = random_tangent(p, y, rng);
  CHECK(std::log(numeric_dexp_det(p, y, w, 1e-4)) == doctest::Approx(spd_log_jacobian(p, y, w)).epsilon(1e-6));
}

TEST_CASE("cap masses are a distribution") {
  const SphereBridge b(SphereTarget::two_bump_bounded(2));
  const auto part = SphereCellPartition::standard(2);
  Point c(3);
  c << 0, 0.6, 0.8;
  double s = 0.0;
  for (double p : cap_conditional_masses(b, 0.5, c, 0.15, part, 1)) {
    CHECK(p >= 0.0);
    s += p;
  }
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("bound sweep on S^3 stays below the constants") {
  const SphereBridge b(SphereTarget::two_bump_bounded(3));
  const auto nodes = bound_nodes(b.manifold(), 5, 3);
  for (BoundQuantity q : {BoundQuantity::VNorm, BoundQuantity::GradVOp, BoundQuantity::ScoreSq}) {
    const BoundReport r = bound_sweep(b, q, std::vector<double>{0.3, 0.9}, nodes, 1);
    CHECK(r.max_ratio() <= 1.0);
    CHECK(r.flagged() == 0);
  }
  CHECK(parse_bound_quantity("grad_div_v") == BoundQuantity::GradDivV);
  CHECK_THROWS(parse_bound_quantity("nope"));
}

}
