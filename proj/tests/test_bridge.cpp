#include <doctest.h>

#include <cmath>

#include "rfm/geometry.hpp"
#include "rfm/metrics.hpp"
#include "rfm/quadrature.hpp"
#include "rfm/random.hpp"
#include "rfm/spd_bridge.hpp"
#include "rfm/sphere_bridge.hpp"

using namespace rfm;

TEST_SUITE("bridge") {

TEST_CASE("two_bump_bounded meets its density bounds") {
  for (int d : {2, 3, 4}) {
    const SphereTarget tg = SphereTarget::two_bump_bounded(d);
    const double vol = sphere_volume(d);
    CHECK(tg.m1() * vol == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(tg.big_m1() * vol == doctest::Approx(2.0).epsilon(1e-6));
  }
}

TEST_CASE("target integrates to one") {
  const SphereTarget tg = SphereTarget::two_bump(2);
  const auto part = SphereCellPartition::standard(2);
  double s = 0.0;
  for (double m : part.masses([&](const Point& x) { return tg.density(x); }, 8)) s += m;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("uniform target gives zero velocity") {
  const SphereBridge b(SphereTarget::uniform(3));
  Rng rng = make_stream(1, 2);
  for (int i = 0; i < 10; ++i) CHECK(b.velocity(0.6, random_point(b.manifold(), rng)).norm() < 1e-10);
}

TEST_CASE("marginal density at t = 0 is uniform") {
  const SphereBridge b(SphereTarget::two_bump_bounded(3));
  Rng rng = make_stream(2, 2);
  for (int i = 0; i < 10; ++i)
    CHECK(b.marginal_density(0.0, random_point(b.manifold(), rng)) ==
          doctest::Approx(1.0 / sphere_volume(3)).epsilon(1e-8));
}

// Brute force: v(t, x) = E[log_x(X1) / (1 - t) | X_t = x] by cell quadrature
// over X1 with the conditional density p(x | x1) = J_t(d(x, x1)) / Vol.
TEST_CASE("velocity matches direct quadrature on S^3") {
  const SphereBridge b(SphereTarget::two_bump_bounded(3));
  const Manifold& m = b.manifold();
  const SphereCellPartition part(3, {8, 8, 12});
  Rng rng = make_stream(3, 2);
  for (double t : {0.3, 0.8}) {
    const Point x = random_point(m, rng);
    auto weight = [&](const Point& x1) {
      return b.target().density(x1) * sphere_jacobian_jt(3, t, distance(m, x, x1));
    };
    double z = 0.0;
    for (double w : part.masses(weight, 16)) z += w;
    Eigen::VectorXd v = Eigen::VectorXd::Zero(4);
    for (int k = 0; k < 4; ++k) {
      const auto comp = part.masses(
          [&](const Point& x1) {
            if (distance(m, x, x1) > 3.14159) return 0.0;
            return weight(x1) * log_map(m, x, x1)[k] / (1 - t);
          },
          16);
      for (double c : comp) v[k] += c;
    }
    v /= z;
    CHECK((b.velocity(t, x) - v).norm() < 2e-5);
    CHECK(b.marginal_density(t, x) == doctest::Approx(z / sphere_volume(3)).epsilon(1e-6));
  }
}

TEST_CASE("score is the gradient of log p") {
  const SphereBridge b(SphereTarget::two_bump_bounded(2));
  const Manifold& m = b.manifold();
  Rng rng = make_stream(4, 2);
  for (int i = 0; i < 5; ++i) {
    const Point x = random_point(m, rng);
    const Eigen::VectorXd fd = gradient_fd(m, [&](const Point& y) { return std::log(b.marginal_density(0.7, y)); }, x, 1e-5);
    CHECK((b.score(0.7, x) - fd).norm() < 1e-6 * (1 + fd.norm()));
  }
}

TEST_CASE("SPD log-Jacobian is non-negative and vanishes at v = 0") {
  const Manifold m = Manifold::spd(3);
  Rng rng = make_stream(5, 2);
  const Point x = random_point(m, rng);
  CHECK(spd_log_jacobian(m, x, Eigen::VectorXd::Zero(9)) == doctest::Approx(0.0));
  for (int i = 0; i < 20; ++i) CHECK(spd_log_jacobian(m, x, random_tangent(m, x, rng)) >= 0.0);
}

TEST_CASE("SPD population field is finite along exact paths") {
  const Manifold m = Manifold::spd(2);
  const SpdTarget target(2, 50.0);
  const PriorSpec prior = PriorSpec::spd_gaussian(2);
  const SpdPopulationField field(target, prior, 200, 7, 1.0, 20.0);
  Rng rng = make_stream(6, 2);
  for (int i = 0; i < 10; ++i) {
    const Point x = geodesic_point(m, prior.sample(m, rng), target.sample(rng), 0.5);
    const Eigen::VectorXd v = field(0.5, x);
    CHECK(v.allFinite());
    CHECK(field.ess(0.5, x) > 0.0);
  }
}

}
