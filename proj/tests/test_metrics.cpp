#include <doctest.h>

#include <cmath>

#include "rfm/errors.hpp"
#include "rfm/geometry.hpp"
#include "rfm/metrics.hpp"
#include "rfm/quadrature.hpp"
#include "rfm/random.hpp"
#include "rfm/sphere_bridge.hpp"

using namespace rfm;

TEST_SUITE("metrics") {

TEST_CASE("standard partitions have equal-area cells") {
  for (int d : {1, 2, 3, 4}) {
    const auto part = SphereCellPartition::standard(d);
    const double each = sphere_volume(d) / part.size();
    for (const auto& c : part.cells()) CHECK(c.area == doctest::Approx(each).epsilon(1e-10));
    for (std::size_t i = 0; i < part.size(); i += 7) CHECK(part.locate(part.cells()[i].center) == i);
  }
}

TEST_CASE("binned TV of exact uniform samples is small") {
  const auto part = SphereCellPartition::standard(2);
  const Manifold m = Manifold::sphere(2);
  Rng rng = make_stream(1, 4);
  std::vector<Point> xs;
  for (int i = 0; i < 50000; ++i) xs.push_back(random_point(m, rng));
  const std::vector<double> masses(part.size(), 1.0 / part.size());
  const TvEstimate tv = tv_binned(part, xs, masses, 1);
  // Expected plug-in TV for K cells and n draws is about sqrt(K / (2 pi n)).
  CHECK(tv.tv < 2 * std::sqrt(part.size() / (2 * 3.14159 * xs.size())));
  CHECK(tv.std_err > 0);
}

TEST_CASE("paired TV recovers a planted cell shift") {
  const auto part = SphereCellPartition::standard(2);
  const Manifold m = Manifold::sphere(2);
  Rng rng = make_stream(2, 4);
  std::vector<Point> a, b;
  for (int i = 0; i < 40000; ++i) {
    const Point x = random_point(m, rng);
    a.push_back(x);
    // 5% of the pairs move to the antipode, which is always another cell.
    b.push_back(i % 20 == 0 ? Point(-x) : x);
  }
  const TvEstimate tv = tv_paired(part, a, b, 3);
  CHECK(tv.raw <= 0.05 + 1e-12);
  CHECK(tv.tv == doctest::Approx(0.05).epsilon(0.1));
  CHECK(tv.tv <= tv.raw);
}

TEST_CASE("pushforward TV of a Gaussian scaling") {
  // phi(x) = a x pushes N(0, 1) to N(0, a^2); the densities cross at +-c.
  const Manifold m = Manifold::euclidean(1);
  const double a = 1.3;
  auto phi = [a](std::span<const Point> xs) {
    std::vector<Point> out;
    for (const auto& x : xs) out.push_back(a * x);
    return out;
  };
  auto normal = [](const Point& x) { return std::exp(-0.5 * x.squaredNorm()) / std::sqrt(2 * 3.141592653589793); };
  Rng rng = make_stream(5, 4);
  std::vector<Point> xs;
  for (int i = 0; i < 40000; ++i) xs.push_back(Point::Constant(1, standard_normal(rng)));
  const TvEstimate tv = pushforward_tv(m, phi, normal, normal, xs, 1e-5, 1);
  const double c = a * std::sqrt(2 * std::log(a) / (a * a - 1));
  auto cdf = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
  const double exact = 2 * (cdf(c) - cdf(c / a));
  CHECK(std::abs(tv.tv - exact) < 4 * tv.std_err);
  CHECK(tv.std_err < 0.01 * exact);
}

TEST_CASE("exact flow pushes the prior to the marginal") {
  const auto bridge = std::make_shared<SphereBridge>(SphereTarget::two_bump_bounded(2));
  const Manifold& m = bridge->manifold();
  const SpherePopulationField exact(bridge, 1.0);
  const auto tab = bridge->table(0.8);
  std::vector<Point> xs;
  for (std::size_t i = 0; i < 200; ++i) xs.push_back(initial_point(m, PriorSpec::sphere_uniform(), 6, i));
  const TvEstimate tv = pushforward_tv(
      m, [&](std::span<const Point> p) { return reference_terminals(exact, constant_schedule(64, 0.8), p, 1); },
      [](const Point&) { return 1.0 / sphere_volume(2); },
      [&](const Point& y) { return bridge->marginal_density(tab, y); }, xs, 1e-5, 1);
  CHECK(tv.tv < 1e-7);
}

TEST_CASE("rate regression recovers a planted slope") {
  RateTable table;
  Rng rng = make_stream(3, 4);
  for (int n : {50, 100, 200, 400, 800}) {
    RateRow r;
    r.n_steps = n;
    r.h = 0.9 / n;
    r.tv = 0.2 * std::pow(r.h, 1.0) * (1 + 0.01 * standard_normal(rng));
    r.std_err = 0.01 * r.tv;
    table.rows.push_back(r);
  }
  const RateFit fit = rate_regress(table, RateAxis::H, 4);
  CHECK(fit.slope == doctest::Approx(1.0).epsilon(0.03));
  CHECK(fit.r2 > 0.99);
  CHECK(fit.ci_low < fit.slope);
  CHECK(fit.ci_high > fit.slope);

  table.rows.back().tv = table.rows.back().std_err;  // not resolved
  CHECK_THROWS_AS(rate_regress(table, RateAxis::H, 4), NumericFailure);
}

TEST_CASE("rate table csv header") {
  RateTable t;
  CHECK(t.csv().rfind("N,h,eta,eps,T,d,tv_hat,std_err,n_samples,seed", 0) == 0);
}

TEST_CASE("W1 bound needs a bounded manifold") {
  CHECK(w1_from_tv(0.1, 3.14159) == doctest::Approx(0.314159));
  CHECK_THROWS_AS(w1_from_tv(0.1, std::numeric_limits<double>::infinity()), DomainError);
}

TEST_CASE("energy distance separates shifted SPD samples") {
  const Manifold m = Manifold::spd(2);
  Rng rng = make_stream(4, 4);
  std::vector<Point> a, b, c;
  for (int i = 0; i < 300; ++i) {
    a.push_back(random_point(m, rng));
    b.push_back(random_point(m, rng));
    const Point x = random_point(m, rng);
    c.push_back(exp_map(m, x, 2.0 * x));  // x scaled by e^2
  }
  CHECK(energy_distance(m, a, b, 300) < energy_distance(m, a, c, 300));
}

}
