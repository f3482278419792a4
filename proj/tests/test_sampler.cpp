#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "rfm/geometry.hpp"
#include "rfm/perturb.hpp"
#include "rfm/random.hpp"
#include "rfm/sampler.hpp"
#include "rfm/sphere_bridge.hpp"

using namespace rfm;

TEST_SUITE("sampler") {

TEST_CASE("constant and polynomial schedules end at T") {
  const StepSchedule c = constant_schedule(40, 0.9);
  CHECK(c.steps() == 40);
  CHECK(c.terminal() == doctest::Approx(0.9));
  CHECK(c.max_step() == doctest::Approx(0.9 / 40));
  const double eta = (1 / std::sqrt(1 - 0.9375) - 1) / 30;
  const StepSchedule p = make_schedule(ScheduleKind::Polynomial, eta, 0.9375);
  CHECK(p.steps() == 30);
  CHECK(p.terminal() == doctest::Approx(0.9375).epsilon(1e-12));
  for (int i = 0; i + 1 < p.steps(); ++i) CHECK(p.step(i + 1) < p.step(i));
}

TEST_CASE("polynomial steps telescope") {
  double t = 0.0;
  for (int i = 0; i < 100; ++i) t += polynomial_step(0.1, i);
  CHECK(t == doctest::Approx(1.0 - 1.0 / (11.0 * 11.0)).epsilon(1e-12));
}

TEST_CASE("Euler on a conditional field reaches the endpoint") {
  const Manifold m = Manifold::sphere(2);
  Rng rng = make_stream(1, 3);
  const Point x0 = random_point(m, rng), x1 = random_point(m, rng);
  const BridgeConditionalField f(m, x1);
  // The conditional field is exact for Euler: each step moves along the geodesic.
  const Trajectory tr = euler_sample(f, constant_schedule(10, 0.9), x0);
  CHECK((tr.points.back() - geodesic_point(m, x0, x1, 0.9)).norm() < 1e-9);
}

TEST_CASE("step guard on the sphere") {
  const GuardReport g = step_guard(Manifold::sphere(2), 3.14159265358979, 10.0);
  CHECK(g.h_max == doctest::Approx(0.025).epsilon(1e-6));
  CHECK(g.branch == GuardBranch::PositiveK);
  CHECK(check_schedule(g, constant_schedule(10, 0.9)).violated);
  CHECK_FALSE(check_schedule(g, constant_schedule(100, 0.9)).violated);
  const GuardReport spd = step_guard(Manifold::spd(2), 1.0, 1.0);
  CHECK(std::isinf(spd.terms[0]));
  CHECK(spd.branch == GuardBranch::NegativeK);
}

TEST_CASE("batch sampling is independent of the worker count") {
  const auto bridge = std::make_shared<SphereBridge>(SphereTarget::two_bump_bounded(2));
  const SpherePopulationField f(bridge, 0.9);
  BatchOptions o1, o3;
  o1.workers = 1;
  o3.workers = 3;
  o1.block = o3.block = 16;
  const auto a = batch_sample(f, constant_schedule(10, 0.9), PriorSpec::sphere_uniform(), 100, 5, o1);
  const auto b = batch_sample(f, constant_schedule(10, 0.9), PriorSpec::sphere_uniform(), 100, 5, o3);
  REQUIRE(a.terminals.size() == b.terminals.size());
  for (std::size_t i = 0; i < a.terminals.size(); ++i) CHECK(a.terminals[i] == b.terminals[i]);
}

TEST_CASE("batched Euler terminals match single trajectories") {
  const auto bridge = std::make_shared<SphereBridge>(SphereTarget::two_bump_bounded(3));
  const SpherePopulationField f(bridge, 0.9);
  const StepSchedule s = constant_schedule(25, 0.9);
  std::vector<Point> x0;
  for (std::size_t i = 0; i < 600; ++i) x0.push_back(initial_point(bridge->manifold(), PriorSpec::sphere_uniform(), 4, i));
  const auto ends = euler_terminals(f, s, x0, 2);
  for (std::size_t i = 0; i < x0.size(); i += 97)
    CHECK((ends[i] - euler_sample(f, s, x0[i]).points.back()).norm() < 1e-13);
}

TEST_CASE("dump roundtrip") {
  const auto path = (std::filesystem::temp_directory_path() / "rfm_unit_dump.rfmd").string();
  Rng rng = make_stream(2, 3);
  std::vector<Point> pts;
  for (int i = 0; i < 7; ++i) pts.push_back(random_point(Manifold::sphere(3), rng));
  write_dump(path, pts, 4);
  const auto back = read_dump(path);
  REQUIRE(back.size() == pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) CHECK(back[i] == pts[i]);
}

TEST_CASE("uniform_additive perturbation has norm eps") {
  const auto bridge = std::make_shared<SphereBridge>(SphereTarget::two_bump_bounded(3));
  const auto base = std::make_shared<SpherePopulationField>(bridge, 0.9);
  const PerturbedField pf(base, 0.05, PerturbationMode::UniformAdditive, 9);
  Rng rng = make_stream(3, 3);
  for (int i = 0; i < 20; ++i) {
    const Point x = random_point(bridge->manifold(), rng);
    CHECK(pf.perturbation(x).norm() == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(std::abs(pf.perturbation(x).dot(x)) < 1e-12);
  }
}

TEST_CASE("worker resolution") {
  CHECK(resolve_workers(3) == 3);
  CHECK(resolve_workers(0) >= 1);
}

}
