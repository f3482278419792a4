#include <doctest.h>

#include "rfm/config.hpp"

using namespace rfm;

TEST_SUITE("config") {

TEST_CASE("defaults validate") {
  CHECK_NOTHROW(ExperimentConfig{}.validate());
}

TEST_CASE("parse keys, lists and comments") {
  const auto cfg = parse_config(
      "# comment\n"
      "dim = 3\n"
      "T = 0.875   # terminal time\n"
      "schedule = polynomial\n"
      "eta = 0.05\n"
      "sweep_steps = 10, 20,40\n"
      "perturbation = mean_square\n");
  CHECK(cfg.dim == 3);
  CHECK(cfg.terminal == 0.875);
  CHECK(cfg.schedule == ScheduleKind::Polynomial);
  CHECK(cfg.sweep_steps == std::vector<int>{10, 20, 40});
  CHECK(cfg.perturbation == PerturbationMode::MeanSquare);
}

TEST_CASE("malformed input") {
  CHECK_THROWS_AS(parse_config("unknown = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("dim = 2\ndim = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("dim = two\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("dim\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("T = 1.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("schedule = polynomial\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("manifold = spd\ntarget = wishart\nprior = spd_gaussian\n"
                               "perturbation = uniform_rotation\neps = 0.1\n"),
                  ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/rfm.cfg"), ConfigError);
}

TEST_CASE("entries roundtrip through the parser") {
  ExperimentConfig a;
  a.dim = 4;
  a.sweep_eps = {0.1, 0.3};
  std::string text;
  for (const auto& [k, v] : a.entries()) text += k + " = " + v + "\n";
  const auto b = parse_config(text);
  CHECK(b.entries() == a.entries());
}

}
