// Acceptance run: one PASS/FAIL line per criterion.
//
//   rfm_acceptance            all criteria
//   rfm_acceptance A3 A7      a subset
//
// A3 and A4 take several minutes each on one core.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "rfm/experiments.hpp"
#include "rfm/perturb.hpp"

using namespace rfm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

Outcome from_items(const std::vector<CheckItem>& items) {
  Outcome out{true, ""};
  int failed = 0;
  std::string worst;
  for (const auto& c : items) {
    if (c.pass) continue;
    out.pass = false;
    if (failed++ == 0) worst = c.name + " " + fmt(c.measured) + " > " + fmt(c.tolerance);
  }
  out.detail = std::to_string(items.size()) + " checks";
  if (failed) out.detail += ", " + std::to_string(failed) + " failed, first: " + worst;
  return out;
}

int workers() { return resolve_workers(0); }

ExperimentConfig s3_config() {
  ExperimentConfig cfg;
  cfg.dim = 3;
  cfg.target = "two_bump_bounded";
  cfg.terminal = 0.9;
  cfg.n_samples = 20000;
  cfg.seed = 2024;
  return cfg;
}

std::string table_detail(const RateRun& run) {
  std::ostringstream os;
  for (const auto& r : run.table.rows)
    os << "\n    N=" << r.n_steps << " eps=" << fmt(r.eps) << " tv=" << fmt(r.tv)
       << " se=" << fmt(r.std_err);
  return os.str();
}

Outcome a1() {
  return from_items(geometry_suite(1000, 11));
}

Outcome a2() {
  return from_items(density_suite(12, workers(), 4000000));
}

Outcome a3() {
  ExperimentConfig cfg = s3_config();
  cfg.sweep_steps = {50, 100, 200, 400, 800};
  const RateRun run = run_h_rate(cfg, workers());
  bool above = run.table.rows.size() == cfg.sweep_steps.size();
  for (const auto& r : run.table.rows) above = above && r.tv >= 3 * r.std_err;
  Outcome out;
  if (!run.fit_ok) {
    out.detail = "fit unavailable: " + run.fit_error;
  } else {
    out.pass = run.fit.slope >= 0.8 && run.fit.slope <= 1.2 && run.fit.r2 >= 0.95 && above;
    out.detail = "slope " + fmt(run.fit.slope) + " in [0.8, 1.2], r2 " + fmt(run.fit.r2) +
                 " >= 0.95, all tv >= 3 se: " + (above ? "yes" : "no");
  }
  out.detail += table_detail(run);
  return out;
}

Outcome a4() {
  ExperimentConfig cfg = s3_config();
  cfg.steps = 1600;
  cfg.n_samples = 10000;
  cfg.sweep_eps = {0.02, 0.05, 0.1, 0.2};
  cfg.perturbation = PerturbationMode::UniformAdditive;
  const RateRun run = run_eps_rate(cfg, workers());
  Outcome out;
  if (!run.fit_ok) {
    out.detail = "fit unavailable: " + run.fit_error;
  } else {
    out.pass = run.fit.slope >= 0.8 && run.fit.slope <= 1.2;
    out.detail = "slope " + fmt(run.fit.slope) + " in [0.8, 1.2]";
  }
  out.detail += table_detail(run);
  return out;
}

Outcome a5() {
  ExperimentConfig cfg = s3_config();
  cfg.n_samples = 10000;
  cfg.sweep_terminal = {0.75, 0.875, 0.9375};
  cfg.target_tv = 1e-3;
  Outcome out;
  try {
    const ScheduleComparison sc = run_schedule_comparison(cfg, workers());
    out.pass = sc.fit_ok && std::abs(sc.fit.slope - 1.0) <= 0.3;
    out.detail = "exponent " + fmt(sc.fit.slope) + " in [0.7, 1.3]";
    for (const auto& r : sc.rows)
      out.detail += "\n    T=" + fmt(r.terminal) + " N_const=" + fmt(r.n_constant) +
                    " N_poly=" + fmt(r.n_polynomial) + " ratio=" + fmt(r.ratio);
  } catch (const std::exception& e) {
    out.detail = std::string("comparison failed: ") + e.what();
  }
  return out;
}

Outcome a6() {
  auto items = bounds_suite(3, 50, workers(), nullptr);
  const auto d4 = bounds_suite(4, 50, workers(), nullptr);
  items.insert(items.end(), d4.begin(), d4.end());
  Outcome out = from_items(items);
  double worst = 0.0;
  for (const auto& c : items) worst = std::max(worst, c.measured);
  out.detail += ", max ratio " + fmt(worst) + " <= 1";
  return out;
}

Outcome a7() {
  return from_items(guard_suite(1000, 13));
}

Outcome a8() {
  ExperimentConfig cfg;
  cfg.dim = 2;
  const auto bridge = make_sphere_bridge(cfg);
  const auto v = std::make_shared<SpherePopulationField>(bridge, 1.0);
  const auto vt = with_perturbation(v, 0.1, PerturbationMode::UniformAdditive, 14);
  Lemma1Options opt;
  opt.workers = workers();
  Outcome out{true, ""};
  for (double t : {0.25, 0.5, 0.75}) {
    const Lemma1Result r = lemma1_diagnostic(*v, *vt, *bridge, t, opt);
    out.pass = out.pass && r.holds;
    out.detail += "\n    t=" + fmt(t) + " lhs " + fmt(r.lhs_fd) + " (se " + fmt(r.lhs_se) +
                  ") <= rhs " + fmt(r.rhs_bound) + " (se " + fmt(r.rhs_se) + "): " +
                  (r.holds ? "yes" : "no");
  }
  return out;
}

Outcome a9() {
  ExperimentConfig cfg;
  cfg.manifold = "spd";
  cfg.dim = 2;
  cfg.target = "wishart";
  cfg.prior = "spd_gaussian";
  cfg.steps = 50;
  cfg.n_samples = 2000;
  cfg.seed = 15;
  Outcome out;
  const SpdRun run = run_spd_pipeline(cfg, workers());
  const bool completed = run.completed + run.failures == cfg.n_samples && run.completed > 0;
  const SpdTrend trend = run_spd_trend(cfg, {0.5, 0.6, 0.7, 0.8, 0.9}, 200, workers());
  out.pass = completed && std::abs(trend.fit.slope - 1.0) <= 0.4;
  out.detail = "completed " + std::to_string(run.completed) + "/" + std::to_string(cfg.n_samples) +
               ", slope " + fmt(trend.fit.slope) + " in [0.6, 1.4] (r2 " + fmt(trend.fit.r2) +
               "), binned tv " + fmt(run.tv) + ", min ess " + fmt(run.min_ess);
  return out;
}

Outcome a10() {
  const auto dir = std::filesystem::temp_directory_path() / "rfm_acceptance_det";
  return from_items(determinism_suite({1, 4, 8}, dir.string(), 4000, 50));
}

}  // namespace

int main(int argc, char** argv) {
  setvbuf(stdout, nullptr, _IONBF, 0);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"A1", a1}, {"A2", a2}, {"A3", a3}, {"A4", a4}, {"A5", a5},
      {"A6", a6}, {"A7", a7}, {"A8", a8}, {"A9", a9}, {"A10", a10}};
  std::vector<std::string> wanted(argv + 1, argv + argc);
  int failed = 0, run = 0;
  for (const auto& [name, fn] : criteria) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), name) == wanted.end()) continue;
    ++run;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %s  %s  [%.1fs]\n", name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    failed += !o.pass;
  }
  if (run == 0) {
    std::fprintf(stderr, "no criterion matched\n");
    return 2;
  }
  return failed ? 1 : 0;
}
