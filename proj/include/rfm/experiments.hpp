#ifndef RFM_EXPERIMENTS_HPP_
#define RFM_EXPERIMENTS_HPP_

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "rfm/config.hpp"
#include "rfm/metrics.hpp"
#include "rfm/oracle.hpp"
#include "rfm/sampler.hpp"
#include "rfm/spd_bridge.hpp"
#include "rfm/sphere_bridge.hpp"

namespace rfm {

std::shared_ptr<const SphereBridge> make_sphere_bridge(const ExperimentConfig& cfg);
PriorSpec make_prior(const ExperimentConfig& cfg);
StepSchedule make_schedule(const ExperimentConfig& cfg, double terminal);

/// v, or v + eps u when eps > 0.
std::shared_ptr<const VelocityField> with_perturbation(std::shared_ptr<const VelocityField> base,
                                                       double eps, PerturbationMode mode,
                                                       std::uint64_t seed);

/// TV between the law of Euler terminals and the exact marginal at the
/// terminal time, from a fixed set of prior draws (see pushforward_tv).
class FlowTv {
 public:
  FlowTv(std::shared_ptr<const SphereBridge> bridge, std::size_t n, std::uint64_t seed,
         double terminal);

  TvEstimate tv(const VelocityField& field, const StepSchedule& schedule, int workers) const;

  double terminal() const { return terminal_; }
  std::size_t size() const { return x0_.size(); }

 private:
  std::shared_ptr<const SphereBridge> bridge_;
  double terminal_;
  SphereBridge::Table table_;
  std::vector<Point> x0_;
};

struct RateRun {
  RateTable table;
  RateFit fit;
  bool fit_ok = false;
  std::string fit_error;
  RunManifest manifest;
};

/// TV against h over cfg.sweep_steps at eps = cfg.eps.
RateRun run_h_rate(const ExperimentConfig& cfg, int workers);
/// TV against eps over cfg.sweep_eps at N = cfg.steps.
RateRun run_eps_rate(const ExperimentConfig& cfg, int workers);

struct ScheduleRow {
  double terminal = 0.0;
  double n_constant = 0.0;    // steps to reach the target TV (log-interpolated)
  double n_polynomial = 0.0;
  double ratio = 0.0;
  std::vector<std::pair<int, double>> constant_trace;    // (N, tv)
  std::vector<std::pair<int, double>> polynomial_trace;  // (N, tv)
};

struct ScheduleComparison {
  double target_tv = 0.0;
  std::vector<ScheduleRow> rows;
  RateFit fit;  // log ratio against log 1/(1-T)
  bool fit_ok = false;
  RunManifest manifest;
  std::string csv() const;
};

ScheduleComparison run_schedule_comparison(const ExperimentConfig& cfg, int workers);

struct SpdTrend {
  std::vector<double> times;
  std::vector<double> mean_grad;  // E ||nabla v(t, X_t)||_op
  std::vector<double> min_ess;
  RateFit fit;                    // log E||nabla v|| against log 1/(1-t)
  std::string csv() const;
};

SpdTrend run_spd_trend(const ExperimentConfig& cfg, const std::vector<double>& times,
                       std::size_t samples, int workers);

struct SpdRun {
  std::size_t completed = 0;
  std::size_t failures = 0;
  double min_ess = 0.0;
  double tv = 0.0;             // n = 2 only
  double tv_se = 0.0;
  double energy = 0.0;
  RunManifest manifest;
};

/// End-to-end SPD sampling with the importance-sampled population field.
SpdRun run_spd_pipeline(const ExperimentConfig& cfg, int workers);

struct CheckItem {
  std::string name;
  double measured = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

std::vector<CheckItem> geometry_suite(int cases, std::uint64_t seed);
/// `rejection_draws` = 0 skips the rejection-sampling histogram.
std::vector<CheckItem> density_suite(std::uint64_t seed, int workers, std::size_t rejection_draws);
std::vector<CheckItem> guard_suite(int cases, std::uint64_t seed);
/// Byte-compares sample dumps across worker counts and repeated runs.
std::vector<CheckItem> determinism_suite(const std::vector<int>& workers, const std::string& dir,
                                         std::size_t n, int steps);
/// Appends every swept row to `all` when non-null.
std::vector<CheckItem> bounds_suite(int d, std::size_t nodes, int workers, BoundReport* all);

/// Invariant suite across modules. Each item compares a measured worst case
/// with its tolerance.
std::vector<CheckItem> run_verify_suite(const ExperimentConfig& cfg, int workers);

/// Content hash of the running executable.
std::string build_id();

struct CommandOptions {
  std::string out_dir = ".";
  int workers = 1;
};

int cmd_verify(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& log);
int cmd_sample(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& log);
int cmd_rates(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& log);
int cmd_bounds(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& log);

}  // namespace rfm

#endif  // RFM_EXPERIMENTS_HPP_
