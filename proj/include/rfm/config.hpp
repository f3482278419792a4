#ifndef RFM_CONFIG_HPP_
#define RFM_CONFIG_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfm/manifold.hpp"
#include "rfm/perturb.hpp"
#include "rfm/sampler.hpp"

namespace rfm {

/// Malformed or unknown configuration entry (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class RatesMode { H, Eps, Schedule };

struct ExperimentConfig {
  std::string manifold = "sphere";  // sphere | spd
  int dim = 2;                      // d for S^d, n for SPD(n)
  std::string target = "two_bump_bounded";  // uniform | two_bump | two_bump_bounded | wishart
  double ratio_lo = 0.5;            // m1 * Vol for two_bump_bounded
  double ratio_hi = 2.0;            // M1 * Vol
  double kappa = 3.0;               // two_bump
  double floor_mass = 0.35;         // two_bump
  double dof = 1e5;                 // wishart
  std::string prior = "uniform";    // uniform | spd_gaussian
  double prior_beta = 0.0;          // 0 picks n(n+1)/2
  int bank_size = 2000;
  double ess_floor = 50.0;
  ScheduleKind schedule = ScheduleKind::Constant;
  double h = 0.0;                   // constant step; 0 means use `steps`
  int steps = 100;
  double eta = 0.0;
  double terminal = 0.9;
  double eps = 0.0;
  PerturbationMode perturbation = PerturbationMode::UniformAdditive;
  std::size_t n_samples = 10000;
  std::uint64_t seed = 1;
  int workers = 0;                  // 0 defers to the flag / environment
  GuardPolicy guard_policy = GuardPolicy::Warn;
  double guard_bound = 0.0;         // B; 0 uses the field's known bound
  double guard_lipschitz = 10.0;    // L_nabla
  RatesMode rates_mode = RatesMode::H;
  std::vector<int> sweep_steps = {50, 100, 200, 400, 800};
  std::vector<double> sweep_eps = {0.02, 0.05, 0.1, 0.2};
  std::vector<double> sweep_terminal = {0.75, 0.875, 0.9375};
  double target_tv = 0.0;           // schedule comparison; 0 picks from the pilot run
  std::size_t bound_nodes = 50;

  /// Checks cross-field constraints; throws ConfigError.
  void validate() const;
  Manifold make_manifold() const;
  /// All keys with their current values, in parse order.
  std::vector<std::pair<std::string, std::string>> entries() const;
};

/// Parses "key = value" lines; '#' starts a comment. Unknown keys, bad
/// values and duplicate keys throw ConfigError.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::string& path);

}  // namespace rfm

#endif  // RFM_CONFIG_HPP_
