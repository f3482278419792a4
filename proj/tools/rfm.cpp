// Command-line front end: verify | sample | rates | bounds.
#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>

#include "rfm/errors.hpp"
#include "rfm/experiments.hpp"

namespace {

// --workers wins over the config file, which wins over RFM_BENCH_WORKERS.
int pick_workers(std::optional<int> flag, const rfm::ExperimentConfig& cfg) {
  if (flag) return *flag;
  if (cfg.workers > 0) return cfg.workers;
  if (const char* env = std::getenv("RFM_BENCH_WORKERS")) {
    char* end = nullptr;
    const long w = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || w < 0)
      throw rfm::ConfigError("RFM_BENCH_WORKERS must be a non-negative integer");
    return static_cast<int>(w);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Riemannian flow matching sampler"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  app.add_option("--config", config_path, "key = value configuration file");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed, "overrides the configured seed");
  app.add_option("--workers", workers, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);

  const auto verify = app.add_subcommand("verify", "invariant checks; writes verify.stamp on success");
  const auto sample = app.add_subcommand("sample", "draw samples and write a dump plus manifest");
  const auto rates = app.add_subcommand("rates", "TV rate sweeps (needs a passing verify)");
  const auto bounds = app.add_subcommand("bounds", "regularity bound sweep");
  for (auto* sub : {verify, sample, rates, bounds}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    rfm::ExperimentConfig cfg = config_path.empty() ? rfm::ExperimentConfig{} : rfm::load_config(config_path);
    if (seed) cfg.seed = *seed;
    rfm::CommandOptions opt;
    opt.out_dir = out_dir;
    opt.workers = rfm::resolve_workers(pick_workers(workers, cfg));
    if (verify->parsed()) return rfm::cmd_verify(cfg, opt, std::cout);
    if (sample->parsed()) return rfm::cmd_sample(cfg, opt, std::cout);
    if (rates->parsed()) return rfm::cmd_rates(cfg, opt, std::cout);
    return rfm::cmd_bounds(cfg, opt, std::cout);
  } catch (const rfm::ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const rfm::InvalidArgument& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
