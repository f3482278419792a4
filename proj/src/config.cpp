#include "rfm/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace rfm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config: bad value for '" + key + "': '" + v + "'");
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, trim(item)));
  if (out.empty()) throw ConfigError("config: empty list for '" + key + "'");
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_floating_point_v<T>)
      s += format_double(v[i]);
    else
      s += std::to_string(v[i]);
  }
  return s;
}

std::string rates_mode_name(RatesMode m) {
  switch (m) {
    case RatesMode::H: return "h";
    case RatesMode::Eps: return "eps";
    case RatesMode::Schedule: return "schedule";
  }
  return "h";
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& v)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto str = [](std::string ExperimentConfig::*f) {
      return [f](ExperimentConfig& c, const std::string&, const std::string& v) { c.*f = v; };
    };
    auto dbl = [](double ExperimentConfig::*f) {
      return [f](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.*f = parse_number<double>(k, v);
      };
    };
    auto integer = [](int ExperimentConfig::*f) {
      return [f](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.*f = parse_number<int>(k, v);
      };
    };
    auto size = [](std::size_t ExperimentConfig::*f) {
      return [f](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.*f = parse_number<std::size_t>(k, v);
      };
    };
    t["manifold"] = str(&ExperimentConfig::manifold);
    t["dim"] = integer(&ExperimentConfig::dim);
    t["target"] = str(&ExperimentConfig::target);
    t["ratio_lo"] = dbl(&ExperimentConfig::ratio_lo);
    t["ratio_hi"] = dbl(&ExperimentConfig::ratio_hi);
    t["kappa"] = dbl(&ExperimentConfig::kappa);
    t["floor_mass"] = dbl(&ExperimentConfig::floor_mass);
    t["dof"] = dbl(&ExperimentConfig::dof);
    t["prior"] = str(&ExperimentConfig::prior);
    t["prior_beta"] = dbl(&ExperimentConfig::prior_beta);
    t["bank_size"] = integer(&ExperimentConfig::bank_size);
    t["ess_floor"] = dbl(&ExperimentConfig::ess_floor);
    t["schedule"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      if (v == "constant")
        c.schedule = ScheduleKind::Constant;
      else if (v == "polynomial")
        c.schedule = ScheduleKind::Polynomial;
      else
        throw ConfigError("config: bad value for '" + k + "': '" + v + "'");
    };
    t["h"] = dbl(&ExperimentConfig::h);
    t["steps"] = integer(&ExperimentConfig::steps);
    t["eta"] = dbl(&ExperimentConfig::eta);
    t["T"] = dbl(&ExperimentConfig::terminal);
    t["eps"] = dbl(&ExperimentConfig::eps);
    t["perturbation"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      try {
        c.perturbation = parse_perturbation_mode(v);
      } catch (const std::exception&) {
        throw ConfigError("config: bad value for '" + k + "': '" + v + "'");
      }
    };
    t["n_samples"] = size(&ExperimentConfig::n_samples);
    t["seed"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.seed = parse_number<std::uint64_t>(k, v);
    };
    t["workers"] = integer(&ExperimentConfig::workers);
    t["guard_policy"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      if (v == "fail")
        c.guard_policy = GuardPolicy::Fail;
      else if (v == "warn")
        c.guard_policy = GuardPolicy::Warn;
      else
        throw ConfigError("config: bad value for '" + k + "': '" + v + "'");
    };
    t["guard_bound"] = dbl(&ExperimentConfig::guard_bound);
    t["guard_lipschitz"] = dbl(&ExperimentConfig::guard_lipschitz);
    t["rates_mode"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      if (v == "h")
        c.rates_mode = RatesMode::H;
      else if (v == "eps")
        c.rates_mode = RatesMode::Eps;
      else if (v == "schedule")
        c.rates_mode = RatesMode::Schedule;
      else
        throw ConfigError("config: bad value for '" + k + "': '" + v + "'");
    };
    t["sweep_steps"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.sweep_steps = parse_list<int>(k, v);
    };
    t["sweep_eps"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.sweep_eps = parse_list<double>(k, v);
    };
    t["sweep_terminal"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.sweep_terminal = parse_list<double>(k, v);
    };
    t["target_tv"] = dbl(&ExperimentConfig::target_tv);
    t["bound_nodes"] = size(&ExperimentConfig::bound_nodes);
    return t;
  }();
  return table;
}

}  // namespace

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
  if (manifold != "sphere" && manifold != "spd") fail("manifold must be sphere or spd");
  if (manifold == "sphere" && (dim < 1 || dim > 6)) fail("sphere dim must lie in [1, 6]");
  if (manifold == "spd" && (dim < 2 || dim > 6)) fail("spd dim must lie in [2, 6]");
  if (manifold == "sphere" && target != "uniform" && target != "two_bump" && target != "two_bump_bounded")
    fail("sphere target must be uniform, two_bump or two_bump_bounded");
  if (manifold == "spd" && target != "wishart") fail("spd target must be wishart");
  if (manifold == "sphere" && prior != "uniform") fail("sphere prior must be uniform");
  if (manifold == "spd" && prior != "spd_gaussian") fail("spd prior must be spd_gaussian");
  if (!(terminal > 0 && terminal < 1)) fail("T must lie in (0, 1)");
  if (!(eps >= 0)) fail("eps must be non-negative");
  if (schedule == ScheduleKind::Constant && h < 0) fail("h must be positive");
  if (schedule == ScheduleKind::Constant && h == 0 && steps < 1) fail("steps must be positive");
  if (schedule == ScheduleKind::Polynomial && !(eta > 0)) fail("polynomial schedule needs eta > 0");
  if (n_samples < 1) fail("n_samples must be positive");
  if (workers < 0) fail("workers must be non-negative");
  if (!(ratio_lo > 0 && ratio_lo < 1 && ratio_hi > 1)) fail("need 0 < ratio_lo < 1 < ratio_hi");
  if (!(dof > 0)) fail("dof must be positive");
  if (bank_size < 10) fail("bank_size must be at least 10");
  for (int n : sweep_steps)
    if (n < 1) fail("sweep_steps entries must be positive");
  for (double e : sweep_eps)
    if (!(e >= 0)) fail("sweep_eps entries must be non-negative");
  for (double t : sweep_terminal)
    if (!(t > 0 && t < 1)) fail("sweep_terminal entries must lie in (0, 1)");
  if (manifold == "spd" && perturbation == PerturbationMode::UniformRotation && eps > 0)
    fail("uniform_rotation perturbation is sphere-only");
}

Manifold ExperimentConfig::make_manifold() const {
  return manifold == "spd" ? Manifold::spd(dim) : Manifold::sphere(dim);
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::entries() const {
  return {
      {"manifold", manifold},
      {"dim", std::to_string(dim)},
      {"target", target},
      {"ratio_lo", format_double(ratio_lo)},
      {"ratio_hi", format_double(ratio_hi)},
      {"kappa", format_double(kappa)},
      {"floor_mass", format_double(floor_mass)},
      {"dof", format_double(dof)},
      {"prior", prior},
      {"prior_beta", format_double(prior_beta)},
      {"bank_size", std::to_string(bank_size)},
      {"ess_floor", format_double(ess_floor)},
      {"schedule", to_string(schedule)},
      {"h", format_double(h)},
      {"steps", std::to_string(steps)},
      {"eta", format_double(eta)},
      {"T", format_double(terminal)},
      {"eps", format_double(eps)},
      {"perturbation", to_string(perturbation)},
      {"n_samples", std::to_string(n_samples)},
      {"seed", std::to_string(seed)},
      {"workers", std::to_string(workers)},
      {"guard_policy", guard_policy == GuardPolicy::Fail ? "fail" : "warn"},
      {"guard_bound", format_double(guard_bound)},
      {"guard_lipschitz", format_double(guard_lipschitz)},
      {"rates_mode", rates_mode_name(rates_mode)},
      {"sweep_steps", join(sweep_steps)},
      {"sweep_eps", join(sweep_eps)},
      {"sweep_terminal", join(sweep_terminal)},
      {"target_tv", format_double(target_tv)},
      {"bound_nodes", std::to_string(bound_nodes)},
  };
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end())
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second)
      throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    if (value.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty value for '" + key + "'");
    it->second(base, key, value);
  }
  base.validate();
  return base;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

}  // namespace rfm
