#include "rfm/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "rfm/errors.hpp"
#include "rfm/geometry.hpp"

namespace rfm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_terminal(double terminal) {
  if (!(terminal < 1.0)) throw DomainError("terminal time must be < 1");
  if (!(terminal > 0.0)) throw InvalidArgument("terminal time must be > 0");
}

}  // namespace

std::string to_string(ScheduleKind k) { return k == ScheduleKind::Constant ? "constant" : "polynomial"; }

double StepSchedule::max_step() const {
  double h = 0.0;
  for (int i = 0; i < steps(); ++i) h = std::max(h, step(i));
  return h;
}

StepSchedule make_schedule(ScheduleKind kind, double param, double terminal) {
  require_terminal(terminal);
  StepSchedule s;
  s.kind = kind;
  s.param = param;
  if (kind == ScheduleKind::Constant) {
    if (!(param > 0.0)) throw InvalidArgument("constant schedule needs h > 0");
    const int n = static_cast<int>(std::ceil(terminal / param - 1e-9));
    for (int k = 0; k < n; ++k) s.times.push_back(k * param);
  } else {
    if (!(param > 0.0)) throw InvalidArgument("polynomial schedule needs eta > 0");
    const int n = static_cast<int>(std::ceil((1.0 / std::sqrt(1.0 - terminal) - 1.0) / param - 1e-9));
    for (int i = 0; i < n; ++i) {
      const double a = 1.0 + param * i;
      s.times.push_back(1.0 - 1.0 / (a * a));
    }
  }
  s.times.push_back(terminal);
  return s;
}

StepSchedule constant_schedule(int steps, double terminal) {
  require_terminal(terminal);
  if (steps < 1) throw InvalidArgument("schedule needs at least one step");
  StepSchedule s;
  s.kind = ScheduleKind::Constant;
  s.param = terminal / steps;
  for (int k = 0; k < steps; ++k) s.times.push_back(terminal * k / steps);
  s.times.push_back(terminal);
  return s;
}

double polynomial_step(double eta, int i) {
  const double a = 1.0 + eta * i, b = 1.0 + eta * (i + 1);
  return eta * (2.0 + eta * (2.0 * i + 1.0)) / (a * a * b * b);
}

std::string to_string(GuardBranch b) {
  switch (b) {
    case GuardBranch::PositiveK: return "positive_k";
    case GuardBranch::NegativeK: return "negative_k";
    case GuardBranch::ZeroK: return "zero_k";
  }
  return "unknown";
}

GuardReport step_guard(const Manifold& m, double bound, double l_grad) {
  if (!(bound > 0.0)) throw InvalidArgument("guard needs B > 0");
  if (!(l_grad >= 0.0)) throw InvalidArgument("guard needs L_grad >= 0");
  GuardReport g;
  g.bound = bound;
  g.l_grad = l_grad;
  g.l_r = m.l_r();
  g.k_min = m.k_min();
  g.inj = m.inj_radius();
  g.terms[0] = std::isinf(g.inj) ? kInf : g.inj / bound;
  g.terms[1] = l_grad > 0.0 ? 1.0 / (4.0 * l_grad) : kInf;
  const double b2 = bound * bound;
  auto radical = [&](double denom) {
    return denom > 0.0 && g.l_r > 0.0 ? std::sqrt(3.0 / (4.0 * b2 * g.l_r * denom)) : kInf;
  };
  const double k = g.k_min;
  if (k > 0.0) {
    g.branch = GuardBranch::PositiveK;
    g.terms[2] = radical(2.0 + 2.0 * l_grad * std::max(1.0 / std::sqrt(k), 1.0));
  } else if (k < 0.0) {
    g.branch = GuardBranch::NegativeK;
    const double r = std::sqrt(-k);
    g.terms[2] = radical(2.0 * std::sinh(r) / r + 4.0 * (std::cosh(r) - 1.0) / (-k) * l_grad);
  } else {
    g.branch = GuardBranch::ZeroK;
    // h appears inside the radical; the map h -> radical(2 + h L) is
    // decreasing, so iterate to its fixed point from h = 0.
    double h = radical(2.0);
    for (int i = 0; i < 200 && std::isfinite(h); ++i) {
      const double next = radical(2.0 + h * l_grad);
      if (std::abs(next - h) <= 1e-15 * h) {
        h = next;
        break;
      }
      h = next;
    }
    g.terms[2] = h;
  }
  g.h_max = std::min({g.terms[0], g.terms[1], g.terms[2]});
  return g;
}

GuardReport check_schedule(GuardReport report, const StepSchedule& schedule) {
  report.h_checked = schedule.max_step();
  report.violated = !(report.h_checked < report.h_max);
  return report;
}

std::string describe(const GuardReport& g) {
  std::ostringstream os;
  os << "guard branch=" << to_string(g.branch) << " B=" << g.bound << " L_grad=" << g.l_grad
     << " L_R=" << g.l_r << " K_min=" << g.k_min << " R=" << g.inj << " terms=(" << g.terms[0]
     << ", " << g.terms[1] << ", " << g.terms[2] << ") h_max=" << g.h_max
     << " h=" << g.h_checked << (g.violated ? " VIOLATED" : " ok");
  return os.str();
}

Trajectory euler_sample(const VelocityField& field, const StepSchedule& schedule, const Point& x0,
                        std::uint64_t seed) {
  const Manifold& m = field.manifold();
  Trajectory tr;
  tr.schedule = schedule;
  tr.seed = seed;
  tr.points.reserve(schedule.times.size());
  tr.points.push_back(x0);
  for (int k = 0; k < schedule.steps(); ++k) {
    Eigen::VectorXd v;
    try {
      v = field(schedule.times[k], tr.points.back());
    } catch (const std::exception& e) {
      throw NumericFailure("step " + std::to_string(k) + ": " + e.what());
    }
    tr.points.push_back(exp_map(m, tr.points.back(), schedule.step(k) * v));
    tr.velocities.push_back(std::move(v));
  }
  return tr;
}

std::vector<Point> euler_terminals(const VelocityField& field, const StepSchedule& schedule,
                                   std::span<const Point> x0, int workers) {
  const Manifold& m = field.manifold();
  std::vector<Point> out(x0.begin(), x0.end());
  const std::size_t block = 512;
  const std::size_t blocks = (out.size() + block - 1) / block;
  parallel_for(blocks, workers, [&](std::size_t bi) {
    const std::size_t lo = bi * block, hi = std::min(out.size(), lo + block);
    std::span<Point> x(out.data() + lo, hi - lo);
    std::vector<Eigen::VectorXd> v(x.size());
    for (int k = 0; k < schedule.steps(); ++k) {
      field.evaluate_many(schedule.times[k], x, v);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = exp_map(m, x[i], schedule.step(k) * v[i]);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Interpolated field

int InterpolatedField::step_index(double t) const {
  const auto& ts = schedule_.times;
  if (!(t >= ts.front() && t < ts.back())) throw DomainError("time outside the schedule");
  const auto it = std::upper_bound(ts.begin(), ts.end(), t);
  return static_cast<int>(it - ts.begin()) - 1;
}

Point InterpolatedField::preimage(double t, const Point& x) const {
  const Manifold& m = manifold();
  const int k = step_index(t);
  const double tk = schedule_.times[k];
  const double tau = t - tk;
  if (tau == 0.0) return x;
  auto forward = [&](const Point& z) { return exp_map(m, z, tau * (*vhat_)(tk, z)); };
  Point z = x;
  Point y = forward(z);
  double res = distance(m, y, x);
  double damping = 1.0;
  for (int it = 0; it < max_iter_; ++it) {
    if (res <= tol_) return z;
    // Move z by the residual seen at y, carried back to z; halve the step
    // whenever the residual does not decrease.
    const Point zn = exp_map(m, z, damping * parallel_transport(m, y, z, log_map(m, y, x)));
    const Point yn = forward(zn);
    const double rn = distance(m, yn, x);
    if (rn < res) {
      z = zn, y = yn, res = rn;
    } else {
      damping *= 0.5;
    }
  }
  const double best = res;
  std::ostringstream msg;
  msg << "interpolated field: preimage not found, residual " << best << " at t=" << t;
  throw NumericFailure(msg.str());
}

Eigen::VectorXd InterpolatedField::operator()(double t, const Point& x) const {
  const int k = step_index(t);
  const double tk = schedule_.times[k];
  if (t == tk) return (*vhat_)(tk, x);
  const Point z = preimage(t, x);
  return parallel_transport(manifold(), z, x, (*vhat_)(tk, z));
}

// ---------------------------------------------------------------------------
// Manifest and dumps

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

void RunManifest::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  entries_.emplace_back(key, value);
}

void RunManifest::set(const std::string& key, double value) { set(key, format_double(value)); }
void RunManifest::set(const std::string& key, std::int64_t value) { set(key, std::to_string(value)); }
void RunManifest::set(const std::string& key, std::uint64_t value) { set(key, std::to_string(value)); }

const std::string* RunManifest::find(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return &v;
  return nullptr;
}

std::string RunManifest::str() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
  return out;
}

void RunManifest::write(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << str();
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

static_assert(std::endian::native == std::endian::little, "dump format assumes little-endian hosts");

}  // namespace

void write_dump(const std::string& path, const std::vector<Point>& points, int ambient_dim) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write("RFMD", 4);
  put_u32(f, 1);
  put_u32(f, static_cast<std::uint32_t>(ambient_dim));
  put_u32(f, static_cast<std::uint32_t>(points.size()));
  for (const auto& p : points) {
    if (p.size() != ambient_dim) throw InvalidArgument("dump point has wrong length");
    f.write(reinterpret_cast<const char*>(p.data()), sizeof(double) * ambient_dim);
  }
}

std::vector<Point> read_dump(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  char magic[4];
  f.read(magic, 4);
  if (std::memcmp(magic, "RFMD", 4) != 0) throw InvalidArgument("not a sample dump: " + path);
  const std::uint32_t version = get_u32(f);
  if (version != 1) throw InvalidArgument("unsupported dump version");
  const int dim = static_cast<int>(get_u32(f));
  const std::uint32_t n = get_u32(f);
  std::vector<Point> pts(n, Point(dim));
  for (auto& p : pts) f.read(reinterpret_cast<char*>(p.data()), sizeof(double) * dim);
  if (!f) throw InvalidArgument("truncated sample dump: " + path);
  return pts;
}

// ---------------------------------------------------------------------------
// Batches

int resolve_workers(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("RFM_BENCH_WORKERS")) {
    int v = 0;
    const auto r = std::from_chars(env, env + std::strlen(env), v);
    if (r.ec == std::errc() && v > 0) return v;
  }
  return 1;
}

void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& body) {
  workers = std::max(1, workers);
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  auto run = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
        next.store(count);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int spawn = static_cast<int>(std::min<std::size_t>(workers, count));
  for (int w = 1; w < spawn; ++w) pool.emplace_back(run);
  run();
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

Point initial_point(const Manifold& m, const PriorSpec& prior, std::uint64_t seed, std::size_t i,
                    std::uint64_t prior_stream) {
  Rng rng = make_stream(seed, prior_stream, i);
  return prior.sample(m, rng);
}

BatchResult batch_sample(const VelocityField& field, const StepSchedule& schedule,
                         const PriorSpec& prior, std::size_t n, std::uint64_t seed,
                         const BatchOptions& options) {
  if (n < 1) throw InvalidArgument("batch needs n >= 1");
  const Manifold& m = field.manifold();
  if (options.guard && options.guard->violated && options.guard_policy == GuardPolicy::Fail)
    throw DomainError("step guard violated: " + describe(*options.guard));

  std::vector<Point> state(n);
  std::vector<char> failed(n, 0);
  std::vector<std::string> reason(n);
  const std::size_t block = std::max<std::size_t>(1, options.block);
  const std::size_t blocks = (n + block - 1) / block;

  parallel_for(blocks, options.workers, [&](std::size_t b) {
    const std::size_t lo = b * block, hi = std::min(n, lo + block);
    std::vector<Point> xs;
    std::vector<std::size_t> ids;
    for (std::size_t i = lo; i < hi; ++i) {
      xs.push_back(initial_point(m, prior, seed, i, options.prior_stream));
      ids.push_back(i);
    }
    std::vector<Eigen::VectorXd> vs(xs.size());
    for (int k = 0; k < schedule.steps() && !xs.empty(); ++k) {
      const double t = schedule.times[k], h = schedule.step(k);
      try {
        field.evaluate_many(t, xs, vs);
      } catch (const std::exception&) {
        // Isolate the failing trajectories point by point.
        for (std::size_t j = 0; j < xs.size(); ++j) {
          try {
            vs[j] = field(t, xs[j]);
          } catch (const std::exception& e) {
            failed[ids[j]] = 1;
            reason[ids[j]] = "step " + std::to_string(k) + ": " + e.what();
          }
        }
      }
      std::size_t keep = 0;
      for (std::size_t j = 0; j < xs.size(); ++j) {
        if (failed[ids[j]]) continue;
        xs[keep] = exp_map(m, xs[j], h * vs[j]);
        ids[keep] = ids[j];
        ++keep;
      }
      xs.resize(keep);
      ids.resize(keep);
      vs.resize(keep);
    }
    for (std::size_t j = 0; j < xs.size(); ++j) state[ids[j]] = std::move(xs[j]);
  });

  BatchResult out;
  for (std::size_t i = 0; i < n; ++i) {
    if (failed[i]) {
      if (out.failures++ == 0) out.first_failure = "trajectory " + std::to_string(i) + " " + reason[i];
      continue;
    }
    out.terminals.push_back(std::move(state[i]));
    out.index.push_back(i);
  }
  auto& mf = out.manifest;
  mf.set("manifold", m.name());
  mf.set("field_variant", to_string(field.variant()));
  mf.set("prior", prior.kind == PriorKind::SphereUniform ? std::string("sphere_uniform")
                                                         : "spd_gaussian(" + format_double(prior.beta) + ")");
  mf.set("schedule", to_string(schedule.kind));
  mf.set("schedule_param", schedule.param);
  mf.set("steps", schedule.steps());
  mf.set("T", schedule.terminal());
  mf.set("n", static_cast<std::uint64_t>(n));
  mf.set("seed", seed);
  mf.set("failures", static_cast<std::uint64_t>(out.failures));
  if (options.guard) {
    mf.set("guard_h_max", options.guard->h_max);
    mf.set("guard_branch", to_string(options.guard->branch));
    mf.set("guard_violated", std::string(options.guard->violated ? "true" : "false"));
  }
  if (static_cast<double>(out.failures) > options.max_failure_fraction * static_cast<double>(n))
    throw NumericFailure("batch failed: " + std::to_string(out.failures) + " of " +
                         std::to_string(n) + " trajectories; first: " + out.first_failure);
  return out;
}

}  // namespace rfm
