#ifndef RFM_SAMPLER_HPP_
#define RFM_SAMPLER_HPP_

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "rfm/field.hpp"
#include "rfm/manifold.hpp"
#include "rfm/spd_bridge.hpp"

namespace rfm {

enum class ScheduleKind { Constant, Polynomial };

std::string to_string(ScheduleKind k);

struct StepSchedule {
  ScheduleKind kind = ScheduleKind::Constant;
  double param = 0.0;         // h for Constant, eta for Polynomial
  std::vector<double> times;  // t_0 = 0 < ... < t_N = T

  int steps() const { return static_cast<int>(times.size()) - 1; }
  double terminal() const { return times.back(); }
  double step(int i) const { return times[i + 1] - times[i]; }
  double max_step() const;
};

/// Constant(h): t_k = k h up to T, the final node clamped to T.
/// Polynomial(eta): t_i = 1 - 1/(1 + eta i)^2, N = ceil((1/sqrt(1-T) - 1)/eta).
StepSchedule make_schedule(ScheduleKind kind, double param, double terminal);

/// N equal steps on [0, T].
StepSchedule constant_schedule(int steps, double terminal);

/// Closed form of t_{i+1} - t_i for the polynomial schedule.
double polynomial_step(double eta, int i);

enum class GuardBranch { PositiveK, NegativeK, ZeroK };

std::string to_string(GuardBranch b);

struct GuardReport {
  double h_max = 0.0;
  double bound = 0.0;   // B
  double l_grad = 0.0;  // L_nabla
  double l_r = 0.0;
  double k_min = 0.0;
  double inj = 0.0;     // R
  double terms[3] = {0.0, 0.0, 0.0};
  GuardBranch branch = GuardBranch::ZeroK;
  bool violated = false;
  double h_checked = 0.0;
};

/// Largest step allowed by the invertibility conditions for a field with
/// sup norm B and covariant Lipschitz constant L_grad.
GuardReport step_guard(const Manifold& m, double bound, double l_grad);

/// Marks the report violated if any step of the schedule reaches h_max.
GuardReport check_schedule(GuardReport report, const StepSchedule& schedule);

std::string describe(const GuardReport& g);

struct Trajectory {
  StepSchedule schedule;
  std::vector<Point> points;
  std::vector<Eigen::VectorXd> velocities;
  std::uint64_t seed = 0;
};

/// x_{k+1} = Exp_{x_k}(h_k v(t_k, x_k)).
Trajectory euler_sample(const VelocityField& field, const StepSchedule& schedule, const Point& x0,
                        std::uint64_t seed = 0);

/// Euler terminal of every point in `x0`, in blocks of 512 with batched field
/// evaluation. Failures throw.
std::vector<Point> euler_terminals(const VelocityField& field, const StepSchedule& schedule,
                                   std::span<const Point> x0, int workers);

/// The continuous-time field of the Euler scheme: on [t_k, t_{k+1}) the frozen
/// velocity at the step start, transported along the Euler arc.
class InterpolatedField final : public VelocityField {
 public:
  InterpolatedField(std::shared_ptr<const VelocityField> vhat, StepSchedule schedule,
                    double tolerance = 1e-9, int max_iter = 100)
      : vhat_(std::move(vhat)), schedule_(std::move(schedule)), tol_(tolerance), max_iter_(max_iter) {}

  const Manifold& manifold() const override { return vhat_->manifold(); }
  FieldVariant variant() const override { return FieldVariant::FrozenInterpolated; }
  Eigen::VectorXd operator()(double t, const Point& x) const override;

  /// F^{-1}_{t_k, t - t_k}(x) for the step containing t.
  Point preimage(double t, const Point& x) const;
  int step_index(double t) const;

 private:
  std::shared_ptr<const VelocityField> vhat_;
  StepSchedule schedule_;
  double tol_;
  int max_iter_;
};

/// Flat key=value manifest; insertion order is preserved.
class RunManifest {
 public:
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value);
  void set(const std::string& key, std::int64_t value);
  void set(const std::string& key, std::uint64_t value);
  void set(const std::string& key, int value) { set(key, static_cast<std::int64_t>(value)); }
  const std::string* find(const std::string& key) const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  std::string str() const;
  void write(const std::string& path) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

enum class GuardPolicy { Fail, Warn };

struct BatchOptions {
  int workers = 1;
  GuardPolicy guard_policy = GuardPolicy::Warn;
  const GuardReport* guard = nullptr;
  std::size_t block = 512;            // trajectories per work item
  double max_failure_fraction = 1e-3;
  std::uint64_t prior_stream = 1;     // stream id used for initial points
};

struct BatchResult {
  std::vector<Point> terminals;     // failed trajectories are omitted
  std::vector<std::size_t> index;   // trajectory id of each terminal
  std::size_t failures = 0;
  std::string first_failure;
  RunManifest manifest;
};

/// Initial point of trajectory i: a prior draw from stream (seed, prior_stream, i).
Point initial_point(const Manifold& m, const PriorSpec& prior, std::uint64_t seed, std::size_t i,
                    std::uint64_t prior_stream = 1);

/// n independent Euler trajectories. Output depends only on (seed, inputs),
/// never on the worker count.
BatchResult batch_sample(const VelocityField& field, const StepSchedule& schedule,
                         const PriorSpec& prior, std::size_t n, std::uint64_t seed,
                         const BatchOptions& options = {});

/// Runs body(i) for i in [0, count) on `workers` threads; each index is
/// processed exactly once and exceptions are rethrown after joining.
void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& body);

/// Worker count from an explicit flag, else RFM_BENCH_WORKERS, else 1.
int resolve_workers(int flag);

/// Binary dump: 16-byte header (magic "RFMD", u32 version, u32 ambient
/// length, u32 count) followed by little-endian float64 coordinates.
void write_dump(const std::string& path, const std::vector<Point>& points, int ambient_dim);
std::vector<Point> read_dump(const std::string& path);

}  // namespace rfm

#endif  // RFM_SAMPLER_HPP_
