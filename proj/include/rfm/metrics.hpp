#ifndef RFM_METRICS_HPP_
#define RFM_METRICS_HPP_

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rfm/field.hpp"
#include "rfm/manifold.hpp"
#include "rfm/sampler.hpp"
#include "rfm/sphere_bridge.hpp"

namespace rfm {

/// Equal-area partition of S^d in hyperspherical coordinates. Level k < d-1
/// splits the polar angle psi_k (weight sin^{d-1-k}) into bands of equal
/// measure; the last level splits the azimuth into equal arcs. Every cell
/// is a coordinate box of area Vol(S^d) / size().
class SphereCellPartition {
 public:
  struct Cell {
    Point center;
    double area;
    std::vector<std::pair<double, double>> box;  // per coordinate
  };

  SphereCellPartition(int d, std::vector<int> splits);
  /// 96 cells for d in {2, 3, 4}.
  static SphereCellPartition standard(int d);

  int dim() const { return d_; }
  std::size_t size() const { return cells_.size(); }
  const std::vector<Cell>& cells() const { return cells_; }
  const std::vector<int>& splits() const { return splits_; }

  std::size_t locate(const Point& x) const;
  std::vector<std::size_t> counts(std::span<const Point> xs) const;

  /// Integral of `density` over each cell by tensor Gauss-Legendre with
  /// `nodes` points per coordinate.
  std::vector<double> masses(const std::function<double(const Point&)>& density, int nodes = 8,
                             int workers = 1) const;

  static Point from_angles(std::span<const double> angles);

 private:
  int d_;
  std::vector<int> splits_;
  std::vector<std::vector<double>> edges_;
  std::vector<Cell> cells_;
};

struct TvEstimate {
  double tv = 0.0;
  double std_err = 0.0;
  double raw = 0.0;  // plug-in value before any bias correction
};

/// (1/2) sum |empirical - exact| over cells with a multinomial bootstrap
/// standard error.
TvEstimate tv_binned(const SphereCellPartition& partition, std::span<const Point> samples,
                     const std::vector<double>& exact_masses, std::uint64_t seed,
                     int resamples = 200);

/// Cell TV between two paired sample sets (a_i, b_i) of equal size, with a
/// bootstrap over pairs. When b_i is a coupled draw the noise of
/// the two empirical measures largely cancels. `tv` is bootstrap
/// bias-corrected and clipped at 0.
TvEstimate tv_paired(const SphereCellPartition& partition, std::span<const Point> a,
                     std::span<const Point> b, std::uint64_t seed, int resamples = 200);

/// Maps a batch of points; used for flows whose pushforward is measured.
using BatchMap = std::function<std::vector<Point>(std::span<const Point>)>;
using Density = std::function<double(const Point&)>;

/// TV between the pushforward of a law with density `source` under an
/// injective map and a law with density `target`:
///   (1/2) E_{x ~ source} |1 - target(phi(x)) |det D phi(x)| / source(x)|,
/// with D phi by central differences in orthonormal frames. `x` holds draws
/// from `source`. No binning, so there is no sampling floor: the integrand
/// vanishes where the two laws agree.
TvEstimate pushforward_tv(const Manifold& m, const BatchMap& phi, const Density& source,
                          const Density& target, std::span<const Point> x, double fd_step,
                          int workers);

/// diam(M) * tv; SPD (infinite diameter) is rejected.
double w1_from_tv(double tv, double diameter);

/// Lower bound on W1 between two sample sets on S^d: the largest 1-D W1 of
/// x -> arccos <x, e> over `directions` random axes (each map is 1-Lipschitz).
double sliced_w1_proxy(std::span<const Point> a, std::span<const Point> b, int directions,
                       std::uint64_t seed);

struct RateRow {
  int n_steps = 0;
  double h = 0.0;
  double eta = 0.0;
  double eps = 0.0;
  double terminal = 0.0;
  int d = 0;
  double tv = 0.0;
  double std_err = 0.0;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
};

struct RateTable {
  std::vector<RateRow> rows;
  std::string csv() const;
  void write_csv(const std::string& path) const;
};

enum class RateAxis { H, Eps };

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

/// Least squares of log y on log x.
RateFit loglog_fit(std::span<const double> x, std::span<const double> y);

/// Fit of log tv against log h (or eps) with a parametric bootstrap CI from
/// the row standard errors. Needs at least 4 rows, all with tv > 3 std_err.
RateFit rate_regress(const RateTable& table, RateAxis axis, std::uint64_t seed = 0);

/// Terminal points of the exact flow of `field` from each x0, integrated by
/// classical RK4 in ambient coordinates with renormalization (sphere) over
/// the given schedule.
std::vector<Point> reference_terminals(const VelocityField& field, const StepSchedule& schedule,
                                       std::span<const Point> x0, int workers = 1);

struct Lemma1Options {
  std::size_t samples = 20000;
  double delta = 0.05;
  int substeps = 50;
  double fd_step = 1e-4;
  std::uint64_t seed = 7;
  int workers = 1;
};

struct Lemma1Result {
  double t = 0.0;
  double lhs_fd = 0.0;
  double lhs_se = 0.0;
  double rhs_bound = 0.0;  // E|Div(vt - v)| + E ||score|| ||vt - v||, averaged over [t, t+delta]
  double rhs_se = 0.0;
  double div_term = 0.0;
  double score_term = 0.0;
  double cauchy_schwarz = 0.0;  // sqrt(E||score||^2) sqrt(E||vt - v||^2)
  bool holds = false;           // lhs <= rhs + 3 combined SE
};

/// Compares the growth rate of TV between the flows of v and vt started from
/// the exact law at time t with the bound of the TV derivative inequality.
/// `v` must be the exact population field of `bridge`.
Lemma1Result lemma1_diagnostic(const VelocityField& v, const VelocityField& vt,
                               const SphereBridge& bridge, double t, const Lemma1Options& opt);

/// Two-sample binned TV on SPD(2) in (log lambda_1, log lambda_2, angle)
/// coordinates; bin edges are quantiles of the reference sample `b`.
TvEstimate spd2_binned_tv(std::span<const Point> a, std::span<const Point> b, int bins,
                          std::uint64_t seed, int resamples = 200);

/// Energy distance with geodesic distances, on at most `max_points` of each set.
double energy_distance(const Manifold& m, std::span<const Point> a, std::span<const Point> b,
                       std::size_t max_points = 1000);

}  // namespace rfm

#endif  // RFM_METRICS_HPP_
