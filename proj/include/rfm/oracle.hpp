#ifndef RFM_ORACLE_HPP_
#define RFM_ORACLE_HPP_

// Brute-force numerical references used to certify the closed forms.

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rfm/field.hpp"
#include "rfm/manifold.hpp"
#include "rfm/metrics.hpp"
#include "rfm/sphere_bridge.hpp"

namespace rfm {

/// J(t_end) for J'' = -c J, J(0) = j0, J'(0) = dj0, by the explicit
/// midpoint rule with `steps` steps. Signed: the coefficient along the
/// transported unit normal, so |result| is the field norm.
double numeric_jacobi(double c, double t_end, double j0, double dj0, int steps = 4096);

/// `segments` + 1 points along the minimizing geodesic from x to y.
std::vector<Point> geodesic_path(const Manifold& m, const Point& x, const Point& y, int segments);

enum class Ladder { Pole, Schild };

/// Transport of v along a discretized path built from Exp and Log only.
Eigen::VectorXd numeric_transport(const Manifold& m, std::span<const Point> path,
                                  const Eigen::VectorXd& v, Ladder ladder = Ladder::Pole);

/// det of [<P_{y -> x1}^{-1} dExp_{x1}(v)[e_i], e_j>] with y = Exp_{x1}(v), from
/// central differences at fd_step and fd_step/2 combined by Richardson
/// extrapolation.
double numeric_dexp_det(const Manifold& m, const Point& x1, const Eigen::VectorXd& v,
                        double fd_step = 1e-4);

struct RejectionHistogram {
  std::vector<double> prob;     // per partition cell
  std::vector<double> std_err;
  std::size_t accepted = 0;
  std::size_t proposed = 0;
};

/// Simulates (X0, X1, X_t) with X0 uniform and X1 from the target, keeps the
/// pairs with d(X_t, center) < radius and bins X1 over the partition.
RejectionHistogram bridge_rejection_histogram(const SphereBridge& bridge, double t,
                                              const Point& center, double radius,
                                              const SphereCellPartition& partition, std::size_t n,
                                              std::uint64_t seed, int workers = 1);

/// The law of X1 given X_t in the cap, per partition cell, by quadrature of
/// the conditional density over the cap and the cells.
std::vector<double> cap_conditional_masses(const SphereBridge& bridge, double t,
                                           const Point& center, double radius,
                                           const SphereCellPartition& partition, int workers = 1);

enum class BoundQuantity { GradVOp, DtV, GradDivV, DtDivV, ScoreSq, VNorm };

std::string to_string(BoundQuantity q);
BoundQuantity parse_bound_quantity(const std::string& s);

struct BoundRow {
  BoundQuantity quantity;
  double t = 0.0;
  int node_id = 0;
  double estimate = 0.0;
  double constant = 0.0;
  double ratio = 0.0;
  bool flagged = false;  // finite differences failed at this node
};

struct BoundReport {
  std::vector<BoundRow> rows;
  double max_ratio() const;
  std::size_t flagged() const;
  std::string csv() const;
};

/// Finite-difference estimates of each regularity quantity of the population
/// field at every (t, x) node, against the constants for the target's density
/// ratio. The score is checked pointwise against its mean-square bound.
BoundReport bound_sweep(const SphereBridge& bridge, BoundQuantity quantity,
                        std::span<const double> times, std::span<const Point> nodes,
                        int workers = 1, double fd_step = 1e-3);

/// Default grid: t = 0.09, 0.18, ..., 0.9 and `count` uniform points.
std::vector<double> bound_times();
std::vector<Point> bound_nodes(const Manifold& m, int count, std::uint64_t seed);

}  // namespace rfm

#endif  // RFM_ORACLE_HPP_
