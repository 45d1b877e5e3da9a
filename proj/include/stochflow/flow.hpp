#pragma once

// One- and two-point motions on shared noise, sup processes and
// homeomorphism diagnostics for a finite grid of initial points.

#include <iosfwd>
#include <optional>
#include <vector>

#include "stochflow/integrate.hpp"

namespace stochflow {

class FlowGrid {
 public:
  /// Rejects points outside B(radius) and duplicates.
  FlowGrid(std::vector<Vector> points, double radius);

  /// Vogel spiral filling the disc of the given radius (d = 2).
  static FlowGrid spiral(std::size_t count, double radius);
  /// Evenly spaced points on [-radius, radius] (d = 1).
  static FlowGrid line(std::size_t count, double radius);
  /// Halton points in the ball, by rejection (any d).
  static FlowGrid halton(std::size_t d, std::size_t count, double radius);

  const std::vector<Vector>& points() const noexcept { return points_; }
  std::size_t size() const noexcept { return points_.size(); }
  std::size_t dim() const noexcept { return points_.front().size(); }
  double radius() const noexcept { return radius_; }

 private:
  std::vector<Vector> points_;
  double radius_;
};

struct FlowResult {
  std::optional<int> level;  // nullopt: reference resolution (path.n_max)
  std::vector<Trajectory> trajectories;  // aligned with the grid points
  std::size_t explosions() const;
};

/// Integrates every grid point on the same path at the same level.
FlowResult simulate_flow(const VectorFieldSystem& sys, const DyadicPath& path, std::optional<int> level,
                         const FlowGrid& grid, const SolverConfig& cfg = {});

/// Running maximum of |state| over the output grid.
std::vector<double> sup_process(const Trajectory& traj);

struct TwoPointRecord {
  Vector x, y;
  std::vector<double> times;
  std::vector<double> distances;  // |x_t(x) - x_t(y)| on the shared output grid
  double sup_distance = 0.0;
  bool exploded = false;
};

TwoPointRecord two_point(const VectorFieldSystem& sys, const DyadicPath& path, std::optional<int> level,
                         const Vector& x, const Vector& y, const SolverConfig& cfg = {});

struct HomeomorphismReport {
  double time = 0.0;
  std::size_t points = 0;
  std::size_t explosions = 0;  // trajectories that died at or before `time`
  double injectivity_margin = 0.0;  // min pairwise image distance among survivors
  bool injective = false;
  std::optional<bool> order_preserved;  // d = 1 only
  double alpha = 0.5;
  double near_distance = 0.0;
  std::size_t near_pairs = 0;
  double modulus_ratio = 0.0;  // max |image gap| / |initial gap|^alpha over near pairs
};

/// Diagnostics of x -> x_t(x) on the grid. `near_distance` <= 0 selects
/// radius / 2.
HomeomorphismReport homeomorphism_report(const FlowGrid& grid, const FlowResult& flow, double t,
                                         double alpha = 0.5, double near_distance = 0.0);

/// CSV with header x1..xd,y1..yd,exploded: initial point, image at t.
void write_snapshot_csv(const FlowGrid& grid, const FlowResult& flow, double t, std::ostream& os);

}  // namespace stochflow
