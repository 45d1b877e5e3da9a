#pragma once

// Solvers driven by one DyadicPath: the level-n regularized ODE, the
// reference solution with its predictor-corrector cross-check, and Euler
// schemes for the Ito form.

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "stochflow/fields.hpp"
#include "stochflow/wiener.hpp"

namespace stochflow {

struct SolverConfig {
  int substeps = 8;  // RK4 stages per level-n interval, before the step floor
  /// Largest RK4 substep; coarse levels take more substeps so that the
  /// integrator error stays far below the interpolation error.
  double max_step = 1.0 / 2048.0;
  double explosion_threshold = 1e8;
  std::optional<int> output_level;  // default min(n, 10)
  bool reference_cross_check = true;
  double reference_tolerance = 0.1;  // relative, see ReferenceSolution

  void validate() const;
};

struct Trajectory {
  int output_level = 0;
  std::vector<double> times;
  std::vector<Vector> states;
  std::optional<double> exploded;  // lifetime on the output grid

  bool has_exploded() const noexcept { return exploded.has_value(); }
  /// State at output time t, or nullptr if t is not recorded (after explosion).
  const Vector* state_at(double t) const;
};

/// RK4 integration of z' = A_0(z) + sum_i c_i A_i(z) with the level-n slopes c.
Trajectory solve_regularized(const VectorFieldSystem& sys, const DyadicPath& path, int n,
                             std::span<const double> x0, const SolverConfig& cfg = {});

/// Same, with slopes precomputed by level_slopes(path, n). Used to share one
/// slope table across many initial points.
Trajectory solve_with_slopes(const VectorFieldSystem& sys, std::span<const double> slopes, int n,
                             std::span<const double> x0, const SolverConfig& cfg);

struct ReferenceSolution {
  Trajectory wong_zakai;           // regularized solve at path.n_max
  Trajectory predictor_corrector;  // Stratonovich Heun on the finest grid
  double disagreement = 0.0;       // sup over shared output times of |difference|
  bool flagged = false;            // disagreement > tolerance * (1 + sup |wong_zakai|)
};

ReferenceSolution solve_reference(const VectorFieldSystem& sys, const DyadicPath& path,
                                  std::span<const double> x0, const SolverConfig& cfg = {});

/// Euler-Maruyama on the finest grid with drift A_0 + 1/2 sum_i B_ii.
Trajectory solve_ito_corrected(const VectorFieldSystem& sys, const DyadicPath& path,
                               std::span<const double> x0, const SolverConfig& cfg = {});

/// Euler-Maruyama with the raw drift A_0, i.e. the Ito equation that ignores
/// the correction. Kept as the control for Stratonovich targeting.
Trajectory solve_ito_uncorrected(const VectorFieldSystem& sys, const DyadicPath& path,
                                 std::span<const double> x0, const SolverConfig& cfg = {});

std::optional<double> detect_explosion(const Trajectory& traj);

/// CSV with header t,x1..xd,exploded.
void write_trajectory_csv(const Trajectory& traj, std::ostream& os);

}  // namespace stochflow
