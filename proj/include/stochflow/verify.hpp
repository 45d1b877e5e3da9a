#pragma once

// Monte Carlo moment estimation, closed-form evaluators for the moment
// bounds, the inequality registry and convergence measurements.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stochflow/flow.hpp"

namespace stochflow {

/// Mergeable statistics of |sample|^order.
struct MomentEstimate {
  static constexpr double kZ99 = 2.5758293035489004;  // two-sided 99% normal quantile

  double order = 1.0;
  std::size_t count = 0;
  std::size_t non_finite = 0;
  double sum = 0.0, sum_sq = 0.0, sum_cube = 0.0, sum_quart = 0.0;
  double min = std::numeric_limits<double>::infinity();
  double max = -std::numeric_limits<double>::infinity();

  explicit MomentEstimate(double p = 1.0) : order(p) {}

  void add(double sample);
  void merge(const MomentEstimate& other);

  double estimate() const;  // mean of |sample|^order
  double variance() const;  // unbiased sample variance of |sample|^order
  double half_width() const;  // 99% normal half-width of the mean
  double kurtosis() const;
  bool ci_reliable() const { return kurtosis() <= 100.0; }
  /// ||sample||_order and its delta-method half-width.
  double norm_estimate() const;
  double norm_half_width() const;
};

using ScalarSampler = std::function<double(std::uint64_t seed, std::uint64_t index)>;
using VectorSampler = std::function<std::vector<double>(std::uint64_t seed, std::uint64_t index)>;

/// Draws sampler(seed, k) for k < count on `workers` threads and folds the
/// samples in index order, so the result does not depend on `workers`.
MomentEstimate estimate_moment(const ScalarSampler& sampler, double p, std::size_t count, std::uint64_t seed,
                               int workers = 0);
MomentEstimate estimate_moment_serial(const ScalarSampler& sampler, double p, std::size_t count,
                                      std::uint64_t seed);

/// Several statistics per draw (e.g. one per level on a shared path); one
/// estimate per (output slot, order), indexed [slot][order index].
std::vector<std::vector<MomentEstimate>> estimate_moments(const VectorSampler& sampler, std::size_t outputs,
                                                          const std::vector<double>& orders, std::size_t count,
                                                          std::uint64_t seed, int workers = 0);

struct BoundConstants {
  double C1 = 0.0, C2 = 0.0, C3 = 0.0, C4 = 0.0;
  double L1 = 0.0, L2 = 0.0;
  double K1 = 0.0, K2 = 0.0;
  double delta0 = 0.0;
  double p = 2.0;
  int n = 1;
  int N = 1;
  double C = 1.0;  // universal constant, never pinned down analytically

  void validate() const;
};

/// (1 + C C1 sqrt(p)) e^C2 (1 + |x|), valid for bounded diffusions.
double bound_one_point_H1(const BoundConstants& c, double p, double x_norm);

struct LinearGrowthExponents {
  double beta1 = 0.0, beta2 = 0.0;
};
/// From the Gronwall conclusion 3 exp{3 (C^2 C3^2 p + 2 C4^2)}:
/// beta1 = sqrt(3) e^(3 C4^2), beta2 = 3 C^2 C3^2 / 2.
LinearGrowthExponents linear_growth_exponents(const BoundConstants& c);
/// beta1 e^(beta2 p) (1 + |x|), valid under linear growth.
double bound_one_point_H2(const BoundConstants& c, double p, double x_norm);

/// dist^(2p) e^((2 p^2 L1^2 + 2 p L2) t) for a fixed time t in [0, 1].
double bound_two_point_L(const BoundConstants& c, double p, double dist, double t = 1.0);
/// 2^p dist^p e^(C L1^2 p^2 + L2^2 p), bound on the moment of the sup distance.
double bound_two_point_L_sup(const BoundConstants& c, double p, double dist);

/// Discretization constant of the regularized two-point bound, using c.p, c.n, c.N, c.C.
double alpha_n(const BoundConstants& c);
/// Same formula with the truncated constants in place of L1, L2, K1, K2.
double alpha_tilde_n(const BoundConstants& c, double L1_trunc, double L2_trunc, double K1_trunc,
                     double K2_trunc);
/// C_p ((beta1_trunc + gamma1_trunc) log(m + 2) + 1): the growth envelope of
/// alpha_tilde under the log-growth hypothesis. gamma1_trunc is an input.
double alpha_tilde_envelope(double Cp, double beta1_trunc, double gamma1_trunc, double m);

/// delta0 = 1 / (2 beta^2 e (1 + R)^2) with beta fitted by least squares of
/// ||Y||_p against sqrt(p) (1 + |x|).
double fit_delta0(const std::vector<double>& orders, const std::vector<double>& sup_norms, double x_norm,
                  double radius);

enum class Direction { kAtMost, kAtLeast };

struct InequalityReport {
  std::string name;
  std::string kind = "hard";  // "hard" or "shape"
  double lhs = 0.0;
  double half_width = 0.0;
  double rhs = 0.0;
  Direction direction = Direction::kAtMost;
  double margin = 0.0;
  bool verdict = false;
  bool ci_reliable = true;
  std::size_t samples = 0;
  std::size_t explosions = 0;
  std::uint64_t seed = 0;
  std::map<std::string, double> params;
  std::map<std::string, std::vector<double>> details;
  std::vector<std::string> notes;

  /// Sets margin and verdict from lhs, half_width, rhs and direction.
  void decide();
};

nlohmann::json to_json(const InequalityReport& r);
/// CSV header plus one row per report.
void write_reports_csv(const std::vector<InequalityReport>& reports, std::ostream& os);

struct InequalityRequest {
  std::string name;
  const VectorFieldSystem* system = nullptr;
  BoundConstants consts;
  double p = 2.0;
  Vector x;                  // base point
  double dist = 1e-3;        // |x - y| for single-pair bounds
  double radius = 1.0;       // R of the ball holding the points
  std::vector<int> levels;   // regularization levels (uniformity checks)
  std::optional<int> level;  // level for single-level checks; nullopt: reference
  int n_max = 14;
  std::size_t paths = 1000;
  std::uint64_t seed = 0;
  int workers = 0;
  int pair_count = 10;       // dyadic pairs |x - y| = 2^-k, k = 1..pair_count
  SolverConfig solver;
};

std::vector<std::string> registered_inequalities();
InequalityReport verify_inequality(const InequalityRequest& req);

struct HolderFit {
  double constant = 0.0;
  std::size_t spatial_pairs = 0;
  std::size_t time_pairs = 0;
};

/// max |z_t(x) - z_s(y)| / (|x - y|^alpha + |t - s|^alpha) over spatial
/// near pairs at equal times and time pairs at equal points (dyadic gaps).
HolderFit holder_constant(const FlowGrid& grid, const FlowResult& flow, double alpha, double near_distance,
                          bool spatial_only = false);

/// Like holder_constant, over several flows (levels); throws when a flow
/// offers fewer than 20 near pairs or 20 time pairs.
std::vector<HolderFit> fit_holder_field(const FlowGrid& grid, const std::vector<FlowResult>& flows, double alpha,
                                        double near_distance, bool spatial_only = false);

struct ConvergenceLevel {
  int level = 0;
  double mean = 0.0;
  double median = 0.0;
  double moment = 0.0;  // E error^p
  std::size_t explosions = 0;
  double holder_median = 0.0;
};

struct ConvergenceCurve {
  int reference_level = 0;
  int output_level = 0;
  double p = 2.0;
  std::size_t paths_used = 0;
  std::size_t paths_discarded = 0;
  std::vector<ConvergenceLevel> levels;
  double slope = 0.0;  // least-squares slope of log2(median) against level
  double disagreement_median = 0.0;
  double disagreement_max = 0.0;
  std::size_t flagged = 0;
  double reference_holder_median = 0.0;
};

/// Sup over output times and grid points of |z^n - reference| per path.
/// The reference level is max(levels) + 4.
ConvergenceCurve convergence_curve(const VectorFieldSystem& sys, const FlowGrid& grid, const std::vector<int>& levels,
                                   std::size_t paths, std::uint64_t seed, const SolverConfig& cfg = {},
                                   int workers = 0, double p = 2.0, double holder_alpha = 0.5);

/// Per-path sup errors as in convergence_curve, serial, for testing.
std::vector<std::vector<double>> convergence_errors_serial(const VectorFieldSystem& sys, const FlowGrid& grid,
                                                           const std::vector<int>& levels, std::size_t paths,
                                                           std::uint64_t seed, const SolverConfig& cfg = {});

void write_convergence_csv(const ConvergenceCurve& curve, std::ostream& os);

double median(std::vector<double> v);
/// Least-squares slope of y against x.
double fit_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace stochflow
