#include "stochflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace stochflow {

namespace {

double distance(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return std::sqrt(s);
}

double radical_inverse(std::size_t k, std::size_t base) {
  double inv = 1.0 / static_cast<double>(base), f = inv, out = 0.0;
  while (k > 0) {
    out += f * static_cast<double>(k % base);
    k /= base;
    f *= inv;
  }
  return out;
}

}  // namespace

FlowGrid::FlowGrid(std::vector<Vector> points, double radius) : points_(std::move(points)), radius_(radius) {
  if (points_.empty()) throw std::invalid_argument("flow grid must not be empty");
  if (!(radius > 0.0)) throw std::invalid_argument("flow grid radius must be positive");
  const std::size_t d = points_.front().size();
  if (d == 0) throw std::invalid_argument("grid points need d >= 1");
  for (std::size_t a = 0; a < points_.size(); ++a) {
    if (points_[a].size() != d) throw std::invalid_argument("grid points have mixed dimensions");
    if (norm(points_[a]) > radius * (1.0 + 1e-12)) throw std::invalid_argument("grid point outside B(R)");
    for (std::size_t b = 0; b < a; ++b) {
      if (points_[a] == points_[b]) throw std::invalid_argument("duplicate grid point");
    }
  }
}

FlowGrid FlowGrid::spiral(std::size_t count, double radius) {
  if (count == 0) throw std::invalid_argument("grid count must be positive");
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  std::vector<Vector> pts;
  for (std::size_t k = 0; k < count; ++k) {
    const double r = radius * std::sqrt((static_cast<double>(k) + 0.5) / static_cast<double>(count));
    const double a = golden * static_cast<double>(k);
    pts.push_back({r * std::cos(a), r * std::sin(a)});
  }
  return FlowGrid(std::move(pts), radius);
}

FlowGrid FlowGrid::line(std::size_t count, double radius) {
  if (count == 0) throw std::invalid_argument("grid count must be positive");
  std::vector<Vector> pts;
  for (std::size_t k = 0; k < count; ++k) {
    const double u = count == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(k) / static_cast<double>(count - 1);
    pts.push_back({radius * u});
  }
  return FlowGrid(std::move(pts), radius);
}

FlowGrid FlowGrid::halton(std::size_t d, std::size_t count, double radius) {
  if (count == 0 || d == 0) throw std::invalid_argument("grid count and dimension must be positive");
  static constexpr std::size_t kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};
  if (d > std::size(kPrimes)) throw std::invalid_argument("Halton grid supports d <= 12");
  std::vector<Vector> pts;
  for (std::size_t k = 1; pts.size() < count; ++k) {
    Vector p(d);
    for (std::size_t j = 0; j < d; ++j) p[j] = radius * (2.0 * radical_inverse(k, kPrimes[j]) - 1.0);
    if (norm(p) <= radius) pts.push_back(std::move(p));
  }
  return FlowGrid(std::move(pts), radius);
}

std::size_t FlowResult::explosions() const {
  return static_cast<std::size_t>(
      std::count_if(trajectories.begin(), trajectories.end(), [](const Trajectory& t) { return t.has_exploded(); }));
}

FlowResult simulate_flow(const VectorFieldSystem& sys, const DyadicPath& path, std::optional<int> level,
                         const FlowGrid& grid, const SolverConfig& cfg) {
  if (grid.dim() != sys.dim_state()) throw std::invalid_argument("grid and system dimensions differ");
  if (path.noise_dim != sys.dim_noise()) throw std::invalid_argument("path and system noise dimensions differ");
  const int n = level.value_or(path.n_max);
  if (n > path.n_max) throw std::invalid_argument("level exceeds path resolution");
  SolverConfig run_cfg = cfg;
  if (!level && !run_cfg.output_level) run_cfg.output_level = std::min(path.n_max, 10);
  const auto slopes = level_slopes(path, n);
  FlowResult out;
  out.level = level;
  out.trajectories.reserve(grid.size());
  for (const auto& x : grid.points()) out.trajectories.push_back(solve_with_slopes(sys, slopes, n, x, run_cfg));
  return out;
}

std::vector<double> sup_process(const Trajectory& traj) {
  std::vector<double> out;
  out.reserve(traj.states.size());
  double running = 0.0;
  for (const auto& z : traj.states) {
    running = std::max(running, norm(z));
    out.push_back(running);
  }
  return out;
}

TwoPointRecord two_point(const VectorFieldSystem& sys, const DyadicPath& path, std::optional<int> level,
                         const Vector& x, const Vector& y, const SolverConfig& cfg) {
  const int n = level.value_or(path.n_max);
  if (n > path.n_max) throw std::invalid_argument("level exceeds path resolution");
  SolverConfig run_cfg = cfg;
  if (!level && !run_cfg.output_level) run_cfg.output_level = std::min(path.n_max, 10);
  const auto slopes = level_slopes(path, n);
  const Trajectory tx = solve_with_slopes(sys, slopes, n, x, run_cfg);
  const Trajectory ty = solve_with_slopes(sys, slopes, n, y, run_cfg);
  TwoPointRecord rec;
  rec.x = x;
  rec.y = y;
  rec.exploded = tx.has_exploded() || ty.has_exploded();
  const std::size_t len = std::min(tx.states.size(), ty.states.size());
  for (std::size_t k = 0; k < len; ++k) {
    rec.times.push_back(tx.times[k]);
    rec.distances.push_back(distance(tx.states[k], ty.states[k]));
    rec.sup_distance = std::max(rec.sup_distance, rec.distances.back());
  }
  return rec;
}

HomeomorphismReport homeomorphism_report(const FlowGrid& grid, const FlowResult& flow, double t, double alpha,
                                         double near_distance) {
  if (grid.size() < 2) throw std::invalid_argument("homeomorphism report needs at least two points");
  if (flow.trajectories.size() != grid.size()) throw std::invalid_argument("flow does not match grid");
  if (!(alpha > 0.0 && alpha < 1.0 + 1e-12)) throw std::invalid_argument("alpha must lie in (0, 1]");
  HomeomorphismReport rep;
  rep.time = t;
  rep.points = grid.size();
  rep.alpha = alpha;
  rep.near_distance = near_distance > 0.0 ? near_distance : grid.radius() / 2.0;

  std::vector<std::size_t> alive;
  std::vector<const Vector*> image(grid.size(), nullptr);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const Trajectory& tr = flow.trajectories[k];
    image[k] = tr.state_at(t);
    if (image[k] == nullptr) {
      if (!tr.has_exploded()) throw std::invalid_argument("requested time is not on the output grid");
      ++rep.explosions;
    } else {
      alive.push_back(k);
    }
  }

  rep.injectivity_margin = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < alive.size(); ++a) {
    for (std::size_t b = 0; b < a; ++b) {
      const auto i = alive[a], j = alive[b];
      const double gap = distance(*image[i], *image[j]);
      rep.injectivity_margin = std::min(rep.injectivity_margin, gap);
      const double initial = distance(grid.points()[i], grid.points()[j]);
      if (initial <= rep.near_distance) {
        ++rep.near_pairs;
        rep.modulus_ratio = std::max(rep.modulus_ratio, gap / std::pow(initial, alpha));
      }
    }
  }
  if (alive.size() < 2) rep.injectivity_margin = 0.0;
  rep.injective = alive.size() >= 2 && rep.injectivity_margin > 0.0;

  if (grid.dim() == 1) {
    bool preserved = true;
    for (std::size_t a = 0; a < alive.size() && preserved; ++a) {
      for (std::size_t b = 0; b < a; ++b) {
        const auto i = alive[a], j = alive[b];
        const double before = grid.points()[i][0] - grid.points()[j][0];
        const double after = (*image[i])[0] - (*image[j])[0];
        if (!(before * after > 0.0)) {
          preserved = false;
          break;
        }
      }
    }
    rep.order_preserved = preserved;
  }
  return rep;
}

void write_snapshot_csv(const FlowGrid& grid, const FlowResult& flow, double t, std::ostream& os) {
  const std::size_t d = grid.dim();
  for (std::size_t j = 1; j <= d; ++j) os << "x" << j << ",";
  for (std::size_t j = 1; j <= d; ++j) os << "y" << j << ",";
  os << "exploded\n";
  const auto old = os.precision(17);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    for (double v : grid.points()[k]) os << v << ",";
    const Vector* img = flow.trajectories[k].state_at(t);
    for (std::size_t j = 0; j < d; ++j) {
      if (img) {
        os << (*img)[j] << ",";
      } else {
        os << "nan,";
      }
    }
    os << (img ? 0 : 1) << "\n";
  }
  os.precision(old);
}

}  // namespace stochflow
