#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "generators.hpp"
#include "stochflow/flow.hpp"

using namespace stochflow;
using testgen::for_all;
using testgen::Gen;

namespace {

VectorFieldSystem geometric_1d() { return VectorFieldSystem(families::geometric(1, 1.0, 0.0), "geometric"); }
VectorFieldSystem log_growth_2d() { return VectorFieldSystem(families::log_growth(2, 2, 1.0, 1.0, 0.5), "log-growth"); }

double interpolant_max(const DyadicPath& p, int n, const std::vector<double>& times) {
  double m = -1e300;
  for (double t : times) m = std::max(m, interpolant_value(p, n, t)[0]);
  return m;
}

}  // namespace

TEST_CASE("grids") {
  const auto s = FlowGrid::spiral(25, 4.0);
  CHECK(s.size() == 25);
  CHECK(s.dim() == 2);
  for (const auto& p : s.points()) CHECK(norm(p) <= 4.0);
  const auto l = FlowGrid::line(5, 2.0);
  CHECK(l.points().front()[0] == -2.0);
  CHECK(l.points().back()[0] == 2.0);
  const auto h = FlowGrid::halton(3, 40, 1.5);
  CHECK(h.size() == 40);
  for (const auto& p : h.points()) CHECK(norm(p) <= 1.5);
  CHECK_THROWS_AS(FlowGrid({{5.0}}, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(FlowGrid({{0.5}, {0.5}}, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(FlowGrid({}, 1.0), std::invalid_argument);
}

TEST_CASE("single-point flow is the plain solve") {
  const auto sys = log_growth_2d();
  const auto path = sample_path(8, 2, 3);
  const FlowGrid grid({{0.5, -1.0}}, 2.0);
  const auto flow = simulate_flow(sys, path, 6, grid);
  const auto direct = solve_regularized(sys, path, 6, Vector{0.5, -1.0});
  CHECK(flow.trajectories.front().states == direct.states);
}

TEST_CASE("linear flow is affine: midpoints map to midpoints") {
  const VectorFieldSystem sys(families::linear(2, 1, {0.2, -0.5, 0.4, 0.1}, {0.3, 1.0, -1.0, 0.2}), "linear");
  for_all(10, 41, [&](Gen& g, std::uint64_t seed) {
    const auto path = sample_path(8, 1, seed);
    const Vector a = g.in_ball(2, 1.0), b = g.in_ball(2, 1.0);
    const Vector mid{0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])};
    const auto flow = simulate_flow(sys, path, 8, FlowGrid({a, b, mid}, 1.0));
    const auto& za = flow.trajectories[0].states;
    const auto& zb = flow.trajectories[1].states;
    const auto& zm = flow.trajectories[2].states;
    for (std::size_t k = 0; k < zm.size(); ++k) {
      for (std::size_t r = 0; r < 2; ++r) {
        CHECK(zm[k][r] == doctest::Approx(0.5 * (za[k][r] + zb[k][r])).epsilon(1e-10).scale(1.0));
      }
    }
  });
}

TEST_CASE("geometric 1-D flow preserves order") {
  const auto grid = FlowGrid::line(21, 3.0);
  for (std::size_t k = 0; k < 10; ++k) {
    const auto flow = simulate_flow(geometric_1d(), sample_path(10, 1, 5, k), 10, grid);
    for (double t : {0.25, 0.5, 1.0}) {
      const auto rep = homeomorphism_report(grid, flow, t);
      REQUIRE(rep.order_preserved.has_value());
      CHECK(*rep.order_preserved);
      CHECK(rep.injective);
    }
  }
}

TEST_CASE("sup process") {
  const auto path = sample_path(10, 1, 12);
  const double x0 = 1.5;
  const auto traj = solve_regularized(geometric_1d(), path, 10, Vector{x0});
  const auto y = sup_process(traj);
  CHECK(y.front() == x0);
  CHECK(std::is_sorted(y.begin(), y.end()));
  const double expect = x0 * std::exp(std::max(0.0, interpolant_max(path, 10, traj.times)));
  CHECK(y.back() == doctest::Approx(expect).epsilon(1e-8));
}

TEST_CASE("two-point motion") {
  const auto path = sample_path(10, 2, 4);
  const auto same = two_point(log_growth_2d(), path, 8, Vector{1.0, 1.0}, Vector{1.0, 1.0});
  for (double dist : same.distances) CHECK(dist == 0.0);
  CHECK(same.sup_distance == 0.0);

  const auto p1 = sample_path(10, 1, 4);
  const double x = 1.0, y = 1.25;
  const auto rec = two_point(geometric_1d(), p1, 10, Vector{x}, Vector{y});
  const double expect = (y - x) * std::exp(std::max(0.0, interpolant_max(p1, 10, rec.times)));
  CHECK(rec.sup_distance == doctest::Approx(expect).epsilon(1e-8));
  CHECK_FALSE(rec.exploded);
}

TEST_CASE("sup-distance ratio is bounded over shrinking pairs") {
  const auto sys = log_growth_2d();
  const Vector x{1.0, 0.5};
  std::vector<double> medians;
  for (int k = 1; k <= 10; ++k) {
    const double gap = std::ldexp(1.0, -k);
    std::vector<double> ratios;
    for (std::size_t p = 0; p < 100; ++p) {
      const auto rec = two_point(sys, sample_path(8, 2, 17, p), 8, x, Vector{x[0] + gap, x[1]});
      ratios.push_back(rec.sup_distance / gap);
    }
    std::nth_element(ratios.begin(), ratios.begin() + 50, ratios.end());
    medians.push_back(ratios[50]);
  }
  const auto [lo, hi] = std::minmax_element(medians.begin(), medians.end());
  CHECK(*hi / *lo <= 5.0);
}

TEST_CASE("homeomorphism report at time zero and for linear flows") {
  const auto grid = FlowGrid::line(6, 1.0);
  const auto path = sample_path(10, 1, 9);
  const auto flow = simulate_flow(geometric_1d(), path, 10, grid);
  const auto rep0 = homeomorphism_report(grid, flow, 0.0);
  CHECK(rep0.injectivity_margin == doctest::Approx(0.4));
  CHECK(*rep0.order_preserved);
  CHECK(rep0.near_distance == 0.5);
  const auto rep = homeomorphism_report(grid, flow, 0.5);
  CHECK(rep.injectivity_margin == doctest::Approx(0.4 * std::exp(interpolant_value(path, 10, 0.5)[0])).epsilon(1e-8));
  CHECK(rep.explosions == 0);
  CHECK(rep.near_pairs == 5);
  CHECK_THROWS_AS(homeomorphism_report(grid, flow, 0.3), std::invalid_argument);
}

TEST_CASE("explosive counterexample") {
  const VectorFieldSystem sys(families::quadratic_drift(1.0, 0.0, 1), "quadratic");
  const FlowGrid grid({{2.0}, {0.5}, {-1.0}}, 2.0);
  const auto flow = simulate_flow(sys, sample_path(12, 1, 1), std::nullopt, grid);
  CHECK(flow.explosions() == 1);
  CHECK(*flow.trajectories[0].exploded > 0.5);
  CHECK(homeomorphism_report(grid, flow, 0.25).explosions == 0);
  CHECK(homeomorphism_report(grid, flow, 1.0).explosions == 1);
}

TEST_CASE("d = 1 trajectories never cross") {
  const VectorFieldSystem sys(families::log_growth(1, 1, 1.0, 1.0, 0.0), "log-growth");
  const auto grid = FlowGrid::line(15, 4.0);
  for (std::size_t k = 0; k < 10; ++k) {
    const auto flow = simulate_flow(sys, sample_path(10, 1, 21, k), 10, grid);
    for (std::size_t j = 0; j < flow.trajectories.front().states.size(); ++j) {
      for (std::size_t a = 1; a < grid.size(); ++a) {
        CHECK(flow.trajectories[a].states[j][0] > flow.trajectories[a - 1].states[j][0]);
      }
    }
  }
}

TEST_CASE("grid order does not change trajectories") {
  const auto sys = log_growth_2d();
  const auto path = sample_path(9, 2, 33);
  const auto grid = FlowGrid::spiral(12, 3.0);
  auto pts = grid.points();
  std::vector<std::size_t> perm(pts.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::rotate(perm.begin(), perm.begin() + 5, perm.end());
  std::vector<Vector> shuffled;
  for (auto i : perm) shuffled.push_back(pts[i]);
  const auto a = simulate_flow(sys, path, 9, grid);
  const auto b = simulate_flow(sys, path, 9, FlowGrid(shuffled, 3.0));
  for (std::size_t j = 0; j < perm.size(); ++j) CHECK(b.trajectories[j].states == a.trajectories[perm[j]].states);
}

TEST_CASE("truncation equality for two-point distances") {
  const auto sys = log_growth_2d();
  const double m = 6.0;
  const auto cut = truncate_system(sys, m);
  int used = 0;
  for (std::size_t k = 0; k < 30; ++k) {
    const auto path = sample_path(8, 2, 55, k);
    const Vector x{1.0, 0.0}, y{1.0, 0.01};
    SolverConfig cfg;
    cfg.output_level = 8;
    const auto full = two_point(sys, path, 8, x, y, cfg);
    const auto tx = solve_regularized(sys, path, 8, x, cfg), ty = solve_regularized(sys, path, 8, y, cfg);
    const double sup = std::max(sup_process(tx).back(), sup_process(ty).back());
    if (sup >= m - 0.5) continue;
    ++used;
    CHECK(two_point(cut, path, 8, x, y, cfg).distances == full.distances);
  }
  CHECK(used >= 20);
}

TEST_CASE("snapshot CSV") {
  const auto grid = FlowGrid::spiral(3, 1.0);
  const auto flow = simulate_flow(log_growth_2d(), sample_path(6, 2, 1), 6, grid);
  std::ostringstream os;
  write_snapshot_csv(grid, flow, 1.0, os);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "x1,x2,y1,y2,exploded");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 3);
}
