#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <stdexcept>
#include <string>

#include "generators.hpp"
#include "stochflow/parallel.hpp"
#include "stochflow/verify.hpp"

using namespace stochflow;

namespace {

VectorFieldSystem log_growth_2d() { return VectorFieldSystem(families::log_growth(2, 2, 1.0, 1.0, 0.5), "log-growth"); }

double terminal_norm(std::uint64_t seed, std::uint64_t k) {
  const auto path = sample_path(6, 2, seed, k);
  return norm(solve_regularized(log_growth_2d(), path, 6, Vector{1.0, 0.0}).states.back());
}

}  // namespace

TEST_CASE("parallel_map matches serial_map") {
  auto f = [](std::size_t k) { return std::sin(static_cast<double>(k)) * static_cast<double>(k * k); };
  const auto ref = serial_map(1000, f);
  for (int workers : {1, 2, 4, 8, 0}) CHECK(parallel_map(1000, workers, f) == ref);
  CHECK(parallel_map(0, 4, f).empty());
  CHECK(parallel_map(1, 4, f) == serial_map(1, f));
}

TEST_CASE("the lowest failing index is rethrown") {
  auto f = [](std::size_t k) -> int {
    if (k == 17 || k == 40) throw std::runtime_error("item " + std::to_string(k));
    return static_cast<int>(k);
  };
  for (int workers : {1, 4, 8}) {
    try {
      parallel_map(64, workers, f);
      FAIL("expected a throw");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()) == "item 17");
    }
  }
}

TEST_CASE("moment estimates do not depend on the worker count") {
  const auto ref = estimate_moment_serial(terminal_norm, 4.0, 400, 5);
  for (int workers : {1, 4, 8}) {
    const auto e = estimate_moment(terminal_norm, 4.0, 400, 5, workers);
    CHECK(e.sum == ref.sum);
    CHECK(e.sum_sq == ref.sum_sq);
    CHECK(e.count == ref.count);
    CHECK(e.estimate() == ref.estimate());
  }
}

TEST_CASE("convergence curves do not depend on the worker count") {
  const auto sys = log_growth_2d();
  const auto grid = FlowGrid::spiral(5, 2.0);
  const std::vector<int> levels{3, 5};
  const auto serial = convergence_errors_serial(sys, grid, levels, 24, 8);
  REQUIRE(serial.size() == 24);
  std::vector<double> first;
  for (const auto& e : serial) first.push_back(e[0]);
  const auto one = convergence_curve(sys, grid, levels, 24, 8, {}, 1);
  CHECK(one.levels[0].median == median(first));
  for (int workers : {4, 8}) {
    const auto c = convergence_curve(sys, grid, levels, 24, 8, {}, workers);
    for (std::size_t l = 0; l < levels.size(); ++l) {
      CHECK(c.levels[l].mean == one.levels[l].mean);
      CHECK(c.levels[l].median == one.levels[l].median);
      CHECK(c.levels[l].holder_median == one.levels[l].holder_median);
    }
    CHECK(c.disagreement_median == one.disagreement_median);
  }
}

TEST_CASE("worker resolution") {
  CHECK(resolve_workers(3) == 3);
  CHECK(resolve_workers(0) >= 1);
  CHECK(resolve_workers(-2) >= 1);
}
