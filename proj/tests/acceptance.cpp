// Acceptance run: one PASS/FAIL line per criterion. A criterion passes only
// if its numerical checks hold and it finishes inside its time budget.
// Arguments select a subset by number; none runs all ten.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "stochflow/experiment.hpp"
#include "stochflow/parallel.hpp"

using namespace stochflow;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += (ok ? "" : "VIOLATED ") + what;
  }
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

VectorFieldSystem geometric() { return VectorFieldSystem(families::geometric(1, 1.0, 0.0), "geometric"); }
VectorFieldSystem log_growth(std::size_t d, std::size_t n) {
  return VectorFieldSystem(families::log_growth(d, n, 1.0, 1.0, d > 1 ? 0.5 : 0.0), "log-growth");
}

ExperimentConfig config(const std::string& file) {
  return load_config(std::string(STOCHFLOW_CONFIG_DIR) + "/" + file);
}

const json& report_named(const json& report, const std::string& name) {
  for (const auto& r : report.at("reports")) {
    if (r.at("name") == name) return r;
  }
  throw std::runtime_error("no report named " + name);
}

// E(|g_1| + ... + |g_N|)^q for integer q, expanded into products of the
// one-dimensional absolute moments.
double sum_abs_moment(int N, int q) {
  auto m = [](int k) { return k == 0 ? 1.0 : gaussian_abs_moment(k); };
  std::function<double(int, int)> rec = [&](int dims, int order) -> double {
    if (dims == 1) return m(order);
    double s = 0.0;
    for (int k = 0; k <= order; ++k) {
      s += std::exp(std::lgamma(order + 1.0) - std::lgamma(k + 1.0) - std::lgamma(order - k + 1.0)) * m(k) *
           rec(dims - 1, order - k);
    }
    return s;
  };
  return rec(N, q);
}

Outcome geometric_exactness() {
  Outcome o;
  const auto sys = geometric();
  double worst = 0.0;
  for (std::size_t k = 0; k < 100; ++k) {
    const auto path = sample_path(12, 1, 101, k);
    const double x = 0.5 + 0.01 * static_cast<double>(k);
    const double exact = x * std::exp(path.value(path.nodes() - 1, 0));
    for (int n = 2; n <= 12; ++n) {
      const double z = solve_regularized(sys, path, n, Vector{x}).states.back()[0];
      worst = std::max(worst, std::fabs(z - exact) / std::fabs(exact));
    }
  }
  o.require(worst <= 1e-6, fmt("max relative error %.3g <= 1e-6", worst));
  return o;
}

Outcome stratonovich_targeting() {
  Outcome o;
  const auto sys = geometric();
  const auto est = estimate_moments(
      [&](std::uint64_t seed, std::uint64_t k) {
        const auto path = sample_path(12, 1, seed, k);
        const Vector x{1.0};
        return std::vector<double>{solve_regularized(sys, path, 12, x).states.back()[0],
                                   solve_ito_corrected(sys, path, x).states.back()[0],
                                   solve_ito_uncorrected(sys, path, x).states.back()[0]};
      },
      3, {1.0}, 100000, 2, 0);
  const double target = std::exp(0.5);
  const auto& reg = est[0][0];
  const auto& ito = est[1][0];
  const double raw = est[2][0].estimate();
  o.require(std::fabs(reg.estimate() - target) <= 3.0 * reg.half_width(),
            fmt("regularized mean %.5f, |err| <= 3 hw (hw %.2g)", reg.estimate(), reg.half_width()));
  o.require(std::fabs(ito.estimate() - target) <= 3.0 * ito.half_width(),
            fmt("corrected Ito mean %.5f, |err| <= 3 hw (hw %.2g)", ito.estimate(), ito.half_width()));
  o.require(std::fabs(raw - reg.estimate()) > reg.half_width() && std::fabs(raw - ito.estimate()) > ito.half_width(),
            fmt("uncorrected mean %.5f outside both intervals", raw));
  return o;
}

Outcome two_point_oracle() {
  Outcome o;
  const auto sys = geometric();
  InequalityRequest req;
  req.name = "two-point-lipschitz";
  req.system = &sys;
  req.x = {1.0};
  req.p = 2.0;
  req.dist = 1e-3;
  req.consts.L1 = 1.0;
  req.consts.L2 = 0.5;
  req.n_max = 6;
  req.paths = 100000;
  req.seed = 42;
  const auto rep = verify_inequality(req);
  const double oracle = std::pow(req.dist, 4.0) * std::exp(8.0);
  // the stated closed form e^(2 p^2 L1^2 + 2 p L2) is e^10 here; the quoted
  // value e^9 is the stricter of the two and is enforced as well
  const double stated = std::pow(req.dist, 4.0) * std::exp(9.0);
  const double formula = std::pow(req.dist, 4.0) * std::exp(10.0);
  o.require(std::fabs(rep.lhs - oracle) <= 3.0 * rep.half_width,
            fmt("moment %.4g vs lognormal %.4g within 3 hw (hw %.2g)", rep.lhs, oracle, rep.half_width));
  o.require(rep.lhs <= stated, fmt("moment <= |x-y|^4 e^9 = %.4g", stated));
  o.require(std::fabs(rep.rhs - formula) <= 1e-12 * formula && rep.verdict,
            fmt("evaluated bound %.4g = |x-y|^4 e^10, verdict pass", rep.rhs));
  return o;
}

Outcome gamma_moments() {
  Outcome o;
  const std::size_t paths = 100000;
  const std::vector<double> qs{2, 4, 8, 16};
  int mismatches = 0;
  double worst_z = 0.0, worst_ratio = 0.0;
  for (int N : {1, 3}) {
    for (int n = 2; n <= 10; ++n) {
      const auto est = estimate_moments(
          [&](std::uint64_t seed, std::uint64_t k) {
            return std::vector<double>{gamma_n(sample_path(n, static_cast<std::size_t>(N), seed, k), n, 0.3)};
          },
          1, qs, paths, 1000 + 10 * N + n, 0)[0];
      for (std::size_t j = 0; j < qs.size(); ++j) {
        const double oracle = sum_abs_moment(N, static_cast<int>(qs[j]));
        const double z = std::fabs(est[j].estimate() - oracle) / est[j].half_width();
        worst_z = std::max(worst_z, z);
        if (z > 3.0) ++mismatches;
        worst_ratio = std::max(worst_ratio, est[j].norm_estimate() / (N * std::sqrt(qs[j])));
      }
    }
  }
  o.require(mismatches == 0, fmt("%.0f of 72 moments off by > 3 hw (worst %.2f hw)", mismatches, worst_z));
  o.require(worst_ratio <= 2.0, fmt("max q-norm / (N sqrt q) %.3f <= 2", worst_ratio));
  return o;
}

Outcome alpha_properties() {
  Outcome o;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 2.0), pu(2.0, 8.0);
  int rises = 0;
  for (int k = 0; k < 100; ++k) {
    BoundConstants c;
    c.p = pu(rng);
    c.N = 1 + static_cast<int>(rng() % 4);
    c.L1 = u(rng);
    c.L2 = u(rng);
    c.K1 = u(rng);
    c.K2 = u(rng);
    for (int n = 1; n < 30; ++n) {
      c.n = n;
      const double a = alpha_n(c);
      c.n = n + 1;
      if (alpha_n(c) > a) ++rises;
    }
  }
  o.require(rises == 0, fmt("%.0f increases over 100 sweeps", rises));
  BoundConstants ex;
  ex.p = 2.0;
  ex.N = 1;
  ex.C = 1.0;
  ex.L1 = 1.0;
  ex.n = 60;
  const double limit = alpha_n(ex);
  o.require(std::fabs(limit - 96.0) <= 1e-9 * 96.0, fmt("alpha at n = 60 is %.12g, limit 96", limit));
  return o;
}

Outcome convergence() {
  Outcome o;
  const auto sys = log_growth(2, 2);
  const auto curve = convergence_curve(sys, FlowGrid::spiral(25, 4.0), {4, 6, 8, 10}, 200, 42);
  const double bottom = curve.levels.front().median, top = curve.levels.back().median;
  o.require(curve.reference_level == 14, fmt("reference level %.0f", curve.reference_level));
  o.require(top <= 0.25 * bottom, fmt("median at n=10 %.4g <= 1/4 of n=4 %.4g", top, bottom));
  double rise = -1e300;
  for (std::size_t l = 1; l < curve.levels.size(); ++l) {
    rise = std::max(rise, curve.levels[l].median - curve.levels[l - 1].median);
  }
  o.require(rise <= 0.0, fmt("largest median increase %.3g <= 0", rise));
  o.require(curve.disagreement_median <= 0.1 * top,
            fmt("reference disagreement %.3g <= 10%% of %.4g", curve.disagreement_median, top));
  o.detail += fmt("; %.0f paths used", static_cast<double>(curve.paths_used));
  return o;
}

void flow_checks(Outcome& o, const json& report, const std::string& label, bool order) {
  const auto& times = report.at("flow").at("times");
  std::size_t explosions = 0, non_injective = 0, order_bad = 0;
  double margin = 1e300;
  for (const auto& t : times) {
    explosions += t.at("explosions").get<std::size_t>();
    non_injective += t.at("non_injective_paths").get<std::size_t>();
    margin = std::min(margin, t.at("min_injectivity_margin").get<double>());
    if (order) order_bad += t.at("order_violations").get<std::size_t>();
  }
  o.require(explosions == 0, label + fmt(" explosions %.0f", static_cast<double>(explosions)));
  o.require(non_injective == 0 && margin > 0.0, label + fmt(" min injectivity margin %.3g > 0", margin));
  if (order) o.require(order_bad == 0, label + fmt(" order violations %.0f", static_cast<double>(order_bad)));
}

Outcome flow_diagnostics() {
  Outcome o;
  const auto two_d = compute_experiment("flow-check", config("flow_check_log_growth.json"));
  o.require(two_d.report.at("paths") == 100 && two_d.report.at("flow").at("grid_points") == 50, "100 paths x 50 points");
  flow_checks(o, two_d.report, "d=2", false);
  const auto one_d = compute_experiment("flow-check", config("flow_check_log_growth_1d.json"));
  flow_checks(o, one_d.report, "d=1", true);
  const auto quad = compute_experiment("flow-check", config("flow_check_quadratic.json"));
  const auto& taus = report_named(quad.report, "explosion-detected").at("details").at("explosion_times_first_path");
  const double tau = taus.empty() ? std::nan("") : taus.front().get<double>();
  o.require(tau >= 0.48 && tau <= 0.52, fmt("quadratic blow-up from 2 at %.5f in [0.48, 0.52]", tau));
  return o;
}

Outcome uniform_moments() {
  Outcome o;
  const auto sys = log_growth(2, 2);
  InequalityRequest req;
  req.name = "uniform-one-point-moment";
  req.system = &sys;
  req.x = {1.0, 0.0};
  req.p = 4.0;
  req.levels = {4, 6, 8, 10};
  req.n_max = 10;
  req.paths = 4000;
  req.seed = 8;
  const auto rep = verify_inequality(req);
  o.require(rep.lhs <= 1.5, fmt("max/min over levels of E Y^4 %.4f <= 1.5", rep.lhs));
  o.require(rep.explosions == 0, "no explosions");
  return o;
}

Outcome local_lipschitz() {
  Outcome o;
  const auto sys = log_growth(2, 2);
  const Vector x{1.0, 0.0};
  const std::size_t K = 10;
  const auto est = estimate_moments(
      [&](std::uint64_t seed, std::uint64_t k) {
        const auto path = sample_path(10, 2, seed, k);
        const auto slopes = level_slopes(path, 10);
        SolverConfig cfg;
        const Vector zx = solve_with_slopes(sys, slopes, 10, x, cfg).states.back();
        std::vector<double> out;
        for (std::size_t j = 1; j <= K; ++j) {
          const double gap = std::ldexp(1.0, -static_cast<int>(j));
          const Vector zy = solve_with_slopes(sys, slopes, 10, Vector{x[0] + gap, x[1]}, cfg).states.back();
          out.push_back(std::hypot(zy[0] - zx[0], zy[1] - zx[1]) / gap);
        }
        return out;
      },
      K, {2.0, 4.0}, 10000, 9, 0);
  for (std::size_t q = 0; q < 2; ++q) {
    double lo = 1e300, hi = 0.0;
    for (const auto& e : est) {
      lo = std::min(lo, e[q].estimate());
      hi = std::max(hi, e[q].estimate());
    }
    o.require(hi / lo <= 5.0, fmt("p=%.0f: max/min over k %.3f <= 5", q == 0 ? 2.0 : 4.0, hi / lo));
  }
  return o;
}

Outcome determinism() {
  Outcome o;
  auto cfg = config("two_point_geometric.json");
  cfg.paths = 200;
  for (const std::string experiment : {"two-point", "flow-check"}) {
    auto run = [&](int workers) {
      cfg.workers = workers;
      auto r = compute_experiment(experiment, cfg);
      return std::pair{r.report, r.artifacts};
    };
    const auto one = run(1);
    const bool same = run(4) == one && run(8) == one;
    o.require(same, experiment + " identical for workers 1, 4, 8");
  }
  std::mt19937_64 rng(10);
  std::normal_distribution<double> g;
  std::vector<MomentEstimate> shards(7, MomentEstimate(4.0));
  MomentEstimate whole(4.0);
  for (int k = 0; k < 20000; ++k) {
    const double v = g(rng) * (1 + k % 5);
    shards[rng() % shards.size()].add(v);
    whole.add(v);
  }
  std::vector<std::size_t> order(shards.size());
  std::iota(order.begin(), order.end(), 0);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(order.begin(), order.end(), rng);
    MomentEstimate merged(4.0);
    for (auto i : order) merged.merge(shards[i]);
    if (merged.count != whole.count) worst = 1.0;
    for (auto [a, b] : {std::pair{merged.sum, whole.sum}, std::pair{merged.sum_sq, whole.sum_sq}}) {
      worst = std::max(worst, std::fabs(a - b) / std::fabs(b));
    }
  }
  o.require(worst <= 1e-12, fmt("shard merge relative difference %.2g <= 1e-12", worst));
  return o;
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "geometric exactness", 10, geometric_exactness},
      {2, "Stratonovich targeting", 120, stratonovich_targeting},
      {3, "two-point bound with lognormal oracle", 60, two_point_oracle},
      {4, "increment statistic moments", 30, gamma_moments},
      {5, "discretization constant", 1, alpha_properties},
      {6, "convergence to the reference", 900, convergence},
      {7, "flow diagnostics and blow-up", 600, flow_diagnostics},
      {8, "uniform-in-level moments", 300, uniform_moments},
      {9, "local Lipschitz two-point moments", 600, local_lipschitz},
      {10, "determinism and merge", 60, determinism},
  };
  std::set<int> pick;
  for (int i = 1; i < argc; ++i) pick.insert(std::stoi(argv[i]));
  int failed = 0;
  for (const auto& c : all) {
    if (!pick.empty() && !pick.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    if (!pass) ++failed;
    std::printf("%s %d %s: %s [%.1f s of %.0f s%s]\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                c.budget_s, in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
