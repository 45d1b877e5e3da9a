#include "stochflow/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "stochflow/parallel.hpp"

namespace stochflow {

using nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) out += (k ? sep : "") + v[k];
  return out;
}

// Strict reader for one JSON object: every key must be consumed or known.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string where, std::vector<std::string>& diags)
      : obj_(obj), where_(std::move(where)), diags_(diags) {
    if (!obj_.is_object()) error("", "expected an object");
  }

  bool has(const char* key) {
    known_.insert(key);
    return obj_.is_object() && obj_.contains(key);
  }

  void error(const std::string& key, const std::string& msg) {
    const std::string full = key.empty() ? where_ : (where_.empty() ? key : where_ + "." + key);
    diags_.push_back((full.empty() ? "config" : full) + ": " + msg);
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  void number(const char* key, double& out) {
    if (!has(key)) return;
    const auto& v = obj_.at(key);
    if (!v.is_number()) return error(key, "expected a number");
    out = v.get<double>();
  }

  void integer(const char* key, int& out) {
    if (!has(key)) return;
    const auto& v = obj_.at(key);
    if (!v.is_number_integer()) return error(key, "expected an integer");
    out = v.get<int>();
  }

  void count(const char* key, std::size_t& out) {
    if (!has(key)) return;
    const auto& v = obj_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) return error(key, "expected a nonnegative integer");
    out = v.get<std::size_t>();
  }

  void boolean(const char* key, bool& out) {
    if (!has(key)) return;
    const auto& v = obj_.at(key);
    if (!v.is_boolean()) return error(key, "expected true or false");
    out = v.get<bool>();
  }

  void string(const char* key, std::string& out) {
    if (!has(key)) return;
    const auto& v = obj_.at(key);
    if (!v.is_string()) return error(key, "expected a string");
    out = v.get<std::string>();
  }

  void numbers(const char* key, std::vector<double>& out) {
    if (!has(key)) return;
    const auto& v = obj_.at(key);
    if (!v.is_array() || !std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); })) {
      return error(key, "expected an array of numbers");
    }
    out = v.get<std::vector<double>>();
  }

  void integers(const char* key, std::vector<int>& out) {
    if (!has(key)) return;
    const auto& v = obj_.at(key);
    if (!v.is_array() || !std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number_integer(); })) {
      return error(key, "expected an array of integers");
    }
    out = v.get<std::vector<int>>();
  }

  const json* object(const char* key) {
    if (!has(key)) return nullptr;
    const auto& v = obj_.at(key);
    if (!v.is_object()) {
      error(key, "expected an object");
      return nullptr;
    }
    return &v;
  }

  /// Reports every key that no accessor asked for.
  void finish() {
    if (!obj_.is_object()) return;
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!known_.count(it.key())) error(it.key(), "unknown key");
    }
  }

 private:
  const json& obj_;
  std::string where_;
  std::vector<std::string>& diags_;
  std::set<std::string> known_;
};

// Family parameters with defaults; unknown keys throw.
class ParamReader {
 public:
  explicit ParamReader(const json& params) : params_(params) {
    if (!params_.is_object()) throw std::invalid_argument("family params must be an object");
  }
  double number(const char* key, double fallback) {
    known_.insert(key);
    if (!params_.contains(key)) return fallback;
    if (!params_.at(key).is_number()) throw std::invalid_argument(std::string(key) + " must be a number");
    return params_.at(key).get<double>();
  }
  std::size_t dim(const char* key, std::size_t fallback) {
    known_.insert(key);
    if (!params_.contains(key)) return fallback;
    const auto& v = params_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 1) {
      throw std::invalid_argument(std::string(key) + " must be a positive integer");
    }
    return v.get<std::size_t>();
  }
  Vector vector(const char* key) {
    known_.insert(key);
    if (!params_.contains(key)) throw std::invalid_argument(std::string(key) + " is required");
    const auto& v = params_.at(key);
    if (!v.is_array() || !std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); })) {
      throw std::invalid_argument(std::string(key) + " must be an array of numbers");
    }
    return v.get<Vector>();
  }
  std::vector<Vector> vectors(const char* key) {
    known_.insert(key);
    if (!params_.contains(key)) throw std::invalid_argument(std::string(key) + " is required");
    try {
      return params_.at(key).get<std::vector<Vector>>();
    } catch (const json::exception&) {
      throw std::invalid_argument(std::string(key) + " must be an array of number arrays");
    }
  }
  void finish() {
    for (auto it = params_.begin(); it != params_.end(); ++it) {
      if (!known_.count(it.key())) throw std::invalid_argument("unknown parameter " + it.key());
    }
  }

 private:
  const json& params_;
  std::set<std::string> known_;
};

}  // namespace

ConfigError::ConfigError(std::vector<std::string> diagnostics)
    : std::runtime_error("invalid configuration: " + join(diagnostics, "; ")), diagnostics_(std::move(diagnostics)) {}

VectorFieldSystem make_family(const std::string& name, const json& params) {
  ParamReader r(params);
  std::optional<VectorFieldSystem> sys;
  if (name == "constant") {
    sys.emplace(families::constant(r.vector("drift"), r.vectors("diffusions")), name);
  } else if (name == "linear") {
    const auto d = r.dim("d", 1), n = r.dim("n", 1);
    sys.emplace(families::linear(d, n, r.vector("drift_matrix"), r.vector("diffusion_matrices")), name);
  } else if (name == "geometric" || name == "linear-diffusion") {
    const auto d = r.dim("d", 1);
    const double sigma = r.number("sigma", 1.0), mu = r.number("mu", 0.0);
    sys.emplace(families::geometric(d, sigma, mu), name);
  } else if (name == "trigonometric") {
    const auto d = r.dim("d", 1), n = r.dim("n", 1);
    const double sigma = r.number("sigma", 1.0), drift = r.number("drift_scale", 0.0);
    sys.emplace(families::trigonometric(d, n, sigma, drift), name);
  } else if (name == "rotation") {
    const double sigma = r.number("sigma", 1.0), mu = r.number("mu", 0.0);
    sys.emplace(families::rotation(sigma, mu), name);
  } else if (name == "log-growth") {
    const auto d = r.dim("d", 2), n = r.dim("n", 2);
    const double sigma = r.number("sigma", 1.0), pull = r.number("pull", 1.0), swirl = r.number("swirl", 0.0);
    sys.emplace(families::log_growth(d, n, sigma, pull, swirl), name);
  } else if (name == "quadratic-drift") {
    const auto d = r.dim("d", 1);
    const double c = r.number("coefficient", 1.0), sigma = r.number("sigma", 0.0);
    sys.emplace(families::quadratic_drift(c, sigma, d), name);
  } else {
    throw std::invalid_argument("unknown family " + name +
                                " (constant, linear, geometric, linear-diffusion, trigonometric, rotation, "
                                "log-growth, quadratic-drift)");
  }
  r.finish();
  return *sys;
}

ExperimentConfig parse_config(const json& j, std::vector<std::string>& diags) {
  ExperimentConfig cfg;
  cfg.raw = j;
  ObjectReader top(j, "", diags);
  if (!j.is_object()) return cfg;

  std::optional<VectorFieldSystem> sys;
  if (const json* fam = top.object("family")) {
    ObjectReader fr(*fam, "family", diags);
    fr.string("name", cfg.family_name);
    if (fr.has("params")) cfg.family_params = fam->at("params");
    fr.finish();
    if (cfg.family_name.empty()) {
      fr.error("name", "missing");
    } else {
      try {
        sys.emplace(make_family(cfg.family_name, cfg.family_params));
      } catch (const std::exception& e) {
        fr.error("params", e.what());
      }
    }
  } else {
    top.error("family", "missing");
  }

  if (top.has("seed")) {
    const auto& s = j.at("seed");
    if (s.is_number_unsigned() || (s.is_number_integer() && s.get<long long>() >= 0)) {
      cfg.seed = s.get<std::uint64_t>();
    } else {
      top.error("seed", "expected a nonnegative integer");
    }
  } else {
    top.error("seed", "missing (seeding is never implicit)");
  }

  top.count("paths", cfg.paths);
  if (cfg.paths < 1) top.error("paths", "must be positive");
  top.number("radius", cfg.radius);
  if (!(cfg.radius > 0.0)) top.error("radius", "must be positive");

  if (const json* g = top.object("grid")) {
    ObjectReader gr(*g, "grid", diags);
    gr.string("kind", cfg.grid_kind);
    gr.count("count", cfg.grid_count);
    if (gr.has("points")) {
      try {
        cfg.grid_points = g->at("points").get<std::vector<Vector>>();
      } catch (const json::exception&) {
        gr.error("points", "expected an array of number arrays");
      }
    }
    gr.finish();
    static const std::set<std::string> kinds = {"spiral", "line", "halton", "explicit"};
    if (!cfg.grid_kind.empty() && !kinds.count(cfg.grid_kind)) {
      gr.error("kind", "expected spiral, line, halton or explicit");
    }
    if (cfg.grid_kind == "explicit" && cfg.grid_points.empty()) gr.error("points", "required for explicit grids");
    if (cfg.grid_kind != "explicit" && !cfg.grid_points.empty()) gr.error("points", "only allowed for explicit grids");
  }

  top.integers("levels", cfg.levels);
  const bool has_nmax = top.has("n_max");
  top.integer("n_max", cfg.n_max);
  if (cfg.levels.empty()) {
    top.error("levels", "must not be empty");
  } else {
    const int hi = *std::max_element(cfg.levels.begin(), cfg.levels.end());
    const int lo = *std::min_element(cfg.levels.begin(), cfg.levels.end());
    if (lo < 1) top.error("levels", "levels must be >= 1");
    if (!has_nmax) cfg.n_max = hi + 4;
    if (hi > cfg.n_max - 4) {
      top.error("levels", "reference rule violated: every level must be <= n_max - 4 (max level " +
                              std::to_string(hi) + ", n_max " + std::to_string(cfg.n_max) + ")");
    }
  }
  if (cfg.n_max < 1 || cfg.n_max > 24) top.error("n_max", "must lie in 1..24");

  top.numbers("moment_orders", cfg.moment_orders);
  if (cfg.moment_orders.empty()) top.error("moment_orders", "must not be empty");
  for (double p : cfg.moment_orders) {
    if (!(p >= 1.0)) top.error("moment_orders", "orders must be >= 1");
  }
  top.numbers("point", cfg.point);
  top.integer("workers", cfg.workers);
  top.string("output_dir", cfg.output_dir);

  if (const json* s = top.object("solver")) {
    ObjectReader sr(*s, "solver", diags);
    sr.integer("substeps", cfg.solver.substeps);
    sr.number("max_step", cfg.solver.max_step);
    sr.number("explosion_threshold", cfg.solver.explosion_threshold);
    if (sr.has("output_level")) {
      int out = 0;
      sr.integer("output_level", out);
      cfg.solver.output_level = out;
    }
    sr.boolean("reference_cross_check", cfg.solver.reference_cross_check);
    sr.number("reference_tolerance", cfg.solver.reference_tolerance);
    sr.finish();
    try {
      cfg.solver.validate();
    } catch (const std::exception& e) {
      sr.error("", e.what());
    }
  }

  if (const json* c = top.object("constants")) {
    ObjectReader cr(*c, "constants", diags);
    cfg.constants_given = true;
    auto& k = cfg.constants;
    cr.number("C1", k.C1);
    cr.number("C2", k.C2);
    cr.number("C3", k.C3);
    cr.number("C4", k.C4);
    cr.number("L1", k.L1);
    cr.number("L2", k.L2);
    cr.number("K1", k.K1);
    cr.number("K2", k.K2);
    cr.number("delta0", k.delta0);
    cr.number("C", k.C);
    cr.finish();
    try {
      k.validate();
    } catch (const std::exception& e) {
      cr.error("", e.what());
    }
  }

  if (const json* f = top.object("flow")) {
    ObjectReader fr(*f, "flow", diags);
    fr.numbers("times", cfg.flow.times);
    fr.number("alpha", cfg.flow.alpha);
    fr.number("near_distance", cfg.flow.near_distance);
    if (fr.has("level")) {
      int lv = 0;
      fr.integer("level", lv);
      cfg.flow.level = lv;
    }
    fr.boolean("expect_explosion", cfg.flow.expect_explosion);
    fr.finish();
    if (!(cfg.flow.alpha > 0.0 && cfg.flow.alpha < 1.0)) fr.error("alpha", "must lie in (0, 1)");
    for (double t : cfg.flow.times) {
      if (!(t >= 0.0 && t <= 1.0)) fr.error("times", "times must lie in [0, 1]");
    }
    if (cfg.flow.level && (*cfg.flow.level < 1 || *cfg.flow.level > cfg.n_max)) {
      fr.error("level", "must lie in 1..n_max");
    }
  }

  if (const json* t = top.object("two_point")) {
    ObjectReader tr(*t, "two_point", diags);
    tr.number("dist", cfg.two_point.dist);
    tr.integer("pair_count", cfg.two_point.pair_count);
    if (tr.has("level")) {
      int lv = 0;
      tr.integer("level", lv);
      cfg.two_point.level = lv;
    }
    tr.finish();
    if (!(cfg.two_point.dist > 0.0)) tr.error("dist", "must be positive");
    if (cfg.two_point.pair_count < 2) tr.error("pair_count", "must be >= 2");
    if (cfg.two_point.level && (*cfg.two_point.level < 1 || *cfg.two_point.level > cfg.n_max)) {
      tr.error("level", "must lie in 1..n_max");
    }
  }

  if (const json* h = top.object("hypothesis")) {
    ObjectReader hr(*h, "hypothesis", diags);
    hr.numbers("radii", cfg.hypothesis.radii);
    hr.integer("grid_density", cfg.hypothesis.grid_density);
    hr.number("slack", cfg.hypothesis.slack);
    hr.finish();
    if (cfg.hypothesis.radii.size() < 4) hr.error("radii", "need at least 4 radii");
    for (double m : cfg.hypothesis.radii) {
      if (!(m >= 2.0)) hr.error("radii", "radii must be >= 2");
    }
    if (cfg.hypothesis.grid_density < 8) hr.error("grid_density", "must be >= 8");
    if (!(cfg.hypothesis.slack >= 1.0)) hr.error("slack", "must be >= 1");
  }

  if (top.has("inequalities")) {
    const auto& v = j.at("inequalities");
    if (!v.is_array() || !std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_string(); })) {
      top.error("inequalities", "expected an array of names");
    } else {
      cfg.inequalities = v.get<std::vector<std::string>>();
      const auto known = registered_inequalities();
      for (const auto& name : cfg.inequalities) {
        if (std::find(known.begin(), known.end(), name) == known.end()) {
          top.error("inequalities", "unregistered inequality " + name);
        }
      }
    }
  }
  top.finish();

  // cross-field checks that need the system
  if (sys) {
    const std::size_t d = sys->dim_state();
    if (!cfg.point.empty() && cfg.point.size() != d) top.error("point", "dimension does not match the family");
    for (const auto& p : cfg.grid_points) {
      if (p.size() != d) {
        top.error("grid.points", "dimension does not match the family");
        break;
      }
    }
    if (cfg.grid_kind == "spiral" && d != 2) top.error("grid.kind", "spiral grids need d = 2");
    if (cfg.grid_kind == "line" && d != 1) top.error("grid.kind", "line grids need d = 1");
    if (!cfg.grid_points.empty()) {
      try {
        FlowGrid(cfg.grid_points, cfg.radius);
      } catch (const std::exception& e) {
        top.error("grid.points", e.what());
      }
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"config: cannot open " + path});
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("config: parse error: ") + e.what()});
  }
  std::vector<std::string> diags;
  auto cfg = parse_config(j, diags);
  if (!diags.empty()) throw ConfigError(diags);
  return cfg;
}

std::vector<std::string> validate_config_file(const std::string& path) {
  try {
    load_config(path);
  } catch (const ConfigError& e) {
    return e.diagnostics();
  }
  return {};
}

std::vector<std::string> experiment_names() {
  return {"moments", "two-point", "convergence", "flow-check", "hypothesis-check", "bounds"};
}

// ---------------------------------------------------------------------------
// Experiments

namespace {

struct Context {
  const ExperimentConfig& cfg;
  VectorFieldSystem sys;
  Vector point;
  FlowGrid grid;
};

FlowGrid build_grid(const ExperimentConfig& cfg, std::size_t d) {
  std::string kind = cfg.grid_kind;
  if (kind.empty()) kind = d == 1 ? "line" : d == 2 ? "spiral" : "halton";
  if (kind == "explicit") return FlowGrid(cfg.grid_points, cfg.radius);
  if (kind == "line") return FlowGrid::line(cfg.grid_count, cfg.radius);
  if (kind == "spiral") return FlowGrid::spiral(cfg.grid_count, cfg.radius);
  return FlowGrid::halton(d, cfg.grid_count, cfg.radius);
}

Context make_context(const ExperimentConfig& cfg) {
  auto sys = make_family(cfg.family_name, cfg.family_params);
  Vector point = cfg.point;
  if (point.empty()) {
    point.assign(sys.dim_state(), 0.0);
    point[0] = 1.0;
  }
  auto grid = build_grid(cfg, sys.dim_state());
  return Context{cfg, std::move(sys), std::move(point), std::move(grid)};
}

InequalityRequest base_request(const Context& ctx, const std::string& name, double p) {
  InequalityRequest req;
  req.name = name;
  req.system = &ctx.sys;
  req.consts = ctx.cfg.constants;
  req.consts.N = static_cast<int>(ctx.sys.dim_noise());
  req.p = p;
  req.x = ctx.point;
  req.dist = ctx.cfg.two_point.dist;
  req.radius = ctx.cfg.radius;
  req.levels = ctx.cfg.levels;
  req.level = ctx.cfg.two_point.level;
  req.n_max = ctx.cfg.n_max;
  req.paths = ctx.cfg.paths;
  req.seed = ctx.cfg.seed;
  req.workers = ctx.cfg.workers;
  req.pair_count = ctx.cfg.two_point.pair_count;
  req.solver = ctx.cfg.solver;
  return req;
}

InequalityReport simple_report(const std::string& name, double lhs, double rhs, Direction dir,
                               const ExperimentConfig& cfg) {
  InequalityReport r;
  r.name = name;
  r.lhs = lhs;
  r.rhs = rhs;
  r.direction = dir;
  r.seed = cfg.seed;
  r.samples = cfg.paths;
  r.decide();
  return r;
}

std::string csv_of(const std::vector<InequalityReport>& reports) {
  std::ostringstream os;
  write_reports_csv(reports, os);
  return os.str();
}

std::string time_label(double t) {
  std::ostringstream os;
  os << t;
  return os.str();
}

void run_moments(const Context& ctx, RunOutcome& out, std::vector<InequalityReport>& reports) {
  for (double p : ctx.cfg.moment_orders) {
    auto rep = verify_inequality(base_request(ctx, "uniform-one-point-moment", p));
    if (p > 8.0) rep.notes.push_back("moment order above 8: Monte Carlo error grows quickly");
    reports.push_back(std::move(rep));
  }
  (void)out;
}

void run_two_point(const Context& ctx, RunOutcome& out, std::vector<InequalityReport>& reports) {
  auto level = ctx.cfg.two_point.level;
  if (!level) level = *std::max_element(ctx.cfg.levels.begin(), ctx.cfg.levels.end());
  for (double p : ctx.cfg.moment_orders) {
    auto req = base_request(ctx, "two-point-local-lipschitz", p);
    req.level = level;
    reports.push_back(verify_inequality(req));
  }
  if (ctx.cfg.constants_given) {
    const double p = std::max(2.0, ctx.cfg.moment_orders.front());
    for (const char* name : {"two-point-lipschitz", "two-point-sup-lipschitz"}) {
      auto req = base_request(ctx, name, p);
      req.level = level;
      reports.push_back(verify_inequality(req));
    }
  }
  (void)out;
}

void run_convergence(const Context& ctx, RunOutcome& out, std::vector<InequalityReport>& reports) {
  const auto& cfg = ctx.cfg;
  const auto curve = convergence_curve(ctx.sys, ctx.grid, cfg.levels, cfg.paths, cfg.seed, cfg.solver, cfg.workers,
                                       cfg.moment_orders.front(), cfg.flow.alpha);
  std::vector<std::pair<int, double>> by_level;
  for (const auto& lv : curve.levels) by_level.emplace_back(lv.level, lv.median);
  std::sort(by_level.begin(), by_level.end());
  const double first = by_level.front().second;
  const double last = by_level.back().second;

  auto quarter = simple_report("convergence-quarter", last, 0.25 * first, Direction::kAtMost, cfg);
  quarter.notes.push_back("median sup error at the finest level against a quarter of the coarsest");
  reports.push_back(quarter);

  double worst_rise = 0.0;
  for (std::size_t k = 1; k < by_level.size(); ++k) {
    worst_rise = std::max(worst_rise, by_level[k].second - by_level[k - 1].second);
  }
  reports.push_back(simple_report("convergence-monotone", worst_rise, 0.0, Direction::kAtMost, cfg));

  if (cfg.solver.reference_cross_check) {
    auto cross = simple_report("reference-cross-check", curve.disagreement_median, 0.1 * last, Direction::kAtMost, cfg);
    cross.notes.push_back("median Wong-Zakai vs predictor-corrector gap against a tenth of the finest-level error");
    reports.push_back(cross);
  }

  std::vector<double> holders;
  for (const auto& lv : curve.levels) holders.push_back(lv.holder_median);
  if (ctx.grid.size() >= 2 && *std::min_element(holders.begin(), holders.end()) > 0.0) {
    const auto [lo, hi] = std::minmax_element(holders.begin(), holders.end());
    auto holder = simple_report("holder-field-bounded", *hi / *lo, 5.0, Direction::kAtMost, cfg);
    holder.details["holder_medians"] = holders;
    reports.push_back(holder);
  }

  json c;
  c["reference_level"] = curve.reference_level;
  c["output_level"] = curve.output_level;
  c["paths_used"] = curve.paths_used;
  c["paths_discarded"] = curve.paths_discarded;
  c["slope_log2_per_level"] = curve.slope;
  c["disagreement_median"] = curve.disagreement_median;
  c["disagreement_max"] = curve.disagreement_max;
  c["flagged_references"] = curve.flagged;
  c["reference_holder_median"] = curve.reference_holder_median;
  c["levels"] = json::array();
  for (const auto& lv : curve.levels) {
    c["levels"].push_back({{"level", lv.level},
                           {"mean", lv.mean},
                           {"median", lv.median},
                           {"moment", lv.moment},
                           {"explosions", lv.explosions},
                           {"holder_median", lv.holder_median}});
  }
  out.report["curve"] = c;
  std::ostringstream os;
  write_convergence_csv(curve, os);
  out.artifacts.emplace_back("convergence_curve.csv", os.str());
}

struct FlowPathSummary {
  std::vector<HomeomorphismReport> reports;  // one per time
  std::vector<double> explosion_times;       // per grid point, NaN if none
  std::vector<std::string> snapshots;        // first path only, one per time
};

void run_flow_check(const Context& ctx, RunOutcome& out, std::vector<InequalityReport>& reports) {
  const auto& cfg = ctx.cfg;
  const auto& times = cfg.flow.times;
  SolverConfig solver = cfg.solver;
  const int level = cfg.flow.level.value_or(cfg.n_max);
  if (!solver.output_level) solver.output_level = std::min(level, 10);
  for (double t : times) {
    const double k = std::ldexp(t, *solver.output_level);
    if (std::fabs(k - std::round(k)) > 1e-9) throw ConfigError({"flow.times: not on the output grid"});
  }

  auto run_path = [&](std::size_t k) {
    const auto path = sample_path(cfg.n_max, ctx.sys.dim_noise(), cfg.seed, k);
    const auto flow = simulate_flow(ctx.sys, path, cfg.flow.level, ctx.grid, solver);
    FlowPathSummary s;
    for (double t : times) {
      s.reports.push_back(homeomorphism_report(ctx.grid, flow, t, cfg.flow.alpha, cfg.flow.near_distance));
      if (k == 0) {
        std::ostringstream os;
        write_snapshot_csv(ctx.grid, flow, t, os);
        s.snapshots.push_back(os.str());
      }
    }
    for (const auto& tr : flow.trajectories) {
      s.explosion_times.push_back(tr.exploded.value_or(std::numeric_limits<double>::quiet_NaN()));
    }
    return s;
  };
  const auto summaries = parallel_map(cfg.paths, cfg.workers, run_path);
  for (std::size_t ti = 0; ti < times.size(); ++ti) {
    out.artifacts.emplace_back("snapshot_t" + time_label(times[ti]) + ".csv", summaries.front().snapshots[ti]);
  }

  json per_time = json::array();
  std::size_t explosions_total = 0, non_injective = 0, order_violations = 0;
  for (std::size_t ti = 0; ti < times.size(); ++ti) {
    std::size_t expl = 0, bad_inj = 0, bad_order = 0, near_pairs = 0;
    double margin = std::numeric_limits<double>::infinity(), modulus = 0.0;
    for (const auto& s : summaries) {
      const auto& r = s.reports[ti];
      expl += r.explosions;
      if (!r.injective) ++bad_inj;
      if (r.order_preserved && !*r.order_preserved) ++bad_order;
      margin = std::min(margin, r.injectivity_margin);
      modulus = std::max(modulus, r.modulus_ratio);
      near_pairs = r.near_pairs;
    }
    explosions_total = std::max(explosions_total, expl);
    non_injective += bad_inj;
    order_violations += bad_order;
    json e = {{"time", times[ti]},
              {"explosions", expl},
              {"min_injectivity_margin", margin},
              {"non_injective_paths", bad_inj},
              {"max_modulus_ratio", modulus},
              {"near_pairs", near_pairs}};
    if (ctx.grid.dim() == 1) e["order_violations"] = bad_order;
    per_time.push_back(e);
  }
  std::vector<double> first_explosions;
  for (double tau : summaries.front().explosion_times) first_explosions.push_back(tau);
  json f;
  f["level"] = cfg.flow.level ? json(*cfg.flow.level) : json("reference");
  f["output_level"] = *solver.output_level;
  f["alpha"] = cfg.flow.alpha;
  f["grid_points"] = ctx.grid.size();
  f["times"] = per_time;
  f["explosion_times_first_path"] = json::array();
  for (double tau : first_explosions) {
    f["explosion_times_first_path"].push_back(std::isfinite(tau) ? json(tau) : json(nullptr));
  }
  out.report["flow"] = f;

  if (cfg.flow.expect_explosion) {
    auto r = simple_report("explosion-detected", static_cast<double>(explosions_total), 1.0, Direction::kAtLeast, cfg);
    r.explosions = explosions_total;
    r.details["explosion_times_first_path"] = first_explosions;
    reports.push_back(r);
  } else {
    auto r = simple_report("no-explosion", static_cast<double>(explosions_total), 0.0, Direction::kAtMost, cfg);
    r.explosions = explosions_total;
    reports.push_back(r);
    reports.push_back(simple_report("injectivity", static_cast<double>(non_injective), 0.0, Direction::kAtMost, cfg));
    if (ctx.grid.dim() == 1) {
      reports.push_back(
          simple_report("order-preservation", static_cast<double>(order_violations), 0.0, Direction::kAtMost, cfg));
    }
  }
}

std::string line_label(const std::string& name) {
  if (name == "sup_diffusion_sq") return "squared diffusion size";
  if (name == "sup_drift") return "drift size";
  if (name == "lip_diffusion_sq") return "squared diffusion Lipschitz constant";
  if (name == "lip_drift") return "corrected drift Lipschitz constant";
  if (name == "bracket_lip_offdiag") return "diffusion bracket Lipschitz constant";
  return "drift bracket Lipschitz constant";
}

void run_hypothesis(const Context& ctx, RunOutcome& out, std::vector<InequalityReport>& reports) {
  const auto& h = ctx.cfg.hypothesis;
  const auto res = check_hypothesis_H(ctx.sys, h.radii, h.grid_density, h.slack);
  json j;
  j["radii"] = res.radii;
  j["pass"] = res.pass;
  j["diagnostic"] = res.diagnostic;
  j["constants"] = {{"gamma1", res.gamma1}, {"gamma2", res.gamma2}, {"beta1", res.beta1},
                    {"beta2", res.beta2},   {"delta1", res.delta1}, {"delta2", res.delta2}};
  j["lines"] = json::array();
  for (const auto& line : res.lines) {
    j["lines"].push_back({{"name", line.name},
                          {"role", line_label(line.name)},
                          {"scale", line.scale},
                          {"ratios", line.ratios},
                          {"fitted_constant", line.fitted_constant},
                          {"growth", line.growth},
                          {"pass", line.pass}});
    auto r = simple_report("hypothesis:" + line.name, line.growth, h.slack, Direction::kAtMost, ctx.cfg);
    r.samples = res.profiles.empty() ? 0 : res.profiles.back().samples;
    r.details["ratios"] = line.ratios;
    r.notes.push_back(line_label(line.name) + " against " + line.scale);
    if (!line.pass) r.notes.push_back("violation: " + line_label(line.name) + " outgrows " + line.scale);
    reports.push_back(r);
  }
  if (res.lines.empty()) {
    auto r = simple_report("hypothesis:profile", 1.0, 0.0, Direction::kAtMost, ctx.cfg);
    r.notes.push_back(res.diagnostic);
    reports.push_back(r);
  }
  out.report["hypothesis"] = j;
}

void run_bounds(const Context& ctx, RunOutcome& out, std::vector<InequalityReport>& reports) {
  auto names = ctx.cfg.inequalities;
  if (names.empty()) names = registered_inequalities();
  const double p = std::max(2.0, ctx.cfg.moment_orders.front());
  for (const auto& name : names) reports.push_back(verify_inequality(base_request(ctx, name, p)));
  (void)out;
}

}  // namespace

RunOutcome compute_experiment(const std::string& experiment, const ExperimentConfig& cfg) {
  const auto names = experiment_names();
  if (std::find(names.begin(), names.end(), experiment) == names.end()) {
    throw ConfigError({"experiment: unknown experiment " + experiment + " (" + join(names, ", ") + ")"});
  }
  const Context ctx = make_context(cfg);
  RunOutcome out;
  std::vector<InequalityReport> reports;
  if (experiment == "moments") run_moments(ctx, out, reports);
  if (experiment == "two-point") run_two_point(ctx, out, reports);
  if (experiment == "convergence") run_convergence(ctx, out, reports);
  if (experiment == "flow-check") run_flow_check(ctx, out, reports);
  if (experiment == "hypothesis-check") run_hypothesis(ctx, out, reports);
  if (experiment == "bounds") run_bounds(ctx, out, reports);

  json echo = cfg.raw;
  echo.erase("workers");
  echo.erase("output_dir");
  out.report["experiment"] = experiment;
  out.report["config"] = echo;
  out.report["family"] = {{"name", cfg.family_name}, {"dim_state", ctx.sys.dim_state()},
                          {"dim_noise", ctx.sys.dim_noise()}};
  out.report["seed"] = cfg.seed;
  out.report["paths"] = cfg.paths;
  out.report["reports"] = json::array();
  bool hard_pass = true;
  std::vector<std::string> failed;
  for (const auto& r : reports) {
    out.report["reports"].push_back(to_json(r));
    if (r.kind == "hard" && !r.verdict) {
      hard_pass = false;
      failed.push_back(r.name);
    }
  }
  out.report["verdict"] = hard_pass ? "pass" : "fail";
  out.report["failed"] = failed;
  out.exit_code = hard_pass ? 0 : 2;
  out.artifacts.emplace(out.artifacts.begin(), experiment + "_summary.csv", csv_of(reports));
  return out;
}

RunOutcome run_experiment(const std::string& experiment, const ExperimentConfig& cfg, const std::string& timestamp) {
  RunOutcome out = compute_experiment(experiment, cfg);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + cfg.output_dir + ": " + ec.message());

  const std::string report_name = experiment + ".json";
  out.files.push_back(report_name);
  for (const auto& [name, content] : out.artifacts) out.files.push_back(name);
  out.report["files"] = out.files;
  out.report["timestamp"] = timestamp;

  auto write = [&](const std::string& name, const std::string& content) {
    const fs::path target = fs::path(cfg.output_dir) / name;
    std::ofstream os(target, std::ios::binary);
    os << content;
    if (!os) throw std::runtime_error("cannot write " + target.string());
  };
  write(report_name, out.report.dump(2) + "\n");
  for (const auto& [name, content] : out.artifacts) write(name, content);
  return out;
}

}  // namespace stochflow
