#include "stochflow/integrate.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <variant>

namespace stochflow {

void SolverConfig::validate() const {
  if (substeps < 1) throw std::invalid_argument("substeps must be >= 1");
  if (!(max_step > 0.0)) throw std::invalid_argument("max_step must be positive");
  if (!(explosion_threshold > 0.0)) throw std::invalid_argument("explosion threshold must be positive");
  if (output_level && (*output_level < 0 || *output_level > 24)) {
    throw std::invalid_argument("output level must be in 0..24");
  }
  if (!(reference_tolerance > 0.0)) throw std::invalid_argument("reference tolerance must be positive");
}

const Vector* Trajectory::state_at(double t) const {
  const double k = std::ldexp(t, output_level);
  if (std::fabs(k - std::round(k)) > 1e-9) return nullptr;
  const auto idx = static_cast<std::size_t>(std::llround(k));
  return idx < states.size() ? &states[idx] : nullptr;
}

namespace {

bool finite_state(const Vector& z) {
  return std::all_of(z.begin(), z.end(), [](double v) { return std::isfinite(v); });
}

// Advances z over total_steps uniform steps of [0, 1], recording every
// record_every steps. step(j, z) moves z from step j to j + 1.
template <class Step>
Trajectory march(std::span<const double> x0, std::size_t total_steps, std::size_t record_every,
                 int output_level, double threshold, Step&& step) {
  Trajectory traj;
  traj.output_level = output_level;
  const std::size_t outputs = total_steps / record_every;
  traj.times.reserve(outputs + 1);
  traj.states.reserve(outputs + 1);
  Vector z(x0.begin(), x0.end());
  traj.times.push_back(0.0);
  traj.states.push_back(z);
  // a NaN or infinite state fails the squared-norm comparison as well
  const double limit_sq = threshold * threshold;
  std::size_t until_record = record_every;
  for (std::size_t j = 0; j < total_steps; ++j) {
    step(j, z);
    double sq = 0.0;
    for (double v : z) sq += v * v;
    if (!(sq <= limit_sq)) {
      const std::size_t out_index = traj.states.size();  // ceil((j + 1) / every)
      traj.exploded = std::ldexp(static_cast<double>(out_index), -output_level);
      return traj;
    }
    if (--until_record == 0) {
      until_record = record_every;
      traj.times.push_back(std::ldexp(static_cast<double>(traj.states.size()), -output_level));
      traj.states.push_back(z);
    }
  }
  return traj;
}

void check_start(const VectorFieldSystem& sys, std::span<const double> x0) {
  if (x0.size() != sys.dim_state()) throw std::invalid_argument("initial point has wrong dimension");
  if (!std::all_of(x0.begin(), x0.end(), [](double v) { return std::isfinite(v); })) {
    throw std::invalid_argument("initial point must be finite");
  }
}

[[noreturn]] void domain_failure(const char* what, const Vector& z) { throw DomainError(what, z); }

// On z' = A z + b one RK4 step of size h is exactly z <- P z + Q b with
// P = sum_{m<=4} (hA)^m / m! and Q = h sum_{m<=3} (hA)^m / (m+1)!. Within a
// level interval A and b are fixed, so P and Q are built once per interval.
Trajectory affine_rk4(const LinearFields& f, std::span<const double> slopes, std::span<const double> x0,
                      std::size_t total, std::size_t every, int out, std::size_t sub, double h,
                      double threshold) {
  const std::size_t d = f.d, nd = f.n, dd = d * d;
  Vector A(dd), b(d), P(dd), Q(dd), power(dd), next(dd), shift(d), tmp(d);
  const double* c = slopes.data();
  std::size_t left_in_interval = 0;
  auto build = [&] {
    for (std::size_t k = 0; k < dd; ++k) A[k] = h * f.drift_matrix[k];
    for (std::size_t r = 0; r < d; ++r) b[r] = f.drift_offset[r];
    for (std::size_t i = 0; i < nd; ++i) {
      for (std::size_t k = 0; k < dd; ++k) A[k] += h * c[i] * f.diffusion_matrices[i * dd + k];
      for (std::size_t r = 0; r < d; ++r) b[r] += c[i] * f.diffusion_offsets[i * d + r];
    }
    // power runs through (hA)^m; P and Q accumulate the truncated series
    std::fill(power.begin(), power.end(), 0.0);
    for (std::size_t r = 0; r < d; ++r) power[r * d + r] = 1.0;
    P = power;
    for (std::size_t k = 0; k < dd; ++k) Q[k] = h * power[k];
    double fact = 1.0;
    for (int m = 1; m <= 4; ++m) {
      for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t col = 0; col < d; ++col) {
          double acc = 0.0;
          for (std::size_t k = 0; k < d; ++k) acc += A[r * d + k] * power[k * d + col];
          next[r * d + col] = acc;
        }
      }
      power.swap(next);
      fact *= m;
      for (std::size_t k = 0; k < dd; ++k) P[k] += power[k] / fact;
      if (m <= 3) {
        for (std::size_t k = 0; k < dd; ++k) Q[k] += h * power[k] / (fact * (m + 1));
      }
    }
    for (std::size_t r = 0; r < d; ++r) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += Q[r * d + k] * b[k];
      shift[r] = acc;
    }
  };
  return march(x0, total, every, out, threshold, [&](std::size_t, Vector& z) {
    if (left_in_interval == 0) {
      build();
      c += nd;
      left_in_interval = sub;
    }
    --left_in_interval;
    for (std::size_t r = 0; r < d; ++r) {
      double acc = shift[r];
      for (std::size_t k = 0; k < d; ++k) acc += P[r * d + k] * z[k];
      tmp[r] = acc;
    }
    z.swap(tmp);
  });
}

}  // namespace

Trajectory solve_with_slopes(const VectorFieldSystem& sys, std::span<const double> slopes, int n,
                             std::span<const double> x0, const SolverConfig& cfg) {
  cfg.validate();
  check_start(sys, x0);
  if (n < 0 || n > 24) throw std::invalid_argument("level must be in 0..24");
  const std::size_t d = sys.dim_state();
  const std::size_t nd = sys.dim_noise();
  const std::size_t intervals = std::size_t{1} << n;
  if (slopes.size() != intervals * nd) throw std::invalid_argument("slope table has wrong size");
  const int out = cfg.output_level.value_or(std::min(n, 10));

  // substeps per level-n interval
  const double width = std::ldexp(1.0, -n);
  auto sub = static_cast<std::size_t>(
      std::max<double>(cfg.substeps, std::ceil(width / cfg.max_step - 1e-9)));
  if (out > n) {
    const std::size_t align = std::size_t{1} << (out - n);
    sub = (sub + align - 1) / align * align;
  }
  const std::size_t total = intervals * sub;
  const std::size_t every = total >> out;
  const double h = width / static_cast<double>(sub);

  const auto* affine = std::get_if<LinearFields>(&sys.family());
  if (affine != nullptr && sys.cutoff_radii().empty()) {
    return affine_rk4(*affine, slopes, x0, total, every, out, sub, h, cfg.explosion_threshold);
  }

  return sys.with_kernel([&](auto& kernel) {
    Vector a0(d), ai(nd * d), k1(d), k2(d), k3(d), k4(d), tmp(d);
    const double* c = slopes.data();
    std::size_t left_in_interval = sub;
    auto rhs = [&](const double* z, double* f) {
      kernel.evaluate(z, a0.data(), ai.data());
      for (std::size_t r = 0; r < d; ++r) f[r] = a0[r];
      for (std::size_t i = 0; i < nd; ++i) {
        const double ci = c[i];
        const double* a = ai.data() + i * d;
        for (std::size_t r = 0; r < d; ++r) f[r] += ci * a[r];
      }
    };
    return march(x0, total, every, out, cfg.explosion_threshold, [&](std::size_t, Vector& z) {
      if (left_in_interval == 0) {
        left_in_interval = sub;
        c += nd;
      }
      --left_in_interval;
      rhs(z.data(), k1.data());
      if (!finite_state(k1)) domain_failure("non-finite vector field at a finite state", z);
      for (std::size_t r = 0; r < d; ++r) tmp[r] = z[r] + 0.5 * h * k1[r];
      rhs(tmp.data(), k2.data());
      for (std::size_t r = 0; r < d; ++r) tmp[r] = z[r] + 0.5 * h * k2[r];
      rhs(tmp.data(), k3.data());
      for (std::size_t r = 0; r < d; ++r) tmp[r] = z[r] + h * k3[r];
      rhs(tmp.data(), k4.data());
      for (std::size_t r = 0; r < d; ++r) z[r] += h / 6.0 * (k1[r] + 2.0 * k2[r] + 2.0 * k3[r] + k4[r]);
    });
  });
}

Trajectory solve_regularized(const VectorFieldSystem& sys, const DyadicPath& path, int n,
                             std::span<const double> x0, const SolverConfig& cfg) {
  if (path.noise_dim != sys.dim_noise()) throw std::invalid_argument("path and system noise dimensions differ");
  if (n > path.n_max) throw std::invalid_argument("level exceeds path resolution");
  const auto slopes = level_slopes(path, n);
  return solve_with_slopes(sys, slopes, n, x0, cfg);
}

namespace {

int finest_output_level(const DyadicPath& path, const SolverConfig& cfg) {
  const int out = cfg.output_level.value_or(std::min(path.n_max, 10));
  if (out > path.n_max) throw std::invalid_argument("output level exceeds path resolution");
  return out;
}

Trajectory heun(const VectorFieldSystem& sys, const DyadicPath& path, std::span<const double> x0,
                const SolverConfig& cfg) {
  const std::size_t d = sys.dim_state();
  const std::size_t nd = sys.dim_noise();
  const int out = finest_output_level(path, cfg);
  const std::size_t total = std::size_t{1} << path.n_max;
  const double h = std::ldexp(1.0, -path.n_max);
  return sys.with_kernel([&](auto& kernel) {
    Vector a0(d), ai(nd * d), b0(d), bi(nd * d), pred(d);
    return march(x0, total, total >> out, out, cfg.explosion_threshold, [&](std::size_t j, Vector& z) {
      const double* w0 = path.node(j);
      const double* w1 = path.node(j + 1);
      kernel.evaluate(z.data(), a0.data(), ai.data());
      for (std::size_t r = 0; r < d; ++r) {
        double acc = a0[r] * h;
        for (std::size_t i = 0; i < nd; ++i) acc += ai[i * d + r] * (w1[i] - w0[i]);
        if (!std::isfinite(acc)) domain_failure("non-finite vector field at a finite state", z);
        pred[r] = z[r] + acc;
      }
      kernel.evaluate(pred.data(), b0.data(), bi.data());
      for (std::size_t r = 0; r < d; ++r) {
        double acc = 0.5 * (a0[r] + b0[r]) * h;
        for (std::size_t i = 0; i < nd; ++i) acc += 0.5 * (ai[i * d + r] + bi[i * d + r]) * (w1[i] - w0[i]);
        z[r] += acc;
      }
    });
  });
}

template <bool Corrected>
Trajectory euler_maruyama(const VectorFieldSystem& sys, const DyadicPath& path,
                          std::span<const double> x0, const SolverConfig& cfg) {
  cfg.validate();
  check_start(sys, x0);
  if (path.noise_dim != sys.dim_noise()) throw std::invalid_argument("path and system noise dimensions differ");
  const std::size_t d = sys.dim_state();
  const std::size_t nd = sys.dim_noise();
  const int out = finest_output_level(path, cfg);
  const std::size_t total = std::size_t{1} << path.n_max;
  const double h = std::ldexp(1.0, -path.n_max);
  return sys.with_kernel([&](auto& kernel) {
    Vector a0(d), ai(nd * d), drift(d);
    return march(x0, total, total >> out, out, cfg.explosion_threshold, [&](std::size_t j, Vector& z) {
      const double* w0 = path.node(j);
      const double* w1 = path.node(j + 1);
      kernel.evaluate(z.data(), a0.data(), ai.data());
      if constexpr (Corrected) {
        kernel.corrected_drift(z.data(), drift.data());
      } else {
        drift = a0;
      }
      for (std::size_t r = 0; r < d; ++r) {
        double acc = drift[r] * h;
        for (std::size_t i = 0; i < nd; ++i) acc += ai[i * d + r] * (w1[i] - w0[i]);
        if (!std::isfinite(acc)) domain_failure("non-finite vector field at a finite state", z);
        z[r] += acc;
      }
    });
  });
}

}  // namespace

ReferenceSolution solve_reference(const VectorFieldSystem& sys, const DyadicPath& path,
                                  std::span<const double> x0, const SolverConfig& cfg) {
  ReferenceSolution ref;
  SolverConfig wz_cfg = cfg;
  wz_cfg.output_level = finest_output_level(path, cfg);
  ref.wong_zakai = solve_regularized(sys, path, path.n_max, x0, wz_cfg);
  if (!cfg.reference_cross_check) return ref;
  ref.predictor_corrector = heun(sys, path, x0, wz_cfg);
  const auto& a = ref.wong_zakai.states;
  const auto& b = ref.predictor_corrector.states;
  double scale = 0.0;
  for (std::size_t k = 0; k < std::min(a.size(), b.size()); ++k) {
    Vector diff(a[k].size());
    for (std::size_t r = 0; r < diff.size(); ++r) diff[r] = a[k][r] - b[k][r];
    ref.disagreement = std::max(ref.disagreement, norm(diff));
    scale = std::max(scale, norm(a[k]));
  }
  ref.flagged = ref.wong_zakai.has_exploded() != ref.predictor_corrector.has_exploded() ||
                ref.disagreement > cfg.reference_tolerance * (1.0 + scale);
  return ref;
}

Trajectory solve_ito_corrected(const VectorFieldSystem& sys, const DyadicPath& path,
                               std::span<const double> x0, const SolverConfig& cfg) {
  return euler_maruyama<true>(sys, path, x0, cfg);
}

Trajectory solve_ito_uncorrected(const VectorFieldSystem& sys, const DyadicPath& path,
                                 std::span<const double> x0, const SolverConfig& cfg) {
  return euler_maruyama<false>(sys, path, x0, cfg);
}

std::optional<double> detect_explosion(const Trajectory& traj) { return traj.exploded; }

void write_trajectory_csv(const Trajectory& traj, std::ostream& os) {
  const std::size_t d = traj.states.empty() ? 0 : traj.states.front().size();
  os << "t";
  for (std::size_t j = 1; j <= d; ++j) os << ",x" << j;
  os << ",exploded\n";
  const auto old = os.precision(17);
  const int flag = traj.has_exploded() ? 1 : 0;
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    os << traj.times[k];
    for (double v : traj.states[k]) os << "," << v;
    os << "," << flag << "\n";
  }
  os.precision(old);
}

}  // namespace stochflow
