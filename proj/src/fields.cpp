#include "stochflow/fields.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <numbers>
#include <sstream>

namespace stochflow {

namespace {

std::string describe_point(const std::string& what, const Vector& point) {
  std::ostringstream os;
  os.precision(17);
  os << what << " at (";
  for (std::size_t j = 0; j < point.size(); ++j) os << (j ? ", " : "") << point[j];
  os << ")";
  return os.str();
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double a) { return std::isfinite(a); });
}

void require_finite(std::span<const double> x) {
  if (!all_finite(x)) throw DomainError("non-finite evaluation point", Vector(x.begin(), x.end()));
}

}  // namespace

double norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

DomainError::DomainError(const std::string& what, Vector point)
    : std::runtime_error(describe_point(what, point)), point_(std::move(point)) {}

double spectral_norm(const Matrix& m) {
  if (m.rows == 0 || m.cols == 0) return 0.0;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> map(
      m.data.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols));
  if (m.rows == 1 || m.cols == 1) return map.norm();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(map);
  return svd.singularValues()(0);
}

// ---------------------------------------------------------------------------
// CutoffFunction

CutoffFunction::CutoffFunction(double inner_radius) : inner_(inner_radius) {
  if (!(inner_radius >= 1.0)) throw std::invalid_argument("cutoff inner radius must be >= 1");
}

double CutoffFunction::value_at_radius(double r) const noexcept {
  const double s = std::clamp((r - inner_) / 2.0, 0.0, 1.0);
  return 1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
}

double CutoffFunction::radial_derivative(double r) const noexcept {
  const double s = std::clamp((r - inner_) / 2.0, 0.0, 1.0);
  return -15.0 * s * s * (1.0 - s) * (1.0 - s);
}

double CutoffFunction::radial_second_derivative(double r) const noexcept {
  const double s = std::clamp((r - inner_) / 2.0, 0.0, 1.0);
  return -15.0 * s * (1.0 - s) * (1.0 - 2.0 * s);
}

double CutoffFunction::value(std::span<const double> x) const { return value_at_radius(norm(x)); }

void CutoffFunction::gradient(std::span<const double> x, std::span<double> out) const {
  const double r = norm(x);
  const double dphi = radial_derivative(r);
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = r > 0.0 ? dphi * x[j] / r : 0.0;
}

Matrix CutoffFunction::hessian(std::span<const double> x) const {
  const std::size_t d = x.size();
  Matrix h(d, d);
  const double r = norm(x);
  if (r == 0.0) return h;  // phi is identically 1 near the origin
  const double d1 = radial_derivative(r);
  const double d2 = radial_second_derivative(r);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b < d; ++b) {
      const double uu = x[a] * x[b] / (r * r);
      h(a, b) = d2 * uu + d1 / r * ((a == b ? 1.0 : 0.0) - uu);
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Families

void ConstantFields::evaluate(const double*, double* a0, double* ai) const {
  std::copy(drift.begin(), drift.end(), a0);
  std::copy(diffusion.begin(), diffusion.end(), ai);
}

void ConstantFields::jacobians(const double*, double* j0, double* ji) const {
  std::fill(j0, j0 + d * d, 0.0);
  std::fill(ji, ji + n * d * d, 0.0);
}

void LinearFields::jacobians(const double*, double* j0, double* ji) const {
  std::copy(drift_matrix.begin(), drift_matrix.end(), j0);
  std::copy(diffusion_matrices.begin(), diffusion_matrices.end(), ji);
}

void TrigFields::evaluate(const double* x, double* a0, double* ai) const {
  for (std::size_t j = 0; j < d; ++j) a0[j] = drift_scale * std::cos(x[j]);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) ai[i * d + j] = sigma[i] * std::sin(x[j] + phase[i]);
  }
}

void TrigFields::jacobians(const double* x, double* j0, double* ji) const {
  std::fill(j0, j0 + d * d, 0.0);
  std::fill(ji, ji + n * d * d, 0.0);
  for (std::size_t j = 0; j < d; ++j) j0[j * d + j] = -drift_scale * std::sin(x[j]);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      ji[i * d * d + j * d + j] = sigma[i] * std::cos(x[j] + phase[i]);
    }
  }
}

namespace {

// Shared pieces of the log-growth family.
struct LogGrowthTerms {
  double r2, log_term, root_log, root_one;
};

LogGrowthTerms log_growth_terms(const double* x, std::size_t d) {
  double r2 = 0.0;
  for (std::size_t j = 0; j < d; ++j) r2 += x[j] * x[j];
  const double l = std::log(std::numbers::e + r2);
  return {r2, l, std::sqrt(l), std::sqrt(1.0 + r2)};
}

// y = (-pull I + swirl R) x
inline double swirl_component(const double* x, std::size_t d, std::size_t r, double pull,
                              double swirl) {
  double y = -pull * x[r];
  if (d >= 2) {
    if (r == 0) y -= swirl * x[1];
    if (r == 1) y += swirl * x[0];
  }
  return y;
}

}  // namespace

void LogGrowthFields::evaluate(const double* x, double* a0, double* ai) const {
  const auto t = log_growth_terms(x, d);
  const double scale = t.log_term / t.root_one;
  for (std::size_t r = 0; r < d; ++r) a0[r] = scale * swirl_component(x, d, r, pull, swirl);
  std::fill(ai, ai + n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) ai[i * d + i % d] = sigma[i] * t.root_log;
}

void LogGrowthFields::jacobians(const double* x, double* j0, double* ji) const {
  const auto t = log_growth_terms(x, d);
  const double denom = std::numbers::e + t.r2;
  // drift: L g' + g grad(L)^T with g = M x / q, g' = M / q - (M x) x^T / q^3
  const double q = t.root_one;
  const double q3 = q * q * q;
  for (std::size_t r = 0; r < d; ++r) {
    const double y = swirl_component(x, d, r, pull, swirl);
    for (std::size_t c = 0; c < d; ++c) {
      double m = (r == c) ? -pull : 0.0;
      if (d >= 2) {
        if (r == 0 && c == 1) m = -swirl;
        if (r == 1 && c == 0) m = swirl;
      }
      const double g_prime = m / q - y * x[c] / q3;
      const double grad_l = 2.0 * x[c] / denom;
      j0[r * d + c] = t.log_term * g_prime + (y / q) * grad_l;
    }
  }
  std::fill(ji, ji + n * d * d, 0.0);
  // grad sqrt(L) = x / (sqrt(L) (e + |x|^2))
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t row = i % d;
    for (std::size_t c = 0; c < d; ++c) {
      ji[i * d * d + row * d + c] = sigma[i] * x[c] / (t.root_log * denom);
    }
  }
}

void QuadraticDriftFields::evaluate(const double* x, double* a0, double* ai) const {
  for (std::size_t j = 0; j < d; ++j) a0[j] = coefficient * x[j] * x[j];
  std::fill(ai, ai + n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) ai[i * d + i % d] = sigma;
}

void QuadraticDriftFields::jacobians(const double* x, double* j0, double* ji) const {
  std::fill(j0, j0 + d * d, 0.0);
  for (std::size_t j = 0; j < d; ++j) j0[j * d + j] = 2.0 * coefficient * x[j];
  std::fill(ji, ji + n * d * d, 0.0);
}

void CustomFields::evaluate(const double* x, double* a0, double* ai) const {
  evaluate_fn(std::span<const double>(x, d), std::span<double>(a0, d), std::span<double>(ai, n * d));
}

namespace families {

ConstantFields constant(Vector drift, std::vector<Vector> diffusions) {
  ConstantFields f;
  f.d = drift.size();
  f.n = diffusions.size();
  if (f.d == 0 || f.n == 0) throw std::invalid_argument("constant family needs d >= 1 and N >= 1");
  f.drift = std::move(drift);
  for (const auto& a : diffusions) {
    if (a.size() != f.d) throw std::invalid_argument("diffusion vector has wrong dimension");
    f.diffusion.insert(f.diffusion.end(), a.begin(), a.end());
  }
  return f;
}

LinearFields linear(std::size_t d, std::size_t n, Vector drift_matrix, Vector diffusion_matrices) {
  if (d == 0 || n == 0) throw std::invalid_argument("linear family needs d >= 1 and N >= 1");
  if (drift_matrix.size() != d * d || diffusion_matrices.size() != n * d * d) {
    throw std::invalid_argument("linear family matrix sizes do not match d and N");
  }
  LinearFields f;
  f.d = d;
  f.n = n;
  f.drift_matrix = std::move(drift_matrix);
  f.drift_offset.assign(d, 0.0);
  f.diffusion_matrices = std::move(diffusion_matrices);
  f.diffusion_offsets.assign(n * d, 0.0);
  return f;
}

LinearFields geometric(std::size_t d, double sigma, double mu) {
  Vector drift(d * d, 0.0), diff(d * d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    drift[j * d + j] = mu;
    diff[j * d + j] = sigma;
  }
  return linear(d, 1, std::move(drift), std::move(diff));
}

LinearFields rotation(double sigma, double mu) {
  return linear(2, 1, {mu, 0.0, 0.0, mu}, {0.0, -sigma, sigma, 0.0});
}

TrigFields trigonometric(std::size_t d, std::size_t n, double sigma, double drift_scale) {
  if (d == 0 || n == 0) throw std::invalid_argument("trigonometric family needs d >= 1 and N >= 1");
  TrigFields f;
  f.d = d;
  f.n = n;
  f.sigma.assign(n, sigma);
  f.phase.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    f.phase[i] = static_cast<double>(i) * std::numbers::pi / (2.0 * static_cast<double>(n));
  }
  f.drift_scale = drift_scale;
  return f;
}

LogGrowthFields log_growth(std::size_t d, std::size_t n, double sigma, double pull, double swirl) {
  if (d == 0 || n == 0) throw std::invalid_argument("log-growth family needs d >= 1 and N >= 1");
  LogGrowthFields f;
  f.d = d;
  f.n = n;
  f.sigma.assign(n, sigma);
  f.pull = pull;
  f.swirl = swirl;
  return f;
}

QuadraticDriftFields quadratic_drift(double coefficient, double sigma, std::size_t d) {
  if (d == 0) throw std::invalid_argument("quadratic-drift family needs d >= 1");
  QuadraticDriftFields f;
  f.d = d;
  f.n = 1;
  f.coefficient = coefficient;
  f.sigma = sigma;
  return f;
}

}  // namespace families

// ---------------------------------------------------------------------------
// VectorFieldSystem

VectorFieldSystem::VectorFieldSystem(Family family, std::string name)
    : family_(std::move(family)), name_(std::move(name)) {
  std::visit(
      [this](const auto& f) {
        d_ = f.dim_state();
        n_ = f.dim_noise();
      },
      family_);
  if (d_ == 0 || n_ == 0) throw std::invalid_argument("vector field system needs d >= 1 and N >= 1");
  if (const auto* custom = std::get_if<CustomFields>(&family_); custom && !custom->evaluate_fn) {
    throw std::invalid_argument("custom fields need an evaluation function");
  }
}

bool VectorFieldSystem::has_analytic_jacobians() const {
  return std::visit(
      [](const auto& f) {
        using F = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<F, CustomFields>) {
          return static_cast<bool>(f.jacobian_fn);
        } else {
          return F::kAnalyticJacobians;
        }
      },
      family_);
}

Vector VectorFieldSystem::field(std::size_t k, std::span<const double> x) const {
  if (k > n_) throw std::out_of_range("field index out of range");
  if (x.size() != d_) throw std::invalid_argument("point has wrong dimension");
  require_finite(x);
  Vector a0(d_), ai(n_ * d_);
  with_kernel([&](auto& kernel) { kernel.evaluate(x.data(), a0.data(), ai.data()); });
  Vector out = k == 0 ? a0 : Vector(ai.begin() + (k - 1) * d_, ai.begin() + k * d_);
  if (!all_finite(out)) throw DomainError("non-finite field value", Vector(x.begin(), x.end()));
  return out;
}

Matrix VectorFieldSystem::jacobian(std::size_t k, std::span<const double> x) const {
  if (k > n_) throw std::out_of_range("field index out of range");
  if (x.size() != d_) throw std::invalid_argument("point has wrong dimension");
  require_finite(x);
  Vector j0(d_ * d_), ji(n_ * d_ * d_);
  with_kernel([&](auto& kernel) { kernel.jacobians(x.data(), j0.data(), ji.data()); });
  Matrix m(d_, d_);
  if (k == 0) {
    m.data = std::move(j0);
  } else {
    m.data.assign(ji.begin() + (k - 1) * d_ * d_, ji.begin() + k * d_ * d_);
  }
  if (!all_finite(m.data)) throw DomainError("non-finite Jacobian", Vector(x.begin(), x.end()));
  return m;
}

Matrix VectorFieldSystem::finite_difference_jacobian(std::size_t k, std::span<const double> x) const {
  if (k > n_) throw std::out_of_range("field index out of range");
  if (x.size() != d_) throw std::invalid_argument("point has wrong dimension");
  require_finite(x);
  Vector j0(d_ * d_), ji(n_ * d_ * d_);
  with_kernel([&](auto& kernel) { kernel.finite_difference_jacobians(x.data(), j0.data(), ji.data()); });
  Matrix m(d_, d_);
  if (k == 0) {
    m.data = std::move(j0);
  } else {
    m.data.assign(ji.begin() + (k - 1) * d_ * d_, ji.begin() + k * d_ * d_);
  }
  if (!all_finite(m.data)) throw DomainError("non-finite Jacobian", Vector(x.begin(), x.end()));
  return m;
}

VectorFieldSystem VectorFieldSystem::with_cutoff(double radius) const {
  CutoffFunction check(radius);
  VectorFieldSystem out = *this;
  out.cutoffs_.push_back(check.inner_radius());
  return out;
}

// ---------------------------------------------------------------------------
// Brackets, correction, truncation

namespace {

// All brackets B_ik, i = 1..N, k = 0..N, written as N * (N + 1) rows of d.
template <class Kernel>
void all_brackets(Kernel& kernel, const double* x, double* out, std::vector<double>& a0,
                  std::vector<double>& ai, std::vector<double>& j0, std::vector<double>& ji) {
  const std::size_t d = kernel.dim_state();
  const std::size_t n = kernel.dim_noise();
  kernel.evaluate(x, a0.data(), ai.data());
  kernel.jacobians(x, j0.data(), ji.data());
  for (std::size_t i = 0; i < n; ++i) {
    const double* jac = ji.data() + i * d * d;
    for (std::size_t k = 0; k <= n; ++k) {
      const double* a = k == 0 ? a0.data() : ai.data() + (k - 1) * d;
      double* b = out + (i * (n + 1) + k) * d;
      for (std::size_t r = 0; r < d; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) acc += jac[r * d + c] * a[c];
        b[r] = acc;
      }
    }
  }
}

}  // namespace

Vector evaluate_bracket(const VectorFieldSystem& sys, std::size_t i, std::size_t k,
                        std::span<const double> x) {
  const std::size_t d = sys.dim_state();
  const std::size_t n = sys.dim_noise();
  if (i < 1 || i > n || k > n) throw std::out_of_range("bracket index out of range");
  if (x.size() != d) throw std::invalid_argument("point has wrong dimension");
  require_finite(x);
  const Matrix jac = sys.jacobian(i, x);
  const Vector a = sys.field(k, x);
  Vector out(d, 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = 0; c < d; ++c) out[r] += jac(r, c) * a[c];
  }
  if (!all_finite(out)) throw DomainError("non-finite bracket", Vector(x.begin(), x.end()));
  return out;
}

Vector stratonovich_correction(const VectorFieldSystem& sys, std::span<const double> x) {
  if (x.size() != sys.dim_state()) throw std::invalid_argument("point has wrong dimension");
  require_finite(x);
  Vector out(sys.dim_state());
  sys.with_kernel([&](auto& kernel) { kernel.corrected_drift(x.data(), out.data()); });
  if (!all_finite(out)) throw DomainError("non-finite corrected drift", Vector(x.begin(), x.end()));
  return out;
}

VectorFieldSystem truncate_system(const VectorFieldSystem& sys, double m) {
  if (!(m >= 1.0)) throw std::invalid_argument("truncation radius must be >= 1");
  return sys.with_cutoff(m);
}

// ---------------------------------------------------------------------------
// Lipschitz profiles

std::vector<Vector> ball_sample_points(std::size_t d, double m, int grid_density) {
  if (grid_density < 1) throw std::invalid_argument("grid density must be positive");
  if (!(m > 0.0)) throw std::invalid_argument("ball radius must be positive");
  const double g = static_cast<double>(grid_density);

  std::vector<double> radii;
  const auto shells = static_cast<long>(std::floor(m * g + 1e-9));
  for (long j = 0; j <= shells; ++j) radii.push_back(std::min(static_cast<double>(j) / g, m));
  if (m - radii.back() > 1e-12) radii.push_back(m);

  std::vector<Vector> directions;
  if (d == 1) {
    directions = {{1.0}, {-1.0}};
  } else {
    // hyperspherical angles: d-2 polar angles on [0, pi], one azimuth on [0, 2 pi)
    const std::size_t count_angles = d - 1;
    std::vector<int> idx(count_angles, 0);
    while (true) {
      Vector u(d, 1.0);
      double sin_prod = 1.0;
      for (std::size_t a = 0; a < count_angles; ++a) {
        const bool azimuth = a + 1 == count_angles;
        const double theta = azimuth
                                 ? 2.0 * std::numbers::pi * idx[a] / g
                                 : (grid_density > 1 ? std::numbers::pi * idx[a] / (g - 1.0) : 0.0);
        u[a] = sin_prod * std::cos(theta);
        sin_prod *= std::sin(theta);
      }
      u[d - 1] = sin_prod;
      directions.push_back(std::move(u));
      std::size_t a = 0;
      while (a < count_angles && ++idx[a] == grid_density) idx[a++] = 0;
      if (a == count_angles) break;
    }
  }

  std::vector<Vector> points;
  points.push_back(Vector(d, 0.0));
  for (double r : radii) {
    if (r == 0.0) continue;
    for (const auto& u : directions) {
      Vector p(d);
      for (std::size_t j = 0; j < d; ++j) p[j] = r * u[j];
      points.push_back(std::move(p));
    }
  }
  return points;
}

LipschitzProfile profile_lipschitz(const VectorFieldSystem& sys, double m, int grid_density) {
  if (grid_density < 1) throw std::invalid_argument("grid density must be positive");
  const std::size_t d = sys.dim_state();
  const std::size_t n = sys.dim_noise();
  const auto points = ball_sample_points(d, m, grid_density);

  LipschitzProfile prof;
  prof.radius = m;
  prof.samples = points.size();
  std::vector<double> sup_diff(n, 0.0), sup_jac(n, 0.0);

  sys.with_kernel([&](auto& kernel) {
    std::vector<double> a0(d), ai(n * d), j0(d * d), ji(n * d * d);
    std::vector<double> xp(d), xm(d), cp(d), cm(d);
    const std::size_t nb = n * (n + 1) * d;
    std::vector<double> bp(nb), bm(nb);
    std::vector<std::vector<double>> bracket_jac(n * (n + 1), std::vector<double>(d * d));
    Matrix jm(d, d);

    for (const auto& x : points) {
      kernel.evaluate(x.data(), a0.data(), ai.data());
      kernel.jacobians(x.data(), j0.data(), ji.data());
      if (!all_finite(a0) || !all_finite(ai) || !all_finite(j0) || !all_finite(ji)) {
        throw DomainError("non-finite field inside ball", x);
      }
      prof.sup_drift = std::max(prof.sup_drift, norm(a0));
      for (std::size_t i = 0; i < n; ++i) {
        const std::span<const double> a(ai.data() + i * d, d);
        const double na = norm(a);
        sup_diff[i] = std::max(sup_diff[i], na * na);
        jm.data.assign(ji.begin() + i * d * d, ji.begin() + (i + 1) * d * d);
        const double nj = spectral_norm(jm);
        sup_jac[i] = std::max(sup_jac[i], nj * nj);
      }

      // derivatives of the corrected drift and the brackets by central differences
      const double h = 1e-5 * (1.0 + norm(x));
      Matrix corr(d, d);
      for (std::size_t c = 0; c < d; ++c) {
        xp = x;
        xm = x;
        xp[c] += h;
        xm[c] -= h;
        const double width = xp[c] - xm[c];
        kernel.corrected_drift(xp.data(), cp.data());
        kernel.corrected_drift(xm.data(), cm.data());
        for (std::size_t r = 0; r < d; ++r) corr(r, c) = (cp[r] - cm[r]) / width;
        all_brackets(kernel, xp.data(), bp.data(), a0, ai, j0, ji);
        all_brackets(kernel, xm.data(), bm.data(), a0, ai, j0, ji);
        for (std::size_t b = 0; b < n * (n + 1); ++b) {
          for (std::size_t r = 0; r < d; ++r) {
            bracket_jac[b][r * d + c] = (bp[b * d + r] - bm[b * d + r]) / width;
          }
        }
      }
      if (!all_finite(corr.data)) throw DomainError("non-finite corrected drift inside ball", x);
      prof.lip_drift = std::max(prof.lip_drift, spectral_norm(corr));
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k <= n; ++k) {
          jm.data = bracket_jac[i * (n + 1) + k];
          if (!all_finite(jm.data)) throw DomainError("non-finite bracket inside ball", x);
          const double nb_norm = spectral_norm(jm);
          if (k == 0) {
            prof.bracket_lip_drift = std::max(prof.bracket_lip_drift, nb_norm);
          } else {
            prof.bracket_lip_offdiag = std::max(prof.bracket_lip_offdiag, nb_norm * nb_norm);
          }
        }
      }
    }
  });

  for (std::size_t i = 0; i < n; ++i) {
    prof.sup_diffusion_sq += sup_diff[i];
    prof.lip_diffusion_sq += sup_jac[i];
  }
  return prof;
}

std::vector<std::string> HypothesisConstants::failed_lines() const {
  std::vector<std::string> out;
  for (const auto& line : lines) {
    if (!line.pass) out.push_back(line.name);
  }
  return out;
}

HypothesisConstants check_hypothesis_H(const VectorFieldSystem& sys, std::vector<double> radii,
                                       int grid_density, double slack) {
  if (radii.size() < 4) throw std::invalid_argument("hypothesis check needs at least 4 radii");
  std::sort(radii.begin(), radii.end());
  if (radii.front() < 2.0) throw std::invalid_argument("hypothesis check radii must be >= 2");

  HypothesisConstants out;
  out.radii = radii;
  try {
    for (double m : radii) out.profiles.push_back(profile_lipschitz(sys, m, grid_density));
  } catch (const DomainError& e) {
    out.pass = false;
    out.diagnostic = std::string("profile failed: ") + e.what();
    return out;
  }

  struct Entry {
    const char* name;
    double LipschitzProfile::*member;
    double exponent;
    double HypothesisConstants::*constant;
  };
  const Entry entries[] = {
      {"sup_diffusion_sq", &LipschitzProfile::sup_diffusion_sq, 1.0, &HypothesisConstants::gamma1},
      {"sup_drift", &LipschitzProfile::sup_drift, 1.0, &HypothesisConstants::gamma2},
      {"lip_diffusion_sq", &LipschitzProfile::lip_diffusion_sq, 1.0, &HypothesisConstants::beta1},
      {"lip_drift", &LipschitzProfile::lip_drift, 1.0, &HypothesisConstants::beta2},
      {"bracket_lip_offdiag", &LipschitzProfile::bracket_lip_offdiag, 1.0,
       &HypothesisConstants::delta1},
      {"bracket_lip_drift", &LipschitzProfile::bracket_lip_drift, 1.5, &HypothesisConstants::delta2},
  };

  out.pass = true;
  for (const auto& e : entries) {
    HypothesisLine line;
    line.name = e.name;
    line.scale = e.exponent == 1.0 ? "log m" : "(log m)^1.5";
    double num = 0.0, den = 0.0;
    for (std::size_t r = 0; r < radii.size(); ++r) {
      const double scale = std::pow(std::log(radii[r]), e.exponent);
      const double value = out.profiles[r].*(e.member);
      line.ratios.push_back(value / scale);
      num += value * scale;
      den += scale * scale;
    }
    line.fitted_constant = num / den;
    const double first = line.ratios.front();
    const double last = line.ratios.back();
    const bool finite = std::all_of(line.ratios.begin(), line.ratios.end(),
                                    [](double v) { return std::isfinite(v); });
    if (first > 0.0) {
      line.growth = last / first;
    } else {
      line.growth = last > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    }
    line.pass = finite && line.growth <= slack;
    out.*(e.constant) = line.fitted_constant;
    out.pass = out.pass && line.pass;
    out.lines.push_back(std::move(line));
  }
  if (!out.pass) {
    out.diagnostic = "unbounded ratio on:";
    for (const auto& name : out.failed_lines()) out.diagnostic += " " + name;
  }
  return out;
}

}  // namespace stochflow
