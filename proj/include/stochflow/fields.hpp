#pragma once

// Coefficient vector fields of a Stratonovich SDE
//
//   dx = sum_i A_i(x) o dw^i + A_0(x) dt
//
// together with their Jacobians, bracket fields B_ik = A_i' A_k, the
// Ito drift correction, smooth radial cutoffs and sampled local
// Lipschitz profiles on balls.
//
// Memory layout used throughout: a drift is d doubles, the diffusion
// block is N rows of d doubles (row i-1 holds A_i), a Jacobian is d x d
// row-major with J[r * d + c] = dA^r / dx_c, and the diffusion Jacobian
// block is N consecutive d x d matrices.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

namespace stochflow {

using Vector = std::vector<double>;

double norm(std::span<const double> x);

/// Raised when a field evaluation at a finite point yields a non-finite
/// value, or when a computation leaves its domain of validity.
class DomainError : public std::runtime_error {
 public:
  DomainError(const std::string& what, Vector point);
  const Vector& point() const noexcept { return point_; }

 private:
  Vector point_;
};

/// Dense row-major matrix, only used for small d x d blocks.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

/// Largest singular value.
double spectral_norm(const Matrix& m);

/// Radial quintic smoothstep equal to 1 on B(m) and 0 outside B(m + 2).
///
/// With s = (|x| - m) / 2 clamped to [0, 1] the profile is
/// 1 - (10 s^3 - 15 s^4 + 6 s^5). Its radial slope -15 s^2 (1 - s)^2 is
/// bounded by 15/16 and its Hessian norm stays below 2 for m >= 1.
class CutoffFunction {
 public:
  explicit CutoffFunction(double inner_radius);

  double inner_radius() const noexcept { return inner_; }
  double outer_radius() const noexcept { return inner_ + 2.0; }

  double value_at_radius(double r) const noexcept;
  double radial_derivative(double r) const noexcept;
  double radial_second_derivative(double r) const noexcept;

  double value(std::span<const double> x) const;
  void gradient(std::span<const double> x, std::span<double> out) const;
  Matrix hessian(std::span<const double> x) const;

 private:
  double inner_;
};

// ---------------------------------------------------------------------------
// Built-in families. Each exposes dim_state(), dim_noise(), evaluate() and,
// when kAnalyticJacobians is true, jacobians().

/// Constant drift and diffusion vectors.
struct ConstantFields {
  std::size_t d = 1;
  std::size_t n = 1;
  Vector drift;      // d
  Vector diffusion;  // n * d

  static constexpr bool kAnalyticJacobians = true;
  std::size_t dim_state() const noexcept { return d; }
  std::size_t dim_noise() const noexcept { return n; }
  void evaluate(const double* x, double* a0, double* ai) const;
  void jacobians(const double* x, double* j0, double* ji) const;
};

/// Affine fields A_k(x) = M_k x + b_k.
struct LinearFields {
  std::size_t d = 1;
  std::size_t n = 1;
  Vector drift_matrix;       // d * d
  Vector drift_offset;       // d
  Vector diffusion_matrices;  // n * d * d
  Vector diffusion_offsets;   // n * d

  static constexpr bool kAnalyticJacobians = true;
  std::size_t dim_state() const noexcept { return d; }
  std::size_t dim_noise() const noexcept { return n; }
  void evaluate(const double* x, double* a0, double* ai) const;
  void jacobians(const double* x, double* j0, double* ji) const;
};

// Inline: the solvers call it once per RK4 stage.
inline void LinearFields::evaluate(const double* x, double* a0, double* ai) const {
  for (std::size_t r = 0; r < d; ++r) {
    double acc = drift_offset[r];
    for (std::size_t c = 0; c < d; ++c) acc += drift_matrix[r * d + c] * x[c];
    a0[r] = acc;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double* m = diffusion_matrices.data() + i * d * d;
    for (std::size_t r = 0; r < d; ++r) {
      double acc = diffusion_offsets[i * d + r];
      for (std::size_t c = 0; c < d; ++c) acc += m[r * d + c] * x[c];
      ai[i * d + r] = acc;
    }
  }
}

/// A_i(x)_j = sigma_i sin(x_j + phase_i), A_0(x)_j = drift_scale cos(x_j).
struct TrigFields {
  std::size_t d = 1;
  std::size_t n = 1;
  Vector sigma;  // n
  Vector phase;  // n
  double drift_scale = 0.0;

  static constexpr bool kAnalyticJacobians = true;
  std::size_t dim_state() const noexcept { return d; }
  std::size_t dim_noise() const noexcept { return n; }
  void evaluate(const double* x, double* a0, double* ai) const;
  void jacobians(const double* x, double* j0, double* ji) const;
};

/// Fields whose size and Lipschitz constants grow logarithmically:
///
///   A_i(x) = sigma_i sqrt(log(e + |x|^2)) e_{(i-1) mod d}
///   A_0(x) = log(e + |x|^2) (-pull x + swirl R x) / sqrt(1 + |x|^2)
///
/// where R rotates the first two coordinates by a quarter turn (zero when
/// d = 1). Every line of the log-growth hypothesis holds for this family.
struct LogGrowthFields {
  std::size_t d = 2;
  std::size_t n = 2;
  Vector sigma;  // n
  double pull = 1.0;
  double swirl = 0.0;

  static constexpr bool kAnalyticJacobians = true;
  std::size_t dim_state() const noexcept { return d; }
  std::size_t dim_noise() const noexcept { return n; }
  void evaluate(const double* x, double* a0, double* ai) const;
  void jacobians(const double* x, double* j0, double* ji) const;
};

/// A_0(x)_j = coefficient x_j^2, A_i = sigma e_{(i-1) mod d}. Solutions blow
/// up in finite time; used as the counterexample to growth control.
struct QuadraticDriftFields {
  std::size_t d = 1;
  std::size_t n = 1;
  double coefficient = 1.0;
  double sigma = 0.0;

  static constexpr bool kAnalyticJacobians = true;
  std::size_t dim_state() const noexcept { return d; }
  std::size_t dim_noise() const noexcept { return n; }
  void evaluate(const double* x, double* a0, double* ai) const;
  void jacobians(const double* x, double* j0, double* ji) const;
};

/// User-supplied fields (library level only). Jacobians fall back to
/// central finite differences unless `jacobian_fn` is set.
struct CustomFields {
  using EvalFn = std::function<void(std::span<const double> x, std::span<double> drift,
                                    std::span<double> diffusion)>;
  using JacFn = std::function<void(std::span<const double> x, std::span<double> drift_jac,
                                   std::span<double> diffusion_jac)>;
  std::size_t d = 1;
  std::size_t n = 1;
  EvalFn evaluate_fn;
  JacFn jacobian_fn;

  static constexpr bool kAnalyticJacobians = false;
  std::size_t dim_state() const noexcept { return d; }
  std::size_t dim_noise() const noexcept { return n; }
  void evaluate(const double* x, double* a0, double* ai) const;
};

namespace families {

ConstantFields constant(Vector drift, std::vector<Vector> diffusions);
LinearFields linear(std::size_t d, std::size_t n, Vector drift_matrix, Vector diffusion_matrices);
/// d-dimensional geometric motion: A_1(x) = sigma x, A_0(x) = mu x.
LinearFields geometric(std::size_t d = 1, double sigma = 1.0, double mu = 0.0);
/// Planar rotation: A_1(x) = sigma (-x_2, x_1), A_0(x) = mu x.
LinearFields rotation(double sigma = 1.0, double mu = 0.0);
TrigFields trigonometric(std::size_t d, std::size_t n, double sigma, double drift_scale);
LogGrowthFields log_growth(std::size_t d, std::size_t n, double sigma = 1.0, double pull = 1.0,
                           double swirl = 0.0);
QuadraticDriftFields quadratic_drift(double coefficient = 1.0, double sigma = 0.0, std::size_t d = 1);

}  // namespace families

template <class Family>
class FieldKernel;

/// Immutable bundle of the drift A_0, diffusions A_1..A_N and an optional
/// product of radial cutoffs. Safe to share read-only across threads.
class VectorFieldSystem {
 public:
  using Family = std::variant<ConstantFields, LinearFields, TrigFields, LogGrowthFields,
                              QuadraticDriftFields, CustomFields>;

  explicit VectorFieldSystem(Family family, std::string name = {});

  std::size_t dim_state() const noexcept { return d_; }
  std::size_t dim_noise() const noexcept { return n_; }
  const std::string& name() const noexcept { return name_; }
  const Family& family() const noexcept { return family_; }
  const std::vector<double>& cutoff_radii() const noexcept { return cutoffs_; }
  bool has_analytic_jacobians() const;

  /// Field k at x: k = 0 is the drift, k = 1..N the diffusions.
  Vector field(std::size_t k, std::span<const double> x) const;
  Vector drift(std::span<const double> x) const { return field(0, x); }
  Vector diffusion(std::size_t i, std::span<const double> x) const { return field(i, x); }

  /// Jacobian of field k, analytic when available.
  Matrix jacobian(std::size_t k, std::span<const double> x) const;
  /// Central differences with step 1e-5 (1 + |x|), regardless of family.
  Matrix finite_difference_jacobian(std::size_t k, std::span<const double> x) const;

  /// Calls f(kernel) with a FieldKernel for the concrete family. The
  /// kernel owns scratch storage and must not be shared between threads.
  template <class F>
  decltype(auto) with_kernel(F&& f) const;

  VectorFieldSystem with_cutoff(double radius) const;

 private:
  Family family_;
  std::string name_;
  std::size_t d_;
  std::size_t n_;
  std::vector<double> cutoffs_;
};

/// Evaluation engine for one family plus the system's cutoffs.
template <class Family>
class FieldKernel {
 public:
  FieldKernel(const Family& family, std::span<const double> cutoffs)
      : family_(family),
        d_(family.dim_state()),
        n_(family.dim_noise()),
        cutoffs_(cutoffs.begin(), cutoffs.end()),
        a0_(d_),
        ai_(n_ * d_),
        j0_(d_ * d_),
        ji_(n_ * d_ * d_),
        grad_(d_),
        xp_(d_),
        xm_(d_),
        a0p_(d_),
        a0m_(d_),
        aip_(n_ * d_),
        aim_(n_ * d_) {}

  std::size_t dim_state() const noexcept { return d_; }
  std::size_t dim_noise() const noexcept { return n_; }

  void evaluate(const double* x, double* a0, double* ai) {
    family_.evaluate(x, a0, ai);
    if (cutoffs_.empty()) return;
    const double phi = cutoff_product(x, nullptr);
    for (std::size_t j = 0; j < d_; ++j) a0[j] *= phi;
    for (std::size_t j = 0; j < n_ * d_; ++j) ai[j] *= phi;
  }

  void jacobians(const double* x, double* j0, double* ji) {
    if (!family_jacobians(x, j0, ji)) {
      finite_difference_jacobians(x, j0, ji);
      return;
    }
    if (cutoffs_.empty()) return;
    family_.evaluate(x, a0_.data(), ai_.data());
    const double phi = cutoff_product(x, grad_.data());
    // (phi A)' = phi A' + A grad(phi)^T
    apply_product_rule(phi, a0_.data(), j0);
    for (std::size_t i = 0; i < n_; ++i) {
      apply_product_rule(phi, ai_.data() + i * d_, ji + i * d_ * d_);
    }
  }

  void finite_difference_jacobians(const double* x, double* j0, double* ji) {
    double r2 = 0.0;
    for (std::size_t j = 0; j < d_; ++j) r2 += x[j] * x[j];
    const double h = 1e-5 * (1.0 + std::sqrt(r2));
    for (std::size_t c = 0; c < d_; ++c) {
      for (std::size_t j = 0; j < d_; ++j) xp_[j] = xm_[j] = x[j];
      xp_[c] += h;
      xm_[c] -= h;
      const double width = xp_[c] - xm_[c];
      evaluate(xp_.data(), a0p_.data(), aip_.data());
      evaluate(xm_.data(), a0m_.data(), aim_.data());
      for (std::size_t r = 0; r < d_; ++r) j0[r * d_ + c] = (a0p_[r] - a0m_[r]) / width;
      for (std::size_t i = 0; i < n_; ++i) {
        for (std::size_t r = 0; r < d_; ++r) {
          ji[i * d_ * d_ + r * d_ + c] = (aip_[i * d_ + r] - aim_[i * d_ + r]) / width;
        }
      }
    }
  }

  /// Ito drift A_0 + 1/2 sum_i A_i' A_i.
  void corrected_drift(const double* x, double* out) {
    jacobians(x, j0_.data(), ji_.data());
    evaluate(x, out, ai_.data());
    for (std::size_t i = 0; i < n_; ++i) {
      const double* jac = ji_.data() + i * d_ * d_;
      const double* a = ai_.data() + i * d_;
      for (std::size_t r = 0; r < d_; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < d_; ++c) acc += jac[r * d_ + c] * a[c];
        out[r] += 0.5 * acc;
      }
    }
  }

 private:
  bool family_jacobians(const double* x, double* j0, double* ji) {
    if constexpr (Family::kAnalyticJacobians) {
      family_.jacobians(x, j0, ji);
      return true;
    } else if constexpr (std::is_same_v<Family, CustomFields>) {
      if (!family_.jacobian_fn) return false;
      family_.jacobian_fn(std::span<const double>(x, d_), std::span<double>(j0, d_ * d_),
                          std::span<double>(ji, n_ * d_ * d_));
      return true;
    } else {
      return false;
    }
  }

  double cutoff_product(const double* x, double* grad) const {
    double r2 = 0.0;
    for (std::size_t j = 0; j < d_; ++j) r2 += x[j] * x[j];
    const double r = std::sqrt(r2);
    double phi = 1.0;
    if (grad != nullptr) {
      for (std::size_t j = 0; j < d_; ++j) grad[j] = 0.0;
    }
    for (std::size_t k = 0; k < cutoffs_.size(); ++k) {
      const CutoffFunction cut(cutoffs_[k]);
      const double v = cut.value_at_radius(r);
      if (grad != nullptr) {
        // grad(prod) = sum_k grad(phi_k) prod_{j != k} phi_j, accumulated incrementally
        const double dv = cut.radial_derivative(r);
        for (std::size_t j = 0; j < d_; ++j) {
          grad[j] = grad[j] * v + (r > 0.0 ? phi * dv * x[j] / r : 0.0);
        }
      }
      phi *= v;
    }
    return phi;
  }

  void apply_product_rule(double phi, const double* a, double* jac) const {
    for (std::size_t r = 0; r < d_; ++r) {
      for (std::size_t c = 0; c < d_; ++c) {
        jac[r * d_ + c] = phi * jac[r * d_ + c] + a[r] * grad_[c];
      }
    }
  }

  const Family& family_;
  std::size_t d_;
  std::size_t n_;
  std::vector<double> cutoffs_;
  std::vector<double> a0_, ai_, j0_, ji_, grad_;
  std::vector<double> xp_, xm_, a0p_, a0m_, aip_, aim_;
};

template <class F>
decltype(auto) VectorFieldSystem::with_kernel(F&& f) const {
  return std::visit(
      [&](const auto& fam) -> decltype(auto) {
        FieldKernel<std::decay_t<decltype(fam)>> kernel(fam, cutoffs_);
        return f(kernel);
      },
      family_);
}

/// B_ik(x) = A_i'(x) A_k(x) for i in 1..N, k in 0..N.
Vector evaluate_bracket(const VectorFieldSystem& sys, std::size_t i, std::size_t k,
                        std::span<const double> x);

/// Ito drift A_0 + 1/2 sum_i B_ii.
Vector stratonovich_correction(const VectorFieldSystem& sys, std::span<const double> x);

/// Every field multiplied by the cutoff of inner radius m (m >= 1).
VectorFieldSystem truncate_system(const VectorFieldSystem& sys, double m);

/// Sampled suprema over the closed ball B(m).
struct LipschitzProfile {
  double radius = 0.0;
  double sup_diffusion_sq = 0.0;     // sum_i sup |A_i|^2
  double sup_drift = 0.0;            // sup |A_0|
  double lip_diffusion_sq = 0.0;     // sum_i sup ||A_i'||^2
  double lip_drift = 0.0;            // sup ||(corrected drift)'||
  double bracket_lip_offdiag = 0.0;  // sup_{i, k >= 1} ||B_ik'||^2
  double bracket_lip_drift = 0.0;    // sup_i ||B_i0'||
  std::size_t samples = 0;

  /// Unsquared companion of bracket_lip_offdiag.
  double bracket_lip_offdiag_unsquared() const { return std::sqrt(bracket_lip_offdiag); }
};

/// Sample points of B(m): radial shells at spacing 1 / grid_density from the
/// origin plus the boundary sphere, each carrying grid_density^(d-1)
/// directions (two in one dimension). Grids for nested radii are nested
/// whenever m * grid_density is an integer.
std::vector<Vector> ball_sample_points(std::size_t d, double m, int grid_density);

LipschitzProfile profile_lipschitz(const VectorFieldSystem& sys, double m, int grid_density = 8);

struct HypothesisLine {
  std::string name;   // profile entry, e.g. "sup_diffusion_sq"
  std::string scale;  // "log m" or "(log m)^1.5"
  std::vector<double> ratios;
  double fitted_constant = 0.0;
  double growth = 0.0;  // last ratio / first ratio
  bool pass = false;
};

struct HypothesisConstants {
  std::vector<double> radii;
  std::vector<LipschitzProfile> profiles;
  std::vector<HypothesisLine> lines;  // six entries in profile order
  double gamma1 = 0.0, gamma2 = 0.0, beta1 = 0.0, beta2 = 0.0, delta1 = 0.0, delta2 = 0.0;
  bool pass = false;
  std::string diagnostic;  // empty on success
  std::vector<std::string> failed_lines() const;
};

/// Fits each profile entry against log m (and (log m)^1.5 for the drift
/// bracket line) by least squares through the origin; a line passes when
/// the ratio sequence does not grow by more than `slack` from the first to
/// the last radius.
HypothesisConstants check_hypothesis_H(const VectorFieldSystem& sys, std::vector<double> radii,
                                       int grid_density = 8, double slack = 1.5);

}  // namespace stochflow
