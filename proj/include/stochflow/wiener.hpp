#pragma once

// Brownian paths on a dyadic grid and their piecewise-linear interpolants.
//
// A path is sampled once on the finest grid k 2^-n_max; the level-n
// interpolant w^n reads the stored values at every 2^(n_max - n)-th node,
// so all levels share one realization.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace stochflow {

/// Philox4x32-10 counter-based generator.
class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;

  explicit Philox4x32(std::uint64_t key) noexcept
      : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)} {}

  Block operator()(Block counter) const noexcept;

 private:
  std::array<std::uint32_t, 2> key_;
};

/// Uniform in the open interval (0, 1) from the top 52 bits of a 64-bit
/// word. With 53 bits the largest value would round up to exactly 1.
inline double uniform_open(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52;
}

/// Standard normal quantile (Wichura's AS241, about 1e-16 relative accuracy).
double normal_quantile(double p);

/// Stream of standard Gaussians keyed by (seed, stream index); the k-th draw
/// is a pure function of (seed, stream, k).
class GaussianStream {
 public:
  GaussianStream(std::uint64_t seed, std::uint64_t stream) noexcept : gen_(seed), stream_(stream) {}

  double at(std::uint64_t k) const noexcept;
  /// Fills out[j] with draws first, first + 1, ...
  void fill(std::uint64_t first, std::span<double> out) const noexcept;

 private:
  Philox4x32 gen_;
  std::uint64_t stream_;
};

struct DyadicPath {
  int n_max = 0;
  std::size_t noise_dim = 0;
  std::uint64_t seed = 0;
  std::uint64_t path_index = 0;
  std::vector<double> values;  // (2^n_max + 1) rows of noise_dim

  std::size_t nodes() const noexcept { return (std::size_t{1} << n_max) + 1; }
  const double* node(std::size_t k) const noexcept { return values.data() + k * noise_dim; }
  double value(std::size_t k, std::size_t i) const noexcept { return values[k * noise_dim + i]; }
};

/// Cumulative sums of independent N(0, 2^-n_max) increments. Identical
/// (n_max, noise_dim, seed, path_index) give bit-identical paths.
DyadicPath sample_path(int n_max, std::size_t noise_dim, std::uint64_t seed,
                       std::uint64_t path_index = 0);

/// Constant slope 2^n (w((l+1) 2^-n) - w(l 2^-n)) of w^n on the level-n
/// interval containing t; t = 1 maps to the last interval.
std::vector<double> interpolant_slope(const DyadicPath& path, int n, double t);

/// w^n(t).
std::vector<double> interpolant_value(const DyadicPath& path, int n, double t);

/// All level-n slopes, 2^n rows of noise_dim.
std::vector<double> level_slopes(const DyadicPath& path, int n);

/// 2^(n/2) sum_i |w^i(s_n^+) - w^i(s_n)| for the level-n interval around s.
double gamma_n(const DyadicPath& path, int n, double s);

/// E|g|^q for a standard Gaussian g: 2^(q/2) Gamma((q+1)/2) / sqrt(pi).
double gaussian_abs_moment(double q);

/// CSV with header t,w1..wN and one row per finest node.
void write_path_csv(const DyadicPath& path, std::ostream& os);

}  // namespace stochflow
