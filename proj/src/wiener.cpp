#include "stochflow/wiener.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace stochflow {

Philox4x32::Block Philox4x32::operator()(Block c) const noexcept {
  constexpr std::uint32_t kMul0 = 0xD2511F53u, kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u, kWeyl1 = 0xBB67AE85u;
  std::uint32_t k0 = key_[0], k1 = key_[1];
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = std::uint64_t{kMul0} * c[0];
    const std::uint64_t p1 = std::uint64_t{kMul1} * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    c = {hi1 ^ c[1] ^ k0, lo1, hi0 ^ c[3] ^ k1, lo0};
    k0 += kWeyl0;
    k1 += kWeyl1;
  }
  return c;
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal quantile needs p in (0, 1)");
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r +
                45921.953931549871457) * r + 13731.693765509461125) * r + 1971.5909503065514427) * r +
             133.14166789178437745) * r + 3.387132872796366608) /
           (((((((5226.495278852545925 * r + 28729.085735721942674) * r + 39307.89580009271061) * r +
                21213.794301586595867) * r + 5394.1960214247511077) * r + 687.1870074920579083) * r +
             42.313330701600911252) * r + 1.0);
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r +
               1.27045825245236838258) * r + 3.64784832476320460504) * r + 5.7694972214606914055) * r +
            4.6303378461565452959) * r + 1.42343711074968357734) /
          (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r +
               0.14810397642748007459) * r + 0.68976733498510000455) * r + 1.6763848301838038494) * r +
            2.05319162663775882187) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r +
               0.026532189526576123093) * r + 0.29656057182850489123) * r + 1.7848265399172913358) * r +
            5.4637849111641143699) * r + 6.6579046435011037772) /
          (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r +
               7.868691311456132591e-4) * r + 0.0148753612908506148525) * r + 0.13692988092273580531) * r +
            0.59983220655588793769) * r + 1.0);
  }
  return q < 0.0 ? -val : val;
}

double GaussianStream::at(std::uint64_t k) const noexcept {
  const std::uint64_t block = k >> 1;
  const auto out = gen_({static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32),
                         static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)});
  const std::uint64_t bits = (k & 1) ? (std::uint64_t{out[3]} << 32 | out[2])
                                     : (std::uint64_t{out[1]} << 32 | out[0]);
  return normal_quantile(uniform_open(bits));
}

void GaussianStream::fill(std::uint64_t first, std::span<double> out) const noexcept {
  std::size_t j = 0;
  std::uint64_t k = first;
  if (k & 1 && j < out.size()) out[j++] = at(k++);
  for (; j + 1 < out.size(); j += 2, k += 2) {
    const std::uint64_t block = k >> 1;
    const auto r = gen_({static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32),
                         static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)});
    out[j] = normal_quantile(uniform_open(std::uint64_t{r[1]} << 32 | r[0]));
    out[j + 1] = normal_quantile(uniform_open(std::uint64_t{r[3]} << 32 | r[2]));
  }
  if (j < out.size()) out[j] = at(k);
}

DyadicPath sample_path(int n_max, std::size_t noise_dim, std::uint64_t seed, std::uint64_t path_index) {
  if (n_max < 1 || n_max > 24) throw std::invalid_argument("dyadic level must be in 1..24");
  if (noise_dim == 0) throw std::invalid_argument("noise dimension must be positive");
  DyadicPath path;
  path.n_max = n_max;
  path.noise_dim = noise_dim;
  path.seed = seed;
  path.path_index = path_index;
  const std::size_t steps = std::size_t{1} << n_max;
  path.values.assign((steps + 1) * noise_dim, 0.0);
  GaussianStream stream(seed, path_index);
  stream.fill(0, std::span<double>(path.values.data() + noise_dim, steps * noise_dim));
  const double scale = std::sqrt(std::ldexp(1.0, -n_max));
  for (std::size_t k = 1; k <= steps; ++k) {
    double* row = path.values.data() + k * noise_dim;
    const double* prev = row - noise_dim;
    for (std::size_t i = 0; i < noise_dim; ++i) row[i] = prev[i] + scale * row[i];
  }
  return path;
}

namespace {

void check_level(const DyadicPath& path, int n) {
  if (n < 0 || n > path.n_max) throw std::invalid_argument("interpolation level exceeds path resolution");
}

std::size_t interval_index(int n, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("time must lie in [0, 1]");
  const std::size_t count = std::size_t{1} << n;
  const auto l = static_cast<std::size_t>(std::floor(std::ldexp(t, n)));
  return l >= count ? count - 1 : l;
}

}  // namespace

std::vector<double> interpolant_slope(const DyadicPath& path, int n, double t) {
  check_level(path, n);
  const std::size_t l = interval_index(n, t);
  const std::size_t stride = std::size_t{1} << (path.n_max - n);
  std::vector<double> out(path.noise_dim);
  const double rate = std::ldexp(1.0, n);
  for (std::size_t i = 0; i < path.noise_dim; ++i) {
    out[i] = rate * (path.value((l + 1) * stride, i) - path.value(l * stride, i));
  }
  return out;
}

std::vector<double> interpolant_value(const DyadicPath& path, int n, double t) {
  check_level(path, n);
  const std::size_t l = interval_index(n, t);
  const std::size_t stride = std::size_t{1} << (path.n_max - n);
  const double frac = std::ldexp(t, n) - static_cast<double>(l);
  std::vector<double> out(path.noise_dim);
  for (std::size_t i = 0; i < path.noise_dim; ++i) {
    const double a = path.value(l * stride, i);
    const double b = path.value((l + 1) * stride, i);
    out[i] = frac == 0.0 ? a : a + frac * (b - a);
  }
  return out;
}

std::vector<double> level_slopes(const DyadicPath& path, int n) {
  check_level(path, n);
  const std::size_t count = std::size_t{1} << n;
  const std::size_t stride = std::size_t{1} << (path.n_max - n);
  const std::size_t nd = path.noise_dim;
  const double rate = std::ldexp(1.0, n);
  std::vector<double> out(count * nd);
  for (std::size_t l = 0; l < count; ++l) {
    for (std::size_t i = 0; i < nd; ++i) {
      out[l * nd + i] = rate * (path.value((l + 1) * stride, i) - path.value(l * stride, i));
    }
  }
  return out;
}

double gamma_n(const DyadicPath& path, int n, double s) {
  check_level(path, n);
  const std::size_t l = interval_index(n, s);
  const std::size_t stride = std::size_t{1} << (path.n_max - n);
  double acc = 0.0;
  for (std::size_t i = 0; i < path.noise_dim; ++i) {
    acc += std::fabs(path.value((l + 1) * stride, i) - path.value(l * stride, i));
  }
  return std::sqrt(std::ldexp(1.0, n)) * acc;
}

double gaussian_abs_moment(double q) {
  if (!(q >= 1.0)) throw std::invalid_argument("absolute moment order must be >= 1");
  return std::exp(0.5 * q * std::numbers::ln2 + std::lgamma(0.5 * (q + 1.0))) / std::sqrt(std::numbers::pi);
}

void write_path_csv(const DyadicPath& path, std::ostream& os) {
  os << "t";
  for (std::size_t i = 1; i <= path.noise_dim; ++i) os << ",w" << i;
  os << "\n";
  const auto old = os.precision(17);
  for (std::size_t k = 0; k < path.nodes(); ++k) {
    os << std::ldexp(static_cast<double>(k), -path.n_max);
    for (std::size_t i = 0; i < path.noise_dim; ++i) os << "," << path.value(k, i);
    os << "\n";
  }
  os.precision(old);
}

}  // namespace stochflow
