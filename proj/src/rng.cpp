#include "f4f/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace f4f {

std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view role) {
  // FNV-1a over the role, then two splitmix rounds keyed by the root.
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : role) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  std::uint64_t state = root ^ h;
  splitmix64_next(state);
  return splitmix64_next(state);
}

double RandomStream::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RandomStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

double RandomStream::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u = 0.0, v = 0.0, s = 0.0;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double m = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * m;
  have_spare_ = true;
  return u * m;
}

double RandomStream::truncated_normal(double max_abs) {
  for (;;) {
    const double z = normal();
    if (std::abs(z) <= max_abs) return z;
  }
}

int RandomStream::uniform_int(int n) {
  if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<int>(x % un);
}

Eigen::MatrixXd RandomStream::normal_matrix(int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = normal();
  }
  return m;
}

Eigen::MatrixXd RandomStream::uniform_matrix(int rows, int cols, double lo, double hi) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = uniform(lo, hi);
  }
  return m;
}

}  // namespace f4f
