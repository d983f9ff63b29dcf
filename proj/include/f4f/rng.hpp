#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace f4f {

// One splitmix64 step; also used to spread entropy when deriving seeds.
std::uint64_t splitmix64_next(std::uint64_t& state);

// Derives a stream seed from a root seed and a role label ("data.x",
// "init.gamma", ...). Distinct roles give statistically independent streams
// and the mapping is stable across runs and platforms.
std::uint64_t derive_seed(std::uint64_t root, std::string_view role);

// Seeded random stream built on std::mt19937_64 (the engine is fully
// specified by the standard) with explicit uniform/normal transforms, since
// the std:: distribution adaptors are implementation-defined.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);

  // Standard normal via the polar method (no trig, platform-stable libm use).
  double normal();

  // Standard normal conditioned on |z| <= max_abs (redraws otherwise).
  double truncated_normal(double max_abs);

  // Unbiased integer in [0, n); n must be positive.
  int uniform_int(int n);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<std::size_t>(uniform_int(static_cast<int>(i)))]);
    }
  }

  Eigen::MatrixXd normal_matrix(int rows, int cols);
  Eigen::MatrixXd uniform_matrix(int rows, int cols, double lo, double hi);

 private:
  std::mt19937_64 engine_;
  bool have_spare_{false};
  double spare_{0.0};
};

}  // namespace f4f
