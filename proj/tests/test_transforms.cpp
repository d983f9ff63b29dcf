#include <doctest.h>

#include <cmath>

#include "f4f/rng.hpp"
#include "f4f/transforms.hpp"
#include "test_util.hpp"

using namespace f4f;
using namespace f4f::testutil;

namespace {

SplineParams identity_spline(int k = 8, double b = 4.0) {
  SplineParams p;
  p.bin_widths = Vector::Constant(k, 2.0 * b / k);
  p.bin_heights = Vector::Constant(k, 2.0 * b / k);
  p.knot_derivatives = Vector::Ones(k + 1);
  p.tail_bound = b;
  return p;
}

SplineParams random_spline(std::uint64_t seed, int k = 8, double b = 4.0) {
  RandomStream rs(seed);
  SplineParams p;
  p.tail_bound = b;
  Vector w(k), h(k), d(k + 1);
  for (int i = 0; i < k; ++i) w[i] = std::exp(rs.uniform(-1.0, 1.0));
  for (int i = 0; i < k; ++i) h[i] = std::exp(rs.uniform(-1.0, 1.0));
  for (int i = 0; i <= k; ++i) d[i] = std::exp(rs.uniform(-1.2, 1.2));
  p.bin_widths = w * (2.0 * b / w.sum());
  p.bin_heights = h * (2.0 * b / h.sum());
  p.knot_derivatives = d;
  return p;
}

TransformConfig small_config(int cond_dim = 0) {
  TransformConfig cfg;
  cfg.dim = 2;
  cfg.layers = 3;
  cfg.residual_blocks = 1;
  cfg.hidden = 16;
  cfg.bins = 5;
  cfg.tail_bound = 4.0;
  cfg.cond_dim = cond_dim;
  return cfg;
}

// Gives the networks non-trivial weights (fresh transforms are the identity).
void randomize(ParameterStore& store, std::uint64_t seed, double scale = 0.5) {
  RandomStream rs(seed);
  for (int i = 0; i < store.count(); ++i) {
    Matrix& v = store.value(i);
    v = rs.uniform_matrix(static_cast<int>(v.rows()), static_cast<int>(v.cols()),
                          -scale, scale);
  }
}

}  // namespace

TEST_CASE("identity spline maps x to x with zero logdet") {
  SplineParams p = identity_spline();
  auto [y, ld] = rqs_forward(0.3, p);
  CHECK(y == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(ld == doctest::Approx(0.0).epsilon(1e-12));
  auto [x, ldi] = rqs_inverse(-0.7, p);
  CHECK(x == doctest::Approx(-0.7).epsilon(1e-12));
  CHECK(ldi == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("linear tails outside the bound") {
  SplineParams p = random_spline(5);
  auto [y, ld] = rqs_forward(p.tail_bound + 1.0, p);
  CHECK(y == p.tail_bound + 1.0);
  CHECK(ld == 0.0);
  auto [x, ldi] = rqs_inverse(-p.tail_bound - 2.5, p);
  CHECK(x == -p.tail_bound - 2.5);
  CHECK(ldi == 0.0);
}

TEST_CASE("malformed spline params are rejected") {
  SplineParams p = identity_spline();
  p.bin_widths[2] = -0.1;
  CHECK_THROWS_AS(rqs_forward(0.0, p), std::invalid_argument);
  SplineParams q = identity_spline();
  q.knot_derivatives[0] = 0.0;
  CHECK_THROWS_AS(rqs_inverse(0.0, q), std::invalid_argument);
  SplineParams r = identity_spline();
  r.bin_heights[0] += 0.5;  // no longer sums to 2B
  CHECK_THROWS_AS(rqs_forward(0.0, r), std::invalid_argument);
}

TEST_CASE("spline logdet matches finite difference of the map") {
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    SplineParams p = random_spline(100 + static_cast<std::uint64_t>(trial));
    RandomStream rs(900 + static_cast<std::uint64_t>(trial));
    const double x = rs.uniform(-3.9, 3.9);
    auto [y, ld] = rqs_forward(x, p);
    (void)y;
    const double h = 1e-6;
    const double fd = (rqs_forward(x + h, p).first - rqs_forward(x - h, p).first) / (2.0 * h);
    worst = std::max(worst, std::abs(ld - std::log(fd)) / std::max(std::abs(ld), 1e-8));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("spline round trip over 1000 random pairs") {
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    SplineParams p = random_spline(2000 + static_cast<std::uint64_t>(trial));
    RandomStream rs(3000 + static_cast<std::uint64_t>(trial));
    const double x = rs.uniform(-4.5, 4.5);
    auto [y, ld] = rqs_forward(x, p);
    auto [xr, ldi] = rqs_inverse(y, p);
    worst = std::max(worst, std::abs(xr - x));
    CHECK(ld + ldi == doctest::Approx(0.0).epsilon(1e-9));
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("spline is monotone on a grid") {
  for (int trial = 0; trial < 10; ++trial) {
    SplineParams p = random_spline(4200 + static_cast<std::uint64_t>(trial));
    double prev = -1e300;
    for (int i = 0; i <= 200; ++i) {
      const double x = -4.2 + 8.4 * i / 200.0;
      const double y = rqs_forward(x, p).first;
      CHECK(y > prev);
      prev = y;
    }
  }
}

TEST_CASE("freshly initialized transform is the identity") {
  ParameterStore store;
  RandomStream init(42);
  CompositeTransform tr(small_config(), store, "t", &init);
  RandomStream rs(7);
  const Matrix x = rs.uniform_matrix(20, 2, -3.9, 3.9);
  auto [y, ld] = tr.forward(x);
  CHECK((y - x).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(ld.cwiseAbs().maxCoeff() < 1e-12);
  auto [z, ldi] = tr.inverse(x);
  CHECK((z - x).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(ldi.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("autoregressive property: perturbing x1 leaves y0 unchanged") {
  TransformConfig cfg = small_config();
  cfg.layers = 1;
  ParameterStore store;
  RandomStream init(13);
  CompositeTransform tr(cfg, store, "t", &init);
  randomize(store, 77);

  Matrix a(1, 2), b(1, 2);
  a << 0.4, -1.2;
  b << 0.4, 2.7;
  const double ya0 = tr.forward(a).first(0, 0);
  const double yb0 = tr.forward(b).first(0, 0);
  CHECK(ya0 == yb0);
}

TEST_CASE("composite round trip and logdet antisymmetry") {
  ParameterStore store;
  RandomStream init(21);
  CompositeTransform tr(small_config(), store, "t", &init);
  randomize(store, 31);

  RandomStream rs(55);
  const Matrix x = rs.uniform_matrix(1000, 2, -4.4, 4.4);
  auto [y, ld_f] = tr.forward(x);
  auto [xr, ld_i] = tr.inverse(y);
  CHECK((xr - x).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((ld_f + ld_i).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("forward logdet matches the 2x2 numerical Jacobian") {
  ParameterStore store;
  RandomStream init(91);
  CompositeTransform tr(small_config(), store, "t", &init);
  randomize(store, 19);

  RandomStream rs(23);
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    Matrix x = rs.uniform_matrix(1, 2, -3.5, 3.5);
    auto [y, ld] = tr.forward(x);
    (void)y;
    Matrix jac(2, 2);
    for (int j = 0; j < 2; ++j) {
      Matrix xp = x, xm = x;
      xp(0, j) += h;
      xm(0, j) -= h;
      const Matrix yp = tr.forward(xp).first;
      const Matrix ym = tr.forward(xm).first;
      for (int i = 0; i < 2; ++i) jac(i, j) = (yp(0, i) - ym(0, i)) / (2.0 * h);
    }
    const double det = jac(0, 0) * jac(1, 1) - jac(0, 1) * jac(1, 0);
    CHECK(ld[0] == doctest::Approx(std::log(std::abs(det))).epsilon(1e-4));
  }
}

TEST_CASE("monotone per dimension with preceding dimensions fixed") {
  ParameterStore store;
  RandomStream init(61);
  CompositeTransform tr(small_config(), store, "t", &init);
  randomize(store, 67);

  // Single layer view: check via one layer (the composite mixes dimensions).
  TransformConfig cfg = small_config();
  cfg.layers = 1;
  ParameterStore store1;
  RandomStream init1(62);
  CompositeTransform one(cfg, store1, "t", &init1);
  randomize(store1, 68);
  for (int d = 0; d < 2; ++d) {
    double prev = -1e300;
    for (int i = 0; i <= 100; ++i) {
      Matrix x(1, 2);
      x << 0.37, 0.37;
      x(0, d) = -4.0 + 8.0 * i / 100.0;
      const double y = one.forward(x).first(0, d);
      CHECK(y > prev);
      prev = y;
    }
  }
}

TEST_CASE("condition sensitivity and per-condition invertibility") {
  TransformConfig cfg = small_config(1);
  ParameterStore store;
  RandomStream init(111);
  CompositeTransform tr(cfg, store, "t", &init);
  randomize(store, 113);

  RandomStream rs(29);
  const Matrix x = rs.uniform_matrix(50, 2, -3.9, 3.9);
  const Matrix c0 = Matrix::Constant(50, 1, 0.1);
  const Matrix c1 = Matrix::Constant(50, 1, 0.9);

  auto [y0, ld0] = tr.forward(x, &c0);
  auto [y1, ld1] = tr.forward(x, &c1);
  (void)ld0;
  (void)ld1;
  CHECK((y0 - y1).cwiseAbs().maxCoeff() > 1e-6);

  auto [xr, ldr] = tr.inverse(y0, &c0);
  (void)ldr;
  CHECK((xr - x).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("zero-initialized conditional transform is identity for any condition") {
  TransformConfig cfg = small_config(1);
  ParameterStore store;
  RandomStream init(311);
  CompositeTransform tr(cfg, store, "t", &init);
  RandomStream rs(101);
  const Matrix x = rs.uniform_matrix(10, 2, -3.9, 3.9);
  const Matrix c = rs.uniform_matrix(10, 1, -1.0, 1.0);
  auto [y, ld] = tr.forward(x, &c);
  CHECK((y - x).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(ld.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gradient of transform losses matches finite differences") {
  TransformConfig cfg = small_config();
  cfg.layers = 2;
  ParameterStore store;
  RandomStream init(511);
  CompositeTransform tr(cfg, store, "t", &init);
  randomize(store, 513, 0.3);

  RandomStream rs(515);
  const Matrix x = rs.uniform_matrix(4, 2, -3.0, 3.0);

  SUBCASE("inverse direction (likelihood path)") {
    auto build = [&](Tape& t) {
      auto [z, ld] = tr.inverse_t(t, t.constant(x), std::nullopt);
      return t.mean_all(t.add(t.rowwise_sum(t.square(z)), ld));
    };
    GradientSet ad = grad(store, build);
    GradientSet fd = fd_gradient(store, build, 1e-5);
    CHECK(max_rel_err(ad, fd) < 1e-4);
  }
  SUBCASE("forward direction") {
    auto build = [&](Tape& t) {
      auto [y, ld] = tr.forward_t(t, t.constant(x), std::nullopt);
      return t.mean_all(t.add(t.rowwise_sum(t.square(y)), ld));
    };
    GradientSet ad = grad(store, build);
    GradientSet fd = fd_gradient(store, build, 1e-5);
    CHECK(max_rel_err(ad, fd) < 1e-4);
  }
}

TEST_CASE("bigger preset has one more layer and block") {
  TransformConfig std_cfg = TransformConfig::preset("standard");
  TransformConfig big_cfg = TransformConfig::preset("bigger");
  CHECK(std_cfg.layers == 4);
  CHECK(std_cfg.residual_blocks == 2);
  CHECK(big_cfg.layers == std_cfg.layers + 1);
  CHECK(big_cfg.residual_blocks == std_cfg.residual_blocks + 1);
  CHECK_THROWS_AS(TransformConfig::preset("huge"), std::invalid_argument);
}
