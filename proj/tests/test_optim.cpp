#include <doctest.h>

#include <cmath>

#include "f4f/optim.hpp"
#include "f4f/rng.hpp"

using namespace f4f;

TEST_CASE("cosine schedule boundary and midpoint values") {
  CHECK(cosine_lr(0, 1000, 1e-4) == 1e-4);
  CHECK(cosine_lr(1000, 1000, 1e-4) == 0.0);
  CHECK(cosine_lr(500, 1000, 1e-4) == doctest::Approx(5e-5).epsilon(1e-12));
  CHECK_THROWS_AS(cosine_lr(0, 0, 1e-4), std::invalid_argument);
  CHECK_THROWS_AS(cosine_lr(-1, 10, 1e-4), std::invalid_argument);
  CHECK_THROWS_AS(cosine_lr(11, 10, 1e-4), std::invalid_argument);
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  ParameterStore p;
  p.add("w", Matrix::Constant(2, 2, 1.5));
  AdamState s = AdamState::init(p);
  GradientSet g = GradientSet::zeros_like(p);
  adam_step(p, g, s, 1e-3);
  CHECK(p.value(0)(0, 0) == 1.5);
  CHECK(s.step == 1);
}

TEST_CASE("adam: first step from zeroed state is -lr * sign(g) up to eps") {
  ParameterStore p;
  p.add("w", Matrix::Constant(1, 1, 0.0));
  AdamState s = AdamState::init(p);
  GradientSet g = GradientSet::zeros_like(p);
  g.grads[0](0, 0) = 2.0;
  adam_step(p, g, s, 1e-3);
  // Bias-corrected by hand: mhat = g, vhat = g^2, update = lr*g/(|g|+eps).
  const double expected = -1e-3 * 2.0 / (2.0 + 1e-8);
  CHECK(p.value(0)(0, 0) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(p.value(0)(0, 0) == doctest::Approx(-1e-3).epsilon(1e-6));
}

TEST_CASE("adam: constant gradient drives updates to -lr * sign(g)") {
  ParameterStore p;
  p.add("w", Matrix::Constant(1, 2, 0.0));
  AdamState s = AdamState::init(p);
  GradientSet g = GradientSet::zeros_like(p);
  g.grads[0](0, 0) = 0.37;
  g.grads[0](0, 1) = -12.0;
  double prev0 = 0.0, prev1 = 0.0;
  for (int i = 0; i < 500; ++i) {
    prev0 = p.value(0)(0, 0);
    prev1 = p.value(0)(0, 1);
    adam_step(p, g, s, 1e-3);
  }
  CHECK(p.value(0)(0, 0) - prev0 == doctest::Approx(-1e-3).epsilon(1e-6));
  CHECK(p.value(0)(0, 1) - prev1 == doctest::Approx(1e-3).epsilon(1e-6));
}

TEST_CASE("adam rejects non-finite gradients") {
  ParameterStore p;
  p.add("w", Matrix::Constant(1, 1, 0.0));
  AdamState s = AdamState::init(p);
  GradientSet g = GradientSet::zeros_like(p);
  g.grads[0](0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(adam_step(p, g, s, 1e-3), NumericalError);
}
