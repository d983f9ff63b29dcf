#pragma once

#include "f4f/diffcore.hpp"

namespace f4f {

// Transport-distance regularizer configuration. weight = 0 disables it;
// the identity-map comparisons use weight = 1.
struct PenaltyConfig {
  double l1_weight{0.0};

  void validate() const;
};

// weight * mean over points of the per-point L1 displacement sum_d |x_d - y_d|.
// Differentiable in y everywhere except ties, where the subgradient is 0.
double l1_penalty(const Matrix& x, const Matrix& y, double weight);

// Tape form for use inside training losses.
Var l1_penalty_t(Tape& t, Var x, Var y, double weight);

}  // namespace f4f
