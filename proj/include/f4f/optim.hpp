#pragma once

#include "f4f/diffcore.hpp"

namespace f4f {

// lr0 * (1 + cos(pi * step / total_steps)) / 2; exactly lr0 at step 0 and
// exactly 0 at step = total_steps.
double cosine_lr(long step, long total_steps, double lr0);

struct AdamState {
  std::vector<Matrix> m;  // first moments
  std::vector<Matrix> v;  // second moments
  long step{0};
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};

  static AdamState init(const ParameterStore& params);
};

// Standard bias-corrected Adam update; deterministic.
void adam_step(ParameterStore& params, const GradientSet& grads, AdamState& state,
               double lr);

}  // namespace f4f
