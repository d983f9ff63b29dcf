#include "f4f/optim.hpp"

#include <cmath>

namespace f4f {

double cosine_lr(long step, long total_steps, double lr0) {
  if (total_steps <= 0) throw std::invalid_argument("cosine_lr: total_steps must be positive");
  if (step < 0 || step > total_steps) throw std::invalid_argument("cosine_lr: step out of range");
  if (step == 0) return lr0;
  if (step == total_steps) return 0.0;
  constexpr double kPi = 3.14159265358979323846;
  return lr0 * (1.0 + std::cos(kPi * static_cast<double>(step) /
                               static_cast<double>(total_steps))) / 2.0;
}

AdamState AdamState::init(const ParameterStore& params) {
  AdamState s;
  s.m.reserve(static_cast<std::size_t>(params.count()));
  s.v.reserve(static_cast<std::size_t>(params.count()));
  for (int i = 0; i < params.count(); ++i) {
    s.m.push_back(Matrix::Zero(params.value(i).rows(), params.value(i).cols()));
    s.v.push_back(Matrix::Zero(params.value(i).rows(), params.value(i).cols()));
  }
  return s;
}

void adam_step(ParameterStore& params, const GradientSet& grads, AdamState& state,
               double lr) {
  if (static_cast<int>(grads.grads.size()) != params.count() ||
      static_cast<int>(state.m.size()) != params.count()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  if (!grads.all_finite()) throw NumericalError("adam_step: non-finite gradients");

  state.step += 1;
  const double ibc1 = 1.0 / (1.0 - std::pow(state.beta1, static_cast<double>(state.step)));
  const double ibc2 = 1.0 / (1.0 - std::pow(state.beta2, static_cast<double>(state.step)));
  for (int p = 0; p < params.count(); ++p) {
    const std::size_t i = static_cast<std::size_t>(p);
    state.m[i].array() =
        state.beta1 * state.m[i].array() + (1.0 - state.beta1) * grads.grads[i].array();
    state.v[i].array() = state.beta2 * state.v[i].array() +
                         (1.0 - state.beta2) * grads.grads[i].array().square();
    params.value(p).array() -=
        lr * (state.m[i].array() * ibc1) / ((state.v[i].array() * ibc2).sqrt() + state.eps);
  }
}

}  // namespace f4f
