#pragma once

#include <memory>
#include <optional>

#include "f4f/distributions.hpp"
#include "f4f/optim.hpp"
#include "f4f/penalty.hpp"
#include "f4f/transforms.hpp"

namespace f4f {

enum class ConditionMode { kNone, kDelta };
enum class Objective { kMaxLikelihood, kL1Only };

// Transformer f between two data spaces, with flow densities on both sides.
// The densities are frozen; training only updates the transformer store.
//
// In delta mode the transformer is conditioned on the difference
// dc = c_to - c_from, with a canonical direction: non-negative dc runs the
// forward transform conditioned on dc, negative dc runs the exact inverse
// conditioned on |dc|. Transfers with swapped endpoints are therefore exact
// functional inverses of each other by construction.
struct FlowForFlowModel {
  std::shared_ptr<ParameterStore> gamma_store;
  CompositeTransform transformer;
  std::shared_ptr<const FlowDensity> density_x;
  std::shared_ptr<const FlowDensity> density_y;  // may alias density_x
  ConditionMode condition_mode{ConditionMode::kNone};

  bool shared_base() const { return density_x == density_y; }

  // X -> Y map and its log |det J| under the per-point conditions; conditions
  // are (n x 1) or null in unconditional mode.
  std::pair<Var, Var> map_xy_t(Tape& t, Var x, const Matrix* cx, const Matrix* cy) const;
  // Exact inverse map Y -> X.
  std::pair<Var, Var> map_yx_t(Tape& t, Var y, const Matrix* cx, const Matrix* cy) const;

  // Moves points sampled at cx to the distribution at cy.
  Matrix transfer(const Matrix& x, const Matrix* cx = nullptr,
                  const Matrix* cy = nullptr) const;

  // Negative mean log-likelihood terms (scalar tape nodes).
  Var loss_left_t(Tape& t, Var x, const Matrix* cx, const Matrix* cy) const;
  Var loss_right_t(Tape& t, Var y, const Matrix* cx, const Matrix* cy) const;
};

// Builds a model with a freshly initialized (identity) transformer.
// cond_range sets the delta embedding scale in delta mode.
FlowForFlowModel make_flow4flow(const TransformConfig& transformer_cfg,
                                std::shared_ptr<const FlowDensity> density_x,
                                std::shared_ptr<const FlowDensity> density_y,
                                ConditionMode mode, std::uint64_t init_seed);

double f4f_loss_left(const FlowForFlowModel& m, const Matrix& x,
                     const Matrix* cx = nullptr, const Matrix* cy = nullptr);
double f4f_loss_right(const FlowForFlowModel& m, const Matrix& y,
                      const Matrix* cx = nullptr, const Matrix* cy = nullptr);

// Encode with one flow, decode with the other through the shared normal
// space: f_y(f_x^-1(x, cx), cy). Both densities must have a normal base.
Matrix base_transfer(const FlowDensity& density_x, const FlowDensity& density_y,
                     const Matrix& x, const Matrix* cx = nullptr,
                     const Matrix* cy = nullptr);

struct F4FBatch {
  Matrix points;       // n x dim
  Matrix cx, cy;       // n x 1 each, or empty in unconditional mode
  const Matrix* cx_ptr() const { return cx.size() ? &cx : nullptr; }
  const Matrix* cy_ptr() const { return cy.size() ? &cy : nullptr; }
};

struct TrainStepResult {
  double loss{0.0};
  double grad_norm{0.0};  // pre-clip global norm
};

// One optimization step on the transformer. Even steps use the left loss on
// the X batch, odd steps the right loss on the Y batch; the L1 penalty is
// taken between that direction's input and output. Aborts with
// NumericalError on a non-finite loss (batch statistics in the message).
TrainStepResult train_step(FlowForFlowModel& m, const F4FBatch& from_x,
                           const F4FBatch& from_y, long step_index,
                           double penalty_weight, AdamState& opt, double lr,
                           double grad_clip,
                           Objective objective = Objective::kMaxLikelihood);

}  // namespace f4f
