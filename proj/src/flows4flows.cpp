#include "f4f/flows4flows.hpp"

#include <cmath>
#include <sstream>

#include "f4f/rng.hpp"

namespace f4f {

namespace {

void check_conditions(ConditionMode mode, const Matrix* cx, const Matrix* cy, int n) {
  if (mode == ConditionMode::kNone) {
    if (cx != nullptr || cy != nullptr) {
      throw std::invalid_argument("flow4flow: conditions passed to an unconditional model");
    }
    return;
  }
  if (cx == nullptr || cy == nullptr) {
    throw std::invalid_argument("flow4flow: delta mode requires cx and cy");
  }
  if (cx->rows() != n || cy->rows() != n || cx->cols() != 1 || cy->cols() != 1) {
    throw std::invalid_argument("flow4flow: condition shape mismatch");
  }
}

struct Partition {
  std::vector<int> fwd, inv;
  Matrix delta_fwd, delta_inv;  // embedding inputs (non-negative)
};

Partition split_by_direction(const Matrix& cx, const Matrix& cy) {
  Partition p;
  const int n = static_cast<int>(cx.rows());
  for (int i = 0; i < n; ++i) {
    const double d = cy(i, 0) - cx(i, 0);
    (d >= 0.0 ? p.fwd : p.inv).push_back(i);
  }
  p.delta_fwd.resize(static_cast<Eigen::Index>(p.fwd.size()), 1);
  for (std::size_t k = 0; k < p.fwd.size(); ++k) {
    const int i = p.fwd[k];
    p.delta_fwd(static_cast<Eigen::Index>(k), 0) = cy(i, 0) - cx(i, 0);
  }
  p.delta_inv.resize(static_cast<Eigen::Index>(p.inv.size()), 1);
  for (std::size_t k = 0; k < p.inv.size(); ++k) {
    const int i = p.inv[k];
    p.delta_inv(static_cast<Eigen::Index>(k), 0) = cx(i, 0) - cy(i, 0);
  }
  return p;
}

std::vector<int> unscramble(const Partition& p, int n) {
  std::vector<int> pos(static_cast<std::size_t>(n));
  int k = 0;
  for (int i : p.fwd) pos[static_cast<std::size_t>(i)] = k++;
  for (int i : p.inv) pos[static_cast<std::size_t>(i)] = k++;
  return pos;
}

}  // namespace

std::pair<Var, Var> FlowForFlowModel::map_xy_t(Tape& t, Var x, const Matrix* cx,
                                               const Matrix* cy) const {
  const int n = t.rows(x);
  check_conditions(condition_mode, cx, cy, n);
  if (condition_mode == ConditionMode::kNone) {
    return transformer.forward_t(t, x, std::nullopt);
  }
  Partition p = split_by_direction(*cx, *cy);
  if (p.inv.empty()) {
    return transformer.forward_t(t, x, t.constant(p.delta_fwd));
  }
  if (p.fwd.empty()) {
    return transformer.inverse_t(t, x, t.constant(p.delta_inv));
  }
  auto [yf, ldf] = transformer.forward_t(t, t.gather_rows(x, p.fwd), t.constant(p.delta_fwd));
  auto [yi, ldi] = transformer.inverse_t(t, t.gather_rows(x, p.inv), t.constant(p.delta_inv));
  const std::vector<int> pos = unscramble(p, n);
  return {t.gather_rows(t.concat_rows({yf, yi}), pos),
          t.gather_rows(t.concat_rows({ldf, ldi}), pos)};
}

std::pair<Var, Var> FlowForFlowModel::map_yx_t(Tape& t, Var y, const Matrix* cx,
                                               const Matrix* cy) const {
  const int n = t.rows(y);
  check_conditions(condition_mode, cx, cy, n);
  if (condition_mode == ConditionMode::kNone) {
    return transformer.inverse_t(t, y, std::nullopt);
  }
  Partition p = split_by_direction(*cx, *cy);
  if (p.inv.empty()) {
    return transformer.inverse_t(t, y, t.constant(p.delta_fwd));
  }
  if (p.fwd.empty()) {
    return transformer.forward_t(t, y, t.constant(p.delta_inv));
  }
  auto [xf, ldf] = transformer.inverse_t(t, t.gather_rows(y, p.fwd), t.constant(p.delta_fwd));
  auto [xi, ldi] = transformer.forward_t(t, t.gather_rows(y, p.inv), t.constant(p.delta_inv));
  const std::vector<int> pos = unscramble(p, n);
  return {t.gather_rows(t.concat_rows({xf, xi}), pos),
          t.gather_rows(t.concat_rows({ldf, ldi}), pos)};
}

Matrix FlowForFlowModel::transfer(const Matrix& x, const Matrix* cx,
                                  const Matrix* cy) const {
  check_conditions(condition_mode, cx, cy, static_cast<int>(x.rows()));
  // Chunked so tape memory stays bounded on large point sets.
  constexpr Eigen::Index kChunk = 1024;
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index start = 0; start < x.rows(); start += kChunk) {
    const Eigen::Index len = std::min(kChunk, x.rows() - start);
    Matrix cx_block, cy_block;
    const Matrix* cxp = nullptr;
    const Matrix* cyp = nullptr;
    if (cx != nullptr) {
      cx_block = cx->middleRows(start, len);
      cxp = &cx_block;
    }
    if (cy != nullptr) {
      cy_block = cy->middleRows(start, len);
      cyp = &cy_block;
    }
    Tape t;
    auto [y, ld] = map_xy_t(t, t.constant(x.middleRows(start, len)), cxp, cyp);
    (void)ld;
    out.middleRows(start, len) = t.value(y);
  }
  return out;
}

Var FlowForFlowModel::loss_left_t(Tape& t, Var x, const Matrix* cx,
                                  const Matrix* cy) const {
  auto [y, logdet] = map_xy_t(t, x, cx, cy);
  std::optional<Var> cond;
  if (condition_mode == ConditionMode::kDelta && density_y->conditional()) {
    cond = t.constant(*cy);
  }
  Var lp = density_y->log_prob_t(t, y, cond);
  return t.neg(t.mean_all(t.add(lp, logdet)));
}

Var FlowForFlowModel::loss_right_t(Tape& t, Var y, const Matrix* cx,
                                   const Matrix* cy) const {
  auto [x, logdet] = map_yx_t(t, y, cx, cy);
  std::optional<Var> cond;
  if (condition_mode == ConditionMode::kDelta && density_x->conditional()) {
    cond = t.constant(*cx);
  }
  Var lp = density_x->log_prob_t(t, x, cond);
  return t.neg(t.mean_all(t.add(lp, logdet)));
}

FlowForFlowModel make_flow4flow(const TransformConfig& transformer_cfg,
                                std::shared_ptr<const FlowDensity> density_x,
                                std::shared_ptr<const FlowDensity> density_y,
                                ConditionMode mode, std::uint64_t init_seed) {
  if (density_x->dim() != transformer_cfg.dim || density_y->dim() != transformer_cfg.dim) {
    throw std::invalid_argument("make_flow4flow: dimension mismatch");
  }
  TransformConfig cfg = transformer_cfg;
  cfg.cond_dim = mode == ConditionMode::kDelta ? 1 : 0;
  auto store = std::make_shared<ParameterStore>();
  store->rng_seed = init_seed;
  RandomStream init(derive_seed(init_seed, "init.gamma"));
  CompositeTransform transformer(cfg, *store, "gamma", &init);
  return FlowForFlowModel{std::move(store), std::move(transformer),
                          std::move(density_x), std::move(density_y), mode};
}

double f4f_loss_left(const FlowForFlowModel& m, const Matrix& x, const Matrix* cx,
                     const Matrix* cy) {
  Tape t;
  return t.value(m.loss_left_t(t, t.constant(x), cx, cy))(0, 0);
}

double f4f_loss_right(const FlowForFlowModel& m, const Matrix& y, const Matrix* cx,
                      const Matrix* cy) {
  Tape t;
  return t.value(m.loss_right_t(t, t.constant(y), cx, cy))(0, 0);
}

Matrix base_transfer(const FlowDensity& density_x, const FlowDensity& density_y,
                     const Matrix& x, const Matrix* cx, const Matrix* cy) {
  if (dynamic_cast<const StandardNormal*>(&density_x.base()) == nullptr ||
      dynamic_cast<const StandardNormal*>(&density_y.base()) == nullptr) {
    throw std::invalid_argument("base_transfer: both densities need a normal base");
  }
  auto [z, ld1] = density_x.transform().inverse(x, cx);
  (void)ld1;
  auto [y, ld2] = density_y.transform().forward(z, cy);
  (void)ld2;
  return y;
}

TrainStepResult train_step(FlowForFlowModel& m, const F4FBatch& from_x,
                           const F4FBatch& from_y, long step_index,
                           double penalty_weight, AdamState& opt, double lr,
                           double grad_clip, Objective objective) {
  if (penalty_weight < 0.0) throw std::invalid_argument("train_step: negative penalty weight");
  const bool left = step_index % 2 == 0;
  const F4FBatch& batch = left ? from_x : from_y;

  Tape t(m.gamma_store.get());
  Var input = t.constant(batch.points);
  auto [output, logdet] = left ? m.map_xy_t(t, input, batch.cx_ptr(), batch.cy_ptr())
                               : m.map_yx_t(t, input, batch.cx_ptr(), batch.cy_ptr());

  Var loss{-1};
  if (objective == Objective::kMaxLikelihood) {
    std::optional<Var> cond;
    const FlowDensity& target = left ? *m.density_y : *m.density_x;
    const Matrix* raw = left ? batch.cy_ptr() : batch.cx_ptr();
    if (m.condition_mode == ConditionMode::kDelta && target.conditional()) {
      cond = t.constant(*raw);
    }
    Var lp = target.log_prob_t(t, output, cond);
    loss = t.neg(t.mean_all(t.add(lp, logdet)));
    if (penalty_weight > 0.0) {
      loss = t.add(loss, l1_penalty_t(t, input, output, penalty_weight));
    }
  } else {
    loss = l1_penalty_t(t, input, output, penalty_weight);
  }

  const double loss_value = t.value(loss)(0, 0);
  if (!std::isfinite(loss_value)) {
    std::ostringstream os;
    os.precision(17);
    os << "train_step: non-finite loss at step " << step_index
       << " (direction " << (left ? "left" : "right") << ", batch rows "
       << batch.points.rows() << ", batch mean " << batch.points.mean() << ")";
    throw NumericalError(os.str());
  }

  GradientSet g = t.backward(loss);
  TrainStepResult result;
  result.loss = loss_value;
  result.grad_norm = clip_grad_norm_inplace(g, grad_clip);
  adam_step(*m.gamma_store, g, opt, lr);
  return result;
}

}  // namespace f4f
