#include "f4f/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "f4f/optim.hpp"
#include "f4f/rng.hpp"

namespace f4f {

namespace {

const char* side_str(Side s) { return s == Side::kX ? "x" : "y"; }

class TrainLogger {
 public:
  explicit TrainLogger(const std::string& path) : out_(path, std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot open training log: " + path);
    out_.precision(12);
  }
  void log(long step, int epoch, double lr, double loss, double grad_norm) {
    out_ << "step=" << step << " epoch=" << epoch << " lr=" << lr
         << " loss=" << loss << " grad_norm=" << grad_norm << "\n";
  }

 private:
  std::ofstream out_;
};

std::vector<int> shuffled_indices(int n, RandomStream& rs) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  rs.shuffle(idx);
  return idx;
}

Matrix gather(const Matrix& data, const std::vector<int>& idx, int start, int len) {
  Matrix out(len, data.cols());
  for (int i = 0; i < len; ++i) out.row(i) = data.row(idx[static_cast<std::size_t>(start + i)]);
  return out;
}

long steps_per_epoch(long n, int batch) { return (n + batch - 1) / batch; }

void fill_common_meta(CheckpointMeta& meta, const ExperimentConfig& cfg, int epochs) {
  meta.name = "meta";
  meta.entries.emplace_back("dataset", dataset_name_str(cfg.dataset));
  if (cfg.target_dataset) {
    meta.entries.emplace_back("dataset_y", dataset_name_str(*cfg.target_dataset));
  }
  if (cfg.condition_kind) {
    meta.entries.emplace_back("condition_kind", condition_kind_str(*cfg.condition_kind));
    meta.entries.emplace_back("cmin", format_double(cfg.cmin));
    meta.entries.emplace_back("cmax", format_double(cfg.cmax));
  }
  meta.entries.emplace_back("epochs", std::to_string(epochs));
  meta.entries.emplace_back("n_train", std::to_string(cfg.n_train));
  meta.entries.emplace_back("batch_size", std::to_string(cfg.batch_size));
  meta.entries.emplace_back("initial_lr", format_double(cfg.initial_lr));
  meta.entries.emplace_back("seed", std::to_string(cfg.seed));
}

}  // namespace

BaseTrainResult train_base(const ExperimentConfig& cfg, Side side,
                           const std::string& out_dir, const std::string& tag) {
  std::filesystem::create_directories(out_dir);
  const int epochs = cfg.epochs.value_or(cfg.default_base_epochs());
  const int n = static_cast<int>(cfg.n_train);
  const std::string role(side_str(side));

  // Training data.
  Matrix data;
  Matrix conds;
  const bool conditional = cfg.conditional();
  const DatasetName name = side == Side::kX ? cfg.dataset : cfg.target();
  if (conditional) {
    ConditionalDatasetSpec spec = cfg.conditional_spec();
    spec.base.name = name;
    ConditionalSample cs =
        sample_conditional_training(spec, n, derive_seed(cfg.seed, "data." + role));
    data = std::move(cs.points);
    conds = std::move(cs.conditions);
  } else {
    data = sample({name, n, derive_seed(cfg.seed, "data." + role)});
  }

  // Model.
  auto store = std::make_shared<ParameterStore>();
  store->rng_seed = cfg.seed;
  RandomStream init(derive_seed(cfg.seed, "init.phi." + role));
  CompositeTransform transform(cfg.transform_config(conditional), *store, "phi", &init);
  auto density = std::make_shared<FlowDensity>(std::move(transform), store,
                                               std::make_shared<StandardNormal>(2));

  AdamState opt = AdamState::init(*store);
  const long per_epoch = steps_per_epoch(n, cfg.batch_size);
  const long total_steps = epochs * per_epoch;
  RandomStream shuffler(derive_seed(cfg.seed, "shuffle." + role));
  TrainLogger logger(out_dir + "/" + tag + "_train_log.txt");

  BaseTrainResult result;
  result.density = density;
  result.checkpoint_path = out_dir + "/" + tag + ".ckpt";

  CheckpointMeta meta;
  fill_common_meta(meta, cfg, epochs);
  meta.entries.emplace_back("kind_detail", "base_density");
  meta.entries.emplace_back("side", role);

  long global_step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const std::vector<int> order = shuffled_indices(n, shuffler);
    double epoch_loss = 0.0;
    long epoch_batches = 0;
    for (long b = 0; b < per_epoch; ++b) {
      const int start = static_cast<int>(b * cfg.batch_size);
      const int len = std::min(cfg.batch_size, n - start);
      const Matrix batch = gather(data, order, start, len);
      std::optional<Matrix> cbatch;
      if (conditional) cbatch = gather(conds, order, start, len);

      const double lr = cosine_lr(global_step, total_steps, cfg.initial_lr);
      try {
        Tape t(store.get());
        std::optional<Var> cvar;
        if (cbatch) cvar = t.constant(*cbatch);
        Var loss = t.neg(t.mean_all(density->log_prob_t(t, t.constant(batch), cvar)));
        const double loss_value = t.value(loss)(0, 0);
        if (!std::isfinite(loss_value)) {
          throw NumericalError("train_base: non-finite loss at step " +
                               std::to_string(global_step));
        }
        GradientSet g = t.backward(loss);
        const double norm = clip_grad_norm_inplace(g, cfg.grad_clip);
        adam_step(*store, g, opt, lr);
        logger.log(global_step, epoch, lr, loss_value, norm);
        epoch_loss += loss_value;
        ++epoch_batches;
      } catch (const NumericalError& e) {
        // The failing step never reached the optimizer, so the current
        // parameters are the last good state.
        const std::string abort_path = out_dir + "/" + tag + "_aborted.ckpt";
        save_flow_density(abort_path, *density, meta);
        throw NumericalError(std::string(e.what()) + "; last good checkpoint: " + abort_path);
      }
      ++global_step;
    }
    result.epoch_nll.push_back(epoch_loss / static_cast<double>(epoch_batches));
  }

  save_flow_density(result.checkpoint_path, *density, meta);
  return result;
}

F4FTrainResult train_f4f(const ExperimentConfig& cfg,
                         std::shared_ptr<const FlowDensity> density_x,
                         std::shared_ptr<const FlowDensity> density_y,
                         const std::string& out_dir, const std::string& tag) {
  std::filesystem::create_directories(out_dir);
  const int epochs = cfg.epochs.value_or(cfg.default_f4f_epochs());
  const int n = static_cast<int>(cfg.n_train);
  const bool conditional = cfg.conditional();
  const ConditionMode mode = conditional ? ConditionMode::kDelta : ConditionMode::kNone;

  // Training data: per-side draws. In delta mode each point carries a sorted
  // condition pair (cx <= cy), its position drawn at its own condition.
  Matrix data_x, data_y, cx_x, cy_x, cx_y, cy_y;
  if (conditional) {
    ConditionalDatasetSpec spec = cfg.conditional_spec();
    auto draw_side = [&](const std::string& role, DatasetName name, bool at_high) {
      DatasetSpec base{name, n, derive_seed(cfg.seed, "data." + role + ".base")};
      Matrix pts = sample(base);
      RandomStream cs(derive_seed(cfg.seed, "data." + role + ".cond"));
      Matrix clo(n, 1), chi(n, 1);
      for (int i = 0; i < n; ++i) {
        const double a = cs.uniform(spec.cmin, spec.cmax);
        const double b = cs.uniform(spec.cmin, spec.cmax);
        clo(i, 0) = std::min(a, b);
        chi(i, 0) = std::max(a, b);
        pts.row(i) = apply_condition(spec.kind, pts.row(i), at_high ? chi(i, 0) : clo(i, 0));
      }
      return std::make_tuple(std::move(pts), std::move(clo), std::move(chi));
    };
    std::tie(data_x, cx_x, cy_x) = draw_side("f4f.x", cfg.dataset, false);
    std::tie(data_y, cx_y, cy_y) = draw_side("f4f.y", cfg.target(), true);
  } else {
    data_x = sample({cfg.dataset, n, derive_seed(cfg.seed, "data.f4f.x")});
    data_y = sample({cfg.target(), n, derive_seed(cfg.seed, "data.f4f.y")});
  }

  FlowForFlowModel model = make_flow4flow(cfg.transformer_config(), density_x, density_y,
                                          mode, cfg.seed);
  AdamState opt = AdamState::init(*model.gamma_store);
  const long per_epoch = steps_per_epoch(n, cfg.batch_size);
  const long total_steps = 2 * epochs * per_epoch;
  RandomStream shuffler_x(derive_seed(cfg.seed, "shuffle.f4f.x"));
  RandomStream shuffler_y(derive_seed(cfg.seed, "shuffle.f4f.y"));
  TrainLogger logger(out_dir + "/" + tag + "_train_log.txt");

  const std::uint64_t base_hash_x = density_x->store()->content_hash();
  const std::uint64_t base_hash_y = density_y->store()->content_hash();

  CheckpointMeta meta;
  fill_common_meta(meta, cfg, epochs);
  meta.entries.emplace_back("kind_detail", "flow4flow");
  meta.entries.emplace_back("penalty_weight", format_double(cfg.penalty.l1_weight));
  meta.entries.emplace_back("objective", cfg.objective == Objective::kL1Only
                                             ? "l1_only"
                                             : "maximum_likelihood");

  F4FTrainResult result;
  result.checkpoint_path = out_dir + "/" + tag + ".ckpt";

  auto slice_batch = [&](const Matrix& pts, const Matrix& clo, const Matrix& chi,
                         const std::vector<int>& order, int start, int len) {
    F4FBatch b;
    b.points = gather(pts, order, start, len);
    if (conditional) {
      b.cx = gather(clo, order, start, len);
      b.cy = gather(chi, order, start, len);
    }
    return b;
  };

  long global_step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const std::vector<int> order_x = shuffled_indices(n, shuffler_x);
    const std::vector<int> order_y = shuffled_indices(n, shuffler_y);
    double epoch_loss = 0.0;
    long epoch_batches = 0;
    for (long b = 0; b < per_epoch; ++b) {
      const int start = static_cast<int>(b * cfg.batch_size);
      const int len = std::min(cfg.batch_size, n - start);
      const F4FBatch bx = slice_batch(data_x, cx_x, cy_x, order_x, start, len);
      const F4FBatch by = slice_batch(data_y, cx_y, cy_y, order_y, start, len);
      for (int half = 0; half < 2; ++half) {
        const double lr = cosine_lr(global_step, total_steps, cfg.initial_lr);
        try {
          const TrainStepResult r =
              train_step(model, bx, by, global_step, cfg.penalty.l1_weight, opt, lr,
                         cfg.grad_clip, cfg.objective);
          logger.log(global_step, epoch, lr, r.loss, r.grad_norm);
          epoch_loss += r.loss;
          ++epoch_batches;
        } catch (const NumericalError& e) {
          const std::string abort_path = out_dir + "/" + tag + "_aborted.ckpt";
          save_flow4flow(abort_path, model, meta);
          throw NumericalError(std::string(e.what()) +
                               "; last good checkpoint: " + abort_path);
        }
        ++global_step;
      }
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(epoch_batches));
  }

  if (density_x->store()->content_hash() != base_hash_x ||
      density_y->store()->content_hash() != base_hash_y) {
    throw std::logic_error("train_f4f: frozen base densities changed during training");
  }

  save_flow4flow(result.checkpoint_path, model, meta);

  // Held-out evaluation of the learned map.
  EvalReport report;
  const int n_eval = static_cast<int>(cfg.n_eval);
  report.n_points = n_eval;
  report.seed = cfg.seed;
  if (conditional) {
    ConditionalDatasetSpec spec = cfg.conditional_spec();
    const Matrix x_eval = sample_conditional(
        {DatasetSpec{cfg.dataset, n_eval, derive_seed(cfg.seed, "eval.x")}, spec.kind,
         spec.cmin, spec.cmax},
        spec.cmin);
    const Matrix clo = Matrix::Constant(n_eval, 1, spec.cmin);
    const Matrix chi = Matrix::Constant(n_eval, 1, spec.cmax);
    const Matrix moved = model.transfer(x_eval, &clo, &chi);
    report.mean_translation = mean_translation(x_eval, moved);
    report.ood_fraction = ood_fraction(moved, cfg.target(), spec.kind, spec.cmax);
  } else {
    const Matrix x_eval = sample({cfg.dataset, n_eval, derive_seed(cfg.seed, "eval.x")});
    const Matrix moved = model.transfer(x_eval);
    report.mean_translation = mean_translation(x_eval, moved);
    report.ood_fraction = ood_fraction(moved, cfg.target());
  }
  result.eval = report;

  std::ofstream eval_out(out_dir + "/" + tag + "_eval.txt", std::ios::trunc);
  eval_out << report.to_kv_text();
  append_results_ledger(out_dir + "/results.csv", dataset_name_str(cfg.dataset), tag,
                        cfg.penalty.l1_weight, cfg.seed, report);

  result.model = std::make_unique<FlowForFlowModel>(std::move(model));
  return result;
}

}  // namespace f4f
