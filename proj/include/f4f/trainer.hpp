#pragma once

#include <memory>
#include <string>
#include <vector>

#include "f4f/checkpoint.hpp"
#include "f4f/config.hpp"
#include "f4f/distributions.hpp"
#include "f4f/flows4flows.hpp"
#include "f4f/metrics.hpp"

namespace f4f {

// Which side of the map a base density serves; controls the data / init /
// shuffle seed streams so the two sides are independent.
enum class Side { kX, kY };

struct BaseTrainResult {
  std::shared_ptr<FlowDensity> density;
  std::string checkpoint_path;
  std::vector<double> epoch_nll;  // final <= first on any healthy run
};

// Maximum-likelihood training of a base flow density on the configured
// dataset (the conditional family when cfg has a condition mode). Writes
// `<out_dir>/<tag>.ckpt` plus a line-delimited training log. On divergence
// the last good parameters are saved to `<tag>_aborted.ckpt` and the
// NumericalError is rethrown.
BaseTrainResult train_base(const ExperimentConfig& cfg, Side side,
                           const std::string& out_dir, const std::string& tag);

struct F4FTrainResult {
  std::unique_ptr<FlowForFlowModel> model;
  std::string checkpoint_path;
  std::vector<double> epoch_loss;
  EvalReport eval;
};

// Trains the transformer between the two configured datasets (or between
// condition values in delta mode) over frozen base densities, alternating
// the left/right losses per step. Writes checkpoint, log and an EvalReport.
F4FTrainResult train_f4f(const ExperimentConfig& cfg,
                         std::shared_ptr<const FlowDensity> density_x,
                         std::shared_ptr<const FlowDensity> density_y,
                         const std::string& out_dir, const std::string& tag);

}  // namespace f4f
