#pragma once

#include <optional>
#include <string>

#include "f4f/datasets.hpp"
#include "f4f/flows4flows.hpp"
#include "f4f/penalty.hpp"
#include "f4f/transforms.hpp"

namespace f4f {

// A fully-resolved experiment description: dataset, architecture, optimizer,
// penalty weight and seeds. One config file determines one run.
struct ExperimentConfig {
  // [dataset]
  DatasetName dataset{DatasetName::kCheckerboard};
  std::optional<DatasetName> target_dataset;          // Y side; defaults to `dataset`
  std::optional<ConditionKind> condition_kind;        // conditional families
  double cmin{0.0};
  double cmax{45.0};

  // [architecture]
  std::string preset{"standard"};
  int hidden{128};
  std::optional<int> bins;          // preset default when unset
  std::optional<double> tail_bound;

  // [trainer]
  int batch_size{128};
  double initial_lr{1e-4};
  std::optional<int> epochs;        // command/mode default when unset
  double grad_clip{5.0};
  long n_train{100000};
  long n_eval{10000};
  std::uint64_t seed{0};
  Objective objective{Objective::kMaxLikelihood};
  std::string base_x_checkpoint;    // train-f4f inputs
  std::string base_y_checkpoint;
  bool shared_base{true};           // conditional runs: one base by default

  // [penalty]
  PenaltyConfig penalty;

  // [output]
  std::string output_dir{"runs/out"};

  bool conditional() const { return condition_kind.has_value(); }
  DatasetName target() const { return target_dataset.value_or(dataset); }
  ConditionalDatasetSpec conditional_spec() const;

  // Architecture with preset, overrides and conditional embedding applied.
  // Base densities embed the raw condition as (c - cmin) / (cmax - cmin).
  TransformConfig transform_config(bool conditioned) const;
  // The transformer embeds the condition difference as dc / (cmax - cmin).
  TransformConfig transformer_config() const;

  int default_base_epochs() const { return conditional() ? 32 : 10; }
  int default_f4f_epochs() const { return conditional() ? 12 : 20; }

  static ExperimentConfig parse_text(const std::string& text);
  static ExperimentConfig load(const std::string& path);
  std::string serialize() const;
};

}  // namespace f4f
