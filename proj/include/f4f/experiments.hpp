#pragma once

#include <string>
#include <vector>

#include "f4f/config.hpp"
#include "f4f/trainer.hpp"

namespace f4f {

// The identity-map comparison grid: per dataset and seed, train two base
// densities, then a transformer with pure maximum likelihood, with the L1
// penalty (weight 1.0), and with the L1 penalty alone; evaluate the mean L1
// translation of each map plus the encode/decode base transfer.
struct Table1Options {
  std::vector<DatasetName> datasets{DatasetName::kFourCircles, DatasetName::kCheckerboard};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  ExperimentConfig base;  // dataset and seed fields are overridden per run
  std::string out_dir{"runs/table1"};
  int workers{2};
};

struct Table1Row {
  DatasetName dataset{};
  std::uint64_t seed{};
  double flow4flow{0.0};
  double flow4flow_l1{0.0};
  double base_transfer{0.0};
  double l1_only{0.0};
};

struct SeedSpreadFlag {
  std::string dataset;
  std::string metric;
  double min_value{0.0};
  double max_value{0.0};
  double ratio{0.0};  // max / min over seeds
};

struct Table1Result {
  std::vector<Table1Row> rows;  // one row per (dataset, seed)
  std::vector<SeedSpreadFlag> flags;  // metrics whose across-seed ratio > 5
  std::string csv_path;
  std::string report_path;
};

Table1Result reproduce_table1(const Table1Options& options);

// Across-seed spread flags for one dataset's metric column; flagged when
// max/min exceeds 5 (guarding against initialization-sensitive results).
std::vector<SeedSpreadFlag> seed_spread_flags(
    const std::vector<Table1Row>& rows, double ratio_threshold = 5.0);

// The conditional transport comparison: a shared conditional base density
// plus a delta-conditioned transformer; reports the out-of-support fraction
// of transferring cmin-samples to cmax against sampling the conditional base
// directly at cmax.
struct ConditionalCompareResult {
  double ood_transfer{0.0};
  double ood_base_samples{0.0};
  double mean_translation{0.0};
  std::string base_checkpoint;
  std::string f4f_checkpoint;
};

ConditionalCompareResult run_conditional_compare(const ExperimentConfig& cfg,
                                                 const std::string& out_dir);

}  // namespace f4f
