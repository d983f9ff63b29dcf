#include "f4f/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "f4f/flows4flows.hpp"
#include "f4f/rng.hpp"

namespace f4f {

namespace {

Table1Row run_identity_cell(const ExperimentConfig& base_cfg, DatasetName dataset,
                            std::uint64_t seed, const std::string& out_dir) {
  ExperimentConfig cfg = base_cfg;
  cfg.dataset = dataset;
  cfg.target_dataset.reset();
  cfg.condition_kind.reset();
  cfg.seed = seed;
  cfg.output_dir = out_dir;
  std::filesystem::create_directories(out_dir);

  ExperimentConfig base_train = cfg;
  base_train.epochs.reset();
  BaseTrainResult bx = train_base(base_train, Side::kX, out_dir, "base_x");
  BaseTrainResult by = train_base(base_train, Side::kY, out_dir, "base_y");

  Table1Row row;
  row.dataset = dataset;
  row.seed = seed;

  ExperimentConfig f4f_cfg = cfg;
  f4f_cfg.epochs.reset();

  {
    ExperimentConfig c = f4f_cfg;
    c.penalty.l1_weight = 0.0;
    c.objective = Objective::kMaxLikelihood;
    row.flow4flow = train_f4f(c, bx.density, by.density, out_dir, "f4f_ml").eval.mean_translation;
  }
  {
    ExperimentConfig c = f4f_cfg;
    c.penalty.l1_weight = 1.0;
    c.objective = Objective::kMaxLikelihood;
    row.flow4flow_l1 =
        train_f4f(c, bx.density, by.density, out_dir, "f4f_ml_l1").eval.mean_translation;
  }
  {
    ExperimentConfig c = f4f_cfg;
    c.penalty.l1_weight = 1.0;
    c.objective = Objective::kL1Only;
    row.l1_only =
        train_f4f(c, bx.density, by.density, out_dir, "f4f_l1_only").eval.mean_translation;
  }
  {
    const Matrix x_eval = sample(
        {dataset, static_cast<int>(cfg.n_eval), derive_seed(seed, "eval.x")});
    const Matrix moved = base_transfer(*bx.density, *by.density, x_eval);
    row.base_transfer = mean_translation(x_eval, moved);
  }
  return row;
}

const char* metric_name(int i) {
  switch (i) {
    case 0: return "flow4flow";
    case 1: return "flow4flow_l1";
    case 2: return "base_transfer";
    case 3: return "l1_only";
  }
  return "?";
}

double metric_value(const Table1Row& row, int i) {
  switch (i) {
    case 0: return row.flow4flow;
    case 1: return row.flow4flow_l1;
    case 2: return row.base_transfer;
    case 3: return row.l1_only;
  }
  return 0.0;
}

}  // namespace

std::vector<SeedSpreadFlag> seed_spread_flags(const std::vector<Table1Row>& rows,
                                              double ratio_threshold) {
  std::vector<SeedSpreadFlag> flags;
  std::vector<DatasetName> datasets;
  for (const auto& r : rows) {
    if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) {
      datasets.push_back(r.dataset);
    }
  }
  for (DatasetName d : datasets) {
    for (int m = 0; m < 4; ++m) {
      double lo = 1e300, hi = -1e300;
      int count = 0;
      for (const auto& r : rows) {
        if (r.dataset != d) continue;
        lo = std::min(lo, metric_value(r, m));
        hi = std::max(hi, metric_value(r, m));
        ++count;
      }
      if (count < 2) continue;
      // Guard tiny denominators: spreads below measurement scale are noise.
      const double ratio = hi / std::max(lo, 1e-12);
      if (ratio > ratio_threshold) {
        flags.push_back({dataset_name_str(d), metric_name(m), lo, hi, ratio});
      }
    }
  }
  return flags;
}

Table1Result reproduce_table1(const Table1Options& options) {
  std::filesystem::create_directories(options.out_dir);
  struct Job {
    DatasetName dataset;
    std::uint64_t seed;
    std::string dir;
  };
  std::vector<Job> jobs;
  for (DatasetName d : options.datasets) {
    for (std::uint64_t s : options.seeds) {
      jobs.push_back({d, s,
                      options.out_dir + "/" + dataset_name_str(d) + "_seed" + std::to_string(s)});
    }
  }

  std::vector<Table1Row> rows(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(jobs.size())));
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        rows[i] = run_identity_cell(options.base, jobs[i].dataset, jobs[i].seed, jobs[i].dir);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!errors[i].empty()) {
      throw std::runtime_error("table1 cell " + jobs[i].dir + " failed: " + errors[i]);
    }
  }

  Table1Result result;
  result.rows = std::move(rows);
  result.flags = seed_spread_flags(result.rows);
  result.csv_path = options.out_dir + "/table1.csv";
  result.report_path = options.out_dir + "/table1_report.txt";

  std::ofstream csv(result.csv_path, std::ios::trunc);
  csv << "dataset,seed,flow4flow,flow4flow_l1,base_transfer,l1_only\n";
  csv.precision(17);
  for (const auto& r : result.rows) {
    csv << dataset_name_str(r.dataset) << ',' << r.seed << ',' << r.flow4flow << ','
        << r.flow4flow_l1 << ',' << r.base_transfer << ',' << r.l1_only << "\n";
  }

  std::ofstream report(result.report_path, std::ios::trunc);
  report.precision(6);
  report << "identity-map mean L1 translation, one row per (dataset, seed)\n";
  report << "columns: flow4flow | flow4flow + L1 | base transfer | L1 only\n\n";
  for (const auto& r : result.rows) {
    report << dataset_name_str(r.dataset) << " seed " << r.seed << ": " << r.flow4flow
           << " | " << r.flow4flow_l1 << " | " << r.base_transfer << " | " << r.l1_only
           << "\n";
  }
  report << "\nacross-seed spread flags (max/min > 5):\n";
  if (result.flags.empty()) {
    report << "none\n";
  } else {
    for (const auto& f : result.flags) {
      report << "FLAG " << f.dataset << "." << f.metric << ": min " << f.min_value
             << ", max " << f.max_value << ", ratio " << f.ratio << "\n";
    }
  }
  return result;
}

ConditionalCompareResult run_conditional_compare(const ExperimentConfig& cfg,
                                                 const std::string& out_dir) {
  if (!cfg.conditional()) {
    throw std::invalid_argument("run_conditional_compare: config has no condition mode");
  }
  std::filesystem::create_directories(out_dir);

  ExperimentConfig base_cfg = cfg;
  base_cfg.epochs.reset();
  BaseTrainResult base = train_base(base_cfg, Side::kX, out_dir, "base");

  ExperimentConfig f4f_cfg = cfg;
  f4f_cfg.epochs.reset();
  F4FTrainResult f4f = cfg.shared_base
                           ? train_f4f(f4f_cfg, base.density, base.density, out_dir, "f4f")
                           : train_f4f(f4f_cfg, base.density,
                                       train_base(base_cfg, Side::kY, out_dir, "base_y").density,
                                       out_dir, "f4f");

  const ConditionalDatasetSpec spec = cfg.conditional_spec();
  const int n_eval = static_cast<int>(cfg.n_eval);

  ConditionalCompareResult out;
  out.base_checkpoint = base.checkpoint_path;
  out.f4f_checkpoint = f4f.checkpoint_path;

  // Transfer samples drawn at cmin to cmax.
  const Matrix x_eval = sample_conditional(
      {DatasetSpec{cfg.dataset, n_eval, derive_seed(cfg.seed, "eval.cond.x")}, spec.kind,
       spec.cmin, spec.cmax},
      spec.cmin);
  const Matrix clo = Matrix::Constant(n_eval, 1, spec.cmin);
  const Matrix chi = Matrix::Constant(n_eval, 1, spec.cmax);
  const Matrix moved = f4f.model->transfer(x_eval, &clo, &chi);
  out.ood_transfer = ood_fraction(moved, cfg.dataset, spec.kind, spec.cmax);
  out.mean_translation = mean_translation(x_eval, moved);

  // Sample the conditional base density directly at cmax.
  const Matrix sampled =
      base.density->sample(n_eval, &chi, derive_seed(cfg.seed, "eval.cond.samples"));
  out.ood_base_samples = ood_fraction(sampled, cfg.dataset, spec.kind, spec.cmax);

  std::ofstream report(out_dir + "/conditional_compare.txt", std::ios::trunc);
  report.precision(6);
  report << "ood_transfer = " << out.ood_transfer << "\n";
  report << "ood_base_samples = " << out.ood_base_samples << "\n";
  report << "mean_translation = " << out.mean_translation << "\n";
  return out;
}

}  // namespace f4f
