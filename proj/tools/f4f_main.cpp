// Command-line surface: data generation, training, transfer, evaluation,
// plotting and the identity-map comparison grid.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "f4f/checkpoint.hpp"
#include "f4f/config.hpp"
#include "f4f/experiments.hpp"
#include "f4f/plot.hpp"
#include "f4f/rng.hpp"
#include "f4f/trainer.hpp"

namespace {

using namespace f4f;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

std::string fmt17(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const std::string& resolved_config,
                    const std::vector<std::string>& artifacts) {
  std::filesystem::create_directories(out_dir);
  std::ofstream out(out_dir + "/manifest.txt", std::ios::trunc);
  out << "command = " << command << "\n";
  out << "\n[config]\n" << resolved_config;
  out << "\n[artifacts]\n";
  for (const auto& a : artifacts) out << a << "\n";
}

struct Csv {
  std::vector<std::string> header;
  Matrix values;
};

Csv read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open CSV: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("empty CSV: " + path);
  Csv csv;
  {
    std::istringstream hs(line);
    std::string col;
    while (std::getline(hs, col, ',')) csv.header.push_back(col);
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != csv.header.size()) {
      throw std::invalid_argument("ragged CSV row in " + path);
    }
    rows.push_back(std::move(row));
  }
  csv.values.resize(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(csv.header.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      csv.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return csv;
}

int column_of(const Csv& csv, const std::string& name) {
  for (std::size_t i = 0; i < csv.header.size(); ++i) {
    if (csv.header[i] == name) return static_cast<int>(i);
  }
  return -1;
}

// ---------------------------------------------------------------------------

int cmd_make_data(const std::string& dataset, int n, std::uint64_t seed,
                  const std::string& mode, double cmin, double cmax,
                  const std::string& out_path) {
  const auto name = parse_dataset_name(dataset);
  if (!name) throw std::invalid_argument("unknown dataset: " + dataset);

  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw std::invalid_argument("cannot write: " + out_path);

  if (mode == "none") {
    const Matrix pts = sample({*name, n, seed});
    out << "x0,x1\n";
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      out << fmt17(pts(i, 0)) << ',' << fmt17(pts(i, 1)) << "\n";
    }
  } else {
    const auto kind = parse_condition_kind(mode);
    if (!kind) throw std::invalid_argument("unknown mode: " + mode);
    ConditionalDatasetSpec spec;
    spec.base = DatasetSpec{*name, 0, 0};
    spec.kind = *kind;
    spec.cmin = cmin;
    spec.cmax = cmax;
    spec.validate();
    const ConditionalSample cs = sample_conditional_training(spec, n, seed);
    out << "x0,x1,c\n";
    for (Eigen::Index i = 0; i < cs.points.rows(); ++i) {
      out << fmt17(cs.points(i, 0)) << ',' << fmt17(cs.points(i, 1)) << ','
          << fmt17(cs.conditions(i, 0)) << "\n";
    }
  }
  std::cout << "wrote " << n << " samples to " << out_path << "\n";
  return kExitOk;
}

int cmd_train_base(const std::string& config_path, const std::string& side_str,
                   std::string tag) {
  ExperimentConfig cfg = ExperimentConfig::load(config_path);
  const Side side = side_str == "y" ? Side::kY : Side::kX;
  if (tag.empty()) tag = std::string("base_") + side_str;
  BaseTrainResult r = train_base(cfg, side, cfg.output_dir, tag);
  write_manifest(cfg.output_dir, "train-base " + config_path, cfg.serialize(),
                 {r.checkpoint_path, cfg.output_dir + "/" + tag + "_train_log.txt"});
  std::cout << "checkpoint: " << r.checkpoint_path << "\n";
  std::cout << "epoch NLL:";
  for (double v : r.epoch_nll) std::cout << ' ' << v;
  std::cout << "\n";
  return kExitOk;
}

int cmd_train_f4f(const std::string& config_path, std::string base_x, std::string base_y,
                  const std::string& tag) {
  ExperimentConfig cfg = ExperimentConfig::load(config_path);
  if (base_x.empty()) base_x = cfg.base_x_checkpoint;
  if (base_y.empty()) base_y = cfg.base_y_checkpoint;
  if (base_x.empty()) {
    throw std::invalid_argument(
        "train-f4f needs a base density: set [trainer] base_x_checkpoint or --base-x");
  }
  if (!std::filesystem::exists(base_x)) {
    throw std::invalid_argument("base checkpoint does not exist: " + base_x);
  }
  auto dx = load_flow_density(base_x).density;
  std::shared_ptr<const FlowDensity> dy = dx;
  if (!base_y.empty()) {
    if (!std::filesystem::exists(base_y)) {
      throw std::invalid_argument("base checkpoint does not exist: " + base_y);
    }
    dy = load_flow_density(base_y).density;
  } else if (!cfg.shared_base) {
    throw std::invalid_argument(
        "train-f4f with shared_base = false needs [trainer] base_y_checkpoint or --base-y");
  }

  F4FTrainResult r = train_f4f(cfg, dx, dy, cfg.output_dir, tag);
  write_manifest(cfg.output_dir, "train-f4f " + config_path, cfg.serialize(),
                 {r.checkpoint_path, cfg.output_dir + "/" + tag + "_eval.txt",
                  cfg.output_dir + "/" + tag + "_train_log.txt",
                  cfg.output_dir + "/results.csv"});
  std::cout << "checkpoint: " << r.checkpoint_path << "\n";
  std::cout << r.eval.to_kv_text();
  return kExitOk;
}

int cmd_transfer(const std::string& model_path, const std::string& in_path,
                 const std::string& out_path, double cx, double cy, bool have_c) {
  if (checkpoint_kind(model_path) != "flow4flow") {
    throw std::invalid_argument("transfer needs a flow4flow checkpoint");
  }
  LoadedFlow4Flow loaded = load_flow4flow(model_path);
  const Csv csv = read_csv(in_path);
  const int ix0 = column_of(csv, "x0");
  const int ix1 = column_of(csv, "x1");
  if (ix0 < 0 || ix1 < 0) throw std::invalid_argument("input CSV needs x0,x1 columns");
  Matrix pts(csv.values.rows(), 2);
  pts.col(0) = csv.values.col(ix0);
  pts.col(1) = csv.values.col(ix1);

  Matrix moved;
  const bool conditional = loaded.model.condition_mode == ConditionMode::kDelta;
  Matrix cxm, cym;
  if (conditional) {
    if (!have_c) throw std::invalid_argument("this model is conditional: pass --cx and --cy");
    cxm = Matrix::Constant(pts.rows(), 1, cx);
    cym = Matrix::Constant(pts.rows(), 1, cy);
    moved = loaded.model.transfer(pts, &cxm, &cym);
  } else {
    if (have_c) throw std::invalid_argument("this model is unconditional: drop --cx/--cy");
    moved = loaded.model.transfer(pts);
  }

  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw std::invalid_argument("cannot write: " + out_path);
  out << (conditional ? "x0,x1,y0,y1,cx,cy" : "x0,x1,y0,y1") << "\n";
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    out << fmt17(pts(i, 0)) << ',' << fmt17(pts(i, 1)) << ',' << fmt17(moved(i, 0)) << ','
        << fmt17(moved(i, 1));
    if (conditional) out << ',' << fmt17(cx) << ',' << fmt17(cy);
    out << "\n";
  }
  std::cout << "wrote " << pts.rows() << " pairs to " << out_path << "\n";
  return kExitOk;
}

int cmd_evaluate(const std::string& model_path, const std::string& dataset,
                 std::uint64_t seed, int n, const std::string& ledger, double cx,
                 double cy, bool have_c) {
  const auto name = parse_dataset_name(dataset);
  if (!name) throw std::invalid_argument("unknown dataset: " + dataset);
  const std::string kind = checkpoint_kind(model_path);

  EvalReport report;
  report.n_points = n;
  report.seed = seed;
  std::string model_label;
  double penalty_weight = 0.0;

  if (kind == "flow_density") {
    LoadedFlowDensity loaded = load_flow_density(model_path);
    model_label = "flow_density";
    const bool conditional = loaded.density->conditional();
    if (conditional) {
      if (!have_c) throw std::invalid_argument("conditional density: pass --cx (the condition)");
      const auto meta_kind = loaded.meta.get("condition_kind");
      if (!meta_kind) throw std::invalid_argument("checkpoint lacks condition_kind metadata");
      const auto ckind = parse_condition_kind(*meta_kind);
      const Matrix cond = Matrix::Constant(n, 1, cx);
      ConditionalDatasetSpec spec{DatasetSpec{*name, 0, 0}, *ckind,
                                  kv_double(loaded.meta, "cmin"), kv_double(loaded.meta, "cmax")};
      const Matrix held_out = sample_conditional(
          {DatasetSpec{*name, n, derive_seed(seed, "eval.data")}, spec.kind, spec.cmin,
           spec.cmax},
          cx);
      report.mean_nll = mean_nll(*loaded.density, held_out, &cond);
      const Matrix sampled = loaded.density->sample(n, &cond, derive_seed(seed, "eval.samples"));
      report.ood_fraction = ood_fraction(sampled, *name, spec.kind, cx);
    } else {
      const Matrix held_out = sample({*name, n, derive_seed(seed, "eval.data")});
      report.mean_nll = mean_nll(*loaded.density, held_out);
      const Matrix sampled = loaded.density->sample(n, nullptr, derive_seed(seed, "eval.samples"));
      report.ood_fraction = ood_fraction(sampled, *name);
    }
  } else {
    LoadedFlow4Flow loaded = load_flow4flow(model_path);
    model_label = "flow4flow";
    if (auto w = loaded.meta.get("penalty_weight")) penalty_weight = std::stod(*w);
    if (loaded.model.condition_mode == ConditionMode::kDelta) {
      if (!have_c) throw std::invalid_argument("conditional model: pass --cx and --cy");
      const auto meta_kind = loaded.meta.get("condition_kind");
      if (!meta_kind) throw std::invalid_argument("checkpoint lacks condition_kind metadata");
      const auto ckind = parse_condition_kind(*meta_kind);
      const Matrix x_eval = sample_conditional(
          {DatasetSpec{*name, n, derive_seed(seed, "eval.data")}, *ckind,
           std::min(cx, cy), std::max(cx, cy) + 1.0},
          cx);
      const Matrix cxm = Matrix::Constant(n, 1, cx);
      const Matrix cym = Matrix::Constant(n, 1, cy);
      const Matrix moved = loaded.model.transfer(x_eval, &cxm, &cym);
      report.mean_translation = mean_translation(x_eval, moved);
      report.ood_fraction = ood_fraction(moved, *name, *ckind, cy);
    } else {
      const Matrix x_eval = sample({*name, n, derive_seed(seed, "eval.data")});
      const Matrix moved = loaded.model.transfer(x_eval);
      report.mean_translation = mean_translation(x_eval, moved);
      report.ood_fraction = ood_fraction(moved, *name);
    }
  }

  std::cout << report.to_kv_text();
  if (!ledger.empty()) {
    append_results_ledger(ledger, dataset, model_label, penalty_weight, seed, report);
    std::cout << "appended to " << ledger << "\n";
  }
  return kExitOk;
}

int cmd_plot(const std::string& pairs_path, const std::string& out_path) {
  const Csv csv = read_csv(pairs_path);
  if (csv.values.rows() == 0) throw std::invalid_argument("no rows in " + pairs_path);
  const int ix0 = column_of(csv, "x0");
  const int ix1 = column_of(csv, "x1");
  const int iy0 = column_of(csv, "y0");
  const int iy1 = column_of(csv, "y1");
  if (ix0 < 0 || ix1 < 0 || iy0 < 0 || iy1 < 0) {
    throw std::invalid_argument("pairs CSV needs x0,x1,y0,y1 columns");
  }
  Matrix input(csv.values.rows(), 2), output(csv.values.rows(), 2);
  input.col(0) = csv.values.col(ix0);
  input.col(1) = csv.values.col(ix1);
  output.col(0) = csv.values.col(iy0);
  output.col(1) = csv.values.col(iy1);
  render_pair_panels(input, output, out_path);
  std::cout << "wrote " << out_path << "\n";
  return kExitOk;
}

int cmd_reproduce_table1(const std::string& config_path, const std::string& datasets,
                         const std::string& seeds, const std::string& out_dir,
                         bool full, int workers) {
  Table1Options options;
  options.base = ExperimentConfig::load(config_path);
  options.out_dir = out_dir.empty() ? options.base.output_dir + "/table1" : out_dir;
  options.workers = workers;
  if (full) {
    options.datasets = {DatasetName::kRing,    DatasetName::kConcentricRings,
                        DatasetName::kFourCircles, DatasetName::kCheckerboard,
                        DatasetName::kSpirals, DatasetName::kStar,
                        DatasetName::kEightStar};
  }
  if (!datasets.empty()) {
    options.datasets.clear();
    std::istringstream ds(datasets);
    std::string item;
    while (std::getline(ds, item, ',')) {
      const auto name = parse_dataset_name(item);
      if (!name) throw std::invalid_argument("unknown dataset: " + item);
      options.datasets.push_back(*name);
    }
  }
  if (!seeds.empty()) {
    options.seeds.clear();
    std::istringstream ss(seeds);
    std::string item;
    while (std::getline(ss, item, ',')) {
      options.seeds.push_back(static_cast<std::uint64_t>(std::stoull(item)));
    }
  }

  Table1Result result = reproduce_table1(options);
  write_manifest(options.out_dir, "reproduce-table1 " + config_path,
                 options.base.serialize(), {result.csv_path, result.report_path});
  std::cout << "rows: " << result.rows.size() << "\n";
  std::cout << "csv: " << result.csv_path << "\n";
  std::cout << "report: " << result.report_path << "\n";
  for (const auto& f : result.flags) {
    std::cout << "FLAG " << f.dataset << "." << f.metric << " ratio " << f.ratio << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flows-for-flows: maps between 2D distributions via normalizing flows"};
  app.require_subcommand(1);

  // make-data
  auto* make_data = app.add_subcommand("make-data", "sample a toy dataset to CSV");
  std::string md_dataset, md_mode = "none", md_out = "data.csv";
  int md_n = 10000;
  std::uint64_t md_seed = 0;
  double md_cmin = 0.0, md_cmax = 45.0;
  make_data->add_option("--dataset", md_dataset)->required();
  make_data->add_option("--n", md_n);
  make_data->add_option("--seed", md_seed);
  make_data->add_option("--mode", md_mode)->check(CLI::IsMember({"none", "rotation", "radial_scale"}));
  make_data->add_option("--cmin", md_cmin);
  make_data->add_option("--cmax", md_cmax);
  make_data->add_option("--out", md_out);

  // train-base
  auto* train_base_cmd = app.add_subcommand("train-base", "train a base flow density");
  std::string tb_config, tb_side = "x", tb_tag;
  train_base_cmd->add_option("--config", tb_config)->required();
  train_base_cmd->add_option("--side", tb_side)->check(CLI::IsMember({"x", "y"}));
  train_base_cmd->add_option("--tag", tb_tag);

  // train-f4f
  auto* train_f4f_cmd = app.add_subcommand("train-f4f", "train a flow4flow transformer");
  std::string tf_config, tf_base_x, tf_base_y, tf_tag = "f4f";
  train_f4f_cmd->add_option("--config", tf_config)->required();
  train_f4f_cmd->add_option("--base-x", tf_base_x);
  train_f4f_cmd->add_option("--base-y", tf_base_y);
  train_f4f_cmd->add_option("--tag", tf_tag);

  // transfer
  auto* transfer_cmd = app.add_subcommand("transfer", "map CSV points through a model");
  std::string tr_model, tr_in, tr_out = "pairs.csv";
  double tr_cx = 0.0, tr_cy = 0.0;
  transfer_cmd->add_option("--model", tr_model)->required();
  transfer_cmd->add_option("--in", tr_in)->required();
  transfer_cmd->add_option("--out", tr_out);
  auto* tr_cx_opt = transfer_cmd->add_option("--cx", tr_cx);
  auto* tr_cy_opt = transfer_cmd->add_option("--cy", tr_cy);

  // evaluate
  auto* evaluate_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint");
  std::string ev_model, ev_dataset, ev_ledger;
  std::uint64_t ev_seed = 0;
  int ev_n = 10000;
  double ev_cx = 0.0, ev_cy = 0.0;
  evaluate_cmd->add_option("--model", ev_model)->required();
  evaluate_cmd->add_option("--dataset", ev_dataset)->required();
  evaluate_cmd->add_option("--seed", ev_seed);
  evaluate_cmd->add_option("--n", ev_n);
  evaluate_cmd->add_option("--ledger", ev_ledger);
  auto* ev_cx_opt = evaluate_cmd->add_option("--cx", ev_cx);
  evaluate_cmd->add_option("--cy", ev_cy);

  // plot
  auto* plot_cmd = app.add_subcommand("plot", "render paired scatter panels to BMP");
  std::string pl_pairs, pl_out = "pairs.bmp";
  plot_cmd->add_option("--pairs", pl_pairs)->required();
  plot_cmd->add_option("--out", pl_out);

  // reproduce-table1
  auto* table1_cmd = app.add_subcommand(
      "reproduce-table1", "run the identity-map comparison grid and emit a CSV");
  std::string t1_config, t1_datasets, t1_seeds, t1_out;
  bool t1_full = false;
  int t1_workers = 2;
  table1_cmd->add_option("--config", t1_config)->required();
  table1_cmd->add_option("--datasets", t1_datasets, "comma-separated subset");
  table1_cmd->add_option("--seeds", t1_seeds, "comma-separated seeds");
  table1_cmd->add_option("--out-dir", t1_out);
  table1_cmd->add_flag("--full", t1_full, "all seven datasets");
  table1_cmd->add_option("--workers", t1_workers);

  CLI11_PARSE(app, argc, argv);

  try {
    if (make_data->parsed()) {
      return cmd_make_data(md_dataset, md_n, md_seed, md_mode, md_cmin, md_cmax, md_out);
    }
    if (train_base_cmd->parsed()) return cmd_train_base(tb_config, tb_side, tb_tag);
    if (train_f4f_cmd->parsed()) return cmd_train_f4f(tf_config, tf_base_x, tf_base_y, tf_tag);
    if (transfer_cmd->parsed()) {
      const bool have_c = tr_cx_opt->count() > 0 || tr_cy_opt->count() > 0;
      return cmd_transfer(tr_model, tr_in, tr_out, tr_cx, tr_cy, have_c);
    }
    if (evaluate_cmd->parsed()) {
      const bool have_c = ev_cx_opt->count() > 0;
      return cmd_evaluate(ev_model, ev_dataset, ev_seed, ev_n, ev_ledger, ev_cx, ev_cy, have_c);
    }
    if (plot_cmd->parsed()) return cmd_plot(pl_pairs, pl_out);
    if (table1_cmd->parsed()) {
      return cmd_reproduce_table1(t1_config, t1_datasets, t1_seeds, t1_out, t1_full, t1_workers);
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
