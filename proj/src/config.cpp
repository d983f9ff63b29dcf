#include "f4f/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "f4f/kvtext.hpp"

namespace f4f {

ConditionalDatasetSpec ExperimentConfig::conditional_spec() const {
  if (!condition_kind) throw std::logic_error("conditional_spec: unconditional config");
  ConditionalDatasetSpec spec;
  spec.base = DatasetSpec{dataset, 0, 0};
  spec.kind = *condition_kind;
  spec.cmin = cmin;
  spec.cmax = cmax;
  spec.validate();
  return spec;
}

TransformConfig ExperimentConfig::transform_config(bool conditioned) const {
  TransformConfig cfg = TransformConfig::preset(preset);
  cfg.hidden = hidden;
  if (bins) cfg.bins = *bins;
  if (tail_bound) cfg.tail_bound = *tail_bound;
  if (conditioned) {
    if (!condition_kind) throw std::logic_error("conditioned transform on unconditional config");
    cfg.cond_dim = 1;
    cfg.cond_shift = cmin;
    cfg.cond_scale = cmax - cmin;
  }
  return cfg;
}

TransformConfig ExperimentConfig::transformer_config() const {
  TransformConfig cfg = transform_config(false);
  if (condition_kind) {
    cfg.cond_dim = 1;
    cfg.cond_shift = 0.0;
    cfg.cond_scale = cmax - cmin;
  }
  return cfg;
}

namespace {

struct KeyChecker {
  std::vector<std::string> problems;

  void check(const KvSection& s, const std::set<std::string>& known) {
    std::set<std::string> seen;
    for (const auto& [k, v] : s.entries) {
      (void)v;
      if (known.count(k) == 0) {
        problems.push_back("[" + s.name + "] unknown key '" + k + "'");
      }
      if (!seen.insert(k).second) {
        problems.push_back("[" + s.name + "] duplicate key '" + k + "'");
      }
    }
  }
};

}  // namespace

ExperimentConfig ExperimentConfig::parse_text(const std::string& text) {
  const KvText kv = KvText::parse(text);
  ExperimentConfig cfg;
  KeyChecker checker;

  static const std::set<std::string> known_sections = {"dataset", "architecture",
                                                       "trainer", "penalty", "output"};
  for (const auto& s : kv.sections) {
    if (s.name.empty() && s.entries.empty()) continue;
    if (known_sections.count(s.name) == 0) {
      checker.problems.push_back("unknown section [" + s.name + "]");
    }
  }

  if (const KvSection* s = kv.find("dataset")) {
    checker.check(*s, {"name", "target_name", "mode", "cmin", "cmax"});
    if (auto v = s->get("name")) {
      auto parsed = parse_dataset_name(*v);
      if (!parsed) {
        checker.problems.push_back("[dataset] unknown dataset '" + *v + "'");
      } else {
        cfg.dataset = *parsed;
      }
    }
    if (auto v = s->get("target_name")) {
      auto parsed = parse_dataset_name(*v);
      if (!parsed) {
        checker.problems.push_back("[dataset] unknown target dataset '" + *v + "'");
      } else {
        cfg.target_dataset = *parsed;
      }
    }
    if (auto v = s->get("mode"); v && *v != "none") {
      auto parsed = parse_condition_kind(*v);
      if (!parsed) {
        checker.problems.push_back("[dataset] unknown mode '" + *v + "'");
      } else {
        cfg.condition_kind = *parsed;
        cfg.cmin = *parsed == ConditionKind::kRotation ? 0.0 : 0.5;
        cfg.cmax = *parsed == ConditionKind::kRotation ? 45.0 : 1.5;
      }
    }
    if (s->has("cmin")) cfg.cmin = kv_double(*s, "cmin");
    if (s->has("cmax")) cfg.cmax = kv_double(*s, "cmax");
  }

  if (const KvSection* s = kv.find("architecture")) {
    checker.check(*s, {"preset", "hidden", "bins", "tail_bound"});
    if (auto v = s->get("preset")) cfg.preset = *v;
    if (s->has("hidden")) cfg.hidden = static_cast<int>(kv_long(*s, "hidden"));
    if (s->has("bins")) cfg.bins = static_cast<int>(kv_long(*s, "bins"));
    if (s->has("tail_bound")) cfg.tail_bound = kv_double(*s, "tail_bound");
  }

  if (const KvSection* s = kv.find("trainer")) {
    checker.check(*s, {"batch_size", "initial_lr", "epochs", "grad_clip", "n_train",
                       "n_eval", "seed", "objective", "base_x_checkpoint",
                       "base_y_checkpoint", "shared_base"});
    if (s->has("batch_size")) cfg.batch_size = static_cast<int>(kv_long(*s, "batch_size"));
    if (s->has("initial_lr")) cfg.initial_lr = kv_double(*s, "initial_lr");
    if (s->has("epochs")) cfg.epochs = static_cast<int>(kv_long(*s, "epochs"));
    if (s->has("grad_clip")) cfg.grad_clip = kv_double(*s, "grad_clip");
    if (s->has("n_train")) cfg.n_train = kv_long(*s, "n_train");
    if (s->has("n_eval")) cfg.n_eval = kv_long(*s, "n_eval");
    if (s->has("seed")) cfg.seed = static_cast<std::uint64_t>(kv_long(*s, "seed"));
    if (auto v = s->get("objective")) {
      if (*v == "maximum_likelihood") {
        cfg.objective = Objective::kMaxLikelihood;
      } else if (*v == "l1_only") {
        cfg.objective = Objective::kL1Only;
      } else {
        checker.problems.push_back("[trainer] unknown objective '" + *v + "'");
      }
    }
    if (auto v = s->get("base_x_checkpoint")) cfg.base_x_checkpoint = *v;
    if (auto v = s->get("base_y_checkpoint")) cfg.base_y_checkpoint = *v;
    if (auto v = s->get("shared_base")) {
      if (*v != "true" && *v != "false") {
        checker.problems.push_back("[trainer] shared_base must be true or false");
      }
      cfg.shared_base = *v == "true";
    }
  }

  if (const KvSection* s = kv.find("penalty")) {
    checker.check(*s, {"l1_weight"});
    if (s->has("l1_weight")) cfg.penalty.l1_weight = kv_double(*s, "l1_weight");
  }

  if (const KvSection* s = kv.find("output")) {
    checker.check(*s, {"dir"});
    if (auto v = s->get("dir")) cfg.output_dir = *v;
  }

  if (!checker.problems.empty()) {
    std::ostringstream os;
    os << "invalid config:";
    for (const auto& p : checker.problems) os << "\n  " << p;
    throw std::invalid_argument(os.str());
  }

  // Field validation.
  std::vector<std::string> bad;
  if (cfg.batch_size <= 0) bad.push_back("[trainer] batch_size must be positive");
  if (cfg.initial_lr <= 0) bad.push_back("[trainer] initial_lr must be positive");
  if (cfg.epochs && *cfg.epochs < 1) bad.push_back("[trainer] epochs must be >= 1");
  if (cfg.grad_clip <= 0) bad.push_back("[trainer] grad_clip must be positive");
  if (cfg.n_train <= 0) bad.push_back("[trainer] n_train must be positive");
  if (cfg.n_eval <= 0) bad.push_back("[trainer] n_eval must be positive");
  if (cfg.hidden <= 0) bad.push_back("[architecture] hidden must be positive");
  if (cfg.penalty.l1_weight < 0) bad.push_back("[penalty] l1_weight must be non-negative");
  if (cfg.preset != "standard" && cfg.preset != "bigger") {
    bad.push_back("[architecture] preset must be standard or bigger");
  }
  if (cfg.condition_kind && !(cfg.cmin < cfg.cmax)) {
    bad.push_back("[dataset] need cmin < cmax");
  }
  if (!bad.empty()) {
    std::ostringstream os;
    os << "invalid config:";
    for (const auto& p : bad) os << "\n  " << p;
    throw std::invalid_argument(os.str());
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_text(buf.str());
}

std::string ExperimentConfig::serialize() const {
  KvText kv;
  kv.set("dataset", "name", dataset_name_str(dataset));
  if (target_dataset) kv.set("dataset", "target_name", dataset_name_str(*target_dataset));
  if (condition_kind) {
    kv.set("dataset", "mode", condition_kind_str(*condition_kind));
    kv.set("dataset", "cmin", format_double(cmin));
    kv.set("dataset", "cmax", format_double(cmax));
  }
  kv.set("architecture", "preset", preset);
  kv.set("architecture", "hidden", std::to_string(hidden));
  if (bins) kv.set("architecture", "bins", std::to_string(*bins));
  if (tail_bound) kv.set("architecture", "tail_bound", format_double(*tail_bound));
  kv.set("trainer", "batch_size", std::to_string(batch_size));
  kv.set("trainer", "initial_lr", format_double(initial_lr));
  if (epochs) kv.set("trainer", "epochs", std::to_string(*epochs));
  kv.set("trainer", "grad_clip", format_double(grad_clip));
  kv.set("trainer", "n_train", std::to_string(n_train));
  kv.set("trainer", "n_eval", std::to_string(n_eval));
  kv.set("trainer", "seed", std::to_string(seed));
  kv.set("trainer", "objective",
         objective == Objective::kL1Only ? "l1_only" : "maximum_likelihood");
  if (!base_x_checkpoint.empty()) kv.set("trainer", "base_x_checkpoint", base_x_checkpoint);
  if (!base_y_checkpoint.empty()) kv.set("trainer", "base_y_checkpoint", base_y_checkpoint);
  kv.set("trainer", "shared_base", shared_base ? "true" : "false");
  kv.set("penalty", "l1_weight", format_double(penalty.l1_weight));
  kv.set("output", "dir", output_dir);
  return kv.serialize();
}

}  // namespace f4f
