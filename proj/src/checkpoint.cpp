#include "f4f/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace f4f {

namespace {

constexpr const char* kFormat = "f4f-checkpoint-v1";

void append_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t read_u64_le(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw std::runtime_error("checkpoint: truncated length prefix");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void append_doubles_le(std::string& out, const Matrix& m) {
  // Row-major traversal, explicit little-endian byte order.
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      append_u64_le(out, std::bit_cast<std::uint64_t>(m(r, c)));
    }
  }
}

void read_doubles_le(std::istream& in, Matrix& m) {
  std::string buf(static_cast<std::size_t>(m.size()) * 8, '\0');
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!in) return;  // caller checks the stream state
  std::size_t o = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c, o += 8) {
      std::uint64_t v = 0;
      for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[o + i])) << (8 * i);
      }
      m(r, c) = std::bit_cast<double>(v);
    }
  }
}

void write_transform_section(KvText& header, const std::string& section,
                             const TransformConfig& cfg) {
  header.set(section, "dim", std::to_string(cfg.dim));
  header.set(section, "layers", std::to_string(cfg.layers));
  header.set(section, "residual_blocks", std::to_string(cfg.residual_blocks));
  header.set(section, "hidden", std::to_string(cfg.hidden));
  header.set(section, "bins", std::to_string(cfg.bins));
  header.set(section, "tail_bound", format_double(cfg.tail_bound));
  header.set(section, "cond_dim", std::to_string(cfg.cond_dim));
  header.set(section, "cond_shift", format_double(cfg.cond_shift));
  header.set(section, "cond_scale", format_double(cfg.cond_scale));
  header.set(section, "activation", cfg.activation == Activation::kTanh ? "tanh" : "relu");
  header.set(section, "min_bin", format_double(cfg.min_bin));
  header.set(section, "min_derivative", format_double(cfg.min_derivative));
}

TransformConfig read_transform_section(const KvSection& s) {
  TransformConfig cfg;
  cfg.dim = static_cast<int>(kv_long(s, "dim"));
  cfg.layers = static_cast<int>(kv_long(s, "layers"));
  cfg.residual_blocks = static_cast<int>(kv_long(s, "residual_blocks"));
  cfg.hidden = static_cast<int>(kv_long(s, "hidden"));
  cfg.bins = static_cast<int>(kv_long(s, "bins"));
  cfg.tail_bound = kv_double(s, "tail_bound");
  cfg.cond_dim = static_cast<int>(kv_long(s, "cond_dim"));
  cfg.cond_shift = kv_double(s, "cond_shift");
  cfg.cond_scale = kv_double(s, "cond_scale");
  const std::string act = s.require("activation");
  if (act == "tanh") {
    cfg.activation = Activation::kTanh;
  } else if (act == "relu") {
    cfg.activation = Activation::kRelu;
  } else {
    throw std::invalid_argument("checkpoint: unknown activation: " + act);
  }
  cfg.min_bin = kv_double(s, "min_bin");
  cfg.min_derivative = kv_double(s, "min_derivative");
  return cfg;
}

void declare_params(KvText& header, const std::string& section,
                    const ParameterStore& store) {
  header.set(section, "rng_seed", std::to_string(store.rng_seed));
  for (int i = 0; i < store.count(); ++i) {
    header.set(section, store.name(i),
               std::to_string(store.value(i).rows()) + " " +
                   std::to_string(store.value(i).cols()));
  }
}

std::shared_ptr<ParameterStore> read_params(const KvSection& s, std::istream& in) {
  auto store = std::make_shared<ParameterStore>();
  for (const auto& [key, value] : s.entries) {
    if (key == "rng_seed") {
      store->rng_seed = static_cast<std::uint64_t>(std::stoull(value));
      continue;
    }
    std::istringstream shape(value);
    long rows = 0, cols = 0;
    shape >> rows >> cols;
    if (rows <= 0 || cols <= 0) {
      throw std::runtime_error("checkpoint: bad shape for parameter " + key);
    }
    Matrix m(rows, cols);
    read_doubles_le(in, m);
    if (!in) throw std::runtime_error("checkpoint: truncated data for parameter " + key);
    store->add(key, std::move(m));
  }
  return store;
}

void write_file(const std::string& path, const KvText& header,
                const std::vector<const ParameterStore*>& stores) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  const std::string text = header.serialize();
  std::string bytes;
  bytes.reserve(16 + text.size());
  append_u64_le(bytes, text.size());
  bytes += text;
  for (const ParameterStore* store : stores) {
    for (int i = 0; i < store->count(); ++i) append_doubles_le(bytes, store->value(i));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

KvText read_header(std::istream& in, const std::string& path) {
  const std::uint64_t len = read_u64_le(in);
  if (len > (1ull << 24)) throw std::runtime_error("checkpoint: implausible header size in " + path);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);
  KvText header = KvText::parse(text);
  const KvSection* root = header.find("");
  if (root == nullptr || root->get("format") != std::string(kFormat)) {
    throw std::runtime_error("not a flows-for-flows checkpoint: " + path);
  }
  return header;
}

CheckpointMeta meta_of(const KvText& header) {
  const KvSection* m = header.find("meta");
  CheckpointMeta out;
  out.name = "meta";
  if (m != nullptr) out.entries = m->entries;
  return out;
}

std::shared_ptr<FlowDensity> build_density(const TransformConfig& cfg,
                                           std::shared_ptr<ParameterStore> store,
                                           const std::string& prefix) {
  CompositeTransform tr(cfg, *store, prefix);
  return std::make_shared<FlowDensity>(std::move(tr), store,
                                       std::make_shared<StandardNormal>(cfg.dim));
}

const char* density_prefix = "phi";

}  // namespace

std::string checkpoint_kind(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  KvText header = read_header(in, path);
  return header.require_section("").require("kind");
}

void save_flow_density(const std::string& path, const FlowDensity& density,
                       const CheckpointMeta& meta) {
  if (dynamic_cast<const StandardNormal*>(&density.base()) == nullptr) {
    throw std::invalid_argument("save_flow_density: only normal-based flows are checkpointable");
  }
  KvText header;
  header.set("", "format", kFormat);
  header.set("", "kind", "flow_density");
  write_transform_section(header, "transform", density.transform().config());
  header.section("meta").entries = meta.entries;
  declare_params(header, "params", *density.store());
  write_file(path, header, {density.store().get()});
}

LoadedFlowDensity load_flow_density(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  KvText header = read_header(in, path);
  if (header.require_section("").require("kind") != "flow_density") {
    throw std::runtime_error("checkpoint is not a flow density: " + path);
  }
  const TransformConfig cfg = read_transform_section(header.require_section("transform"));
  auto store = read_params(header.require_section("params"), in);
  LoadedFlowDensity out{build_density(cfg, store, density_prefix), meta_of(header)};
  return out;
}

void save_flow4flow(const std::string& path, const FlowForFlowModel& model,
                    const CheckpointMeta& meta) {
  KvText header;
  header.set("", "format", kFormat);
  header.set("", "kind", "flow4flow");
  header.set("", "condition_mode",
             model.condition_mode == ConditionMode::kDelta ? "delta" : "none");
  header.set("", "shared_base", model.shared_base() ? "1" : "0");
  write_transform_section(header, "transformer", model.transformer.config());
  write_transform_section(header, "base_x", model.density_x->transform().config());
  if (!model.shared_base()) {
    write_transform_section(header, "base_y", model.density_y->transform().config());
  }
  header.section("meta").entries = meta.entries;
  declare_params(header, "params.transformer", *model.gamma_store);
  declare_params(header, "params.base_x", *model.density_x->store());
  std::vector<const ParameterStore*> stores{model.gamma_store.get(),
                                            model.density_x->store().get()};
  if (!model.shared_base()) {
    declare_params(header, "params.base_y", *model.density_y->store());
    stores.push_back(model.density_y->store().get());
  }
  write_file(path, header, stores);
}

LoadedFlow4Flow load_flow4flow(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  KvText header = read_header(in, path);
  const KvSection& root = header.require_section("");
  if (root.require("kind") != "flow4flow") {
    throw std::runtime_error("checkpoint is not a flow4flow model: " + path);
  }
  const ConditionMode mode =
      root.require("condition_mode") == "delta" ? ConditionMode::kDelta : ConditionMode::kNone;
  const bool shared = root.require("shared_base") == "1";

  const TransformConfig gamma_cfg = read_transform_section(header.require_section("transformer"));
  const TransformConfig base_x_cfg = read_transform_section(header.require_section("base_x"));

  auto gamma_store = read_params(header.require_section("params.transformer"), in);
  auto base_x_store = read_params(header.require_section("params.base_x"), in);
  auto density_x = build_density(base_x_cfg, base_x_store, density_prefix);
  std::shared_ptr<FlowDensity> density_y = density_x;
  if (!shared) {
    const TransformConfig base_y_cfg = read_transform_section(header.require_section("base_y"));
    auto base_y_store = read_params(header.require_section("params.base_y"), in);
    density_y = build_density(base_y_cfg, base_y_store, density_prefix);
  }

  CompositeTransform transformer(gamma_cfg, *gamma_store, "gamma");
  FlowForFlowModel model{std::move(gamma_store), std::move(transformer), density_x,
                         density_y, mode};
  return LoadedFlow4Flow{std::move(model), meta_of(header)};
}

}  // namespace f4f
