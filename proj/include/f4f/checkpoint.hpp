#pragma once

#include <memory>
#include <string>

#include "f4f/distributions.hpp"
#include "f4f/flows4flows.hpp"
#include "f4f/kvtext.hpp"

namespace f4f {

// Checkpoint files are a length-prefixed UTF-8 key-value header (8-byte
// little-endian byte count, then the text) followed by the parameter arrays
// as little-endian 64-bit floats, row-major, in header-declared order.

// Extra metadata recorded under the [meta] section (dataset names, epochs,
// penalty weight, ...). Returned verbatim on load.
using CheckpointMeta = KvSection;

std::string checkpoint_kind(const std::string& path);  // "flow_density" | "flow4flow"

void save_flow_density(const std::string& path, const FlowDensity& density,
                       const CheckpointMeta& meta);

struct LoadedFlowDensity {
  std::shared_ptr<FlowDensity> density;
  CheckpointMeta meta;
};
LoadedFlowDensity load_flow_density(const std::string& path);

void save_flow4flow(const std::string& path, const FlowForFlowModel& model,
                    const CheckpointMeta& meta);

struct LoadedFlow4Flow {
  FlowForFlowModel model;
  CheckpointMeta meta;
};
LoadedFlow4Flow load_flow4flow(const std::string& path);

}  // namespace f4f
