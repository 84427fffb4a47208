#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "odflow/optim.hpp"

// Parameter checkpoints: a JSON manifest (names, shapes, dtype, step counter,
// arbitrary extra metadata) next to a flat little-endian binary value file.
// f64 round-trips bit-exactly; f32 is a storage-only narrowing mode.

namespace odflow::ad {

struct Checkpoint {
  std::vector<ParamEntry> params;
  long step = 0;
  nlohmann::json extra;
};

void save_checkpoint(const std::string& stem, const std::vector<ParamEntry>& params, long step,
                     const nlohmann::json& extra, const std::string& dtype = "f64");

Checkpoint load_checkpoint(const std::string& stem);

}  // namespace odflow::ad
