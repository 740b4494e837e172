#ifndef CFX_CHECKPOINT_HPP
#define CFX_CHECKPOINT_HPP

#include <string>

#include "cfx/network.hpp"

namespace cfx {

// Single-file binary checkpoint, little-endian throughout:
//   magic "CFXMODEL", u32 format version,
//   u64 seed, u64 config hash,
//   model config (i32 fields + f64 dropout),
//   schema entries (name, role, kind, levels, bounds, percent flag,
//   optional calibration spec),
//   parameter tensors (name, u64 rows, u64 cols, raw f64 data).
// Save followed by load reproduces the model bit for bit.
void save_checkpoint(const TrainedModel& model, const std::string& path);
TrainedModel load_checkpoint(const std::string& path);

}  // namespace cfx

#endif
