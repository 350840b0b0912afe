#pragma once

// Parameter container file:
//
//   "MPNFLOWP"            8-byte magic
//   u32 version           currently 1
//   u64 n, n bytes        free-form metadata (the model config as JSON)
//   u64 groups
//   per group: u32 name length, name bytes, u32 rank, rank x u64 dims,
//              prod(dims) x f64 values
//
// All integers and reals are little-endian.

#include <filesystem>
#include <string>
#include <vector>

#include "mpnflow/layers.hpp"

namespace mpnflow::tk {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredGroup {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string metadata;
  std::vector<StoredGroup> groups;
};

void save_checkpoint(const std::filesystem::path& path, const ParamList& params,
                     const std::string& metadata);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies stored values into `params`. Names, order and shapes must match;
/// otherwise throws ShapeError describing the first difference.
void restore(ParamList& params, const Checkpoint& ckpt);

}  // namespace mpnflow::tk
