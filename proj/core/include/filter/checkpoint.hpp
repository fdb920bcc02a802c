#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "filter/model.hpp"

namespace filter {

// Checkpoints are a small binary container: the magic string "FLTCKPT1",
// a JSON metadata block (model configuration, root seed, phase tag), and
// the named parameter tensors as little-endian float64 row-major payloads.
// Writing is byte-deterministic for identical weights and metadata.

struct CheckpointMeta {
  FilterConfig config;
  std::uint64_t seed = 0;
  std::string phase;
  std::uint64_t parameter_count = 0;
  std::uint64_t value_count = 0;
};

void save_checkpoint(const std::string& path, const FilterModel& model,
                     std::uint64_t seed, const std::string& phase);

struct LoadedCheckpoint {
  std::unique_ptr<FilterModel> model;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Reads only the header; cheap way to inspect a checkpoint without
// materializing the model.
CheckpointMeta read_checkpoint_meta(const std::string& path);

}  // namespace filter
