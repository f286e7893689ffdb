#pragma once
// Versioned checkpoint container.
//
//   cmsf-checkpoint v1
//   epoch <completed epochs>
//   adam_steps <n>
//   dims <d_region> <d_word> <N> <L>
//   best <metric>
//   config <byte count>
//   <run config text>
//   arrays <count>
//   <name> <shape as d0xd1x..., or "scalar"> <offset in floats>   per array
//   data <float count>
//   <little-endian float32 blob>
//
// Array names are "param/<name>", "bn_mean/<name>", "bn_var/<name>",
// "adam_m/<name>" and "adam_v/<name>".
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "cmsf/model.hpp"
#include "cmsf/optimizer.hpp"

namespace cmsf {

struct CheckpointMeta {
  std::size_t epoch = 0;
  std::uint64_t adam_steps = 0;
  std::size_t d_region = 0, d_word = 0, N = 0, L = 0;
  double best = 0.0;
  std::string config_text;
};

// Writes atomically (temporary file, then rename). `optimizer` may be null.
void save_checkpoint(const std::filesystem::path& path, CmsfModel& model, AdamW* optimizer,
                     const CheckpointMeta& meta);

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

// Restores parameters, running statistics and, when given, optimiser state.
// Every array of the model must be present with a matching shape.
CheckpointMeta load_checkpoint(const std::filesystem::path& path, CmsfModel& model, AdamW* optimizer);

}  // namespace cmsf
