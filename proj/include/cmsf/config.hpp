#pragma once
// Run configuration: flat `key = value` text with `#` comments.
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cmsf/alignment.hpp"
#include "cmsf/encoding.hpp"
#include "cmsf/fusion.hpp"
#include "cmsf/losses.hpp"
#include "cmsf/model.hpp"

namespace cmsf {

struct RunConfig {
  std::size_t D = 1024;
  std::size_t hidden = 0;
  std::size_t T = 2;
  std::size_t B = 160;
  float alpha = 0.1f;
  std::size_t h = 6;
  float lambda = 0.5f;
  float temperature = 0.01f;
  std::size_t epochs = 35;
  float lr_encoder = 5e-4f;
  float lr_fusion = 5e-3f;
  std::size_t decay_epochs = 15;  // final epochs run at lr * decay_factor
  float decay_factor = 0.1f;
  float weight_decay = 1e-4f;
  std::uint64_t seed = 0;
  FusionKind fusion = FusionKind::kScca;
  AlignMode align = AlignMode::kBiha;
  GeneratorVariant generator = GeneratorVariant::kRepeatLn;
  bool early_alignment = true;
  bool detach_fusion_input = true;
  bool detach_soft_labels = false;
  float tau = 2.0f;
  float v_th = 1.0f;
  float v_reset = 0.0f;
  float ssa_scale = 0.125f;
  float surrogate_alpha = 2.0f;
  float val_fraction = 0.1f;

  // Sets one key from its text form. Unknown keys and malformed values are
  // ConfigErrors.
  void set(std::string_view key, std::string_view value);
  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
  // Every key in a fixed order; parse(to_text()) round-trips.
  std::string to_text() const;
  static const std::vector<std::string>& keys();

  // Checks every module constraint; token counts and widths come from the
  // dataset.
  void validate(std::size_t regions, std::size_t words) const;
  ModelConfig model_config(std::size_t d_region, std::size_t d_word) const;
  LossWeights loss_weights() const { return {lambda, temperature}; }
  // Learning-rate multiplier for a zero-based epoch.
  float lr_scale(std::size_t epoch) const;
};

}  // namespace cmsf
