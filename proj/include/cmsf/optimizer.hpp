#pragma once
// AdamW (decoupled weight decay) with one learning rate per parameter group.
#include <cstdint>
#include <vector>

#include "cmsf/params.hpp"

namespace cmsf {

struct AdamWOptions {
  float lr_encoder = 5e-4f;
  float lr_fusion = 5e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 1e-4f;
};

class AdamW {
 public:
  AdamW(ParamStore& store, const AdamWOptions& options);

  // One update from the accumulated gradients; lr_scale multiplies both
  // group rates. Parameters without a gradient are left untouched.
  void step(float lr_scale = 1.0f);

  std::uint64_t steps() const { return steps_; }
  // Moment buffers, index-aligned with store.params(). Exposed for
  // checkpointing.
  std::vector<std::vector<float>>& first_moments() { return m_; }
  std::vector<std::vector<float>>& second_moments() { return v_; }
  void set_steps(std::uint64_t steps) { steps_ = steps; }
  const AdamWOptions& options() const { return opt_; }

 private:
  ParamStore& store_;
  AdamWOptions opt_;
  std::uint64_t steps_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

}  // namespace cmsf
