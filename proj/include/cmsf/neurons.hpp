#pragma once

#include <random>
#include <utility>

#include "cmsf/spike.hpp"
#include "cmsf/tensor.hpp"

namespace cmsf {

// Leaky integrate-and-fire parameters. Hard reset to v_reset on firing.
struct LifParams {
  float tau = 2.0f;
  float v_th = 1.0f;
  float v_reset = 0.0f;

  void validate() const;
};

struct NeuronState {
  Tensor v;

  static NeuronState resting(const Shape& shape, const LifParams& params);
};

// One integration step:
//   h = v + (x - (v - v_reset)) / tau
//   s = h >= v_th
//   v' = h * (1 - s) + v_reset * s
// The reset path is cut from the gradient in hard spike mode.
std::pair<SpikeTensor, NeuronState> lif_step(const NeuronState& state, const Tensor& x_t,
                                             const LifParams& params);

// Folds lif_step over the leading (time) axis starting from rest. Fused
// forward and backward; bit-identical to the step-by-step fold.
SpikeTensor lif_sequence(const Tensor& x, const LifParams& params);
// Same dynamics with a tensor threshold: one element, or one per channel of
// the last axis. The threshold receives surrogate gradients.
SpikeTensor lif_sequence(const Tensor& x, const LifParams& params, const Tensor& threshold);

// Threshold-learnable spiking neuron. The stored parameter is unconstrained;
// the threshold in use is softplus(raw) + v_reset + 0.01, which keeps it
// above the reset potential.
class ThresholdLearnableNeuron {
 public:
  ThresholdLearnableNeuron() = default;
  // Raw parameter chosen so that the effective threshold equals
  // params.v_th in float32.
  ThresholdLearnableNeuron(const LifParams& params, std::size_t channels = 1);

  Tensor effective_threshold() const;
  SpikeTensor forward(const Tensor& x) const;

  const LifParams& params() const { return params_; }
  Tensor& raw_threshold() { return raw_; }
  const Tensor& raw_threshold() const { return raw_; }

  static constexpr float kMargin = 0.01f;

 private:
  LifParams params_;
  Tensor raw_;
};

}  // namespace cmsf
