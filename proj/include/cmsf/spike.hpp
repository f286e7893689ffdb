#pragma once

#include "cmsf/tensor.hpp"

namespace cmsf {

// A tensor whose every element is 0 or 1. Produced by the spiking
// nonlinearities and by masking one spike tensor with another; the wrapped
// tensor still carries surrogate gradients.
class SpikeTensor {
 public:
  SpikeTensor() = default;

  // Validates the binary invariant.
  static SpikeTensor from_binary(Tensor t);
  // Caller guarantees the invariant (used by the spiking ops themselves).
  static SpikeTensor trusted(Tensor t) { return SpikeTensor(std::move(t)); }

  const Tensor& tensor() const { return t_; }
  operator const Tensor&() const { return t_; }  // NOLINT: spikes are tensors
  const Shape& shape() const { return t_.shape(); }
  std::size_t numel() const { return t_.numel(); }

 private:
  explicit SpikeTensor(Tensor t) : t_(std::move(t)) {}
  Tensor t_;
};

bool is_binary(const Tensor& t);

// Arctangent surrogate: sigma(x) = atan(pi/2 * a * x) / pi + 1/2 and its
// derivative a / (2 * (1 + (pi/2 * a * x)^2)).
float surrogate_primitive(float x, float alpha);
float surrogate_derivative(float x, float alpha);

// Thread-local surrogate sharpness, default 2.0.
float surrogate_alpha();
void set_surrogate_alpha(float alpha);

// Hard mode emits exact Heaviside spikes. Smooth mode replaces the forward
// step with the surrogate primitive so that the whole graph is differentiable
// and its reverse-mode gradients can be checked by finite differences; in
// smooth mode the neuron reset path also keeps its gradient. Thread local.
enum class SpikeMode { kHard, kSmooth };
SpikeMode spike_mode();

class SmoothSpikeGuard {
 public:
  SmoothSpikeGuard();
  ~SmoothSpikeGuard();
  SmoothSpikeGuard(const SmoothSpikeGuard&) = delete;
  SmoothSpikeGuard& operator=(const SmoothSpikeGuard&) = delete;

 private:
  SpikeMode previous_;
};

// Heaviside step at the threshold: h >= v_th fires. Backward substitutes the
// surrogate derivative evaluated at h - v_th.
SpikeTensor spike_threshold(const Tensor& h, float v_th);
// Threshold given as a one-element tensor, or one value per channel of the
// last axis; the threshold receives the negated surrogate gradient.
SpikeTensor spike_threshold(const Tensor& h, const Tensor& v_th);

// Elementwise product of two spike tensors is again binary.
SpikeTensor spike_and(const SpikeTensor& a, const SpikeTensor& b);

// Mean spike count; throws UsageError on an empty tensor.
double firing_rate(const Tensor& s);

}  // namespace cmsf
