#include "cmsf/spike.hpp"

#include <cmath>
#include <numbers>

#include "cmsf/errors.hpp"
#include "cmsf/ops.hpp"

namespace cmsf {

namespace {

thread_local float g_surrogate_alpha = 2.0f;
thread_local SpikeMode g_spike_mode = SpikeMode::kHard;

constexpr float kHalfPi = std::numbers::pi_v<float> / 2.0f;

}  // namespace

SpikeTensor SpikeTensor::from_binary(Tensor t) {
  if (!is_binary(t)) throw UsageError("spike tensor contains values outside {0, 1}");
  return SpikeTensor(std::move(t));
}

bool is_binary(const Tensor& t) {
  for (float v : t.data()) {
    if (v != 0.0f && v != 1.0f) return false;
  }
  return true;
}

float surrogate_primitive(float x, float alpha) {
  return std::atan(kHalfPi * alpha * x) / std::numbers::pi_v<float> + 0.5f;
}

float surrogate_derivative(float x, float alpha) {
  const float z = kHalfPi * alpha * x;
  return alpha / (2.0f * (1.0f + z * z));
}

float surrogate_alpha() { return g_surrogate_alpha; }

void set_surrogate_alpha(float alpha) {
  if (!(alpha > 0.0f)) throw ParameterError("surrogate alpha must be > 0");
  g_surrogate_alpha = alpha;
}

SpikeMode spike_mode() { return g_spike_mode; }

SmoothSpikeGuard::SmoothSpikeGuard() : previous_(g_spike_mode) { g_spike_mode = SpikeMode::kSmooth; }
SmoothSpikeGuard::~SmoothSpikeGuard() { g_spike_mode = previous_; }

namespace {

SpikeTensor threshold_impl(const Tensor& h, const Tensor* th_tensor, float th_value) {
  const std::size_t d = h.rank() == 0 ? 1 : h.shape().back();
  std::size_t th_count = 1;
  if (th_tensor != nullptr) {
    th_count = th_tensor->numel();
    if (th_count != 1 && th_count != d) {
      throw DimensionError("spike_threshold: threshold of shape " + shape_str(th_tensor->shape()) +
                           " does not broadcast over " + shape_str(h.shape()));
    }
  }
  const auto x = h.data();
  const float* th = th_tensor != nullptr ? th_tensor->data().data() : &th_value;
  const float alpha = g_surrogate_alpha;
  const bool smooth = g_spike_mode == SpikeMode::kSmooth;
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float u = x[i] - th[th_count == 1 ? 0 : i % d];
    out[i] = smooth ? surrogate_primitive(u, alpha) : (u >= 0.0f ? 1.0f : 0.0f);
  }
  std::vector<Tensor> parents{h};
  if (th_tensor != nullptr) parents.push_back(*th_tensor);
  Tensor t = Tensor::from_op(h.shape(), std::move(out), std::move(parents),
                             [alpha, th_value, th_count, d](const Node& self) {
    const auto x = self.parents[0].data();
    const float* th = self.parents.size() > 1 ? self.parents[1].data().data() : &th_value;
    auto gh = grad_of(self.parents[0]);
    std::span<float> gt;
    if (self.parents.size() > 1) gt = grad_of(self.parents[1]);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::size_t ti = th_count == 1 ? 0 : i % d;
      const float g = self.grad[i] * surrogate_derivative(x[i] - th[ti], alpha);
      if (!gh.empty()) gh[i] += g;
      if (!gt.empty()) gt[ti] -= g;
    }
  });
  return SpikeTensor::trusted(std::move(t));
}

}  // namespace

SpikeTensor spike_threshold(const Tensor& h, float v_th) { return threshold_impl(h, nullptr, v_th); }

SpikeTensor spike_threshold(const Tensor& h, const Tensor& v_th) { return threshold_impl(h, &v_th, 0.0f); }

SpikeTensor spike_and(const SpikeTensor& a, const SpikeTensor& b) {
  return SpikeTensor::trusted(mul(a.tensor(), b.tensor()));
}

double firing_rate(const Tensor& s) {
  if (s.numel() == 0) throw UsageError("firing rate of an empty spike tensor");
  double acc = 0.0;
  for (float v : s.data()) acc += v;
  return acc / static_cast<double>(s.numel());
}

}  // namespace cmsf
