#include "cmsf/neurons.hpp"

#include <cmath>

#include "cmsf/errors.hpp"
#include "cmsf/ops.hpp"

namespace cmsf {

void LifParams::validate() const {
  if (!(tau >= 1.0f)) throw ParameterError("LIF tau must be >= 1, got " + std::to_string(tau));
  if (!(v_th > v_reset)) throw ParameterError("LIF v_th must exceed v_reset");
}

NeuronState NeuronState::resting(const Shape& shape, const LifParams& params) {
  return {Tensor::full(shape, params.v_reset)};
}

std::pair<SpikeTensor, NeuronState> lif_step(const NeuronState& state, const Tensor& x_t,
                                             const LifParams& params) {
  params.validate();
  if (state.v.shape() != x_t.shape()) {
    throw DimensionError("lif_step: input " + shape_str(x_t.shape()) + " does not match state " +
                         shape_str(state.v.shape()));
  }
  const Tensor& v = state.v;
  Tensor h = add(v, div_scalar(sub(x_t, add_scalar(v, -params.v_reset)), params.tau));
  SpikeTensor s = spike_threshold(h, params.v_th);
  const Tensor reset = spike_mode() == SpikeMode::kHard ? s.tensor().detach() : s.tensor();
  Tensor keep = add_scalar(scale(reset, -1.0f), 1.0f);
  Tensor v_next = add(mul(h, keep), scale(reset, params.v_reset));
  return {std::move(s), NeuronState{std::move(v_next)}};
}

namespace {

SpikeTensor lif_fused(const Tensor& x, const LifParams& params, const Tensor* threshold) {
  params.validate();
  if (x.rank() < 1) throw DimensionError("lif_sequence: input needs a leading time axis");
  const std::size_t steps = x.shape()[0];
  if (steps == 0) throw UsageError("lif_sequence: empty time axis (T = 0)");
  const std::size_t m = x.numel() / steps;
  const std::size_t d = x.rank() > 1 ? x.shape().back() : 1;
  std::size_t th_count = 1;
  if (threshold != nullptr) {
    th_count = threshold->numel();
    if (th_count != 1 && th_count != d) {
      throw DimensionError("lif_sequence: threshold of shape " + shape_str(threshold->shape()) +
                           " does not broadcast over " + shape_str(x.shape()));
    }
  }
  const float fixed_th = params.v_th;
  const float* th = threshold != nullptr ? threshold->data().data() : &fixed_th;
  const float tau = params.tau;
  const float vr = params.v_reset;
  const float alpha = surrogate_alpha();
  const bool smooth = spike_mode() == SpikeMode::kSmooth;

  const auto in = x.data();
  std::vector<float> out(in.size());
  std::vector<float> hs(in.size());
  std::vector<float> v(m, vr);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t k = t * m + i;
      const float h = v[i] + (in[k] - (v[i] - vr)) / tau;
      const float u = h - th[th_count == 1 ? 0 : i % d];
      hs[k] = h;
      if (smooth) {
        const float s = surrogate_primitive(u, alpha);
        out[k] = s;
        v[i] = h * (1.0f - s) + vr * s;
      } else {
        const bool fire = u >= 0.0f;
        out[k] = fire ? 1.0f : 0.0f;
        v[i] = fire ? vr : h;
      }
    }
  }

  std::vector<Tensor> parents{x};
  if (threshold != nullptr) parents.push_back(*threshold);
  Tensor result = Tensor::from_op(
      x.shape(), std::move(out), std::move(parents),
      [steps, m, d, th_count, fixed_th, tau, vr, alpha, smooth, hs = std::move(hs)](const Node& self) {
        const float* th = self.parents.size() > 1 ? self.parents[1].data().data() : &fixed_th;
        const auto s = self.values();
        auto gx = grad_of(self.parents[0]);
        std::span<float> gth;
        if (self.parents.size() > 1) gth = grad_of(self.parents[1]);
        std::vector<float> gv(m, 0.0f);
        const float carry = 1.0f - 1.0f / tau;
        for (std::size_t t = steps; t-- > 0;) {
          for (std::size_t i = 0; i < m; ++i) {
            const std::size_t k = t * m + i;
            const std::size_t ti = th_count == 1 ? 0 : i % d;
            const float h = hs[k];
            const float fprime = surrogate_derivative(h - th[ti], alpha);
            float gs = self.grad[k];
            if (smooth) gs += gv[i] * (vr - h);
            const float gh = gs * fprime + gv[i] * (1.0f - s[k]);
            if (!gx.empty()) gx[k] += gh / tau;
            if (!gth.empty()) gth[ti] -= gs * fprime;
            gv[i] = gh * carry;
          }
        }
      });
  return SpikeTensor::trusted(std::move(result));
}

}  // namespace

SpikeTensor lif_sequence(const Tensor& x, const LifParams& params) { return lif_fused(x, params, nullptr); }

SpikeTensor lif_sequence(const Tensor& x, const LifParams& params, const Tensor& threshold) {
  return lif_fused(x, params, &threshold);
}

ThresholdLearnableNeuron::ThresholdLearnableNeuron(const LifParams& params, std::size_t channels)
    : params_(params) {
  params.validate();
  const float target = params.v_th - params.v_reset - kMargin;
  if (!(target > 0.0f)) throw ParameterError("TLSN: initial threshold must exceed v_reset + 0.01");
  float raw = static_cast<float>(std::log(std::expm1(static_cast<double>(target))));
  // Nudge the raw value until the float32 forward path reproduces v_th.
  auto effective = [&](float r) {
    const float sp = r > 20.0f ? r : std::log1p(std::exp(r));
    return (sp + params.v_reset) + kMargin;
  };
  for (int i = 0; i < 64 && effective(raw) != params.v_th; ++i) {
    raw = std::nextafter(raw, effective(raw) < params.v_th ? INFINITY : -INFINITY);
  }
  raw_ = Tensor::full(channels == 1 ? Shape{} : Shape{channels}, raw, true);
}

Tensor ThresholdLearnableNeuron::effective_threshold() const {
  return add_scalar(add_scalar(softplus(raw_), params_.v_reset), kMargin);
}

SpikeTensor ThresholdLearnableNeuron::forward(const Tensor& x) const {
  return lif_sequence(x, params_, effective_threshold());
}

}  // namespace cmsf
