#include "cmsf/optimizer.hpp"

#include <cmath>

namespace cmsf {

AdamW::AdamW(ParamStore& store, const AdamWOptions& options) : store_(store), opt_(options) {
  for (const auto& p : store.params()) {
    m_.emplace_back(p.tensor.numel(), 0.0f);
    v_.emplace_back(p.tensor.numel(), 0.0f);
  }
}

void AdamW::step(float lr_scale) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(double(opt_.beta1), double(steps_));
  const double bc2 = 1.0 - std::pow(double(opt_.beta2), double(steps_));
  const auto& params = store_.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    if (!t.has_grad()) continue;
    const float lr = lr_scale * (params[i].group == ParamGroup::kFusion ? opt_.lr_fusion : opt_.lr_encoder);
    auto w = t.mutable_data();
    auto g = t.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = opt_.beta1 * m[k] + (1.0f - opt_.beta1) * g[k];
      v[k] = opt_.beta2 * v[k] + (1.0f - opt_.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] -= lr * opt_.weight_decay * w[k];
      w[k] -= float(lr * mhat / (std::sqrt(vhat) + opt_.eps));
    }
  }
}

}  // namespace cmsf
