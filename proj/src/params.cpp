#include "cmsf/params.hpp"

#include <algorithm>
#include <cmath>

#include "cmsf/errors.hpp"

namespace cmsf {

void ParamStore::claim(const std::string& name) {
  if (std::find(names_.begin(), names_.end(), name) != names_.end()) {
    throw UsageError("duplicate parameter name '" + name + "'");
  }
  names_.push_back(name);
}

Tensor ParamStore::add(const std::string& name, Tensor init, ParamGroup group) {
  claim(name);
  init.set_requires_grad(true);
  init.set_name(name);
  params_.push_back({name, init, group});
  return init;
}

RunningStats& ParamStore::add_stats(const std::string& name, std::size_t channels) {
  claim(name);
  stats_.emplace_back(name, RunningStats::identity(channels));
  return stats_.back().second;
}

std::vector<NamedStats> ParamStore::stats() {
  std::vector<NamedStats> out;
  for (auto& [name, s] : stats_) out.push_back({name, &s});
  return out;
}

const Param* ParamStore::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

RunningStats* ParamStore::find_stats(const std::string& name) {
  for (auto& [n, s] : stats_) {
    if (n == name) return &s;
  }
  return nullptr;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Tensor glorot(std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out) {
  const float bound = std::sqrt(6.0f / float(fan_in + fan_out));
  std::uniform_real_distribution<float> dist(-bound, bound);
  std::vector<float> data(fan_in * fan_out);
  for (float& v : data) v = dist(rng);
  return Tensor::from({fan_in, fan_out}, std::move(data));
}

BatchNormLayer BatchNormLayer::create(ParamStore& store, const std::string& name,
                                      std::size_t channels, ParamGroup group) {
  BatchNormLayer bn;
  bn.gamma = store.add(name + ".gamma", Tensor::full({channels}, 1.0f), group);
  bn.beta = store.add(name + ".beta", Tensor::zeros({channels}), group);
  bn.stats = &store.add_stats(name + ".running", channels);
  return bn;
}

Tensor BatchNormLayer::forward(const Tensor& x, bool train) const {
  return batch_norm(x, gamma, beta, *stats, train);
}

LayerNormLayer LayerNormLayer::create(ParamStore& store, const std::string& name,
                                      std::size_t channels, ParamGroup group) {
  LayerNormLayer ln;
  ln.gamma = store.add(name + ".gamma", Tensor::full({channels}, 1.0f), group);
  ln.beta = store.add(name + ".beta", Tensor::zeros({channels}), group);
  return ln;
}

Tensor LayerNormLayer::forward(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }

}  // namespace cmsf
