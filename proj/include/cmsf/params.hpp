#pragma once
// Named parameter registry plus the small layers built on it.
#include <cstddef>
#include <deque>
#include <random>
#include <string>
#include <vector>

#include "cmsf/ops.hpp"
#include "cmsf/tensor.hpp"

namespace cmsf {

// Optimiser groups: the unimodal encoders and the training-only fusion
// module train with different learning rates.
enum class ParamGroup { kEncoder, kFusion };

struct Param {
  std::string name;
  Tensor tensor;
  ParamGroup group;
};

struct NamedStats {
  std::string name;
  RunningStats* stats;
};

// Owns every trainable tensor and every batch-norm running state of a model,
// in registration order. Layers keep handles into the store, so it is pinned.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  // Registers `init` as a trainable leaf. Names must be unique.
  Tensor add(const std::string& name, Tensor init, ParamGroup group);
  RunningStats& add_stats(const std::string& name, std::size_t channels);

  const std::vector<Param>& params() const { return params_; }
  std::vector<NamedStats> stats();
  const Param* find(const std::string& name) const;
  RunningStats* find_stats(const std::string& name);
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  void claim(const std::string& name);

  std::vector<Param> params_;
  std::deque<std::pair<std::string, RunningStats>> stats_;
  std::vector<std::string> names_;
};

// Glorot-uniform matrix of shape (fan_in, fan_out).
Tensor glorot(std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out);

struct BatchNormLayer {
  Tensor gamma;
  Tensor beta;
  RunningStats* stats = nullptr;

  static BatchNormLayer create(ParamStore& store, const std::string& name, std::size_t channels,
                               ParamGroup group);
  Tensor forward(const Tensor& x, bool train) const;
};

struct LayerNormLayer {
  Tensor gamma;
  Tensor beta;
  float eps = 1e-5f;

  static LayerNormLayer create(ParamStore& store, const std::string& name, std::size_t channels,
                               ParamGroup group);
  Tensor forward(const Tensor& x) const;
};

}  // namespace cmsf
