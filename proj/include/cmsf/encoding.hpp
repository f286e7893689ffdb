#pragma once
// Spike generators: floating-point token features to (T, ..., K, D) spikes.
#include <cstddef>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "cmsf/energy.hpp"
#include "cmsf/neurons.hpp"
#include "cmsf/params.hpp"
#include "cmsf/spike.hpp"

namespace cmsf {

// Expansion over time x normalisation. repeat-ln is the reference design:
// repeat the features T times, layer-normalise, threshold-learnable neuron.
enum class GeneratorVariant { kRepeatLn, kRepeatBn, kLinearLn, kLinearBn, kConvBn, kDeltaBn };

GeneratorVariant parse_generator_variant(std::string_view tag);
std::string_view to_string(GeneratorVariant variant);
const std::vector<GeneratorVariant>& all_generator_variants();

struct GeneratorConfig {
  GeneratorVariant variant = GeneratorVariant::kRepeatLn;
  std::size_t T = 2;
  std::size_t D = 1024;
  void validate() const;
};

// Bias-free linear map of the last axis, (..., D_raw) -> (..., D).
Tensor project_features(const Tensor& x_raw, const Tensor& w);

class SpikeGenerator {
 public:
  // Intermediate tensors, for inspection. Both are (T, ..., K, D).
  struct Trace {
    Tensor expanded;     // after the time expansion, before normalisation
    Tensor pre_neuron;   // after normalisation
  };

  SpikeGenerator() = default;
  SpikeGenerator(ParamStore& store, const std::string& prefix, const GeneratorConfig& cfg,
                 const LifParams& lif, std::mt19937_64& rng);

  // x_f: (..., K, D) with at least the token and width axes.
  SpikeTensor forward(const Tensor& x_f, bool train, Trace* trace = nullptr,
                      LayerRecorder* recorder = nullptr, const std::string& layer_prefix = "") const;

  const GeneratorConfig& config() const { return cfg_; }
  const ThresholdLearnableNeuron& neuron() const { return neuron_; }

 private:
  Tensor expand(const Tensor& x_f, LayerRecorder* recorder, const std::string& layer_prefix) const;

  GeneratorConfig cfg_;
  std::vector<Tensor> weights_;  // linear-*: T maps; conv-bn: taps for k-1, k, k+1
  LayerNormLayer ln_;
  BatchNormLayer bn_;
  ThresholdLearnableNeuron neuron_;
};

// Functional form: builds a throwaway generator with a fixed seed.
SpikeTensor spike_generate(const Tensor& x_f, const GeneratorConfig& cfg, const LifParams& lif,
                           std::uint64_t seed = 0);

}  // namespace cmsf
