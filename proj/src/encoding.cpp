#include "cmsf/encoding.hpp"

#include "cmsf/errors.hpp"
#include "cmsf/ops.hpp"

namespace cmsf {

namespace {

struct VariantTag {
  GeneratorVariant variant;
  std::string_view tag;
};

constexpr VariantTag kTags[] = {
    {GeneratorVariant::kRepeatLn, "repeat-ln"}, {GeneratorVariant::kRepeatBn, "repeat-bn"},
    {GeneratorVariant::kLinearLn, "linear-ln"}, {GeneratorVariant::kLinearBn, "linear-bn"},
    {GeneratorVariant::kConvBn, "conv-bn"},     {GeneratorVariant::kDeltaBn, "delta-bn"},
};

bool uses_layer_norm(GeneratorVariant v) {
  return v == GeneratorVariant::kRepeatLn || v == GeneratorVariant::kLinearLn;
}

}  // namespace

GeneratorVariant parse_generator_variant(std::string_view tag) {
  for (const auto& t : kTags) {
    if (t.tag == tag) return t.variant;
  }
  throw ConfigError("unknown spike generator variant '" + std::string(tag) + "'");
}

std::string_view to_string(GeneratorVariant variant) {
  for (const auto& t : kTags) {
    if (t.variant == variant) return t.tag;
  }
  return "?";
}

const std::vector<GeneratorVariant>& all_generator_variants() {
  static const std::vector<GeneratorVariant> all = [] {
    std::vector<GeneratorVariant> v;
    for (const auto& t : kTags) v.push_back(t.variant);
    return v;
  }();
  return all;
}

void GeneratorConfig::validate() const {
  if (T < 1) throw ConfigError("spike generator needs T >= 1");
  if (D < 1) throw ConfigError("spike generator needs D >= 1");
}

Tensor project_features(const Tensor& x_raw, const Tensor& w) {
  if (w.rank() != 2 || x_raw.rank() < 1 || x_raw.shape().back() != w.shape()[0]) {
    throw DimensionError("project_features: features " + shape_str(x_raw.shape()) +
                         " do not match weight " + shape_str(w.shape()));
  }
  if (x_raw.rank() == 1) return reshape(matmul(reshape(x_raw, {1, x_raw.numel()}), w), {w.shape()[1]});
  return matmul(x_raw, w);
}

SpikeGenerator::SpikeGenerator(ParamStore& store, const std::string& prefix, const GeneratorConfig& cfg,
                               const LifParams& lif, std::mt19937_64& rng)
    : cfg_(cfg), neuron_(lif) {
  cfg.validate();
  const auto group = ParamGroup::kEncoder;
  switch (cfg.variant) {
    case GeneratorVariant::kLinearLn:
    case GeneratorVariant::kLinearBn:
      for (std::size_t t = 0; t < cfg.T; ++t) {
        weights_.push_back(store.add(prefix + ".step" + std::to_string(t), glorot(rng, cfg.D, cfg.D), group));
      }
      break;
    case GeneratorVariant::kConvBn:
      for (const char* tap : {"prev", "center", "next"}) {
        weights_.push_back(store.add(prefix + ".conv_" + tap, glorot(rng, cfg.D, cfg.D), group));
      }
      break;
    default:
      break;
  }
  if (uses_layer_norm(cfg.variant)) {
    ln_ = LayerNormLayer::create(store, prefix + ".ln", cfg.D, group);
  } else {
    bn_ = BatchNormLayer::create(store, prefix + ".bn", cfg.D, group);
  }
  store.add(prefix + ".threshold", neuron_.raw_threshold(), group);
}

Tensor SpikeGenerator::expand(const Tensor& x_f, LayerRecorder* recorder,
                              const std::string& layer_prefix) const {
  const std::size_t rows = x_f.numel() / cfg_.D;
  const std::uint64_t dense = std::uint64_t(rows) * cfg_.D * cfg_.D;
  std::vector<Tensor> steps;
  switch (cfg_.variant) {
    case GeneratorVariant::kRepeatLn:
    case GeneratorVariant::kRepeatBn:
      steps.assign(cfg_.T, x_f);
      break;
    case GeneratorVariant::kLinearLn:
    case GeneratorVariant::kLinearBn:
      for (const auto& w : weights_) steps.push_back(matmul(x_f, w));
      if (recorder) recorder->floating(layer_prefix + "generator", dense * cfg_.T, dense * cfg_.T);
      break;
    case GeneratorVariant::kConvBn: {
      // Same-padded kernel-3 convolution over the token axis.
      Tensor y = add(add(matmul(shift(x_f, -2, 1), weights_[0]), matmul(x_f, weights_[1])),
                     matmul(shift(x_f, -2, -1), weights_[2]));
      steps.assign(cfg_.T, y);
      if (recorder) recorder->floating(layer_prefix + "generator", 3 * dense, 3 * dense);
      break;
    }
    case GeneratorVariant::kDeltaBn: {
      Tensor d = sub(x_f, shift(x_f, -2, 1));
      steps.assign(cfg_.T, d);
      break;
    }
  }
  return stack(steps);
}

SpikeTensor SpikeGenerator::forward(const Tensor& x_f, bool train, Trace* trace, LayerRecorder* recorder,
                                    const std::string& layer_prefix) const {
  if (x_f.rank() < 2 || x_f.shape().back() != cfg_.D) {
    throw DimensionError("spike generator: expected (..., K, " + std::to_string(cfg_.D) + ") features, got " +
                         shape_str(x_f.shape()));
  }
  Tensor expanded = expand(x_f, recorder, layer_prefix);
  Tensor normed = uses_layer_norm(cfg_.variant) ? ln_.forward(expanded) : bn_.forward(expanded, train);
  if (trace) *trace = {expanded, normed};
  return neuron_.forward(normed);
}

SpikeTensor spike_generate(const Tensor& x_f, const GeneratorConfig& cfg, const LifParams& lif,
                           std::uint64_t seed) {
  ParamStore store;
  std::mt19937_64 rng(seed);
  SpikeGenerator gen(store, "generator", cfg, lif, rng);
  return gen.forward(x_f, true);
}

}  // namespace cmsf
