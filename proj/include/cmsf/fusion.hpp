#pragma once
// Training-only cross-modal spike fusion: comb-mask cross attention (SCCA),
// spike cross attention (SCA) and concatenated spike self-attention (SCSA).
#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "cmsf/neurons.hpp"
#include "cmsf/params.hpp"
#include "cmsf/spike.hpp"
#include "cmsf/transformer.hpp"

namespace cmsf {

enum class FusionKind { kNone, kScca, kSca, kScsa };

FusionKind parse_fusion_kind(std::string_view tag);
std::string_view to_string(FusionKind kind);

struct FusionConfig {
  FusionKind kind = FusionKind::kScca;
  std::size_t h = 6;
  // For scca, h must divide both token counts.
  void validate(std::size_t regions, std::size_t words) const;
};

// Comb spikes: q (T, ..., L, D) split into h consecutive token groups, each
// group summed and passed through a LIF neuron -> (T, ..., h, D).
SpikeTensor scca_combs(const Tensor& q, std::size_t h, const LifParams& lif);
// Comb i duplicated over its N/h tokens of k, multiplied into k.
Tensor scca(const Tensor& q, const Tensor& k, std::size_t h, const LifParams& lif,
            SpikeTensor* combs_out = nullptr);

// Spike cross attention with its own projections:
//   Q = SN(BN(q W_Q)), K = SN(BN(kv W_K)), V = SN(BN(kv W_V)),
//   out = SN(BN((Q K^T V) W_O)).
class ScaBlock {
 public:
  struct Trace {
    SpikeTensor q, k, v;
    Tensor context;  // Q K^T V
  };

  ScaBlock() = default;
  ScaBlock(ParamStore& store, const std::string& prefix, std::size_t D, const LifParams& lif,
           std::mt19937_64& rng);
  SpikeTensor forward(const Tensor& query_src, const Tensor& kv_src, bool train, Trace* trace = nullptr) const;

 private:
  Tensor w_q_, w_k_, w_v_, w_o_;
  BatchNormLayer bn_q_, bn_k_, bn_v_, bn_o_;
  LifParams lif_;
};

// Spike-concat self attention: regions and words concatenated along the
// token axis share one set of projections; Q K^T V is split back per
// modality, normalised and fired.
class ScsaBlock {
 public:
  struct Trace {
    SpikeTensor q, k, v;   // over the concatenated tokens, regions first
    Tensor context_r;      // (T, B, N, D) slice of Q K^T V
    Tensor context_e;      // (T, B, L, D)
  };
  struct Output {
    SpikeTensor r, e;
  };

  ScsaBlock() = default;
  ScsaBlock(ParamStore& store, const std::string& prefix, std::size_t D, const LifParams& lif,
            std::mt19937_64& rng);
  Output forward(const Tensor& r, const Tensor& e, bool train, Trace* trace = nullptr) const;

 private:
  Tensor w_q_, w_k_, w_v_;
  BatchNormLayer bn_q_, bn_k_, bn_v_, bn_o_;
  LifParams lif_;
};

struct FusedEmbeddings {
  Tensor r_bar;  // (B, N, D)
  Tensor e_bar;  // (B, L, D)
};

// Fusion applied in both directions followed by temporal pooling. All
// parameters live in the fusion optimiser group.
class SpikeFusion {
 public:
  SpikeFusion() = default;
  SpikeFusion(ParamStore& store, const FusionConfig& cfg, std::size_t D, std::size_t T, const LifParams& lif,
              std::mt19937_64& rng);

  // r_spikes (T, B, N, D), e_spikes (T, B, L, D): the pre-pool encoder outputs.
  FusedEmbeddings fuse_and_pool(const Tensor& r_spikes, const Tensor& e_spikes, bool train) const;

  const FusionConfig& config() const { return cfg_; }

 private:
  FusionConfig cfg_;
  LifParams lif_;
  ScaBlock sca_r_, sca_e_;
  ScsaBlock scsa_;
  TemporalPool pool_;
};

// Number of fuse_and_pool calls made by this process.
std::uint64_t fusion_invocations();

}  // namespace cmsf
