#pragma once
// The full retrieval network: two unimodal spiking encoders, the similarity
// head, and the training-only fusion branch.
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>

#include "cmsf/alignment.hpp"
#include "cmsf/energy.hpp"
#include "cmsf/fusion.hpp"
#include "cmsf/losses.hpp"
#include "cmsf/params.hpp"
#include "cmsf/transformer.hpp"

namespace cmsf {

struct ModelConfig {
  std::size_t d_region = 2048;
  std::size_t d_word = 768;
  std::size_t D = 1024;
  std::size_t hidden = 0;  // 0: same as D
  std::size_t T = 2;
  GeneratorVariant variant = GeneratorVariant::kRepeatLn;
  LifParams lif;
  float ssa_scale = 0.125f;
  FusionConfig fusion;
  PoolConfig pool;
  bool early_alignment = true;
  // Fusion branch sees detached encoder spikes; inter/intra terms treat the
  // fused embeddings as fixed targets.
  bool detach_fusion_input = true;
  bool detach_soft_labels = false;
  std::uint64_t seed = 0;

  // Token counts are only needed for the fusion divisibility check.
  void validate(std::size_t regions, std::size_t words) const;
  EncoderConfig encoder(std::size_t d_raw) const;
};

struct TrainingForward {
  UnimodalOutput region, word;
  std::optional<FusedEmbeddings> fused;
  SimilaritySet sims;
};

class CmsfModel {
 public:
  explicit CmsfModel(const ModelConfig& cfg);
  CmsfModel(const CmsfModel&) = delete;
  CmsfModel& operator=(const CmsfModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // regions (B, N, d_region), words (B, L, d_word); batch-statistics BN.
  TrainingForward training_forward(const Tensor& regions, const Tensor& words) const;
  LossBreakdown training_loss(const Tensor& regions, const Tensor& words, const LossWeights& weights) const;

  // Inference path: eval-mode BN, no fusion. Returns the pooled embeddings.
  Tensor encode_regions(const Tensor& regions) const;
  Tensor encode_words(const Tensor& words) const;
  // (B_r, B_e) scores between encoded images and captions, computed in row
  // blocks so that large evaluation sets stay within memory.
  Tensor score(const Tensor& region_emb, const Tensor& word_emb, std::size_t block = 64) const;

  // Instrumented inference pass over a calibration batch. Throws
  // AccountingError if the array ops executed multiply-accumulates that no
  // ledger entry accounts for.
  EnergyReport energy_report(const Tensor& regions, const Tensor& words,
                             const EnergyConstants& consts = {}) const;

 private:
  ModelConfig cfg_;
  ParamStore store_;
  UnimodalEncoder region_encoder_;
  UnimodalEncoder word_encoder_;
  SpikeFusion fusion_;
};

}  // namespace cmsf
