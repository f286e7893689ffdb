#include "cmsf/model.hpp"

#include "cmsf/errors.hpp"
#include "cmsf/ops.hpp"

namespace cmsf {

void ModelConfig::validate(std::size_t regions, std::size_t words) const {
  if (d_region == 0 || d_word == 0 || D == 0) throw ConfigError("feature widths must be positive");
  if (T == 0) throw ConfigError("T must be at least 1");
  if (!(ssa_scale > 0.0f)) throw ConfigError("ssa_scale must be positive");
  lif.validate();
  pool.validate();
  fusion.validate(regions, words);
}

EncoderConfig ModelConfig::encoder(std::size_t d_raw) const {
  EncoderConfig e;
  e.d_raw = d_raw;
  e.D = D;
  e.hidden = hidden == 0 ? D : hidden;
  e.T = T;
  e.variant = variant;
  e.lif = lif;
  e.ssa_scale = ssa_scale;
  return e;
}

CmsfModel::CmsfModel(const ModelConfig& cfg) : cfg_(cfg) {
  std::mt19937_64 rng(cfg.seed);
  region_encoder_ = UnimodalEncoder(store_, "region", cfg.encoder(cfg.d_region), rng);
  word_encoder_ = UnimodalEncoder(store_, "word", cfg.encoder(cfg.d_word), rng);
  fusion_ = SpikeFusion(store_, cfg.fusion, cfg.D, cfg.T, cfg.lif, rng);
}

TrainingForward CmsfModel::training_forward(const Tensor& regions, const Tensor& words) const {
  if (regions.rank() != 3 || words.rank() != 3 || regions.dim(0) != words.dim(0)) {
    throw DimensionError("training batch needs (B, N, d) regions and (B, L, d) words with equal B, got " +
                         shape_str(regions.shape()) + " and " + shape_str(words.shape()));
  }
  cfg_.validate(regions.dim(1), words.dim(1));
  TrainingForward f;
  f.region = region_encoder_.forward(regions, true);
  f.word = word_encoder_.forward(words, true);
  const PoolConfig& pc = cfg_.pool;
  f.sims.basic = similarity(f.word.x_tilde, f.region.x_tilde, pc);
  if (cfg_.early_alignment) f.sims.early = early_similarity(f.word.x_f, f.region.x_f, pc);
  if (cfg_.fusion.kind != FusionKind::kNone) {
    if (cfg_.detach_fusion_input) {
      f.fused = fusion_.fuse_and_pool(f.region.x_s2.detach(), f.word.x_s2.detach(), true);
    } else {
      f.fused = fusion_.fuse_and_pool(f.region.x_s2, f.word.x_s2, true);
    }
    f.sims.fusion = similarity(f.fused->e_bar, f.fused->r_bar, pc);
    const Tensor r_bar = cfg_.detach_soft_labels ? f.fused->r_bar.detach() : f.fused->r_bar;
    const Tensor e_bar = cfg_.detach_soft_labels ? f.fused->e_bar.detach() : f.fused->e_bar;
    f.sims.text_to_fused = similarity(f.word.x_tilde, r_bar, pc);
    f.sims.fused_to_image = similarity(e_bar, f.region.x_tilde, pc);
    f.sims.text_intra = similarity(f.word.x_tilde, e_bar, pc);
    f.sims.image_intra = similarity(f.region.x_tilde, r_bar, pc);
  }
  return f;
}

LossBreakdown CmsfModel::training_loss(const Tensor& regions, const Tensor& words,
                                       const LossWeights& weights) const {
  TrainingForward f = training_forward(regions, words);
  return total_loss(f.sims, weights, {cfg_.early_alignment, cfg_.fusion.kind != FusionKind::kNone});
}

Tensor CmsfModel::encode_regions(const Tensor& regions) const {
  return region_encoder_.forward(regions, false).x_tilde;
}

Tensor CmsfModel::encode_words(const Tensor& words) const { return word_encoder_.forward(words, false).x_tilde; }

Tensor CmsfModel::score(const Tensor& region_emb, const Tensor& word_emb, std::size_t block) const {
  if (block == 0) throw UsageError("score: block size must be positive");
  const std::size_t br = region_emb.dim(0);
  Tensor out;
  for (std::size_t start = 0; start < br; start += block) {
    const std::size_t len = std::min(block, br - start);
    Tensor part = similarity(word_emb, slice(region_emb, 0, start, len), cfg_.pool);
    out = out.defined() ? concat(out, part, 0) : part;
  }
  return out;
}

EnergyReport CmsfModel::energy_report(const Tensor& regions, const Tensor& words,
                                      const EnergyConstants& consts) const {
  NoGradGuard no_grad;
  LayerRecorder recorder(cfg_.T);
  ScopedOpCounter counter;
  region_encoder_.forward(regions, false, &recorder, "region.");
  word_encoder_.forward(words, false, &recorder, "word.");
  if (counter.counts().macs != recorder.claimed_macs()) {
    throw AccountingError("unaccounted multiply-accumulates: executed " + std::to_string(counter.counts().macs) +
                          ", ledgers account for " + std::to_string(recorder.claimed_macs()));
  }
  return build_report(recorder.ledgers(), cfg_.T, consts);
}

}  // namespace cmsf
