#pragma once
// Token-level similarity, bidirectional hard alignment and LogSumExp pooling.
//
// Layout convention: for text tokens e (B_e, L, D) and image tokens
// r (B_r, N, D), the fine tensor is (B_r, B_e, L, N) and the pooled matrix is
// (B_r, B_e): row = image, column = caption.
#include <string_view>
#include <vector>

#include "cmsf/tensor.hpp"

namespace cmsf {

enum class AlignMode { kLse, kVha, kTha, kBiha };

AlignMode parse_align_mode(std::string_view tag);
std::string_view to_string(AlignMode mode);
const std::vector<AlignMode>& all_align_modes();

struct PoolConfig {
  float alpha = 0.1f;
  AlignMode mode = AlignMode::kBiha;
  void validate() const;
};

// Cosine similarity between every word of every caption and every region of
// every image. Tokens are L2-normalised with an epsilon guard.
Tensor fine_similarity(const Tensor& e, const Tensor& r);

// Max over regions for each word: (B_r, B_e, L, N) -> (B_r, B_e, L).
Tensor hard_align_word(const Tensor& fine);
// Max over words for each region: (B_r, B_e, L, N) -> (B_r, B_e, N).
Tensor hard_align_region(const Tensor& fine);
// Outer product per pair: (.., L) x (.., N) -> (.., L, N).
Tensor biha_enhance(const Tensor& word_max, const Tensor& region_max);
// (1/alpha) log sum exp(alpha s) over the last two axes.
Tensor lse_pool(const Tensor& s_bar, float alpha);

// Pooled (B_r, B_e) similarity for the configured mode.
Tensor similarity(const Tensor& e, const Tensor& r, const PoolConfig& cfg);
Tensor pool_fine(const Tensor& fine, const PoolConfig& cfg);
// Same pipeline on pre-spike projected features.
Tensor early_similarity(const Tensor& e_f, const Tensor& r_f, const PoolConfig& cfg);

}  // namespace cmsf
