#pragma once
// Contrastive objectives over pooled (image x caption) similarity matrices.
#include <string>
#include <utility>
#include <vector>

#include "cmsf/tensor.hpp"

namespace cmsf {

struct LossWeights {
  float lambda = 0.5f;
  float temperature = 0.01f;
  void validate() const;
};

// Symmetric InfoNCE without the positive in the denominator:
//   i2t = mean_i log sum_{j != i} exp((S_ij - S_ii) / tau)
//   t2i = mean_i log sum_{j != i} exp((S_ji - S_ii) / tau)
// returns (i2t + t2i) / 2. Rows index images, columns captions.
Tensor infonce_pair(const Tensor& S, float temperature);

// The seven matrices of one training step. Names follow the embeddings each
// one compares: *_f projected features, *_tilde encoder outputs, *_bar fused.
struct SimilaritySet {
  Tensor early;           // S(E_f, R_f)
  Tensor basic;           // S(E~, R~)
  Tensor fusion;          // S(E-, R-)
  Tensor text_to_fused;   // S(E~, R-)
  Tensor fused_to_image;  // S(E-, R~)
  Tensor text_intra;      // S(E~, E-)
  Tensor image_intra;     // S(R~, R-)
};

// Which terms the objective uses. Without early alignment the total is the
// late loss alone; without fusion the late loss is the basic term alone.
struct LossTerms {
  bool early = true;
  bool fusion = true;
};

struct LossBreakdown {
  Tensor early, basic, fusion, inter, intra, late, total;
  // (name, value) for logging, in the order early, basic, fusion, inter,
  // intra, total. Disabled terms report 0.
  std::vector<std::pair<std::string, double>> values() const;
};

LossBreakdown total_loss(const SimilaritySet& sims, const LossWeights& weights, LossTerms terms = {});

}  // namespace cmsf
