#include "cmsf/alignment.hpp"

#include <algorithm>

#include "cmsf/errors.hpp"
#include "cmsf/ops.hpp"

namespace cmsf {

namespace {

struct ModeTag {
  AlignMode mode;
  std::string_view tag;
};

constexpr ModeTag kModes[] = {
    {AlignMode::kLse, "lse"}, {AlignMode::kVha, "vha"}, {AlignMode::kTha, "tha"}, {AlignMode::kBiha, "biha"}};

// out[i][j][l][n] = <e[j][l], r[i][n]>
Tensor pairwise_token_dots(const Tensor& e, const Tensor& r) {
  const std::size_t be = e.dim(0), L = e.dim(1), D = e.dim(2);
  const std::size_t br = r.dim(0), N = r.dim(1);
  const auto ed = e.data();
  const auto rd = r.data();
  std::vector<float> out(br * be * L * N);
  for (std::size_t i = 0; i < br; ++i) {
    for (std::size_t j = 0; j < be; ++j) {
      float* o = out.data() + (i * be + j) * L * N;
      for (std::size_t l = 0; l < L; ++l) {
        const float* el = ed.data() + (j * L + l) * D;
        for (std::size_t n = 0; n < N; ++n) {
          const float* rn = rd.data() + (i * N + n) * D;
          float acc = 0.0f;
          for (std::size_t d = 0; d < D; ++d) acc += el[d] * rn[d];
          o[l * N + n] = acc;
        }
      }
    }
  }
  if (auto* c = active_op_counter()) c->macs += std::uint64_t(br) * be * L * N * D;
  return Tensor::from_op({br, be, L, N}, std::move(out), {e, r}, [be, L, D, br, N](const Node& self) {
    const auto g = std::span<const float>(self.grad);
    const Tensor& e = self.parents[0];
    const Tensor& r = self.parents[1];
    const auto ed = e.data();
    const auto rd = r.data();
    auto ge = grad_of(e);
    auto gr = grad_of(r);
    for (std::size_t i = 0; i < br; ++i) {
      for (std::size_t j = 0; j < be; ++j) {
        const float* go = g.data() + (i * be + j) * L * N;
        for (std::size_t l = 0; l < L; ++l) {
          for (std::size_t n = 0; n < N; ++n) {
            const float gv = go[l * N + n];
            if (gv == 0.0f) continue;
            const std::size_t eo = (j * L + l) * D, ro = (i * N + n) * D;
            if (!ge.empty()) {
              for (std::size_t d = 0; d < D; ++d) ge[eo + d] += gv * rd[ro + d];
            }
            if (!gr.empty()) {
              for (std::size_t d = 0; d < D; ++d) gr[ro + d] += gv * ed[eo + d];
            }
          }
        }
      }
    }
  });
}

}  // namespace

AlignMode parse_align_mode(std::string_view tag) {
  for (const auto& m : kModes) {
    if (m.tag == tag) return m.mode;
  }
  throw ConfigError("unknown alignment mode '" + std::string(tag) + "'");
}

std::string_view to_string(AlignMode mode) {
  for (const auto& m : kModes) {
    if (m.mode == mode) return m.tag;
  }
  return "?";
}

const std::vector<AlignMode>& all_align_modes() {
  static const std::vector<AlignMode> all{AlignMode::kLse, AlignMode::kVha, AlignMode::kTha, AlignMode::kBiha};
  return all;
}

void PoolConfig::validate() const {
  if (!(alpha > 0.0f)) throw ConfigError("LSE alpha must be positive");
}

Tensor fine_similarity(const Tensor& e, const Tensor& r) {
  if (e.rank() != 3 || r.rank() != 3 || e.dim(2) != r.dim(2)) {
    throw DimensionError("fine_similarity: text tokens " + shape_str(e.shape()) + " and image tokens " +
                         shape_str(r.shape()) + " need shapes (B, L, D) and (B, N, D)");
  }
  return pairwise_token_dots(l2_normalize_last(e), l2_normalize_last(r));
}

Tensor hard_align_word(const Tensor& fine) {
  if (fine.rank() != 4) throw DimensionError("hard_align_word expects a rank-4 tensor");
  return max_axis(fine, 3);
}

Tensor hard_align_region(const Tensor& fine) {
  if (fine.rank() != 4) throw DimensionError("hard_align_region expects a rank-4 tensor");
  return max_axis(fine, 2);
}

Tensor biha_enhance(const Tensor& word_max, const Tensor& region_max) {
  if (word_max.rank() < 1 || word_max.rank() != region_max.rank() ||
      !std::equal(word_max.shape().begin(), word_max.shape().end() - 1, region_max.shape().begin())) {
    throw DimensionError("biha_enhance: " + shape_str(word_max.shape()) + " and " +
                         shape_str(region_max.shape()) + " do not share leading axes");
  }
  Shape col = word_max.shape();
  col.push_back(1);
  Shape row = region_max.shape();
  row.insert(row.end() - 1, 1);
  return matmul(reshape(word_max, col), reshape(region_max, row));
}

Tensor lse_pool(const Tensor& s_bar, float alpha) {
  if (!(alpha > 0.0f)) throw ParameterError("lse_pool: alpha must be positive");
  if (s_bar.rank() < 2) throw DimensionError("lse_pool needs two token axes");
  Shape flat(s_bar.shape().begin(), s_bar.shape().end() - 2);
  flat.push_back(s_bar.dim(-2) * s_bar.dim(-1));
  Shape out(s_bar.shape().begin(), s_bar.shape().end() - 2);
  return reshape(logsumexp_last(reshape(s_bar, flat), alpha), out);
}

Tensor pool_fine(const Tensor& fine, const PoolConfig& cfg) {
  cfg.validate();
  switch (cfg.mode) {
    case AlignMode::kLse: return lse_pool(fine, cfg.alpha);
    case AlignMode::kVha: return logsumexp_last(hard_align_region(fine), cfg.alpha);
    case AlignMode::kTha: return logsumexp_last(hard_align_word(fine), cfg.alpha);
    case AlignMode::kBiha:
      return lse_pool(biha_enhance(hard_align_word(fine), hard_align_region(fine)), cfg.alpha);
  }
  throw ConfigError("unknown alignment mode");
}

Tensor similarity(const Tensor& e, const Tensor& r, const PoolConfig& cfg) {
  return pool_fine(fine_similarity(e, r), cfg);
}

Tensor early_similarity(const Tensor& e_f, const Tensor& r_f, const PoolConfig& cfg) {
  return similarity(e_f, r_f, cfg);
}

}  // namespace cmsf
