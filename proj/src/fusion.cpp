#include "cmsf/fusion.hpp"

#include <algorithm>
#include <atomic>

#include "cmsf/errors.hpp"
#include "cmsf/ops.hpp"

namespace cmsf {

namespace {

std::atomic<std::uint64_t> g_fusion_calls{0};

}  // namespace

FusionKind parse_fusion_kind(std::string_view tag) {
  if (tag == "scca") return FusionKind::kScca;
  if (tag == "sca") return FusionKind::kSca;
  if (tag == "scsa") return FusionKind::kScsa;
  if (tag == "none") return FusionKind::kNone;
  throw ConfigError("unknown fusion kind '" + std::string(tag) + "'");
}

std::string_view to_string(FusionKind kind) {
  switch (kind) {
    case FusionKind::kNone: return "none";
    case FusionKind::kScca: return "scca";
    case FusionKind::kSca: return "sca";
    case FusionKind::kScsa: return "scsa";
  }
  return "?";
}

void FusionConfig::validate(std::size_t regions, std::size_t words) const {
  if (kind != FusionKind::kScca) return;
  if (h == 0) throw ConfigError("scca needs h >= 1");
  if (regions % h != 0 || words % h != 0) {
    throw ConfigError("scca: h = " + std::to_string(h) + " must divide both N = " + std::to_string(regions) +
                      " and L = " + std::to_string(words));
  }
}

SpikeTensor scca_combs(const Tensor& q, std::size_t h, const LifParams& lif) {
  if (q.rank() < 3) throw DimensionError("scca: q must be (T, ..., L, D), got " + shape_str(q.shape()));
  const std::size_t L = q.dim(-2);
  if (h == 0 || L % h != 0) {
    throw ConfigError("scca: h = " + std::to_string(h) + " does not divide L = " + std::to_string(L));
  }
  Shape grouped(q.shape().begin(), q.shape().end() - 2);
  grouped.insert(grouped.end(), {h, L / h, q.dim(-1)});
  return lif_sequence(sum_axis(reshape(q, grouped), -2), lif);
}

Tensor scca(const Tensor& q, const Tensor& k, std::size_t h, const LifParams& lif, SpikeTensor* combs_out) {
  if (k.rank() != q.rank() || k.dim(-1) != q.dim(-1) ||
      !std::equal(q.shape().begin(), q.shape().end() - 2, k.shape().begin())) {
    throw DimensionError("scca: q " + shape_str(q.shape()) + " and k " + shape_str(k.shape()) +
                         " disagree outside the token axis");
  }
  const std::size_t N = k.dim(-2);
  if (h == 0 || N % h != 0) {
    throw ConfigError("scca: h = " + std::to_string(h) + " does not divide N = " + std::to_string(N));
  }
  SpikeTensor combs = scca_combs(q, h, lif);
  if (combs_out) *combs_out = combs;
  return mul(repeat_interleave(combs, -2, N / h), k);
}

ScaBlock::ScaBlock(ParamStore& store, const std::string& prefix, std::size_t D, const LifParams& lif,
                   std::mt19937_64& rng)
    : lif_(lif) {
  const auto g = ParamGroup::kFusion;
  w_q_ = store.add(prefix + ".w_q", glorot(rng, D, D), g);
  w_k_ = store.add(prefix + ".w_k", glorot(rng, D, D), g);
  w_v_ = store.add(prefix + ".w_v", glorot(rng, D, D), g);
  w_o_ = store.add(prefix + ".w_o", glorot(rng, D, D), g);
  bn_q_ = BatchNormLayer::create(store, prefix + ".bn_q", D, g);
  bn_k_ = BatchNormLayer::create(store, prefix + ".bn_k", D, g);
  bn_v_ = BatchNormLayer::create(store, prefix + ".bn_v", D, g);
  bn_o_ = BatchNormLayer::create(store, prefix + ".bn_o", D, g);
}

SpikeTensor ScaBlock::forward(const Tensor& query_src, const Tensor& kv_src, bool train, Trace* trace) const {
  auto fire = [&](const Tensor& x, const Tensor& w, const BatchNormLayer& bn) {
    return lif_sequence(bn.forward(matmul(x, w), train), lif_);
  };
  SpikeTensor q = fire(query_src, w_q_, bn_q_);
  SpikeTensor k = fire(kv_src, w_k_, bn_k_);
  SpikeTensor v = fire(kv_src, w_v_, bn_v_);
  Tensor context = spike_attention(q, k, v);
  if (trace) *trace = {q, k, v, context};
  return fire(context, w_o_, bn_o_);
}

ScsaBlock::ScsaBlock(ParamStore& store, const std::string& prefix, std::size_t D, const LifParams& lif,
                     std::mt19937_64& rng)
    : lif_(lif) {
  const auto g = ParamGroup::kFusion;
  w_q_ = store.add(prefix + ".w_q", glorot(rng, D, D), g);
  w_k_ = store.add(prefix + ".w_k", glorot(rng, D, D), g);
  w_v_ = store.add(prefix + ".w_v", glorot(rng, D, D), g);
  bn_q_ = BatchNormLayer::create(store, prefix + ".bn_q", D, g);
  bn_k_ = BatchNormLayer::create(store, prefix + ".bn_k", D, g);
  bn_v_ = BatchNormLayer::create(store, prefix + ".bn_v", D, g);
  bn_o_ = BatchNormLayer::create(store, prefix + ".bn_o", D, g);
}

ScsaBlock::Output ScsaBlock::forward(const Tensor& r, const Tensor& e, bool train, Trace* trace) const {
  const std::size_t N = r.dim(-2);
  const std::size_t L = e.dim(-2);
  Tensor x = concat(r, e, -2);
  auto fire = [&](const Tensor& w, const BatchNormLayer& bn) {
    return lif_sequence(bn.forward(matmul(x, w), train), lif_);
  };
  SpikeTensor q = fire(w_q_, bn_q_);
  SpikeTensor k = fire(w_k_, bn_k_);
  SpikeTensor v = fire(w_v_, bn_v_);
  Tensor context = spike_attention(q, k, v);
  SpikeTensor out = lif_sequence(bn_o_.forward(context, train), lif_);
  if (trace) *trace = {q, k, v, slice(context, -2, 0, N), slice(context, -2, N, L)};
  return {SpikeTensor::trusted(slice(out, -2, 0, N)), SpikeTensor::trusted(slice(out, -2, N, L))};
}

SpikeFusion::SpikeFusion(ParamStore& store, const FusionConfig& cfg, std::size_t D, std::size_t T,
                         const LifParams& lif, std::mt19937_64& rng)
    : cfg_(cfg), lif_(lif) {
  switch (cfg.kind) {
    case FusionKind::kSca:
      sca_r_ = ScaBlock(store, "fusion.sca_region", D, lif, rng);
      sca_e_ = ScaBlock(store, "fusion.sca_word", D, lif, rng);
      break;
    case FusionKind::kScsa:
      scsa_ = ScsaBlock(store, "fusion.scsa", D, lif, rng);
      break;
    default:
      break;
  }
  if (cfg.kind != FusionKind::kNone) pool_ = TemporalPool(store, "fusion.pool", T, ParamGroup::kFusion);
}

FusedEmbeddings SpikeFusion::fuse_and_pool(const Tensor& r_spikes, const Tensor& e_spikes, bool train) const {
  ++g_fusion_calls;
  switch (cfg_.kind) {
    case FusionKind::kScca:
      // Text combs mask the image tokens, image combs mask the text tokens.
      return {pool_.forward(scca(e_spikes, r_spikes, cfg_.h, lif_)),
              pool_.forward(scca(r_spikes, e_spikes, cfg_.h, lif_))};
    case FusionKind::kSca:
      return {pool_.forward(sca_r_.forward(r_spikes, e_spikes, train)),
              pool_.forward(sca_e_.forward(e_spikes, r_spikes, train))};
    case FusionKind::kScsa: {
      auto out = scsa_.forward(r_spikes, e_spikes, train);
      return {pool_.forward(out.r), pool_.forward(out.e)};
    }
    case FusionKind::kNone:
      break;
  }
  throw UsageError("fuse_and_pool called with fusion disabled");
}

std::uint64_t fusion_invocations() { return g_fusion_calls.load(); }

}  // namespace cmsf
