#include "cmsf/transformer.hpp"

#include "cmsf/errors.hpp"
#include "cmsf/ops.hpp"

namespace cmsf {

std::uint64_t attention_cost(AttentionOrder order, std::size_t m, std::size_t n, std::size_t d,
                             std::size_t e) {
  if (order == AttentionOrder::kScoresFirst) return std::uint64_t(m) * n * d + std::uint64_t(m) * n * e;
  return std::uint64_t(d) * n * e + std::uint64_t(m) * d * e;
}

AttentionOrder cheaper_attention_order(std::size_t m, std::size_t n, std::size_t d, std::size_t e) {
  return attention_cost(AttentionOrder::kContextFirst, m, n, d, e) <
                 attention_cost(AttentionOrder::kScoresFirst, m, n, d, e)
             ? AttentionOrder::kContextFirst
             : AttentionOrder::kScoresFirst;
}

Tensor spike_attention(const Tensor& q, const Tensor& k, const Tensor& v, AttentionOrder order) {
  if (q.rank() < 2 || k.rank() != q.rank() || v.rank() != q.rank() || q.dim(-1) != k.dim(-1) ||
      k.dim(-2) != v.dim(-2)) {
    throw DimensionError("spike_attention: incompatible q " + shape_str(q.shape()) + ", k " +
                         shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  const Tensor kt = transpose_last(k);
  if (order == AttentionOrder::kScoresFirst) return matmul(matmul(q, kt), v);
  return matmul(q, matmul(kt, v));
}

Tensor spike_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() < 2 || k.rank() < 2 || v.rank() < 2) return spike_attention(q, k, v, AttentionOrder::kScoresFirst);
  return spike_attention(q, k, v, cheaper_attention_order(q.dim(-2), k.dim(-2), q.dim(-1), v.dim(-1)));
}

SsaBlock::SsaBlock(ParamStore& store, const std::string& prefix, std::size_t D, const LifParams& lif,
                   float scale, std::mt19937_64& rng)
    : lif_(lif), scale_(scale) {
  if (!(scale > 0.0f)) throw ParameterError("SSA scale must be positive");
  const auto g = ParamGroup::kEncoder;
  w_q_ = store.add(prefix + ".w_q", glorot(rng, D, D), g);
  w_k_ = store.add(prefix + ".w_k", glorot(rng, D, D), g);
  w_v_ = store.add(prefix + ".w_v", glorot(rng, D, D), g);
  w_a_ = store.add(prefix + ".w_a", glorot(rng, D, D), g);
  bn_q_ = BatchNormLayer::create(store, prefix + ".bn_q", D, g);
  bn_k_ = BatchNormLayer::create(store, prefix + ".bn_k", D, g);
  bn_v_ = BatchNormLayer::create(store, prefix + ".bn_v", D, g);
  bn_attn_ = BatchNormLayer::create(store, prefix + ".bn_attn", D, g);
  bn_a_ = BatchNormLayer::create(store, prefix + ".bn_a", D, g);
}

SpikeTensor SsaBlock::forward(const Tensor& x, bool train, SsaTrace* trace, LayerRecorder* recorder,
                              const std::string& layer_prefix) const {
  if (x.rank() < 3) throw DimensionError("SSA expects (T, ..., K, D), got " + shape_str(x.shape()));
  auto project = [&](const Tensor& w, const BatchNormLayer& bn) {
    return lif_sequence(bn.forward(matmul(x, w), train), lif_);
  };
  SpikeTensor q = project(w_q_, bn_q_);
  SpikeTensor k = project(w_k_, bn_k_);
  SpikeTensor v = project(w_v_, bn_v_);
  const std::size_t tokens = x.dim(-2);
  const std::size_t d = x.dim(-1);
  const AttentionOrder order = cheaper_attention_order(tokens, tokens, d, d);
  Tensor scores = cmsf::scale(spike_attention(q, k, v, order), scale_);
  SpikeTensor a = lif_sequence(bn_attn_.forward(scores, train), lif_);
  SpikeTensor out = lif_sequence(bn_a_.forward(matmul(a, w_a_), train), lif_);

  if (recorder) {
    const std::size_t steps = x.dim(0);
    const std::uint64_t rows = x.numel() / (steps * d);
    const std::uint64_t groups = rows / tokens;
    const std::uint64_t linear = rows * d * d;
    recorder->spiking(layer_prefix + "qkv", x, 3 * linear, 3 * linear * steps);
    const double rate = (firing_rate(q) + firing_rate(k) + firing_rate(v)) / 3.0;
    const std::uint64_t attn = groups * attention_cost(order, tokens, tokens, d, d);
    recorder->spiking_rate(layer_prefix + "attention", rate, attn, attn * steps);
    recorder->spiking(layer_prefix + "out_linear", a, linear, linear * steps);
  }
  if (trace) *trace = {q, k, v, scores, a};
  return out;
}

SgMlp::SgMlp(ParamStore& store, const std::string& prefix, std::size_t D, std::size_t hidden,
             const LifParams& lif, std::mt19937_64& rng)
    : lif_(lif) {
  const auto g = ParamGroup::kEncoder;
  w_g_ = store.add(prefix + ".w_g", glorot(rng, D, hidden), g);
  w_p_ = store.add(prefix + ".w_p", glorot(rng, D, hidden), g);
  w_o_ = store.add(prefix + ".w_o", glorot(rng, hidden, D), g);
  bn_g_ = BatchNormLayer::create(store, prefix + ".bn_g", hidden, g);
  bn_o_ = BatchNormLayer::create(store, prefix + ".bn_o", D, g);
}

SpikeTensor SgMlp::forward(const Tensor& x, bool train, SgMlpTrace* trace, LayerRecorder* recorder,
                           const std::string& layer_prefix) const {
  SpikeTensor gate = lif_sequence(bn_g_.forward(matmul(x, w_g_), train), lif_);
  Tensor value = matmul(x, w_p_);
  Tensor gated = mul(gate, value);
  SpikeTensor out = lif_sequence(bn_o_.forward(matmul(gated, w_o_), train), lif_);
  if (recorder) {
    const std::size_t steps = x.dim(0);
    const std::uint64_t rows = x.numel() / (steps * x.dim(-1));
    const std::uint64_t d = x.dim(-1);
    const std::uint64_t h = w_g_.dim(-1);
    recorder->spiking(layer_prefix + "gate_linear", x, 2 * rows * d * h, 2 * rows * d * h * steps);
    recorder->mask(layer_prefix + "gate_multiply", rows * h * steps, firing_rate(gate));
    recorder->floating(layer_prefix + "mlp_out", rows * h * d * steps, rows * h * d * steps);
  }
  if (trace) *trace = {gate, value, gated};
  return out;
}

TemporalPool::TemporalPool(ParamStore& store, const std::string& prefix, std::size_t T, ParamGroup group) {
  raw_ = store.add(prefix + ".time_weights", Tensor::zeros({T}), group);
}

TemporalPool TemporalPool::with_raw(Tensor raw) {
  TemporalPool p;
  p.raw_ = std::move(raw);
  return p;
}

Tensor TemporalPool::weights() const { return softmax_last(raw_); }

Tensor TemporalPool::forward(const Tensor& x) const { return temporal_pool(x, weights()); }

Tensor temporal_pool(const Tensor& x, const Tensor& weights) {
  if (x.rank() < 1 || weights.rank() != 1 || x.dim(0) != weights.numel()) {
    throw DimensionError("temporal_pool: " + std::to_string(weights.numel()) + " weights for input " +
                         shape_str(x.shape()));
  }
  const Shape rest(x.shape().begin() + 1, x.shape().end());
  Tensor out;
  for (std::size_t t = 0; t < x.dim(0); ++t) {
    Tensor term = scale_by(reshape(slice(x, 0, t, 1), rest), slice(weights, 0, t, 1));
    out = out.defined() ? add(out, term) : term;
  }
  return out;
}

void EncoderConfig::validate() const {
  if (d_raw == 0 || D == 0 || hidden == 0) throw ConfigError("encoder widths must be positive");
  if (T == 0) throw ConfigError("encoder needs T >= 1");
  if (!(ssa_scale > 0.0f)) throw ConfigError("SSA scale must be positive");
  lif.validate();
}

UnimodalEncoder::UnimodalEncoder(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg,
                                 std::mt19937_64& rng)
    : cfg_(cfg) {
  cfg.validate();
  w_in_ = store.add(prefix + ".linear", glorot(rng, cfg.d_raw, cfg.D), ParamGroup::kEncoder);
  generator_ = SpikeGenerator(store, prefix + ".generator", {cfg.variant, cfg.T, cfg.D}, cfg.lif, rng);
  ssa_ = SsaBlock(store, prefix + ".ssa", cfg.D, cfg.lif, cfg.ssa_scale, rng);
  mlp_ = SgMlp(store, prefix + ".mlp", cfg.D, cfg.hidden, cfg.lif, rng);
  pool_ = TemporalPool(store, prefix + ".pool", cfg.T, ParamGroup::kEncoder);
}

UnimodalOutput UnimodalEncoder::forward(const Tensor& x_raw, bool train, LayerRecorder* recorder,
                                        const std::string& layer_prefix) const {
  if (x_raw.rank() != 3 || x_raw.dim(-1) != cfg_.d_raw) {
    throw DimensionError("encoder expects (B, K, " + std::to_string(cfg_.d_raw) + ") features, got " +
                         shape_str(x_raw.shape()));
  }
  UnimodalOutput out;
  out.x_f = project_features(x_raw, w_in_);
  if (recorder) {
    const std::uint64_t macs = std::uint64_t(x_raw.numel()) * cfg_.D;
    recorder->floating(layer_prefix + "linear", macs, macs);
  }
  out.x_s = generator_.forward(out.x_f, train, nullptr, recorder, layer_prefix);
  out.x_s1 = add(out.x_s, ssa_.forward(out.x_s, train, &out.ssa, recorder, layer_prefix));
  out.x_s2 = add(out.x_s1, mlp_.forward(out.x_s1, train, &out.mlp, recorder, layer_prefix));
  out.x_tilde = pool_.forward(out.x_s2);
  return out;
}

}  // namespace cmsf
