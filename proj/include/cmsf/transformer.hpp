#pragma once
// Intra-modal spiking blocks and the single-modality encoder.
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

#include "cmsf/encoding.hpp"
#include "cmsf/energy.hpp"
#include "cmsf/neurons.hpp"
#include "cmsf/params.hpp"
#include "cmsf/spike.hpp"

namespace cmsf {

// Association order of Q K^T V.
enum class AttentionOrder { kScoresFirst, kContextFirst };  // (QK^T)V, Q(K^T V)

// Multiply-accumulates of each order for Q (m x d), K (n x d), V (n x e).
std::uint64_t attention_cost(AttentionOrder order, std::size_t m, std::size_t n, std::size_t d,
                             std::size_t e);
// Cheaper order; ties go to scores-first.
AttentionOrder cheaper_attention_order(std::size_t m, std::size_t n, std::size_t d, std::size_t e);

// Q K^T V over the last two axes without softmax, in the given order (or the
// cheaper one). Leading axes of q, k and v must agree.
Tensor spike_attention(const Tensor& q, const Tensor& k, const Tensor& v);
Tensor spike_attention(const Tensor& q, const Tensor& k, const Tensor& v, AttentionOrder order);

struct SsaTrace {
  SpikeTensor q, k, v;
  Tensor scores;  // Q K^T V * s, before normalisation
  SpikeTensor attention;
};

// Spike self-attention:
//   Q, K, V = SN(BN(X W_*)),  A = SN(BN(Q K^T V * s)),  out = SN(BN(A W_A)).
class SsaBlock {
 public:
  SsaBlock() = default;
  SsaBlock(ParamStore& store, const std::string& prefix, std::size_t D, const LifParams& lif, float scale,
           std::mt19937_64& rng);

  SpikeTensor forward(const Tensor& x, bool train, SsaTrace* trace = nullptr,
                      LayerRecorder* recorder = nullptr, const std::string& layer_prefix = "") const;

  float scale() const { return scale_; }

 private:
  Tensor w_q_, w_k_, w_v_, w_a_;
  BatchNormLayer bn_q_, bn_k_, bn_v_, bn_attn_, bn_a_;
  LifParams lif_;
  float scale_ = 0.125f;
};

struct SgMlpTrace {
  SpikeTensor gate;
  Tensor value;  // X W_P, no neuron
  Tensor gated;  // gate * value
};

// Spike-gated MLP: G = SN(BN(X W_G)), P = X W_P, out = SN(BN((G * P) W_O)).
class SgMlp {
 public:
  SgMlp() = default;
  SgMlp(ParamStore& store, const std::string& prefix, std::size_t D, std::size_t hidden,
        const LifParams& lif, std::mt19937_64& rng);

  SpikeTensor forward(const Tensor& x, bool train, SgMlpTrace* trace = nullptr,
                      LayerRecorder* recorder = nullptr, const std::string& layer_prefix = "") const;

 private:
  Tensor w_g_, w_p_, w_o_;
  BatchNormLayer bn_g_, bn_o_;
  LifParams lif_;
};

// Convex weighted sum over the leading time axis. Weights are stored
// unconstrained and passed through softmax at use; they start uniform.
class TemporalPool {
 public:
  TemporalPool() = default;
  TemporalPool(ParamStore& store, const std::string& prefix, std::size_t T, ParamGroup group);
  // Fixed weights, not registered anywhere (used by tests and tools).
  static TemporalPool with_raw(Tensor raw);

  Tensor weights() const;
  Tensor forward(const Tensor& x) const;

 private:
  Tensor raw_;
};

Tensor temporal_pool(const Tensor& x, const Tensor& weights);

struct EncoderConfig {
  std::size_t d_raw = 2048;
  std::size_t D = 1024;
  std::size_t hidden = 1024;
  std::size_t T = 2;
  GeneratorVariant variant = GeneratorVariant::kRepeatLn;
  LifParams lif;
  float ssa_scale = 0.125f;
  void validate() const;
};

struct UnimodalOutput {
  Tensor x_f;            // (B, K, D) projected float features
  SpikeTensor x_s;       // (T, B, K, D) generator spikes
  Tensor x_s1;           // X_s + SSA(X_s), values in {0, 1, 2}
  Tensor x_s2;           // X_s' + SGMLP(X_s'), pre-pool
  Tensor x_tilde;        // (B, K, D) pooled embedding
  SsaTrace ssa;
  SgMlpTrace mlp;
};

// Linear -> spike generator -> residual SSA -> residual SG-MLP -> pooling.
class UnimodalEncoder {
 public:
  UnimodalEncoder() = default;
  UnimodalEncoder(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg,
                  std::mt19937_64& rng);

  // x_raw: (B, K, d_raw).
  UnimodalOutput forward(const Tensor& x_raw, bool train, LayerRecorder* recorder = nullptr,
                         const std::string& layer_prefix = "") const;

  const EncoderConfig& config() const { return cfg_; }
  const Tensor& projection() const { return w_in_; }

 private:
  EncoderConfig cfg_;
  Tensor w_in_;
  SpikeGenerator generator_;
  SsaBlock ssa_;
  SgMlp mlp_;
  TemporalPool pool_;
};

}  // namespace cmsf
