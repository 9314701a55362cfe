#pragma once

// Parameterized building blocks. Every layer accepts a single instance
// ([rows x cols]) or a batch ([B x rows x cols]) and treats the batch
// dimension as independent samples.

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "pvclient/rng.hpp"
#include "pvclient/tensor.hpp"

namespace pvclient::layers {

using ad::Tensor;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), fan_in = rows.
Tensor init_weight(Rng& rng, std::size_t rows, std::size_t cols);
Tensor zeros_param(ad::Shape shape);

// ---------------------------------------------------------------------------
// Reversible instance normalization

struct RevInParams {
  Tensor alpha;  // [C]
  Tensor beta;   // [C]
  double eps = 1e-5;
};

// Statistics of one normalize call. Travels with the prediction; never stored
// in the parameter record.
struct RevInState {
  Tensor mean;   // [C] or [B x C]
  Tensor sigma;  // same shape, strictly positive
  bool ready() const { return mean.defined() && sigma.defined(); }
};

struct RevInResult {
  Tensor normalized;  // same shape as the input
  RevInState state;
};

RevInParams make_revin(std::size_t channels, double eps = 1e-5);
// O = alpha * (H - mu) / sigma + beta, statistics over the time axis of H [L x C].
RevInResult revin_normalize(const Tensor& series, const RevInParams& params);
// F' = (F - beta) / alpha * sigma + mu. F is [T x K] (or [T] when K == 1),
// batched forms add a leading B; column k uses channel channel_map[k].
Tensor revin_denormalize(const Tensor& forecast, const RevInParams& params,
                         const RevInState& state, const std::vector<std::size_t>& channel_map);

// ---------------------------------------------------------------------------
// Token mixers

struct MhaParams {
  // Per head: query/key/value [D x d_head] and the head's row block of the
  // output projection [d_head x D]. Concatenating heads then projecting equals
  // summing the per-head products.
  std::vector<Tensor> wq, wk, wv, wo;
  std::size_t heads = 0;
  std::size_t d_head = 0;
  std::size_t token_dim() const;
};

MhaParams make_mha(Rng& rng, std::size_t token_dim, std::size_t heads, std::size_t d_head);

// Attention across variable tokens [C x D]. When attention_out is given, the
// per-head [C x C] (or [B x C x C]) weight matrices are appended to it.
Tensor cross_variable_attention(const Tensor& tokens, const MhaParams& params,
                                std::vector<Tensor>* attention_out = nullptr);

// Shared affine map over the variable axis: out[:, d] = M^T x[:, d] + b.
struct LinearMixerParams {
  Tensor weight;  // [C x C]
  Tensor bias;    // [C]
};
LinearMixerParams make_linear_mixer(Rng& rng, std::size_t channels);
Tensor linear_mixer(const Tensor& tokens, const LinearMixerParams& params);

struct MlpMixerParams {
  Tensor w1, b1;  // [C x hidden], [hidden]
  Tensor w2, b2;  // [hidden x C], [C]
};
MlpMixerParams make_mlp_mixer(Rng& rng, std::size_t channels, std::size_t hidden);
Tensor mlp_mixer(const Tensor& tokens, const MlpMixerParams& params);

// No mixer: the block reduces to per-token normalization and FFN.
struct NoMixer {};

using MixerParams = std::variant<MhaParams, LinearMixerParams, MlpMixerParams, NoMixer>;

// ---------------------------------------------------------------------------
// Encoder block

struct FfnParams {
  Tensor w1, b1;  // [D x hidden], [hidden]
  Tensor w2, b2;  // [hidden x D], [D]
};
FfnParams make_ffn(Rng& rng, std::size_t token_dim, std::size_t hidden);
Tensor feed_forward(const Tensor& tokens, const FfnParams& params);

struct LayerNormParams {
  Tensor gain;  // [D]
  Tensor bias;  // [D]
  double eps = 1e-5;
};
LayerNormParams make_layer_norm(std::size_t token_dim);
Tensor layer_norm(const Tensor& tokens, const LayerNormParams& params);

struct EncoderBlockParams {
  MixerParams mixer;
  FfnParams ffn;
  LayerNormParams norm1;
  LayerNormParams norm2;
};

// x1 = LN(x + mixer(x)); out = LN(x1 + FFN(x1)).
Tensor encoder_block(const Tensor& tokens, const EncoderBlockParams& params,
                     std::vector<Tensor>* attention_out = nullptr);

// ---------------------------------------------------------------------------
// Heads

struct AffineParams {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
};
using ProjectionParams = AffineParams;
using LinearTrendParams = AffineParams;
using EmbeddingParams = AffineParams;

AffineParams make_affine(Rng& rng, std::size_t in, std::size_t out);

// Per-token map [C x D] -> [C x T], then flipped to [T x C].
Tensor projection_head(const Tensor& encoded, const ProjectionParams& params);
// One shared map L -> T for every channel of O [L x C]; returns [T x C].
Tensor linear_trend(const Tensor& normalized, const LinearTrendParams& params);
// Per-token map [C x L] -> [C x D_e]. Throws ConfigError when not enabled.
Tensor optional_embedding(const Tensor& tokens, const EmbeddingParams& params, bool enabled);

// ---------------------------------------------------------------------------
// Parameter enumeration (stable order: checkpoint and optimizer rely on it).

void append_params(const std::string& prefix, const RevInParams& p, ParamList& out);
void append_params(const std::string& prefix, const MixerParams& p, ParamList& out);
void append_params(const std::string& prefix, const FfnParams& p, ParamList& out);
void append_params(const std::string& prefix, const LayerNormParams& p, ParamList& out);
void append_params(const std::string& prefix, const EncoderBlockParams& p, ParamList& out);
void append_params(const std::string& prefix, const AffineParams& p, ParamList& out);

}  // namespace pvclient::layers
