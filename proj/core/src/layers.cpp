#include "pvclient/layers.hpp"

#include <cmath>

#include "pvclient/error.hpp"

namespace pvclient::layers {

using namespace pvclient::ad;

Tensor init_weight(Rng& rng, std::size_t rows, std::size_t cols) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  std::vector<double> values(rows * cols);
  for (double& v : values) v = rng.uniform(-bound, bound);
  return Tensor::from({rows, cols}, std::move(values), true);
}

Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

// ---------------------------------------------------------------------------

RevInParams make_revin(std::size_t channels, double eps) {
  return {Tensor::full({channels}, 1.0, true), Tensor::zeros({channels}, true), eps};
}

RevInResult revin_normalize(const Tensor& series, const RevInParams& params) {
  if (series.rank() < 2) {
    throw ShapeError("revin_normalize expects [L x C] input, got " + to_string(series.shape()));
  }
  const std::size_t length = series.dim(-2);
  const std::size_t channels = series.dim(-1);
  if (length < 2) throw ShapeError("revin_normalize needs at least 2 time steps");
  if (params.alpha.numel() != channels || params.beta.numel() != channels) {
    throw ShapeError("revin parameters sized " + std::to_string(params.alpha.numel()) +
                     " for " + std::to_string(channels) + " channels");
  }
  const Tensor by_channel = permute10(series);
  RowStats stats = rowwise_mean_std(by_channel, params.eps);
  Tensor z = div_rows(sub_rows(by_channel, stats.mean), stats.std);
  z = add_rows(mul_rows(z, params.alpha), params.beta);
  return {permute10(z), {std::move(stats.mean), std::move(stats.std)}};
}

Tensor revin_denormalize(const Tensor& forecast, const RevInParams& params,
                         const RevInState& state, const std::vector<std::size_t>& channel_map) {
  if (!state.ready()) throw StateError("revin_denormalize called before revin_normalize");
  const std::size_t channels = params.alpha.numel();
  for (std::size_t c : channel_map) {
    if (c >= channels) throw ShapeError("channel map entry " + std::to_string(c) + " out of range");
    if (std::abs(params.alpha.at(c)) < 1e-12) {
      throw StateError("revin alpha of channel " + std::to_string(c) + " is too close to zero");
    }
  }
  const bool batched = state.mean.rank() == 2;
  const std::size_t series_rank = batched ? 2 : 1;
  Tensor f = forecast;
  const bool series_form = forecast.rank() == series_rank;
  if (series_form) {
    Shape s = forecast.shape();
    s.push_back(1);
    f = reshape(forecast, s);
  }
  if (f.rank() != series_rank + 1 || f.dim(-1) != channel_map.size() ||
      (batched && f.dim(0) != state.mean.dim(0))) {
    throw ShapeError("revin_denormalize: forecast " + to_string(forecast.shape()) +
                     " does not match channel map of size " + std::to_string(channel_map.size()));
  }
  Tensor cols = permute10(f);  // [.., K, T]
  cols = sub_rows(cols, take_last(params.beta, channel_map));
  cols = div_rows(cols, take_last(params.alpha, channel_map));
  cols = mul_rows(cols, take_last(state.sigma, channel_map));
  cols = add_rows(cols, take_last(state.mean, channel_map));
  Tensor out = permute10(cols);
  return series_form ? reshape(out, forecast.shape()) : out;
}

// ---------------------------------------------------------------------------

std::size_t MhaParams::token_dim() const { return wq.empty() ? 0 : wq.front().dim(0); }

MhaParams make_mha(Rng& rng, std::size_t token_dim, std::size_t heads, std::size_t d_head) {
  MhaParams p;
  p.heads = heads;
  p.d_head = d_head;
  for (std::size_t h = 0; h < heads; ++h) {
    p.wq.push_back(init_weight(rng, token_dim, d_head));
    p.wk.push_back(init_weight(rng, token_dim, d_head));
    p.wv.push_back(init_weight(rng, token_dim, d_head));
  }
  // Output projection is one (heads * d_head) x D matrix; fan-in covers all heads.
  const double bound = 1.0 / std::sqrt(static_cast<double>(heads * d_head));
  for (std::size_t h = 0; h < heads; ++h) {
    std::vector<double> values(d_head * token_dim);
    for (double& v : values) v = rng.uniform(-bound, bound);
    p.wo.push_back(Tensor::from({d_head, token_dim}, std::move(values), true));
  }
  return p;
}

Tensor cross_variable_attention(const Tensor& tokens, const MhaParams& params,
                                std::vector<Tensor>* attention_out) {
  if (tokens.rank() < 2 || tokens.dim(-1) != params.token_dim()) {
    throw ShapeError("attention: tokens " + to_string(tokens.shape()) +
                     " do not match token width " + std::to_string(params.token_dim()));
  }
  const double temperature = 1.0 / std::sqrt(static_cast<double>(params.d_head));
  Tensor out;
  for (std::size_t h = 0; h < params.heads; ++h) {
    const Tensor q = matmul(tokens, params.wq[h]);
    const Tensor k = matmul(tokens, params.wk[h]);
    const Tensor v = matmul(tokens, params.wv[h]);
    const Tensor weights = softmax_rows(scale(matmul(q, permute10(k)), temperature));
    if (attention_out) attention_out->push_back(weights);
    const Tensor head = matmul(matmul(weights, v), params.wo[h]);
    out = out.defined() ? add(out, head) : head;
  }
  return out;
}

LinearMixerParams make_linear_mixer(Rng& rng, std::size_t channels) {
  return {init_weight(rng, channels, channels), zeros_param({channels})};
}

Tensor linear_mixer(const Tensor& tokens, const LinearMixerParams& params) {
  const Tensor by_feature = permute10(tokens);  // [.., D, C]
  return permute10(add(matmul(by_feature, params.weight), params.bias));
}

MlpMixerParams make_mlp_mixer(Rng& rng, std::size_t channels, std::size_t hidden) {
  return {init_weight(rng, channels, hidden), zeros_param({hidden}),
          init_weight(rng, hidden, channels), zeros_param({channels})};
}

Tensor mlp_mixer(const Tensor& tokens, const MlpMixerParams& params) {
  const Tensor by_feature = permute10(tokens);
  const Tensor hidden = relu(add(matmul(by_feature, params.w1), params.b1));
  return permute10(add(matmul(hidden, params.w2), params.b2));
}

// ---------------------------------------------------------------------------

FfnParams make_ffn(Rng& rng, std::size_t token_dim, std::size_t hidden) {
  return {init_weight(rng, token_dim, hidden), zeros_param({hidden}),
          init_weight(rng, hidden, token_dim), zeros_param({token_dim})};
}

Tensor feed_forward(const Tensor& tokens, const FfnParams& params) {
  const Tensor hidden = relu(add(matmul(tokens, params.w1), params.b1));
  return add(matmul(hidden, params.w2), params.b2);
}

LayerNormParams make_layer_norm(std::size_t token_dim) {
  return {Tensor::full({token_dim}, 1.0, true), Tensor::zeros({token_dim}, true), 1e-5};
}

Tensor layer_norm(const Tensor& tokens, const LayerNormParams& params) {
  RowStats stats = rowwise_mean_std(tokens, params.eps);
  const Tensor z = div_rows(sub_rows(tokens, stats.mean), stats.std);
  return add(mul(z, params.gain), params.bias);
}

Tensor encoder_block(const Tensor& tokens, const EncoderBlockParams& params,
                     std::vector<Tensor>* attention_out) {
  if (tokens.dim(-1) != params.ffn.w1.dim(0)) {
    throw ShapeError("encoder block: token width " + std::to_string(tokens.dim(-1)) +
                     " does not match block width " + std::to_string(params.ffn.w1.dim(0)));
  }
  Tensor x1;
  if (const auto* mha = std::get_if<MhaParams>(&params.mixer)) {
    x1 = add(tokens, cross_variable_attention(tokens, *mha, attention_out));
  } else if (const auto* lin = std::get_if<LinearMixerParams>(&params.mixer)) {
    x1 = add(tokens, linear_mixer(tokens, *lin));
  } else if (const auto* mlp = std::get_if<MlpMixerParams>(&params.mixer)) {
    x1 = add(tokens, mlp_mixer(tokens, *mlp));
  } else {
    x1 = tokens;
  }
  x1 = layer_norm(x1, params.norm1);
  return layer_norm(add(x1, feed_forward(x1, params.ffn)), params.norm2);
}

// ---------------------------------------------------------------------------

AffineParams make_affine(Rng& rng, std::size_t in, std::size_t out) {
  return {init_weight(rng, in, out), zeros_param({out})};
}

namespace {
Tensor affine(const Tensor& x, const AffineParams& p, const char* what) {
  if (x.rank() < 2 || x.dim(-1) != p.weight.dim(0)) {
    throw ShapeError(std::string(what) + ": input " + to_string(x.shape()) +
                     " does not match weight " + to_string(p.weight.shape()));
  }
  return add(matmul(x, p.weight), p.bias);
}
}  // namespace

Tensor projection_head(const Tensor& encoded, const ProjectionParams& params) {
  return permute10(affine(encoded, params, "projection_head"));
}

Tensor linear_trend(const Tensor& normalized, const LinearTrendParams& params) {
  return permute10(affine(permute10(normalized), params, "linear_trend"));
}

Tensor optional_embedding(const Tensor& tokens, const EmbeddingParams& params, bool enabled) {
  if (!enabled) throw ConfigError("embedding invoked while add_embedding is disabled");
  return affine(tokens, params, "embedding");
}

// ---------------------------------------------------------------------------

void append_params(const std::string& prefix, const RevInParams& p, ParamList& out) {
  out.push_back({prefix + ".alpha", p.alpha});
  out.push_back({prefix + ".beta", p.beta});
}

void append_params(const std::string& prefix, const MixerParams& p, ParamList& out) {
  if (const auto* mha = std::get_if<MhaParams>(&p)) {
    for (std::size_t h = 0; h < mha->heads; ++h) {
      const std::string head = prefix + ".head" + std::to_string(h);
      out.push_back({head + ".wq", mha->wq[h]});
      out.push_back({head + ".wk", mha->wk[h]});
      out.push_back({head + ".wv", mha->wv[h]});
      out.push_back({head + ".wo", mha->wo[h]});
    }
  } else if (const auto* lin = std::get_if<LinearMixerParams>(&p)) {
    out.push_back({prefix + ".weight", lin->weight});
    out.push_back({prefix + ".bias", lin->bias});
  } else if (const auto* mlp = std::get_if<MlpMixerParams>(&p)) {
    out.push_back({prefix + ".w1", mlp->w1});
    out.push_back({prefix + ".b1", mlp->b1});
    out.push_back({prefix + ".w2", mlp->w2});
    out.push_back({prefix + ".b2", mlp->b2});
  }
}

void append_params(const std::string& prefix, const FfnParams& p, ParamList& out) {
  out.push_back({prefix + ".w1", p.w1});
  out.push_back({prefix + ".b1", p.b1});
  out.push_back({prefix + ".w2", p.w2});
  out.push_back({prefix + ".b2", p.b2});
}

void append_params(const std::string& prefix, const LayerNormParams& p, ParamList& out) {
  out.push_back({prefix + ".gain", p.gain});
  out.push_back({prefix + ".bias", p.bias});
}

void append_params(const std::string& prefix, const EncoderBlockParams& p, ParamList& out) {
  append_params(prefix + ".mixer", p.mixer, out);
  append_params(prefix + ".ffn", p.ffn, out);
  append_params(prefix + ".norm1", p.norm1, out);
  append_params(prefix + ".norm2", p.norm2, out);
}

void append_params(const std::string& prefix, const AffineParams& p, ParamList& out) {
  out.push_back({prefix + ".weight", p.weight});
  out.push_back({prefix + ".bias", p.bias});
}

}  // namespace pvclient::layers
