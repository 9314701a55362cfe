#include "pvclient/model.hpp"

#include "pvclient/error.hpp"

namespace pvclient::model {

using namespace pvclient::ad;
using namespace pvclient::layers;

void ModelConfig::validate() const {
  if (input_len < 2 || horizon == 0 || channels == 0 || num_blocks == 0 || heads == 0 ||
      d_model == 0) {
    throw ConfigError("model config: L >= 2 and T, C, blocks, heads, d_model must be positive");
  }
  if (d_model % heads != 0) {
    throw ConfigError("model config: d_model " + std::to_string(d_model) +
                      " is not divisible by " + std::to_string(heads) + " heads");
  }
  if (target_channel >= channels || radiation_channel >= channels) {
    throw ConfigError("model config: target/radiation channel out of range");
  }
  if (target_channel == radiation_channel) {
    throw ConfigError("model config: target and radiation channel must differ");
  }
}

const char* to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::Attention: return "attention";
    case AttentionKind::LinearMixer: return "linear";
    case AttentionKind::MlpMixer: return "mlp";
    case AttentionKind::NoAttention: return "none";
  }
  return "?";
}

const char* to_string(OutputMode mode) {
  switch (mode) {
    case OutputMode::PvDim: return "pv";
    case OutputMode::RadiationDim: return "radiation";
    case OutputMode::SumFixed: return "sum-fixed";
    case OutputMode::SumLearnable: return "sum-learnable";
  }
  return "?";
}

AttentionKind parse_attention_kind(const std::string& text) {
  for (auto kind : {AttentionKind::Attention, AttentionKind::LinearMixer, AttentionKind::MlpMixer,
                    AttentionKind::NoAttention}) {
    if (text == to_string(kind)) return kind;
  }
  throw ConfigError("unknown attention kind '" + text + "'");
}

OutputMode parse_output_mode(const std::string& text) {
  for (auto mode : {OutputMode::PvDim, OutputMode::RadiationDim, OutputMode::SumFixed,
                    OutputMode::SumLearnable}) {
    if (text == to_string(mode)) return mode;
  }
  throw ConfigError("unknown output mode '" + text + "'");
}

namespace {

bool is_sum(OutputMode mode) {
  return mode == OutputMode::SumFixed || mode == OutputMode::SumLearnable;
}

std::size_t token_width(const ModelConfig& cfg, const VariantFlags& flags) {
  return flags.add_embedding ? cfg.d_model : cfg.input_len;
}

}  // namespace

PvClient::PvClient(ModelConfig cfg, VariantFlags flags, std::uint64_t seed)
    : cfg_(cfg), flags_(flags) {
  cfg_.validate();
  Rng rng(seed);
  const std::size_t width = token_width(cfg_, flags_);

  if (flags_.use_revin) revin_ = make_revin(cfg_.channels);
  if (flags_.add_embedding) embedding_ = make_affine(rng, cfg_.input_len, cfg_.d_model);
  for (std::size_t b = 0; b < cfg_.num_blocks; ++b) {
    EncoderBlockParams block;
    switch (flags_.attention) {
      case AttentionKind::Attention:
        block.mixer = make_mha(rng, width, cfg_.heads, cfg_.d_head());
        break;
      case AttentionKind::LinearMixer:
        block.mixer = make_linear_mixer(rng, cfg_.channels);
        break;
      case AttentionKind::MlpMixer:
        block.mixer = make_mlp_mixer(rng, cfg_.channels, cfg_.d_model);
        break;
      case AttentionKind::NoAttention:
        block.mixer = NoMixer{};
        break;
    }
    block.ffn = make_ffn(rng, width, cfg_.d_model);
    block.norm1 = make_layer_norm(width);
    block.norm2 = make_layer_norm(width);
    blocks_.push_back(std::move(block));
  }
  projection_ = make_affine(rng, width, cfg_.horizon);
  if (flags_.use_linear) linear_ = make_affine(rng, cfg_.input_len, cfg_.horizon);

  w_trans_ = Tensor::scalar(1.0, true);
  if (flags_.use_linear) w_lin_ = Tensor::scalar(1.0, true);
  sum_weights_ = Tensor::from({2, 1}, {flags_.sum_weights[0], flags_.sum_weights[1]},
                              flags_.output_mode == OutputMode::SumLearnable);
}

std::vector<std::size_t> PvClient::output_channels() const {
  switch (flags_.output_mode) {
    case OutputMode::PvDim: return {cfg_.target_channel};
    case OutputMode::RadiationDim: return {cfg_.radiation_channel};
    default: return {cfg_.target_channel, cfg_.radiation_channel};
  }
}

Prediction PvClient::forward(const Tensor& history, bool keep_attention) const {
  const bool batched = history.rank() == 3;
  if ((history.rank() != 2 && !batched) || history.dim(-2) != cfg_.input_len ||
      history.dim(-1) != cfg_.channels) {
    throw ShapeError("forward: input " + ad::to_string(history.shape()) + " does not match L=" +
                     std::to_string(cfg_.input_len) + ", C=" + std::to_string(cfg_.channels));
  }
  Prediction pred;

  Tensor normalized = history;
  if (flags_.use_revin) {
    RevInResult r = revin_normalize(history, *revin_);
    normalized = std::move(r.normalized);
    pred.revin = std::move(r.state);
  }

  Tensor tokens = permute10(normalized);  // [C x L]
  if (flags_.add_embedding) tokens = optional_embedding(tokens, *embedding_, true);
  for (const auto& block : blocks_) {
    tokens = encoder_block(tokens, block, keep_attention ? &pred.attention : nullptr);
  }
  pred.f_trans = projection_head(tokens, projection_);

  Tensor combined = mul(pred.f_trans, w_trans_);
  if (flags_.use_linear) {
    pred.f_lin = linear_trend(normalized, *linear_);
    combined = add(combined, mul(pred.f_lin, w_lin_));
  } else {
    pred.f_lin = Tensor::zeros(pred.f_trans.shape());
  }
  pred.combined = combined;

  const std::vector<std::size_t> channels = output_channels();
  Tensor selected = take_last(combined, channels);  // [T x K]
  if (flags_.use_revin) selected = revin_denormalize(selected, *revin_, pred.revin, channels);

  Shape series_shape = selected.shape();
  series_shape.pop_back();
  if (is_sum(flags_.output_mode)) {
    pred.final = reshape(matmul(selected, sum_weights_), series_shape);
  } else {
    pred.final = reshape(selected, series_shape);
  }
  return pred;
}

Decomposition PvClient::decompose(const Prediction& prediction) const {
  const std::vector<std::size_t> channels = output_channels();
  const std::size_t horizon = cfg_.horizon;
  const std::size_t width = cfg_.channels;
  const std::size_t batch = prediction.f_trans.rank() == 3 ? prediction.f_trans.dim(0) : 1;
  const double wt = w_trans_.item();
  const double wl = flags_.use_linear ? w_lin_.item() : 0.0;
  const auto ft = prediction.f_trans.data();
  const auto fl = prediction.f_lin.data();

  Decomposition out;
  out.trend.assign(batch * horizon, 0.0);
  out.detail.assign(batch * horizon, 0.0);
  for (std::size_t k = 0; k < channels.size(); ++k) {
    const std::size_t c = channels[k];
    const double weight = is_sum(flags_.output_mode) ? sum_weights_.at(k) : 1.0;
    for (std::size_t b = 0; b < batch; ++b) {
      double gain = 1.0;
      double offset = 0.0;
      if (flags_.use_revin) {
        const double alpha = revin_->alpha.at(c);
        const double beta = revin_->beta.at(c);
        const double sigma = prediction.revin.sigma.at(b * width + c);
        const double mu = prediction.revin.mean.at(b * width + c);
        gain = sigma / alpha;
        offset = mu - beta * gain;
      }
      for (std::size_t t = 0; t < horizon; ++t) {
        const std::size_t src = (b * horizon + t) * width + c;
        const double trend = wl * fl[src] * gain + offset;
        const double detail = wt * ft[src] * gain;
        out.trend[b * horizon + t] += weight * trend;
        out.detail[b * horizon + t] += weight * detail;
      }
    }
  }
  return out;
}

Decomposition PvClient::decompose(const Tensor& history) const {
  NoGradGuard guard;
  return decompose(forward(history));
}

ParamList PvClient::parameters() const {
  ParamList out;
  if (revin_) append_params("revin", *revin_, out);
  if (embedding_) append_params("embedding", *embedding_, out);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    append_params("block" + std::to_string(b), blocks_[b], out);
  }
  append_params("projection", projection_, out);
  if (linear_) append_params("linear", *linear_, out);
  out.push_back({"combine.w_trans", w_trans_});
  if (flags_.use_linear) out.push_back({"combine.w_lin", w_lin_});
  if (flags_.output_mode == OutputMode::SumLearnable) out.push_back({"output.sum_weights", sum_weights_});
  return out;
}

std::size_t PvClient::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

ParameterCount count_parameters(const ModelConfig& cfg, const VariantFlags& flags) {
  cfg.validate();
  ParameterCount count;
  auto item = [&](std::string name, std::size_t n) {
    count.items.emplace_back(std::move(name), n);
    count.total += n;
  };
  const std::size_t D = token_width(cfg, flags);
  const std::size_t L = cfg.input_len;
  const std::size_t T = cfg.horizon;
  const std::size_t C = cfg.channels;
  const std::size_t H = cfg.d_model;

  if (flags.use_revin) item("revin", 2 * C);
  if (flags.add_embedding) item("embedding", L * H + H);
  std::size_t mixer = 0;
  switch (flags.attention) {
    case AttentionKind::Attention: mixer = 4 * D * cfg.heads * cfg.d_head(); break;
    case AttentionKind::LinearMixer: mixer = C * C + C; break;
    case AttentionKind::MlpMixer: mixer = C * H + H + H * C + C; break;
    case AttentionKind::NoAttention: mixer = 0; break;
  }
  const std::size_t ffn = D * H + H + H * D + D;
  const std::size_t norms = 4 * D;
  item("encoder_blocks", cfg.num_blocks * (mixer + ffn + norms));
  item("projection", D * T + T);
  if (flags.use_linear) item("linear_trend", L * T + T);
  item("combine", flags.use_linear ? 2 : 1);
  if (flags.output_mode == OutputMode::SumLearnable) item("sum_weights", 2);
  return count;
}

}  // namespace pvclient::model
