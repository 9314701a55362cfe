#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pvclient/layers.hpp"
#include "pvclient/tensor.hpp"

namespace pvclient::model {

using ad::Tensor;

struct ModelConfig {
  std::size_t input_len = 192;  // L
  std::size_t horizon = 96;     // T
  std::size_t channels = 6;     // C
  std::size_t num_blocks = 2;
  std::size_t d_model = 128;  // attention inner width, FFN hidden width, embedding width
  std::size_t heads = 8;
  std::size_t target_channel = 0;
  std::size_t radiation_channel = 1;

  std::size_t d_head() const { return d_model / heads; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class AttentionKind { Attention, LinearMixer, MlpMixer, NoAttention };
enum class OutputMode { PvDim, RadiationDim, SumFixed, SumLearnable };

const char* to_string(AttentionKind kind);
const char* to_string(OutputMode mode);
AttentionKind parse_attention_kind(const std::string& text);
OutputMode parse_output_mode(const std::string& text);

struct VariantFlags {
  bool use_linear = true;
  bool use_revin = true;
  bool add_embedding = false;
  AttentionKind attention = AttentionKind::Attention;
  OutputMode output_mode = OutputMode::PvDim;
  std::array<double, 2> sum_weights{0.5, 0.5};  // (pv column, radiation column)

  bool operator==(const VariantFlags&) const = default;
};

struct Prediction {
  Tensor f_trans;   // [T x C]
  Tensor f_lin;     // [T x C]; zeros when the linear module is ablated
  Tensor combined;  // [T x C]
  Tensor final;     // [T], on the input's scale
  layers::RevInState revin;
  std::vector<Tensor> attention;  // per block and head, when requested
};
// All Prediction tensors carry a leading batch dimension when the input does.

struct Decomposition {
  std::vector<double> trend;   // linear module share, carries the level offset
  std::vector<double> detail;  // attention branch share
};

struct ParameterCount {
  std::vector<std::pair<std::string, std::size_t>> items;
  std::size_t total = 0;
};

class PvClient {
 public:
  PvClient(ModelConfig cfg, VariantFlags flags, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const VariantFlags& flags() const { return flags_; }

  // H is [L x C] or [B x L x C].
  Prediction forward(const Tensor& history, bool keep_attention = false) const;
  // Split of prediction.final into trend + detail (batched: row-major [B x T]).
  Decomposition decompose(const Prediction& prediction) const;
  Decomposition decompose(const Tensor& history) const;

  // Learnable tensors in a stable order.
  layers::ParamList parameters() const;
  std::size_t parameter_count() const;

  // Structural access for tests and tools.
  const std::optional<layers::RevInParams>& revin() const { return revin_; }
  std::optional<layers::RevInParams>& revin() { return revin_; }
  const std::vector<layers::EncoderBlockParams>& blocks() const { return blocks_; }
  std::vector<layers::EncoderBlockParams>& blocks() { return blocks_; }
  layers::ProjectionParams& projection() { return projection_; }
  std::optional<layers::LinearTrendParams>& linear() { return linear_; }
  std::optional<layers::EmbeddingParams>& embedding() { return embedding_; }
  Tensor& w_trans() { return w_trans_; }
  Tensor& w_lin() { return w_lin_; }  // undefined when use_linear is false
  Tensor& sum_weights() { return sum_weights_; }

 private:
  std::vector<std::size_t> output_channels() const;

  ModelConfig cfg_;
  VariantFlags flags_;
  std::optional<layers::RevInParams> revin_;
  std::optional<layers::EmbeddingParams> embedding_;
  std::vector<layers::EncoderBlockParams> blocks_;
  layers::ProjectionParams projection_;
  std::optional<layers::LinearTrendParams> linear_;
  Tensor w_trans_;
  Tensor w_lin_;
  Tensor sum_weights_;  // [2 x 1]
};

// Closed-form count of learnable scalars, itemized per submodule.
ParameterCount count_parameters(const ModelConfig& cfg, const VariantFlags& flags);

}  // namespace pvclient::model
