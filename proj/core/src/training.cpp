#include "pvclient/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <random>

#include "pvclient/error.hpp"

namespace pvclient::train {

using namespace pvclient::ad;
using nlohmann::json;

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || batch_size == 0) {
    throw ConfigError("train config: learning rate must be >= 0 and batch size positive");
  }
  if (clip_norm && !(*clip_norm > 0.0)) throw ConfigError("train config: clip norm must be positive");
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) {
    throw ShapeError("mse_loss: prediction " + to_string(prediction.shape()) + " vs target " +
                     to_string(target.shape()));
  }
  const Tensor diff = sub(prediction, target);
  return mean(mul(diff, diff));
}

AdamState AdamState::for_params(std::span<const Tensor> params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.numel(), 0.0);
    s.v.emplace_back(p.numel(), 0.0);
  }
  return s;
}

void adam_step(std::span<Tensor> params, AdamState& state, double lr, double grad_scale) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: state holds " + std::to_string(state.m.size()) +
                     " buffers for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel() || state.v[i].size() != params[i].numel()) {
      throw ShapeError("adam_step: moment buffer " + std::to_string(i) + " does not match " +
                       to_string(params[i].shape()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].mutable_data();
    const auto grad = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j] * grad_scale;
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      values[j] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

Tensor stack_inputs(std::span<const data::WindowSample* const> windows, std::size_t channels) {
  if (windows.empty()) throw DataError("cannot stack an empty batch");
  const std::size_t length = windows.front()->length;
  std::vector<double> values;
  values.reserve(windows.size() * length * channels);
  for (const auto* w : windows) {
    if (w->inputs.size() != length * channels) throw ShapeError("window input size mismatch");
    values.insert(values.end(), w->inputs.begin(), w->inputs.end());
  }
  return Tensor::from({windows.size(), length, channels}, std::move(values));
}

Tensor stack_targets(std::span<const data::WindowSample* const> windows) {
  if (windows.empty()) throw DataError("cannot stack an empty batch");
  const std::size_t horizon = windows.front()->horizon;
  std::vector<double> values;
  values.reserve(windows.size() * horizon);
  for (const auto* w : windows) {
    if (w->target.size() != horizon) throw ShapeError("window target size mismatch");
    values.insert(values.end(), w->target.begin(), w->target.end());
  }
  return Tensor::from({windows.size(), horizon}, std::move(values));
}

double evaluate_loss(const model::PvClient& model, std::span<const data::WindowSample> windows,
                     std::size_t batch_size) {
  if (windows.empty()) throw DataError("evaluate_loss: no windows");
  NoGradGuard guard;
  double total = 0.0;
  std::size_t count = 0;
  std::vector<const data::WindowSample*> batch;
  for (std::size_t start = 0; start < windows.size(); start += batch_size) {
    const std::size_t end = std::min(windows.size(), start + batch_size);
    batch.clear();
    for (std::size_t i = start; i < end; ++i) batch.push_back(&windows[i]);
    const Tensor h = stack_inputs(batch, model.config().channels);
    const Tensor g = stack_targets(batch);
    const auto pred = model.forward(h);
    const auto p = pred.final.data();
    const auto t = g.data();
    for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] - t[i]) * (p[i] - t[i]);
    count += p.size();
  }
  return total / static_cast<double>(count);
}

TrainLog train(model::PvClient& model, std::span<const data::WindowSample> windows,
               const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (windows.empty()) throw DataError("train: empty window set");

  std::vector<Tensor> params;
  for (auto& p : model.parameters()) params.push_back(p.tensor);
  AdamState state = AdamState::for_params(params);

  TrainLog log;
  log.initial_loss = evaluate_loss(model, windows);

  std::mt19937_64 shuffle_rng(cfg.seed);
  std::vector<std::size_t> order(windows.size());
  std::vector<const data::WindowSample*> batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(&windows[order[i]]);
      const Tensor h = stack_inputs(batch, model.config().channels);
      const Tensor g = stack_targets(batch);

      for (auto& p : params) p.zero_grad();
      const Tensor loss = mse_loss(model.forward(h).final, g);
      backward(loss);

      double grad_scale = 1.0;
      if (cfg.clip_norm) {
        double sq = 0.0;
        for (const auto& p : params) {
          for (double v : p.grad()) sq += v * v;
        }
        const double norm = std::sqrt(sq);
        if (norm > *cfg.clip_norm) grad_scale = *cfg.clip_norm / norm;
      }

      adam_step(params, state, cfg.learning_rate, grad_scale);
      epoch_total += loss.item();
      ++batches;
      ++log.steps;
    }
    const double epoch_loss = epoch_total / static_cast<double>(batches);
    log.epoch_loss.push_back(epoch_loss);
    if (hooks.track_full_loss) log.final_loss.push_back(evaluate_loss(model, windows));
    if (hooks.on_epoch) hooks.on_epoch(epoch, epoch_loss);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

constexpr char kMagic[4] = {'P', 'V', 'C', 'L'};

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const char* what) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

json config_to_json(const model::ModelConfig& c) {
  return {{"input_len", c.input_len},   {"horizon", c.horizon},
          {"channels", c.channels},     {"num_blocks", c.num_blocks},
          {"d_model", c.d_model},       {"heads", c.heads},
          {"target_channel", c.target_channel}, {"radiation_channel", c.radiation_channel}};
}

model::ModelConfig config_from_json(const json& j) {
  model::ModelConfig c;
  c.input_len = j.at("input_len").get<std::size_t>();
  c.horizon = j.at("horizon").get<std::size_t>();
  c.channels = j.at("channels").get<std::size_t>();
  c.num_blocks = j.at("num_blocks").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.target_channel = j.at("target_channel").get<std::size_t>();
  c.radiation_channel = j.at("radiation_channel").get<std::size_t>();
  return c;
}

json flags_to_json(const model::VariantFlags& f) {
  return {{"use_linear", f.use_linear},
          {"use_revin", f.use_revin},
          {"add_embedding", f.add_embedding},
          {"attention", model::to_string(f.attention)},
          {"output_mode", model::to_string(f.output_mode)},
          {"sum_weights", {f.sum_weights[0], f.sum_weights[1]}}};
}

model::VariantFlags flags_from_json(const json& j) {
  model::VariantFlags f;
  f.use_linear = j.at("use_linear").get<bool>();
  f.use_revin = j.at("use_revin").get<bool>();
  f.add_embedding = j.at("add_embedding").get<bool>();
  f.attention = model::parse_attention_kind(j.at("attention").get<std::string>());
  f.output_mode = model::parse_output_mode(j.at("output_mode").get<std::string>());
  f.sum_weights = {j.at("sum_weights").at(0).get<double>(), j.at("sum_weights").at(1).get<double>()};
  return f;
}

struct TableEntry {
  std::string name;
  Shape shape;
};

struct ParsedFile {
  CheckpointMeta meta;
  std::vector<TableEntry> table;
  std::vector<std::vector<double>> values;
};

ParsedFile parse_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw CheckpointError("bad magic header in " + path.string() +
                          ": not a checkpoint or unsupported version");
  }
  const auto version = read_le<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = read_le<std::uint64_t>(in, "header length");
  if (header_len > (std::uint64_t{1} << 32)) throw CheckpointError("implausible header length");
  std::string header(header_len, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(header_len))) {
    throw CheckpointError("truncated checkpoint header");
  }

  ParsedFile parsed;
  try {
    const json j = json::parse(header);
    parsed.meta.config = config_from_json(j.at("config"));
    parsed.meta.flags = flags_from_json(j.at("flags"));
    parsed.meta.capacity = j.at("capacity").get<double>();
    parsed.meta.seed = j.at("seed").get<std::uint64_t>();
    if (!j.at("standardizer").is_null()) {
      parsed.meta.standardizer = data::Standardizer(
          j.at("standardizer").at("mean").get<std::vector<double>>(),
          j.at("standardizer").at("std").get<std::vector<double>>());
    }
    for (const auto& t : j.at("tensors")) {
      parsed.table.push_back({t.at("name").get<std::string>(), t.at("shape").get<Shape>()});
    }
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }
  for (const auto& entry : parsed.table) {
    std::vector<double> values(numel(entry.shape));
    for (double& v : values) v = read_le<double>(in, entry.name.c_str());
    parsed.values.push_back(std::move(values));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw CheckpointError("trailing bytes after tensor data in " + path.string());
  }
  return parsed;
}

void fill_model(const ParsedFile& parsed, model::PvClient& model) {
  auto params = model.parameters();
  const std::size_t n = std::min(params.size(), parsed.table.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& entry = parsed.table[i];
    if (entry.name != params[i].name || entry.shape != params[i].tensor.shape()) {
      throw CheckpointError("shape table mismatch at tensor '" + entry.name + "' " +
                            to_string(entry.shape) + ": model expects '" + params[i].name + "' " +
                            to_string(params[i].tensor.shape()));
    }
  }
  if (params.size() != parsed.table.size()) {
    const std::string first = params.size() > parsed.table.size() ? params[n].name : parsed.table[n].name;
    throw CheckpointError("shape table mismatch at tensor '" + first + "': table has " +
                          std::to_string(parsed.table.size()) + " tensors, model has " +
                          std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto dst = params[i].tensor.mutable_data();
    std::copy(parsed.values[i].begin(), parsed.values[i].end(), dst.begin());
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const model::PvClient& model,
                     const CheckpointMeta& meta) {
  json j;
  j["format"] = "pvclient-checkpoint";
  j["config"] = config_to_json(model.config());
  j["flags"] = flags_to_json(model.flags());
  j["capacity"] = meta.capacity;
  j["seed"] = meta.seed;
  if (meta.standardizer && meta.standardizer->fitted()) {
    j["standardizer"] = {{"mean", meta.standardizer->mean()}, {"std", meta.standardizer->stddev()}};
  } else {
    j["standardizer"] = nullptr;
  }
  const auto params = model.parameters();
  json table = json::array();
  for (const auto& p : params) table.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  j["tensors"] = std::move(table);
  const std::string header = j.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  write_le<std::uint32_t>(out, kCheckpointVersion);
  write_le<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& p : params) {
    for (double v : p.tensor.data()) write_le<double>(out, v);
  }
  if (!out) throw CheckpointError("write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  ParsedFile parsed = parse_file(path);
  model::PvClient model(parsed.meta.config, parsed.meta.flags, parsed.meta.seed);
  fill_model(parsed, model);
  return {std::move(parsed.meta), std::move(model)};
}

CheckpointMeta load_checkpoint_into(const std::filesystem::path& path, model::PvClient& model) {
  ParsedFile parsed = parse_file(path);
  fill_model(parsed, model);
  return std::move(parsed.meta);
}

}  // namespace pvclient::train
