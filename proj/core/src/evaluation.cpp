#include "pvclient/evaluation.hpp"

#include <Eigen/Dense>
#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "pvclient/error.hpp"

namespace pvclient::eval {

namespace {

void check_pair(std::span<const double> actual, std::span<const double> forecast) {
  if (actual.size() != forecast.size()) {
    throw ShapeError("metric length mismatch: " + std::to_string(actual.size()) + " actual vs " +
                     std::to_string(forecast.size()) + " forecast values");
  }
  if (actual.empty()) throw ShapeError("metric over an empty series");
}

double sum_squared_error(std::span<const double> actual, std::span<const double> forecast) {
  double total = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double e = actual[i] - forecast[i];
    total += e * e;
  }
  return total;
}

std::string full_precision(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

}  // namespace

double accuracy(std::span<const double> actual, std::span<const double> forecast, double cap) {
  check_pair(actual, forecast);
  if (!(cap > 0.0)) throw ConfigError("accuracy: capacity must be positive");
  const double n = static_cast<double>(actual.size());
  return 1.0 - std::sqrt(sum_squared_error(actual, forecast)) / (cap * std::sqrt(n));
}

double mse_original(std::span<const double> actual, std::span<const double> forecast) {
  check_pair(actual, forecast);
  return sum_squared_error(actual, forecast) / static_cast<double>(actual.size());
}

MetricReport score(std::span<const double> actual, std::span<const double> forecast, double cap) {
  return {mse_original(actual, forecast), accuracy(actual, forecast, cap), actual.size(), cap};
}

std::vector<double> persistence_baseline(const data::WindowSample& window, std::size_t channels,
                                         std::size_t pv_channel, std::size_t period) {
  const std::size_t length = window.length;
  const auto pv = [&](std::size_t row) { return window.inputs[row * channels + pv_channel]; };
  const double last = pv(length - 1);
  std::vector<double> out(window.horizon);
  for (std::size_t k = 1; k <= window.horizon; ++k) {
    // Row of time t + k - period inside the history block (t = row length - 1).
    const bool inside = k <= period && length - 1 + k >= period;
    out[k - 1] = inside ? pv(length - 1 + k - period) : last;
  }
  return out;
}

// ---------------------------------------------------------------------------

LinearRegression LinearRegression::fit(std::span<const data::WindowSample> windows, double lambda) {
  if (!(lambda > 0.0)) throw ConfigError("linear regression: ridge lambda must be positive");
  if (windows.empty()) throw DataError("linear regression: no training windows");
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const std::size_t n = windows.size();
  const std::size_t f = windows.front().inputs.size();
  const std::size_t t = windows.front().target.size();

  Mat x(n, f);
  Mat y(n, t);
  for (std::size_t i = 0; i < n; ++i) {
    x.row(i) = Eigen::Map<const Eigen::RowVectorXd>(windows[i].inputs.data(), f);
    y.row(i) = Eigen::Map<const Eigen::RowVectorXd>(windows[i].target.data(), t);
  }
  const Eigen::RowVectorXd x_mean = x.colwise().mean();
  const Eigen::RowVectorXd y_mean = y.colwise().mean();
  x.rowwise() -= x_mean;
  y.rowwise() -= y_mean;

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(f, f);
  gram.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
  gram = gram.selfadjointView<Eigen::Lower>();
  gram.diagonal().array() += lambda;
  const Eigen::MatrixXd rhs = x.transpose() * y;
  const Eigen::MatrixXd w = gram.ldlt().solve(rhs);

  LinearRegression model;
  model.features_ = f;
  model.outputs_ = t;
  model.weights_.resize(f * t);
  for (std::size_t i = 0; i < f; ++i) {
    for (std::size_t j = 0; j < t; ++j) model.weights_[i * t + j] = w(i, j);
  }
  const Eigen::RowVectorXd b = y_mean - x_mean * w;
  model.intercept_.assign(b.data(), b.data() + t);
  return model;
}

std::vector<double> LinearRegression::predict(const data::WindowSample& window) const {
  if (window.inputs.size() != features_) throw ShapeError("linear regression: feature count mismatch");
  std::vector<double> out = intercept_;
  for (std::size_t i = 0; i < features_; ++i) {
    const double xi = window.inputs[i];
    const double* row = weights_.data() + i * outputs_;
    for (std::size_t j = 0; j < outputs_; ++j) out[j] += xi * row[j];
  }
  return out;
}

// ---------------------------------------------------------------------------

ForecastReport evaluate_model(const model::PvClient& model,
                              std::span<const data::WindowSample> windows,
                              const data::Standardizer& standardizer,
                              const data::SeriesFrame& original) {
  if (windows.empty()) throw DataError("evaluate_model: no windows");
  ad::NoGradGuard guard;
  const std::size_t pv = model.config().target_channel;
  const double scale = standardizer.stddev().at(pv);
  const double shift = standardizer.mean().at(pv);

  ForecastReport report;
  constexpr std::size_t kBatch = 64;
  std::vector<const data::WindowSample*> batch;
  for (std::size_t start = 0; start < windows.size(); start += kBatch) {
    const std::size_t end = std::min(windows.size(), start + kBatch);
    batch.clear();
    for (std::size_t i = start; i < end; ++i) batch.push_back(&windows[i]);
    const auto pred = model.forward(train::stack_inputs(batch, model.config().channels));
    const auto parts = model.decompose(pred);
    const auto final = pred.final.data();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& w = *batch[b];
      for (std::size_t k = 0; k < w.horizon; ++k) {
        const std::size_t idx = b * w.horizon + k;
        const std::size_t row = w.target_index() + k;
        report.timestamps.push_back(original.timestamps[row]);
        report.actual.push_back(original.at(row, pv));
        report.forecast.push_back(final[idx] * scale + shift);
        report.trend.push_back(parts.trend[idx] * scale + shift);
        report.detail.push_back(parts.detail[idx] * scale);
      }
    }
  }
  report.metrics = score(report.actual, report.forecast, original.capacity);
  return report;
}

void export_plot_data(const ForecastReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "timestamp,actual,forecast,trend_component,detail_component\n";
  for (std::size_t i = 0; i < report.forecast.size(); ++i) {
    out << data::format_timestamp(report.timestamps[i]) << ',' << full_precision(report.actual[i])
        << ',' << full_precision(report.forecast[i]) << ',' << full_precision(report.trend[i])
        << ',' << full_precision(report.detail[i]) << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------

Benchmark Benchmark::prepare(data::SeriesFrame frame, double train_fraction, double val_fraction) {
  Benchmark b;
  b.split = data::plan_split(frame.rows(), train_fraction, val_fraction);
  b.standardizer = data::Standardizer::fit(frame, 0, b.split.train_end);
  b.standardized = b.standardizer.apply(frame);
  b.original = std::move(frame);
  return b;
}

std::vector<data::WindowSample> Benchmark::train_windows(std::size_t length, std::size_t horizon,
                                                         std::size_t stride) const {
  if (split.train_end < length + horizon) {
    throw DataError("insufficient data: training range has " + std::to_string(split.train_end) +
                    " rows but L + T = " + std::to_string(length + horizon));
  }
  return data::make_windows_in_range(standardized, length, horizon, stride, 0, split.train_end);
}

std::vector<data::WindowSample> Benchmark::test_windows(std::size_t length,
                                                        std::size_t horizon) const {
  if (split.val_end < length) {
    throw DataError("insufficient data: test range starts at row " + std::to_string(split.val_end) +
                    " but L = " + std::to_string(length) + " history rows are needed");
  }
  return data::make_windows_in_range(standardized, length, horizon, data::kStepsPerDay,
                                     split.val_end, split.rows);
}

const char* to_string(GridKind kind) {
  switch (kind) {
    case GridKind::Ablation: return "ablation";
    case GridKind::Attention: return "attention";
    case GridKind::History: return "history";
    case GridKind::OutputMode: return "output-mode";
  }
  return "?";
}

GridKind parse_grid_kind(const std::string& text) {
  for (auto kind : {GridKind::Ablation, GridKind::Attention, GridKind::History, GridKind::OutputMode}) {
    if (text == to_string(kind)) return kind;
  }
  throw ConfigError("unknown grid '" + text + "'");
}

std::vector<GridCell> grid_cells(GridKind kind, const GridOptions& options) {
  using model::AttentionKind;
  using model::OutputMode;
  std::vector<GridCell> cells;
  auto cell = [&](std::string label, auto&& edit) {
    GridCell c{std::move(label), options.base_config, options.base_flags, {}, {}};
    edit(c);
    cells.push_back(std::move(c));
  };
  switch (kind) {
    case GridKind::Ablation:
      cell("full", [](GridCell&) {});
      cell("-Linear", [](GridCell& c) { c.flags.use_linear = false; });
      cell("-RevIN", [](GridCell& c) { c.flags.use_revin = false; });
      cell("+Embed", [](GridCell& c) { c.flags.add_embedding = true; });
      break;
    case GridKind::Attention:
      cell("Attention", [](GridCell& c) { c.flags.attention = AttentionKind::Attention; });
      cell("Linear", [](GridCell& c) { c.flags.attention = AttentionKind::LinearMixer; });
      cell("MLP", [](GridCell& c) { c.flags.attention = AttentionKind::MlpMixer; });
      cell("No Attention", [](GridCell& c) { c.flags.attention = AttentionKind::NoAttention; });
      break;
    case GridKind::History:
      for (std::size_t days : {1, 2, 4}) {
        const std::size_t length = days * data::kStepsPerDay;
        cell("L=" + std::to_string(length), [&](GridCell& c) { c.config.input_len = length; });
      }
      break;
    case GridKind::OutputMode:
      cell("PV dim", [](GridCell& c) { c.flags.output_mode = OutputMode::PvDim; });
      cell("Radiation dim", [](GridCell& c) { c.flags.output_mode = OutputMode::RadiationDim; });
      cell("Sum (fixed weights)", [](GridCell& c) { c.flags.output_mode = OutputMode::SumFixed; });
      cell("Sum (updatable weights)",
           [](GridCell& c) { c.flags.output_mode = OutputMode::SumLearnable; });
      break;
  }
  return cells;
}

TrainedCell train_and_evaluate(GridCell cell, const Benchmark& bench, const GridOptions& options) {
  const auto& cfg = cell.config;
  const auto train_set = bench.train_windows(cfg.input_len, cfg.horizon, options.train_stride);
  const auto test_set = bench.test_windows(cfg.input_len, cfg.horizon);
  model::PvClient model(cfg, cell.flags, options.seed);
  const auto log = train::train(model, train_set, options.train);
  cell.epoch_loss = log.epoch_loss;
  auto report = evaluate_model(model, test_set, bench.standardizer, bench.original);
  cell.metrics = report.metrics;
  return {std::move(cell), std::move(model), std::move(report)};
}

ExperimentGrid run_grid(GridKind kind, const Benchmark& bench, const GridOptions& options) {
  ExperimentGrid grid;
  grid.kind = kind;
  auto cells = grid_cells(kind, options);
  // Fail fast on data that cannot host the longest history.
  for (const auto& c : cells) {
    bench.test_windows(c.config.input_len, c.config.horizon);
    if (bench.split.train_end < c.config.input_len + c.config.horizon) {
      throw DataError("insufficient data: training range has " + std::to_string(bench.split.train_end) +
                      " rows but " + c.label + " needs L + T = " +
                      std::to_string(c.config.input_len + c.config.horizon));
    }
  }
  for (auto& c : cells) grid.cells.push_back(train_and_evaluate(std::move(c), bench, options).cell);
  return grid;
}

std::string grid_csv(const ExperimentGrid& grid) {
  std::ostringstream os;
  os << "label,mse,acc,n\n";
  for (const auto& c : grid.cells) {
    os << c.label << ',' << full_precision(c.metrics.mse) << ',' << full_precision(c.metrics.acc)
       << ',' << c.metrics.n << '\n';
  }
  return os.str();
}

void write_grid_csv(const ExperimentGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << grid_csv(grid);
  if (!out) throw DataError("write failed for " + path.string());
}

std::string grid_summary(const ExperimentGrid& grid) {
  nlohmann::ordered_json j;
  j["grid"] = to_string(grid.kind);
  auto rows = nlohmann::ordered_json::array();
  for (const auto& c : grid.cells) {
    nlohmann::ordered_json row;
    row["label"] = c.label;
    row["mse"] = round3(c.metrics.mse);
    row["acc"] = round3(c.metrics.acc);
    row["n"] = c.metrics.n;
    rows.push_back(std::move(row));
  }
  j["cells"] = std::move(rows);
  return j.dump(2);
}

}  // namespace pvclient::eval
