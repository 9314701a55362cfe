#pragma once

// Original-scale metrics, reference baselines, and the experiment grids.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pvclient/data.hpp"
#include "pvclient/model.hpp"
#include "pvclient/training.hpp"

namespace pvclient::eval {

struct MetricReport {
  double mse = 0.0;  // original units squared
  double acc = 0.0;  // 1 - RMSE / Cap
  std::size_t n = 0;
  double cap = 0.0;
};

// Acc = 1 - sqrt(sum (G_i - P_i)^2) / (Cap * sqrt(n))
double accuracy(std::span<const double> actual, std::span<const double> forecast, double cap);
double mse_original(std::span<const double> actual, std::span<const double> forecast);
MetricReport score(std::span<const double> actual, std::span<const double> forecast, double cap);

// Forecast for step t+k is the PV value one period earlier (t+k-period); steps
// whose lagged value is not inside the window repeat the last observation.
std::vector<double> persistence_baseline(const data::WindowSample& window, std::size_t channels,
                                         std::size_t pv_channel = data::kPvChannel,
                                         std::size_t period = data::kStepsPerDay);

// Ridge regression from the flattened window (L*C features) to the T targets.
class LinearRegression {
 public:
  static LinearRegression fit(std::span<const data::WindowSample> windows, double lambda = 1e-6);

  std::vector<double> predict(const data::WindowSample& window) const;
  std::size_t features() const { return features_; }
  std::size_t outputs() const { return outputs_; }
  // Row-major [features x outputs].
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<double>& intercept() const { return intercept_; }

 private:
  std::size_t features_ = 0;
  std::size_t outputs_ = 0;
  std::vector<double> weights_;
  std::vector<double> intercept_;
};

// Scored series of one model over day-aligned test windows, in original units.
struct ForecastReport {
  std::vector<std::int64_t> timestamps;
  std::vector<double> actual;
  std::vector<double> forecast;
  std::vector<double> trend;   // trend + detail == forecast
  std::vector<double> detail;
  MetricReport metrics;
};

// Windows are on the standardized scale; predictions are mapped back with the
// PV channel's standardizer parameters before scoring.
ForecastReport evaluate_model(const model::PvClient& model,
                              std::span<const data::WindowSample> windows,
                              const data::Standardizer& standardizer,
                              const data::SeriesFrame& original);

template <typename Forecaster>
ForecastReport evaluate_forecaster(Forecaster&& forecaster,
                                   std::span<const data::WindowSample> windows,
                                   const data::Standardizer& standardizer,
                                   const data::SeriesFrame& original);

void export_plot_data(const ForecastReport& report, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Experiment harness

// Original frame, its contiguous split, and the train-only standardization.
struct Benchmark {
  data::SeriesFrame original;
  data::SeriesFrame standardized;
  data::SplitPlan split;
  data::Standardizer standardizer;

  static Benchmark prepare(data::SeriesFrame frame, double train_fraction = 0.8,
                           double val_fraction = 0.1);

  // Stride-1 windows with targets inside the training range.
  std::vector<data::WindowSample> train_windows(std::size_t length, std::size_t horizon,
                                                std::size_t stride = 1) const;
  // Day-aligned, non-overlapping windows with targets inside the test range.
  std::vector<data::WindowSample> test_windows(std::size_t length, std::size_t horizon) const;
};

enum class GridKind { Ablation, Attention, History, OutputMode };
const char* to_string(GridKind kind);
GridKind parse_grid_kind(const std::string& text);

struct GridCell {
  std::string label;
  model::ModelConfig config;
  model::VariantFlags flags;
  MetricReport metrics;
  std::vector<double> epoch_loss;
};

struct ExperimentGrid {
  GridKind kind = GridKind::Ablation;
  std::vector<GridCell> cells;
};

struct GridOptions {
  model::ModelConfig base_config{};
  model::VariantFlags base_flags{};
  train::TrainConfig train{};
  std::uint64_t seed = 42;  // model initialization
  std::size_t train_stride = 1;
};

// The (label, config, flags) cells of a grid, in report order.
std::vector<GridCell> grid_cells(GridKind kind, const GridOptions& options);

struct TrainedCell {
  GridCell cell;
  model::PvClient model;
  ForecastReport report;
};
TrainedCell train_and_evaluate(GridCell cell, const Benchmark& bench, const GridOptions& options);

ExperimentGrid run_grid(GridKind kind, const Benchmark& bench, const GridOptions& options);

// label,mse,acc,n with full-precision numbers.
void write_grid_csv(const ExperimentGrid& grid, const std::filesystem::path& path);
std::string grid_csv(const ExperimentGrid& grid);
// JSON summary with values rounded to 3 decimals.
std::string grid_summary(const ExperimentGrid& grid);

// ---------------------------------------------------------------------------

template <typename Forecaster>
ForecastReport evaluate_forecaster(Forecaster&& forecaster,
                                   std::span<const data::WindowSample> windows,
                                   const data::Standardizer& standardizer,
                                   const data::SeriesFrame& original) {
  ForecastReport report;
  for (const auto& w : windows) {
    const std::vector<double> z = forecaster(w);
    for (std::size_t k = 0; k < w.horizon; ++k) {
      const std::size_t row = w.target_index() + k;
      const double p = standardizer.inverse(z[k], data::kPvChannel);
      report.timestamps.push_back(original.timestamps[row]);
      report.actual.push_back(original.at(row, data::kPvChannel));
      report.forecast.push_back(p);
      report.trend.push_back(p);
      report.detail.push_back(0.0);
    }
  }
  report.metrics = score(report.actual, report.forecast, original.capacity);
  return report;
}

}  // namespace pvclient::eval
