#pragma once

// Station series ingestion, standardization, windowing, and a seeded synthetic
// PV station.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pvclient::data {

inline constexpr std::int64_t kDefaultIntervalSeconds = 15 * 60;
inline constexpr std::size_t kStepsPerDay = 96;

// Exact CSV header; column order doubles as channel order.
inline const std::vector<std::string>& channel_names() {
  static const std::vector<std::string> names{"pv_power",  "radiation",  "temperature",
                                              "humidity",  "wind_speed", "surface_pressure"};
  return names;
}
inline constexpr std::size_t kPvChannel = 0;
inline constexpr std::size_t kRadiationChannel = 1;

// Seconds since 1970-01-01T00:00:00 of a naive local timestamp.
std::int64_t parse_timestamp(const std::string& text);
std::string format_timestamp(std::int64_t seconds);

struct SeriesFrame {
  std::vector<std::int64_t> timestamps;
  std::vector<std::string> channels;
  std::vector<double> values;  // row-major [rows x channels]
  std::int64_t interval_seconds = kDefaultIntervalSeconds;
  double capacity = 0.0;  // kW

  std::size_t rows() const { return timestamps.size(); }
  std::size_t width() const { return channels.size(); }
  double at(std::size_t row, std::size_t channel) const { return values[row * width() + channel]; }
  double& at(std::size_t row, std::size_t channel) { return values[row * width() + channel]; }

  // Spacing, finiteness, and 0 <= pv_power <= capacity. Throws DataError subtypes.
  void validate() const;
};

SeriesFrame load_csv(const std::filesystem::path& path, double capacity);
void write_csv(const SeriesFrame& frame, const std::filesystem::path& path);

struct WindowSample {
  std::vector<double> inputs;  // H, row-major [L x C]
  std::vector<double> target;  // G, length T
  std::size_t start_index = 0;  // first history row in the source frame
  std::size_t length = 0;
  std::size_t horizon = 0;

  std::size_t target_index() const { return start_index + length; }
};

// Windows at offsets 0, stride, 2*stride, ... The PV channel holds rows
// [s, s+L), weather channels lead by T and hold [s+T, s+T+L), the target is
// pv_power over [s+L, s+L+T).
std::vector<WindowSample> make_windows(const SeriesFrame& frame, std::size_t length,
                                       std::size_t horizon, std::size_t stride = 1,
                                       std::size_t pv_channel = kPvChannel);

// Windows whose targets fall inside [target_begin, target_end); the first one
// starts its target exactly at target_begin.
std::vector<WindowSample> make_windows_in_range(const SeriesFrame& frame, std::size_t length,
                                                std::size_t horizon, std::size_t stride,
                                                std::size_t target_begin, std::size_t target_end,
                                                std::size_t pv_channel = kPvChannel);

// Contiguous time split; boundaries are rounded down to whole days.
struct SplitPlan {
  std::size_t train_end = 0;
  std::size_t val_end = 0;
  std::size_t rows = 0;
};
SplitPlan plan_split(std::size_t rows, double train_fraction = 0.8, double val_fraction = 0.1);

class Standardizer {
 public:
  Standardizer() = default;
  Standardizer(std::vector<double> mean, std::vector<double> stddev);

  // Statistics from rows [row_begin, row_end) only.
  static Standardizer fit(const SeriesFrame& frame, std::size_t row_begin, std::size_t row_end);

  bool fitted() const { return !mean_.empty(); }
  SeriesFrame apply(const SeriesFrame& frame) const;
  SeriesFrame invert(const SeriesFrame& frame) const;
  double transform(double value, std::size_t channel) const;
  double inverse(double value, std::size_t channel) const;

  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& stddev() const { return std_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  void require_fitted() const;

  std::vector<double> mean_;
  std::vector<double> std_;
  std::vector<std::string> warnings_;
};

// ---------------------------------------------------------------------------
// Synthetic station

enum class WeatherColumns { Forecast, Measured };

struct ShiftProfile {
  double amplitude_ramp = 0.3;   // clear-sky amplitude grows from 1 to 1 + ramp across the run
  double efficiency_ramp = -0.4; // conversion efficiency drifts from 1 to 1 + ramp
};

struct SynthOptions {
  std::uint64_t seed = 42;
  std::size_t days = 60;
  double capacity = 1000.0;
  ShiftProfile shift{};
  WeatherColumns weather = WeatherColumns::Forecast;
  std::string start = "2023-01-01T00:00:00";
};

struct SynthTruth {
  double peak_radiation = 0.0;     // W/m^2 at amplitude 1, clear sky
  double saturation = 0.0;         // radiation scale of the saturating response
  double temperature_coeff = 0.0;  // relative loss per degree above 25 C
  double noise_fraction = 0.0;     // PV noise std as fraction of capacity
  double forecast_error = 0.0;     // std of the day-level cloud forecast error
  ShiftProfile shift{};
  std::vector<double> cloud_factor;  // true per-day clearness in [0, 1]
};

struct SynthResult {
  SeriesFrame frame;
  SynthTruth truth;
};

SynthResult synth_station(const SynthOptions& options);

}  // namespace pvclient::data
