#include "pvclient/data.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "pvclient/error.hpp"
#include "pvclient/rng.hpp"

namespace pvclient::data {

namespace {

bool parse_int(std::string_view text, int& out) {
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

bool parse_double(std::string_view text, double& out) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) {
    text.remove_suffix(1);
  }
  if (text.empty()) return false;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = line.find(sep, pos);
    out.push_back(line.substr(pos, next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

std::int64_t parse_timestamp(const std::string& text) {
  // YYYY-MM-DDTHH:MM:SS (a space may replace the T)
  if (text.size() != 19 || text[4] != '-' || text[7] != '-' || (text[10] != 'T' && text[10] != ' ') ||
      text[13] != ':' || text[16] != ':') {
    throw ParseError("malformed timestamp '" + text + "'");
  }
  int y, mo, d, h, mi, s;
  std::string_view v(text);
  if (!parse_int(v.substr(0, 4), y) || !parse_int(v.substr(5, 2), mo) ||
      !parse_int(v.substr(8, 2), d) || !parse_int(v.substr(11, 2), h) ||
      !parse_int(v.substr(14, 2), mi) || !parse_int(v.substr(17, 2), s)) {
    throw ParseError("malformed timestamp '" + text + "'");
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 59 || h < 0 || mi < 0 || s < 0) {
    throw ParseError("invalid calendar timestamp '" + text + "'");
  }
  const auto days_since_epoch = sys_days(ymd).time_since_epoch().count();
  return static_cast<std::int64_t>(days_since_epoch) * 86400 + h * 3600 + mi * 60 + s;
}

std::string format_timestamp(std::int64_t seconds) {
  using namespace std::chrono;
  std::int64_t days = seconds / 86400;
  std::int64_t rem = seconds % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(rem / 3600), static_cast<int>(rem / 60 % 60),
                static_cast<int>(rem % 60));
  return buf;
}

// ---------------------------------------------------------------------------

void SeriesFrame::validate() const {
  if (values.size() != rows() * width()) throw DataError("frame value count does not match shape");
  for (std::size_t r = 1; r < rows(); ++r) {
    if (timestamps[r] - timestamps[r - 1] != interval_seconds) {
      throw GapError("timestamp " + format_timestamp(timestamps[r]) + " (row " +
                     std::to_string(r + 1) + ") does not follow " +
                     format_timestamp(timestamps[r - 1]) + " by " +
                     std::to_string(interval_seconds) + " s");
    }
  }
  for (std::size_t r = 0; r < rows(); ++r) {
    for (std::size_t c = 0; c < width(); ++c) {
      if (!std::isfinite(at(r, c))) {
        throw DataError("non-finite " + channels[c] + " at " + format_timestamp(timestamps[r]));
      }
    }
    const double pv = at(r, kPvChannel);
    if (pv < 0.0 || pv > capacity) {
      throw DataError("pv_power " + format_double(pv) + " at " + format_timestamp(timestamps[r]) +
                      " outside [0, capacity=" + format_double(capacity) + "]");
    }
  }
}

SeriesFrame load_csv(const std::filesystem::path& path, double capacity) {
  if (!(capacity > 0.0)) throw ConfigError("capacity must be positive");
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw SchemaError("empty file " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line, ',');
  const auto& names = channel_names();
  if (header.empty() || header[0] != "timestamp") throw SchemaError("missing column 'timestamp'");
  for (std::size_t c = 0; c < names.size(); ++c) {
    if (header.size() <= c + 1 || header[c + 1] != names[c]) {
      throw SchemaError("missing column '" + names[c] + "' (expected at position " +
                        std::to_string(c + 2) + ")");
    }
  }
  if (header.size() != names.size() + 1) throw SchemaError("unexpected extra columns in header");

  SeriesFrame frame;
  frame.channels = names;
  frame.capacity = capacity;
  std::size_t line_no = 1;  // the header is line 1
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != names.size() + 1) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(names.size() + 1) + " fields, got " +
                       std::to_string(fields.size()));
    }
    try {
      frame.timestamps.push_back(parse_timestamp(std::string(fields[0])));
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    for (std::size_t c = 0; c < names.size(); ++c) {
      double v;
      if (!parse_double(fields[c + 1], v)) {
        throw ParseError("line " + std::to_string(line_no) + ": cannot parse " + names[c] + " value '" +
                         std::string(fields[c + 1]) + "'");
      }
      frame.values.push_back(v);
    }
  }
  frame.validate();
  return frame;
}

void write_csv(const SeriesFrame& frame, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "timestamp";
  for (const auto& name : frame.channels) out << ',' << name;
  out << '\n';
  for (std::size_t r = 0; r < frame.rows(); ++r) {
    out << format_timestamp(frame.timestamps[r]);
    for (std::size_t c = 0; c < frame.width(); ++c) out << ',' << format_double(frame.at(r, c));
    out << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------

namespace {

WindowSample slice_window(const SeriesFrame& frame, std::size_t start, std::size_t length,
                          std::size_t horizon, std::size_t pv_channel) {
  const std::size_t width = frame.width();
  WindowSample w;
  w.start_index = start;
  w.length = length;
  w.horizon = horizon;
  w.inputs.resize(length * width);
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t row = c == pv_channel ? start + i : start + horizon + i;
      w.inputs[i * width + c] = frame.at(row, c);
    }
  }
  w.target.resize(horizon);
  for (std::size_t k = 0; k < horizon; ++k) w.target[k] = frame.at(start + length + k, pv_channel);
  return w;
}

}  // namespace

std::vector<WindowSample> make_windows(const SeriesFrame& frame, std::size_t length,
                                       std::size_t horizon, std::size_t stride,
                                       std::size_t pv_channel) {
  if (stride == 0 || length == 0 || horizon == 0) throw ConfigError("L, T and stride must be positive");
  if (frame.rows() < length + horizon) {
    throw DataError("frame of " + std::to_string(frame.rows()) + " rows is shorter than L + T = " +
                    std::to_string(length + horizon));
  }
  std::vector<WindowSample> out;
  for (std::size_t s = 0; s + length + horizon <= frame.rows(); s += stride) {
    out.push_back(slice_window(frame, s, length, horizon, pv_channel));
  }
  return out;
}

std::vector<WindowSample> make_windows_in_range(const SeriesFrame& frame, std::size_t length,
                                                std::size_t horizon, std::size_t stride,
                                                std::size_t target_begin, std::size_t target_end,
                                                std::size_t pv_channel) {
  if (stride == 0 || length == 0 || horizon == 0) throw ConfigError("L, T and stride must be positive");
  target_end = std::min(target_end, frame.rows());
  std::size_t first_target = std::max(target_begin, length);
  if (first_target + horizon > target_end) {
    throw DataError("range [" + std::to_string(target_begin) + ", " + std::to_string(target_end) +
                    ") cannot hold a target of " + std::to_string(horizon) +
                    " steps after L = " + std::to_string(length) + " history rows");
  }
  std::vector<WindowSample> out;
  for (std::size_t t = first_target; t + horizon <= target_end; t += stride) {
    out.push_back(slice_window(frame, t - length, length, horizon, pv_channel));
  }
  return out;
}

SplitPlan plan_split(std::size_t rows, double train_fraction, double val_fraction) {
  if (!(train_fraction > 0.0) || !(val_fraction >= 0.0) || train_fraction + val_fraction >= 1.0) {
    throw ConfigError("split fractions must satisfy 0 < train, 0 <= val, train + val < 1");
  }
  const std::size_t days = rows / kStepsPerDay;
  SplitPlan plan;
  plan.rows = rows;
  plan.train_end = static_cast<std::size_t>(std::floor(days * train_fraction)) * kStepsPerDay;
  plan.val_end = static_cast<std::size_t>(std::floor(days * (train_fraction + val_fraction))) *
                 kStepsPerDay;
  if (plan.train_end == 0 || plan.val_end >= rows) {
    throw DataError("series of " + std::to_string(rows) + " rows is too short to split by days");
  }
  return plan;
}

// ---------------------------------------------------------------------------

Standardizer::Standardizer(std::vector<double> mean, std::vector<double> stddev)
    : mean_(std::move(mean)), std_(std::move(stddev)) {
  if (mean_.size() != std_.size()) throw ConfigError("standardizer mean/std size mismatch");
}

Standardizer Standardizer::fit(const SeriesFrame& frame, std::size_t row_begin,
                               std::size_t row_end) {
  if (row_end > frame.rows() || row_begin >= row_end) {
    throw DataError("standardizer fit range is empty or out of bounds");
  }
  const std::size_t width = frame.width();
  const double n = static_cast<double>(row_end - row_begin);
  Standardizer s;
  s.mean_.assign(width, 0.0);
  s.std_.assign(width, 0.0);
  for (std::size_t c = 0; c < width; ++c) {
    double total = 0.0;
    for (std::size_t r = row_begin; r < row_end; ++r) total += frame.at(r, c);
    const double m = total / n;
    double ss = 0.0;
    for (std::size_t r = row_begin; r < row_end; ++r) ss += (frame.at(r, c) - m) * (frame.at(r, c) - m);
    double sd = std::sqrt(ss / n);
    if (!(sd > 1e-12)) {
      s.warnings_.push_back("channel '" + frame.channels[c] + "' has zero variance; std clamped to 1");
      sd = 1.0;
    }
    s.mean_[c] = m;
    s.std_[c] = sd;
  }
  return s;
}

void Standardizer::require_fitted() const {
  if (!fitted()) throw StateError("standardizer used before fit");
}

double Standardizer::transform(double value, std::size_t channel) const {
  require_fitted();
  return (value - mean_.at(channel)) / std_.at(channel);
}

double Standardizer::inverse(double value, std::size_t channel) const {
  require_fitted();
  return value * std_.at(channel) + mean_.at(channel);
}

SeriesFrame Standardizer::apply(const SeriesFrame& frame) const {
  require_fitted();
  if (frame.width() != mean_.size()) throw DataError("standardizer channel count mismatch");
  SeriesFrame out = frame;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.width(); ++c) out.at(r, c) = transform(frame.at(r, c), c);
  }
  return out;
}

SeriesFrame Standardizer::invert(const SeriesFrame& frame) const {
  require_fitted();
  if (frame.width() != mean_.size()) throw DataError("standardizer channel count mismatch");
  SeriesFrame out = frame;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.width(); ++c) out.at(r, c) = inverse(frame.at(r, c), c);
  }
  return out;
}

// ---------------------------------------------------------------------------

SynthResult synth_station(const SynthOptions& options) {
  if (options.days < 4) throw ConfigError("synthetic station needs at least 4 days");
  if (!(options.capacity > 0.0)) throw ConfigError("capacity must be positive");

  Rng rng(options.seed);
  SynthTruth truth;
  truth.peak_radiation = 900.0;
  truth.saturation = 600.0;
  truth.temperature_coeff = 0.012;
  truth.noise_fraction = 0.01;
  truth.forecast_error = 0.05;
  truth.shift = options.shift;

  const std::size_t days = options.days;
  const std::size_t rows = days * kStepsPerDay;
  const double cap = options.capacity;
  const double max_amp = 1.0 + std::max(0.0, options.shift.amplitude_ramp);
  const double response_ref = 1.0 - std::exp(-truth.peak_radiation * max_amp / truth.saturation);

  SeriesFrame frame;
  frame.channels = channel_names();
  frame.capacity = cap;
  frame.values.assign(rows * frame.channels.size(), 0.0);
  const std::int64_t t0 = parse_timestamp(options.start);
  for (std::size_t r = 0; r < rows; ++r) {
    frame.timestamps.push_back(t0 + static_cast<std::int64_t>(r) * kDefaultIntervalSeconds);
  }

  double cloud_state = 0.7;
  for (std::size_t d = 0; d < days; ++d) {
    const double progress = static_cast<double>(d) / static_cast<double>(days - 1);
    const double amplitude = 1.0 + options.shift.amplitude_ramp * progress;
    const double efficiency = 1.0 + options.shift.efficiency_ramp * progress;

    // Day-level clearness follows a persistent random walk so history helps a little.
    cloud_state = std::clamp(0.2 * cloud_state + 0.8 * rng.uniform(0.1, 1.0), 0.1, 1.0);
    const double clear = cloud_state;
    truth.cloud_factor.push_back(clear);
    const double clear_forecast = std::clamp(clear + rng.normal(0.0, truth.forecast_error), 0.05, 1.0);
    const double variability = rng.uniform(0.0, 0.15) * (1.0 - clear);
    const double period = rng.uniform(6.0, 20.0);  // slots
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double temp_day = 10.0 + 12.0 * progress + rng.normal(0.0, 2.0);
    const double humid_day = 55.0 + 30.0 * (1.0 - clear) + rng.normal(0.0, 4.0);
    const double wind_day = 2.0 + std::abs(rng.normal(0.0, 2.0));
    const double pressure_day = 1013.0 - 10.0 * (1.0 - clear) + rng.normal(0.0, 2.0);

    for (std::size_t s = 0; s < kStepsPerDay; ++s) {
      const std::size_t r = d * kStepsPerDay + s;
      const double hour = static_cast<double>(s) / 4.0;
      const bool daylight = hour > 6.0 && hour < 18.0;
      const double elevation = daylight ? std::sin(std::numbers::pi * (hour - 6.0) / 12.0) : 0.0;

      const double flicker = 1.0 - variability * (0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * s / period + phase));
      const double rad_true = truth.peak_radiation * amplitude * elevation * clear * flicker;
      const double rad_noise = rng.normal(0.0, 15.0);
      const double rad_fc = std::max(
          0.0, truth.peak_radiation * amplitude * elevation * clear_forecast + rad_noise * elevation);

      const double temp_true = temp_day + 8.0 * elevation * clear + rng.normal(0.0, 0.3);
      const double humid_true = std::clamp(humid_day - 12.0 * elevation + rng.normal(0.0, 1.0), 5.0, 100.0);
      const double wind_true = std::max(0.0, wind_day + rng.normal(0.0, 0.5));
      const double pressure_true = pressure_day + rng.normal(0.0, 0.3);

      const double pv_noise = rng.normal(0.0, truth.noise_fraction * cap);
      double pv = 0.0;
      if (daylight) {
        const double response = (1.0 - std::exp(-rad_true / truth.saturation)) / response_ref;
        const double derate = 1.0 - truth.temperature_coeff * std::max(0.0, temp_true - 25.0);
        pv = cap * 0.95 * efficiency * response * derate + pv_noise * elevation;
        pv = std::clamp(pv, 0.0, cap);
      }

      // Forecast errors are drawn in both modes so the truth is mode independent.
      const double temp_fc = temp_true + rng.normal(0.0, 1.5);
      const double humid_fc = std::clamp(humid_true + rng.normal(0.0, 5.0), 0.0, 100.0);
      const double wind_fc = std::max(0.0, wind_true + rng.normal(0.0, 1.0));
      const double pressure_fc = pressure_true + rng.normal(0.0, 1.0);

      const bool fc = options.weather == WeatherColumns::Forecast;
      frame.at(r, kPvChannel) = pv;
      frame.at(r, kRadiationChannel) = fc ? rad_fc : rad_true;
      frame.at(r, 2) = fc ? temp_fc : temp_true;
      frame.at(r, 3) = fc ? humid_fc : humid_true;
      frame.at(r, 4) = fc ? wind_fc : wind_true;
      frame.at(r, 5) = fc ? pressure_fc : pressure_true;
    }
  }
  return {std::move(frame), std::move(truth)};
}

}  // namespace pvclient::data
