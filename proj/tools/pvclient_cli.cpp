// pvclient: data generation, training, prediction, evaluation, ablation grids
// and numerical self-checks.

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "pvclient/data.hpp"
#include "pvclient/error.hpp"
#include "pvclient/evaluation.hpp"
#include "pvclient/model.hpp"
#include "pvclient/selfcheck.hpp"
#include "pvclient/tensor.hpp"
#include "pvclient/training.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace pvclient;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct DataSource {
  std::string csv;
  double capacity = 1000.0;
  std::size_t synth_days = 0;
  std::uint64_t synth_seed = 42;
  std::string weather = "forecast";

  void add_options(CLI::App* app) {
    auto* csv_opt = app->add_option("--data", csv, "Station CSV")->check(CLI::ExistingFile);
    app->add_option("--capacity", capacity, "Installed capacity (kW)")->check(CLI::PositiveNumber);
    auto* days_opt = app->add_option("--synth-days", synth_days, "Generate a synthetic station of N days instead of reading a CSV")
                         ->check(CLI::Range(4, 100000));
    app->add_option("--synth-seed", synth_seed, "Seed of the synthetic station");
    app->add_option("--weather", weather, "Synthetic weather columns")
        ->check(CLI::IsMember({"forecast", "measured"}));
    csv_opt->excludes(days_opt);
    days_opt->excludes(csv_opt);
  }

  void require(CLI::App* app) const {
    if (csv.empty() && synth_days == 0) {
      throw CLI::RequiredError(app->get_name() + ": one of --data or --synth-days");
    }
  }

  data::SeriesFrame load() const {
    if (!csv.empty()) return data::load_csv(csv, capacity);
    data::SynthOptions opts;
    opts.seed = synth_seed;
    opts.days = synth_days;
    opts.capacity = capacity;
    opts.weather = weather == "measured" ? data::WeatherColumns::Measured
                                         : data::WeatherColumns::Forecast;
    return data::synth_station(opts).frame;
  }

  ordered_json describe() const {
    ordered_json j;
    if (!csv.empty()) {
      j["csv"] = csv;
    } else {
      j["synth_days"] = synth_days;
      j["synth_seed"] = synth_seed;
      j["weather"] = weather;
    }
    j["capacity"] = capacity;
    return j;
  }
};

struct ModelOptions {
  model::ModelConfig config;
  std::vector<std::string> variants;
  std::string attention = "attention";
  std::string output_mode = "pv";

  void add_options(CLI::App* app, bool with_grid_switches) {
    app->add_option("--input-len", config.input_len, "History length L")->check(CLI::PositiveNumber);
    app->add_option("--horizon", config.horizon, "Forecast horizon T")->check(CLI::PositiveNumber);
    app->add_option("--blocks", config.num_blocks, "Encoder blocks")->check(CLI::NonNegativeNumber);
    app->add_option("--d-model", config.d_model, "Inner width")->check(CLI::PositiveNumber);
    app->add_option("--heads", config.heads, "Attention heads")->check(CLI::PositiveNumber);
    if (!with_grid_switches) return;
    app->add_option("--variant", variants, "full, no-linear, no-revin, embed (repeatable)")
        ->check(CLI::IsMember({"full", "no-linear", "no-revin", "embed"}));
    app->add_option("--attention", attention, "attention, linear, mlp, none")
        ->check(CLI::IsMember({"attention", "linear", "mlp", "none"}));
    app->add_option("--output-mode", output_mode, "pv, radiation, sum-fixed, sum-learnable")
        ->check(CLI::IsMember({"pv", "radiation", "sum-fixed", "sum-learnable"}));
  }

  model::VariantFlags flags() const {
    model::VariantFlags f;
    for (const auto& v : variants) {
      if (v == "no-linear") f.use_linear = false;
      if (v == "no-revin") f.use_revin = false;
      if (v == "embed") f.add_embedding = true;
    }
    f.attention = model::parse_attention_kind(attention);
    f.output_mode = model::parse_output_mode(output_mode);
    return f;
  }
};

struct TrainOptions {
  train::TrainConfig config;
  std::size_t stride = 1;
  std::optional<double> clip;

  void add_options(CLI::App* app) {
    app->add_option("--epochs", config.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
    app->add_option("--batch", config.batch_size, "Batch size")->check(CLI::PositiveNumber);
    app->add_option("--lr", config.learning_rate, "Adam learning rate")->check(CLI::NonNegativeNumber);
    app->add_option("--clip-norm", clip, "Global gradient-norm clip")->check(CLI::PositiveNumber);
    app->add_option("--train-stride", stride, "Stride between training windows")
        ->check(CLI::PositiveNumber);
  }

  train::TrainConfig resolved(std::uint64_t seed) const {
    train::TrainConfig c = config;
    c.seed = seed;
    c.clip_norm = clip;
    return c;
  }
};

fs::path default_out_dir() {
  if (const char* env = std::getenv("PVCLIENT_OUT_DIR"); env && *env) return env;
  return ".";
}

fs::path resolve(const fs::path& dir, const std::string& name) {
  fs::path p(name);
  return p.is_absolute() || p.has_parent_path() ? p : dir / p;
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

ordered_json describe(const model::ModelConfig& c, const model::VariantFlags& f) {
  ordered_json j;
  j["input_len"] = c.input_len;
  j["horizon"] = c.horizon;
  j["channels"] = c.channels;
  j["num_blocks"] = c.num_blocks;
  j["d_model"] = c.d_model;
  j["heads"] = c.heads;
  j["use_linear"] = f.use_linear;
  j["use_revin"] = f.use_revin;
  j["add_embedding"] = f.add_embedding;
  j["attention"] = model::to_string(f.attention);
  j["output_mode"] = model::to_string(f.output_mode);
  return j;
}

ordered_json describe(const train::TrainConfig& t, std::size_t stride) {
  ordered_json j;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["learning_rate"] = t.learning_rate;
  j["seed"] = t.seed;
  j["clip_norm"] = t.clip_norm ? ordered_json(*t.clip_norm) : ordered_json(nullptr);
  j["train_stride"] = stride;
  return j;
}

void print_config(const std::string& command, const ordered_json& body) {
  ordered_json j;
  j["command"] = command;
  for (const auto& [k, v] : body.items()) j[k] = v;
  std::cout << "config " << j.dump() << std::endl;
}

std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::string full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------

struct SynthCommand {
  std::uint64_t seed = 42;
  std::size_t days = 60;
  double capacity = 1000.0;
  std::string weather = "forecast";
  std::string out = "station.csv";

  int run(const fs::path& out_dir) const {
    const fs::path path = resolve(out_dir, out);
    print_config("synth-data", {{"seed", seed}, {"days", days}, {"capacity", capacity},
                                {"weather", weather}, {"out", path.string()}});
    data::SynthOptions opts;
    opts.seed = seed;
    opts.days = days;
    opts.capacity = capacity;
    opts.weather = weather == "measured" ? data::WeatherColumns::Measured
                                         : data::WeatherColumns::Forecast;
    const auto result = data::synth_station(opts);
    ensure_parent(path);
    data::write_csv(result.frame, path);
    const auto& t = result.truth;
    std::cout << "rows " << result.frame.rows() << '\n'
              << "coefficients peak_radiation=" << t.peak_radiation
              << " saturation=" << t.saturation << " temperature_coeff=" << t.temperature_coeff
              << " noise_fraction=" << t.noise_fraction << " forecast_error=" << t.forecast_error
              << " amplitude_ramp=" << t.shift.amplitude_ramp
              << " efficiency_ramp=" << t.shift.efficiency_ramp << '\n'
              << "wrote " << path.string() << '\n';
    return kExitOk;
  }
};

struct TrainCommand {
  DataSource source;
  ModelOptions model_opts;
  TrainOptions train_opts;
  std::uint64_t seed = 42;
  std::string checkpoint = "pvclient.ckpt";
  std::string loss_log;

  int run(const fs::path& out_dir) const {
    const fs::path ckpt = resolve(out_dir, checkpoint);
    const fs::path log_path = loss_log.empty() ? fs::path(ckpt).replace_extension(".loss.csv")
                                               : resolve(out_dir, loss_log);
    const auto flags = model_opts.flags();
    const auto tcfg = train_opts.resolved(seed);
    ordered_json body;
    body["data"] = source.describe();
    body["model"] = describe(model_opts.config, flags);
    body["train"] = describe(tcfg, train_opts.stride);
    body["seed"] = seed;
    body["checkpoint"] = ckpt.string();
    body["loss_log"] = log_path.string();
    print_config("train", body);

    model::ModelConfig cfg = model_opts.config;
    auto bench = eval::Benchmark::prepare(source.load());
    cfg.channels = bench.original.width();
    const auto windows = bench.train_windows(cfg.input_len, cfg.horizon, train_opts.stride);
    if (windows.empty()) {
      throw DataError("data too short: no training windows for L=" + std::to_string(cfg.input_len) +
                      ", T=" + std::to_string(cfg.horizon));
    }
    model::PvClient net(cfg, flags, seed);
    std::cout << "parameters " << net.parameter_count() << '\n'
              << "train_windows " << windows.size() << std::endl;

    ensure_parent(ckpt);
    ensure_parent(log_path);
    std::ofstream log(log_path);
    if (!log) throw DataError("cannot write " + log_path.string());
    log << "epoch,loss\n";
    train::TrainHooks hooks;
    const auto start = std::chrono::steady_clock::now();
    hooks.on_epoch = [&](std::size_t epoch, double loss) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cout << "epoch " << epoch + 1 << " loss " << full(loss) << " elapsed_s " << fixed3(secs)
                << std::endl;
      log << epoch + 1 << ',' << full(loss) << '\n';
    };
    const auto result = train::train(net, windows, tcfg, hooks);
    std::cout << "initial_loss " << full(result.initial_loss) << '\n';

    train::CheckpointMeta meta;
    meta.standardizer = bench.standardizer;
    meta.capacity = bench.original.capacity;
    meta.seed = seed;
    train::save_checkpoint(ckpt, net, meta);
    std::cout << "wrote " << ckpt.string() << '\n';
    return kExitOk;
  }
};

// Benchmark for a checkpoint: the data must carry the model's channels, and
// the checkpoint's standardizer replaces the one refit on the data.
eval::Benchmark checkpoint_benchmark(const train::LoadedCheckpoint& loaded, const DataSource& source) {
  auto bench = eval::Benchmark::prepare(source.load());
  const auto& cfg = loaded.model.config();
  if (bench.original.width() != cfg.channels) {
    throw ConfigError("checkpoint/data mismatch: model has " + std::to_string(cfg.channels) +
                      " channels, data has " + std::to_string(bench.original.width()));
  }
  if (loaded.meta.standardizer) {
    if (loaded.meta.standardizer->mean().size() != cfg.channels) {
      throw ConfigError("checkpoint standardizer does not match the model's channel count");
    }
    bench.standardizer = *loaded.meta.standardizer;
    bench.standardized = bench.standardizer.apply(bench.original);
  }
  return bench;
}

struct EvaluateCommand {
  DataSource source;
  std::string checkpoint;
  std::string out = "evaluation.csv";

  int run(const fs::path& out_dir) const {
    const fs::path csv = resolve(out_dir, out);
    const auto loaded = train::load_checkpoint(checkpoint);
    ordered_json body;
    body["checkpoint"] = checkpoint;
    body["data"] = source.describe();
    body["model"] = describe(loaded.model.config(), loaded.model.flags());
    body["seed"] = loaded.meta.seed;
    body["out"] = csv.string();
    print_config("evaluate", body);

    const auto bench = checkpoint_benchmark(loaded, source);
    const auto& cfg = loaded.model.config();
    const auto test = bench.test_windows(cfg.input_len, cfg.horizon);
    if (test.empty()) throw DataError("data too short: no test windows");
    const auto train_set = bench.train_windows(cfg.input_len, cfg.horizon);

    eval::ExperimentGrid rows;
    auto add = [&](const std::string& label, const eval::MetricReport& m) {
      eval::GridCell c;
      c.label = label;
      c.metrics = m;
      rows.cells.push_back(std::move(c));
    };
    add("PV-Client", eval::evaluate_model(loaded.model, test, bench.standardizer, bench.original).metrics);
    const std::size_t channels = cfg.channels;
    add("Persistence",
        eval::evaluate_forecaster(
            [&](const data::WindowSample& w) { return eval::persistence_baseline(w, channels); }, test,
            bench.standardizer, bench.original)
            .metrics);
    if (!train_set.empty()) {
      const auto lr = eval::LinearRegression::fit(train_set);
      add("LR", eval::evaluate_forecaster([&](const data::WindowSample& w) { return lr.predict(w); },
                                          test, bench.standardizer, bench.original)
                    .metrics);
    }

    for (const auto& c : rows.cells) {
      std::cout << c.label << ": MSE " << fixed3(c.metrics.mse) << "  Acc " << fixed3(c.metrics.acc)
                << "  n " << c.metrics.n << '\n';
    }
    ensure_parent(csv);
    eval::write_grid_csv(rows, csv);
    std::cout << "wrote " << csv.string() << '\n';
    return kExitOk;
  }
};

struct PredictCommand {
  DataSource source;
  std::string checkpoint;
  std::string out = "forecast.csv";

  int run(const fs::path& out_dir) const {
    const fs::path csv = resolve(out_dir, out);
    const auto loaded = train::load_checkpoint(checkpoint);
    ordered_json body;
    body["checkpoint"] = checkpoint;
    body["data"] = source.describe();
    body["model"] = describe(loaded.model.config(), loaded.model.flags());
    body["seed"] = loaded.meta.seed;
    body["out"] = csv.string();
    print_config("predict", body);

    const auto bench = checkpoint_benchmark(loaded, source);
    const auto& cfg = loaded.model.config();
    const auto test = bench.test_windows(cfg.input_len, cfg.horizon);
    if (test.empty()) throw DataError("data too short: no test windows");
    const auto report = eval::evaluate_model(loaded.model, test, bench.standardizer, bench.original);
    ensure_parent(csv);
    eval::export_plot_data(report, csv);
    std::cout << "points " << report.forecast.size() << "  MSE " << fixed3(report.metrics.mse)
              << "  Acc " << fixed3(report.metrics.acc) << '\n'
              << "wrote " << csv.string() << '\n';
    return kExitOk;
  }
};

struct AblateCommand {
  DataSource source;
  ModelOptions model_opts;
  TrainOptions train_opts;
  std::uint64_t seed = 42;
  std::string grid = "ablation";
  std::string out;

  int run(const fs::path& out_dir) const {
    const auto kind = eval::parse_grid_kind(grid);
    const fs::path csv = resolve(out_dir, out.empty() ? "grid_" + grid + ".csv" : out);
    eval::GridOptions opts;
    opts.base_config = model_opts.config;
    opts.base_flags = model_opts.flags();
    opts.train = train_opts.resolved(seed);
    opts.seed = seed;
    opts.train_stride = train_opts.stride;
    ordered_json body;
    body["grid"] = grid;
    body["data"] = source.describe();
    body["model"] = describe(opts.base_config, opts.base_flags);
    body["train"] = describe(opts.train, opts.train_stride);
    body["seed"] = seed;
    body["out"] = csv.string();
    print_config("ablate", body);

    auto bench = eval::Benchmark::prepare(source.load());
    opts.base_config.channels = bench.original.width();
    eval::ExperimentGrid result;
    result.kind = kind;
    auto cells = eval::grid_cells(kind, opts);
    for (const auto& c : cells) bench.test_windows(c.config.input_len, c.config.horizon);
    for (auto& c : cells) {
      const auto start = std::chrono::steady_clock::now();
      auto trained = eval::train_and_evaluate(std::move(c), bench, opts);
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cout << "cell " << trained.cell.label << "  MSE " << fixed3(trained.cell.metrics.mse)
                << "  Acc " << fixed3(trained.cell.metrics.acc) << "  elapsed_s " << fixed3(secs)
                << std::endl;
      result.cells.push_back(std::move(trained.cell));
    }
    ensure_parent(csv);
    eval::write_grid_csv(result, csv);
    std::cout << eval::grid_summary(result) << '\n' << "wrote " << csv.string() << '\n';
    return kExitOk;
  }
};

struct SelfcheckCommand {
  std::uint64_t seed = 42;
  std::string inject_fault;

  int run() const {
    print_config("selfcheck",
                 {{"seed", seed}, {"inject_fault", inject_fault.empty() ? "none" : inject_fault}});
    if (!inject_fault.empty()) {
      bool found = false;
      for (int k = 0; k <= static_cast<int>(ad::OpKind::Reshape); ++k) {
        const auto op = static_cast<ad::OpKind>(k);
        if (inject_fault == ad::op_name(op)) {
          ad::debug::inject_backward_fault(op);
          found = true;
        }
      }
      if (!found) throw CLI::ValidationError("--inject-fault", "unknown op '" + inject_fault + "'");
    }
    const auto report = check::run_selfcheck(std::cout, seed);
    ad::debug::clear_backward_fault();
    std::cout << "elapsed_s " << fixed3(report.seconds) << '\n';
    if (report.passed()) {
      std::cout << "PASS selfcheck (" << report.checks.size() << " checks)" << std::endl;
      return kExitOk;
    }
    for (const auto& c : report.checks) {
      if (!c.passed) {
        std::cout << "FAIL selfcheck: " << c.name << ": " << c.detail << std::endl;
        break;
      }
    }
    return kExitFailure;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PV power day-ahead forecasting with cross-variable attention"};
  app.require_subcommand(1);
  std::string out_dir = default_out_dir().string();
  app.add_option("--out-dir", out_dir, "Directory for relative output paths (env PVCLIENT_OUT_DIR)");

  SynthCommand synth;
  auto* synth_app = app.add_subcommand("synth-data", "Write a synthetic station CSV");
  synth_app->add_option("--seed", synth.seed, "Generator seed");
  synth_app->add_option("--days", synth.days, "Number of days")->check(CLI::Range(4, 100000));
  synth_app->add_option("--capacity", synth.capacity, "Installed capacity (kW)")
      ->check(CLI::PositiveNumber);
  synth_app->add_option("--weather", synth.weather, "Weather columns")
      ->check(CLI::IsMember({"forecast", "measured"}));
  synth_app->add_option("--out", synth.out, "Output CSV");

  TrainCommand train_cmd;
  auto* train_app = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_cmd.source.add_options(train_app);
  train_cmd.model_opts.add_options(train_app, true);
  train_cmd.train_opts.add_options(train_app);
  train_app->add_option("--seed", train_cmd.seed, "Initialization and shuffle seed");
  train_app->add_option("--out-checkpoint", train_cmd.checkpoint, "Checkpoint path");
  train_app->add_option("--loss-log", train_cmd.loss_log, "Per-epoch loss CSV");

  EvaluateCommand eval_cmd;
  auto* eval_app = app.add_subcommand("evaluate", "Score a checkpoint against the baselines");
  eval_cmd.source.add_options(eval_app);
  eval_app->add_option("--checkpoint", eval_cmd.checkpoint, "Checkpoint path")
      ->required()
      ->check(CLI::ExistingFile);
  eval_app->add_option("--out", eval_cmd.out, "Report CSV");

  PredictCommand predict_cmd;
  auto* predict_app = app.add_subcommand("predict", "Export test-range forecasts and components");
  predict_cmd.source.add_options(predict_app);
  predict_app->add_option("--checkpoint", predict_cmd.checkpoint, "Checkpoint path")
      ->required()
      ->check(CLI::ExistingFile);
  predict_app->add_option("--out", predict_cmd.out, "Plot-data CSV");

  AblateCommand ablate_cmd;
  auto* ablate_app = app.add_subcommand("ablate", "Train and score one experiment grid");
  ablate_cmd.source.add_options(ablate_app);
  ablate_cmd.model_opts.add_options(ablate_app, false);
  ablate_cmd.train_opts.add_options(ablate_app);
  ablate_app->add_option("--grid", ablate_cmd.grid, "ablation, attention, history, output-mode")
      ->check(CLI::IsMember({"ablation", "attention", "history", "output-mode"}));
  ablate_app->add_option("--seed", ablate_cmd.seed, "Initialization and shuffle seed");
  ablate_app->add_option("--out", ablate_cmd.out, "Grid CSV");

  SelfcheckCommand self_cmd;
  auto* self_app = app.add_subcommand("selfcheck", "Run the numerical self-checks");
  self_app->add_option("--seed", self_cmd.seed, "Seed of the random instances");
  self_app->add_option("--inject-fault", self_cmd.inject_fault)->group("");

  try {
    app.parse(argc, argv);
    if (train_app->parsed()) train_cmd.source.require(train_app);
    if (eval_app->parsed()) eval_cmd.source.require(eval_app);
    if (predict_app->parsed()) predict_cmd.source.require(predict_app);
    if (ablate_app->parsed()) ablate_cmd.source.require(ablate_app);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const fs::path dir(out_dir);
    if (synth_app->parsed()) return synth.run(dir);
    if (train_app->parsed()) return train_cmd.run(dir);
    if (eval_app->parsed()) return eval_cmd.run(dir);
    if (predict_app->parsed()) return predict_cmd.run(dir);
    if (ablate_app->parsed()) return ablate_cmd.run(dir);
    if (self_app->parsed()) return self_cmd.run();
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
