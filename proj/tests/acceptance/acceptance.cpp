// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset, e.g. `pvclient_acceptance 2 3 9`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "pvclient/data.hpp"
#include "pvclient/evaluation.hpp"
#include "pvclient/layers.hpp"
#include "pvclient/model.hpp"
#include "pvclient/rng.hpp"
#include "pvclient/training.hpp"
#include "unit/fd_oracle.hpp"

using namespace pvclient;
using ad::Tensor;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string num(double v, int digits = 3) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

std::string fixed(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<fd::Leaf> leaves_of(const layers::ParamList& params) {
  std::vector<fd::Leaf> out;
  for (const auto& p : params) out.push_back({p.name, p.tensor});
  return out;
}

// Moves every parameter away from its initialization so that zero-initialized
// biases and unit gains do not hide errors.
void jitter(const layers::ParamList& params, std::mt19937_64& rng, double amount = 0.2) {
  std::uniform_real_distribution<double> d(-amount, amount);
  for (const auto& p : params) {
    Tensor t = p.tensor;
    for (double& v : t.mutable_data()) v += d(rng);
  }
}

// ---------------------------------------------------------------------------
// Shared benchmark state for criteria 6, 7, 10 and 11.

struct BenchmarkRun {
  eval::Benchmark bench;
  eval::GridOptions options;
  std::optional<eval::TrainedCell> full;
  double full_seconds = 0.0;
  fs::path full_checkpoint;

  static data::SeriesFrame station() {
    data::SynthOptions opts;
    opts.seed = 42;
    opts.days = 60;
    return data::synth_station(opts).frame;
  }

  BenchmarkRun() : bench(eval::Benchmark::prepare(station())) {}

  eval::TrainedCell& full_model(const fs::path& scratch) {
    if (!full) {
      const auto start = Clock::now();
      auto cells = eval::grid_cells(eval::GridKind::Ablation, options);
      full.emplace(eval::train_and_evaluate(cells.front(), bench, options));
      full_seconds = seconds_since(start);
      full_checkpoint = scratch / "full_a.ckpt";
      train::CheckpointMeta meta;
      meta.standardizer = bench.standardizer;
      meta.capacity = bench.original.capacity;
      meta.seed = options.seed;
      train::save_checkpoint(full_checkpoint, full->model, meta);
    }
    return *full;
  }
};

// ---------------------------------------------------------------------------

Verdict gradient_correctness() {
  const auto start = Clock::now();
  std::mt19937_64 rng(1);
  const std::size_t L = 16, T = 4, C = 3, heads = 2, d_model = 8;
  const double tol = 1e-4;
  double worst = 0.0;
  std::string worst_where;
  std::size_t entries = 0, checks = 0;

  auto record = [&](const std::string& label, const fd::Outcome& o) {
    entries += o.entries;
    ++checks;
    if (o.max_rel > worst || worst_where.empty()) {
      worst = std::max(worst, o.max_rel);
      worst_where = label + ":" + o.where;
    }
  };

  Rng init(2);
  const std::size_t D = L;
  // Layers on their own.
  {
    const Tensor h = fd::uniform(rng, {L, C}, true, -3.0, 3.0);
    auto p = layers::make_revin(C);
    jitter({{"alpha", p.alpha}, {"beta", p.beta}}, rng);
    const Tensor r = fd::uniform(rng, {L, C}, false);
    record("revin_normalize", fd::compare([&] { return ad::sum(ad::mul(layers::revin_normalize(h, p).normalized, r)); },
                                          {{"h", h}, {"alpha", p.alpha}, {"beta", p.beta}}));
    const Tensor f = fd::uniform(rng, {T, C}, true);
    const Tensor r2 = fd::uniform(rng, {T, C}, false);
    record("revin_denormalize", fd::compare(
                                    [&] {
                                      const auto n = layers::revin_normalize(h, p);
                                      return ad::sum(ad::mul(layers::revin_denormalize(f, p, n.state, {0, 1, 2}), r2));
                                    },
                                    {{"f", f}, {"h", h}, {"alpha", p.alpha}, {"beta", p.beta}}));
  }
  const Tensor tokens = fd::uniform(rng, {C, D}, true);
  auto layer_check = [&](const std::string& label, const layers::ParamList& params,
                         const std::function<Tensor()>& out) {
    jitter(params, rng);
    const Tensor r = fd::uniform(rng, out().shape(), false);
    auto leaves = leaves_of(params);
    leaves.push_back({"input", tokens});
    record(label, fd::compare([&] { return ad::sum(ad::mul(out(), r)); }, leaves));
  };
  {
    const auto mha = layers::make_mha(init, D, heads, d_model / heads);
    layers::ParamList ps;
    layers::append_params("mha", layers::MixerParams{mha}, ps);
    layer_check("cross_variable_attention", ps, [&] { return layers::cross_variable_attention(tokens, mha); });
  }
  {
    const auto lin = layers::make_linear_mixer(init, C);
    layers::ParamList ps;
    layers::append_params("linear", layers::MixerParams{lin}, ps);
    layer_check("linear_mixer", ps, [&] { return layers::linear_mixer(tokens, lin); });
  }
  {
    const auto mlp = layers::make_mlp_mixer(init, C, d_model);
    layers::ParamList ps;
    layers::append_params("mlp", layers::MixerParams{mlp}, ps);
    layer_check("mlp_mixer", ps, [&] { return layers::mlp_mixer(tokens, mlp); });
  }
  {
    const auto ffn = layers::make_ffn(init, D, d_model);
    layers::ParamList ps;
    layers::append_params("ffn", ffn, ps);
    layer_check("feed_forward", ps, [&] { return layers::feed_forward(tokens, ffn); });
  }
  {
    const auto ln = layers::make_layer_norm(D);
    layers::ParamList ps;
    layers::append_params("ln", ln, ps);
    layer_check("layer_norm", ps, [&] { return layers::layer_norm(tokens, ln); });
  }
  for (int kind = 0; kind < 4; ++kind) {
    layers::EncoderBlockParams block;
    switch (kind) {
      case 0: block.mixer = layers::make_mha(init, D, heads, d_model / heads); break;
      case 1: block.mixer = layers::make_linear_mixer(init, C); break;
      case 2: block.mixer = layers::make_mlp_mixer(init, C, d_model); break;
      default: block.mixer = layers::NoMixer{}; break;
    }
    block.ffn = layers::make_ffn(init, D, d_model);
    block.norm1 = layers::make_layer_norm(D);
    block.norm2 = layers::make_layer_norm(D);
    layers::ParamList ps;
    layers::append_params("block", block, ps);
    layer_check("encoder_block/" + std::to_string(kind), ps, [&] { return layers::encoder_block(tokens, block); });
  }
  {
    const auto proj = layers::make_affine(init, D, T);
    layers::ParamList ps;
    layers::append_params("projection", proj, ps);
    layer_check("projection_head", ps, [&] { return layers::projection_head(tokens, proj); });
  }
  {
    const auto emb = layers::make_affine(init, L, d_model);
    layers::ParamList ps;
    layers::append_params("embedding", emb, ps);
    layer_check("embedding", ps, [&] { return layers::optional_embedding(tokens, emb, true); });
  }
  {
    const Tensor series = fd::uniform(rng, {L, C}, true);
    const auto trend = layers::make_affine(init, L, T);
    layers::ParamList ps;
    layers::append_params("trend", trend, ps);
    jitter(ps, rng);
    auto leaves = leaves_of(ps);
    leaves.push_back({"input", series});
    const Tensor r = fd::uniform(rng, {T, C}, false);
    record("linear_trend", fd::compare([&] { return ad::sum(ad::mul(layers::linear_trend(series, trend), r)); }, leaves));
  }

  // Whole model at toy shape: every entry for the default variant, a sample
  // of entries for the switched variants.
  model::ModelConfig cfg;
  cfg.input_len = L;
  cfg.horizon = T;
  cfg.channels = C;
  cfg.num_blocks = 1;
  cfg.heads = heads;
  cfg.d_model = d_model;
  std::vector<std::pair<std::string, model::VariantFlags>> variants{{"default", {}}};
  {
    model::VariantFlags f;
    f.use_linear = false;
    variants.emplace_back("-Linear", f);
    f = {};
    f.use_revin = false;
    variants.emplace_back("-RevIN", f);
    f = {};
    f.add_embedding = true;
    variants.emplace_back("+Embed", f);
    for (auto a : {model::AttentionKind::LinearMixer, model::AttentionKind::MlpMixer, model::AttentionKind::NoAttention}) {
      f = {};
      f.attention = a;
      variants.emplace_back(model::to_string(a), f);
    }
    for (auto m : {model::OutputMode::RadiationDim, model::OutputMode::SumFixed, model::OutputMode::SumLearnable}) {
      f = {};
      f.output_mode = m;
      variants.emplace_back(model::to_string(m), f);
    }
  }
  for (std::size_t v = 0; v < variants.size(); ++v) {
    model::PvClient net(cfg, variants[v].second, 10 + v);
    const auto params = net.parameters();
    jitter(params, rng, 0.1);
    const Tensor h = fd::uniform(rng, {L, C}, true, -2.0, 2.0);
    auto leaves = leaves_of(params);
    leaves.push_back({"history", h});
    const Tensor r = fd::uniform(rng, {T}, false);
    record("model/" + variants[v].first,
           fd::compare([&] { return ad::sum(ad::mul(net.forward(h).final, r)); }, leaves, 1e-5, v == 0 ? 0 : 64));
  }

  const double secs = seconds_since(start);
  const bool pass = worst < tol && secs < 30.0;
  return {pass, std::to_string(checks) + " checks, " + std::to_string(entries) + " entries, max rel err " + num(worst) +
                    " at " + worst_where + " (< 1e-4), " + fixed(secs, 2) + " s (< 30 s)"};
}

Verdict revin_round_trip() {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t L = 192, C = 6;
  std::vector<std::size_t> all(C);
  std::iota(all.begin(), all.end(), 0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    auto p = layers::make_revin(C);
    for (double& a : p.alpha.mutable_data()) a = 0.5 + 1.5 * u(rng);
    for (double& b : p.beta.mutable_data()) b = -1.0 + 2.0 * u(rng);
    std::vector<double> v(L * C);
    for (std::size_t c = 0; c < C; ++c) {
      const double level = 2000.0 * (u(rng) - 0.5);
      const double spread = std::pow(10.0, 3.0 * u(rng) - 1.0);
      for (std::size_t t = 0; t < L; ++t) v[t * C + c] = level + spread * (u(rng) - 0.5);
    }
    const Tensor h = Tensor::from({L, C}, v);
    const auto n = layers::revin_normalize(h, p);
    const Tensor back = layers::revin_denormalize(n.normalized, p, n.state, all);
    for (std::size_t k = 0; k < v.size(); ++k) worst = std::max(worst, std::fabs(back.data()[k] - v[k]));
  }
  return {worst < 1e-6, "1000 instances, max |denorm(norm(H)) - H| = " + num(worst) + " (< 1e-6)"};
}

Verdict attention_stochasticity() {
  std::mt19937_64 rng(3);
  double worst = 0.0;
  bool nonnegative = true;
  std::size_t rows = 0;
  for (int m = 0; m < 10; ++m) {
    const model::PvClient net({}, {}, 100 + m);
    for (int pass = 0; pass < 10; ++pass) {
      const Tensor h = fd::uniform(rng, {192, 6}, false, -3.0, 3.0);
      const auto pred = net.forward(h, true);
      for (const auto& a : pred.attention) {
        const std::size_t n = a.shape()[0], k = a.shape()[1];
        for (std::size_t i = 0; i < n; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < k; ++j) {
            nonnegative = nonnegative && a.at(i, j) >= 0.0;
            s += a.at(i, j);
          }
          worst = std::max(worst, std::fabs(s - 1.0));
          ++rows;
        }
      }
    }
  }
  return {worst < 1e-12 && nonnegative && rows > 0,
          "100 forward passes, " + std::to_string(rows) + " rows, max |row sum - 1| = " + num(worst) +
              " (< 1e-12)" + (nonnegative ? "" : ", negative weight found")};
}

Verdict permutation_equivariance() {
  std::mt19937_64 rng(4);
  double worst = 0.0;
  std::size_t cases = 0;
  for (int m = 0; m < 4; ++m) {
    const model::PvClient net({}, {}, 200 + m);
    for (int t = 0; t < 5; ++t) {
      const Tensor h = fd::uniform(rng, {192, 6}, false, -3.0, 3.0);
      std::vector<std::size_t> perm{0, 1, 2, 3, 4, 5};
      std::shuffle(perm.begin() + 1, perm.end(), rng);
      std::vector<double> v(h.numel());
      for (std::size_t l = 0; l < 192; ++l) {
        for (std::size_t c = 0; c < 6; ++c) v[l * 6 + c] = h.at(l, perm[c]);
      }
      const Tensor a = net.forward(h).final;
      const Tensor b = net.forward(Tensor::from({192, 6}, v)).final;
      for (std::size_t k = 0; k < a.numel(); ++k) worst = std::max(worst, std::fabs(a.data()[k] - b.data()[k]));
      ++cases;
    }
  }
  return {worst < 1e-9, std::to_string(cases) + " permutations of the non-target channels, max |diff| = " +
                            num(worst) + " (< 1e-9)"};
}

Verdict overfit_smoke() {
  const auto start = Clock::now();
  data::SynthOptions opts;
  opts.seed = 5;
  opts.days = 20;
  const auto bench = eval::Benchmark::prepare(data::synth_station(opts).frame);
  auto windows = bench.train_windows(192, 96, 96);
  windows.resize(8);
  model::PvClient net({}, {}, 5);
  train::TrainConfig cfg;
  cfg.epochs = 200;
  cfg.seed = 5;
  train::TrainHooks hooks;
  hooks.track_full_loss = true;
  const auto log = train::train(net, windows, cfg, hooks);
  const double ratio = log.final_loss.back() / log.initial_loss;
  const double secs = seconds_since(start);
  return {ratio < 1e-3 && secs < 120.0, "8 windows, 200 epochs, initial " + num(log.initial_loss) + " final " +
                                            num(log.final_loss.back()) + " ratio " + num(ratio) + " (< 1e-3), " +
                                            fixed(secs, 1) + " s (< 120 s)"};
}

Verdict benchmark_ordering(BenchmarkRun& run, const fs::path& scratch) {
  const auto start = Clock::now();
  auto& full = run.full_model(scratch);
  const auto& cfg = full.cell.config;
  const auto test = run.bench.test_windows(cfg.input_len, cfg.horizon);
  const auto persistence = eval::evaluate_forecaster(
      [&](const data::WindowSample& w) { return eval::persistence_baseline(w, cfg.channels); }, test,
      run.bench.standardizer, run.bench.original);
  const auto lr = eval::LinearRegression::fit(run.bench.train_windows(cfg.input_len, cfg.horizon));
  const auto linear = eval::evaluate_forecaster([&](const data::WindowSample& w) { return lr.predict(w); }, test,
                                                run.bench.standardizer, run.bench.original);
  const double secs = run.full_seconds + seconds_since(start);
  const auto& m = full.cell.metrics;
  const bool pass = m.mse < linear.metrics.mse && m.mse < persistence.metrics.mse && m.acc > linear.metrics.acc &&
                    m.acc > persistence.metrics.acc && secs < 600.0;
  return {pass, "PV-Client MSE " + fixed(m.mse) + " Acc " + fixed(m.acc) + " | LR MSE " + fixed(linear.metrics.mse) +
                    " Acc " + fixed(linear.metrics.acc) + " | Persistence MSE " + fixed(persistence.metrics.mse) +
                    " Acc " + fixed(persistence.metrics.acc) + " | n " + std::to_string(m.n) + ", " + fixed(secs, 1) +
                    " s (< 600 s)"};
}

Verdict ablation_ordering(BenchmarkRun& run, const fs::path& scratch) {
  const auto& full = run.full_model(scratch).cell;
  bool pass = true;
  std::string detail = "full " + fixed(full.metrics.mse);
  for (auto kind : {eval::GridKind::Ablation, eval::GridKind::Attention}) {
    for (auto& cell : eval::grid_cells(kind, run.options)) {
      // The unchanged cell of each grid is the full model itself.
      if (cell.config == full.config && cell.flags == full.flags) continue;
      const auto trained = eval::train_and_evaluate(cell, run.bench, run.options);
      const double mse = trained.cell.metrics.mse;
      const bool ok = full.metrics.mse <= mse;
      pass = pass && ok;
      detail += " | " + cell.label + " " + fixed(mse) + (ok ? "" : " (beats full)");
      std::cout << "  cell " << cell.label << " MSE " << fixed(mse) << std::endl;
    }
  }
  return {pass, detail};
}

Verdict history_sweep(BenchmarkRun& run) {
  const auto grid = eval::run_grid(eval::GridKind::History, run.bench, run.options);
  bool pass = grid.cells.size() == 3;
  std::string detail;
  const std::vector<std::string> expected{"L=96", "L=192", "L=384"};
  for (std::size_t i = 0; i < grid.cells.size(); ++i) {
    const auto& c = grid.cells[i];
    pass = pass && c.label == expected[i] && std::isfinite(c.metrics.mse) && c.metrics.n == 576;
    detail += (i ? " | " : "") + c.label + " MSE " + fixed(c.metrics.mse) + " Acc " + fixed(c.metrics.acc);
  }
  return {pass, detail};
}

Verdict metric_fidelity() {
  const std::vector<double> g{50, 60, 70, 80}, p{60, 50, 80, 70};
  const double acc = eval::accuracy(g, p, 100.0);
  const double perfect = eval::accuracy(g, g, 100.0);
  return {acc == 0.9 && perfect == 1.0,
          "errors of 10 on Cap 100 -> " + num(acc, 17) + ", perfect forecast -> " + num(perfect, 17)};
}

Verdict determinism(BenchmarkRun& run, const fs::path& scratch) {
  // Default benchmark retrained from scratch, checkpoint bytes compared.
  run.full_model(scratch);
  const auto again = eval::train_and_evaluate(eval::grid_cells(eval::GridKind::Ablation, run.options).front(),
                                              BenchmarkRun().bench, run.options);
  train::CheckpointMeta meta;
  meta.standardizer = run.bench.standardizer;
  meta.capacity = run.bench.original.capacity;
  meta.seed = run.options.seed;
  const fs::path second = scratch / "full_b.ckpt";
  train::save_checkpoint(second, again.model, meta);
  const bool ckpt_equal = slurp(run.full_checkpoint) == slurp(second);

  // A reduced grid run twice end to end, from station generation to CSV.
  auto small_grid = [&](const fs::path& path) {
    data::SynthOptions opts;
    opts.days = 20;
    const auto bench = eval::Benchmark::prepare(data::synth_station(opts).frame);
    eval::GridOptions g;
    g.base_config.input_len = 96;
    g.base_config.d_model = 16;
    g.base_config.heads = 2;
    g.base_config.num_blocks = 1;
    g.train.epochs = 2;
    g.train_stride = 4;
    eval::write_grid_csv(eval::run_grid(eval::GridKind::Ablation, bench, g), path);
  };
  small_grid(scratch / "grid_a.csv");
  small_grid(scratch / "grid_b.csv");
  const bool grid_equal = slurp(scratch / "grid_a.csv") == slurp(scratch / "grid_b.csv");
  return {ckpt_equal && grid_equal, std::string("default checkpoints ") + (ckpt_equal ? "identical" : "DIFFER") +
                                        " (" + std::to_string(fs::file_size(second)) + " bytes), grid CSVs " +
                                        (grid_equal ? "identical" : "DIFFER")};
}

Verdict checkpoint_round_trip(BenchmarkRun& run, const fs::path& scratch) {
  const auto& trained = run.full_model(scratch);
  std::mt19937_64 rng(11);
  const Tensor input = fd::uniform(rng, {trained.cell.config.input_len, 6}, false, -2.0, 2.0);
  const Tensor before = trained.model.forward(input).final;
  const auto loaded = train::load_checkpoint(run.full_checkpoint);
  const Tensor after = loaded.model.forward(input).final;
  bool equal = before.numel() == after.numel();
  for (std::size_t i = 0; equal && i < before.numel(); ++i) equal = before.data()[i] == after.data()[i];
  return {equal, std::string("trained default model, ") + std::to_string(before.numel()) + " outputs " +
                     (equal ? "bitwise equal" : "differ") + " after save -> load"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  auto selected = [&](int id) { return wanted.empty() || wanted.count(id) > 0; };

  const fs::path scratch = fs::temp_directory_path() / "pvclient_acceptance";
  fs::remove_all(scratch);
  fs::create_directories(scratch);
  std::optional<BenchmarkRun> bench;
  auto benchmark = [&]() -> BenchmarkRun& {
    if (!bench) bench.emplace();
    return *bench;
  };

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"RevIN round trip", revin_round_trip},
      {"attention stochasticity", attention_stochasticity},
      {"permutation equivariance", permutation_equivariance},
      {"overfit smoke test", overfit_smoke},
      {"synthetic benchmark ordering", [&] { return benchmark_ordering(benchmark(), scratch); }},
      {"ablation ordering", [&] { return ablation_ordering(benchmark(), scratch); }},
      {"history sweep", [&] { return history_sweep(benchmark()); }},
      {"metric fidelity", metric_fidelity},
      {"determinism", [&] { return determinism(benchmark(), scratch); }},
      {"checkpoint round trip", [&] { return checkpoint_round_trip(benchmark(), scratch); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += v.pass ? 0 : 1;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " " << criteria[i].first << ": "
              << v.detail << std::endl;
  }
  fs::remove_all(scratch);
  std::cout << (failures == 0 ? "all selected criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
