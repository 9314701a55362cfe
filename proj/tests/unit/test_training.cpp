#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pvclient/error.hpp"
#include "pvclient/training.hpp"
#include "unit/fd_oracle.hpp"

using namespace pvclient;
using namespace pvclient::ad;
using namespace pvclient::train;
namespace fs = std::filesystem;

namespace {

model::ModelConfig toy() {
  model::ModelConfig c;
  c.input_len = 16;
  c.horizon = 4;
  c.channels = 3;
  c.num_blocks = 1;
  c.heads = 2;
  c.d_model = 8;
  return c;
}

std::vector<data::WindowSample> toy_windows(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.1);
  std::vector<data::WindowSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    data::WindowSample w;
    w.length = 16;
    w.horizon = 4;
    w.start_index = i;
    for (std::size_t t = 0; t < 16; ++t) {
      const double phase = 0.4 * static_cast<double>(t + i);
      w.inputs.push_back(std::sin(phase) + noise(rng));
      w.inputs.push_back(std::cos(phase) + noise(rng));
      w.inputs.push_back(noise(rng));
    }
    for (std::size_t k = 0; k < 4; ++k) w.target.push_back(std::sin(0.4 * static_cast<double>(16 + k + i)));
    out.push_back(std::move(w));
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<double>> snapshot(const model::PvClient& net) {
  std::vector<std::vector<double>> out;
  for (const auto& p : net.parameters()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

class Scratch : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           (std::string("pvclient_train_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path file(const std::string& name) const { return dir_ / name; }
  fs::path dir_;
};

}  // namespace

TEST(MseLoss, Examples) {
  Tensor a = Tensor::from({3}, {1, 2, 3});
  EXPECT_EQ(mse_loss(a, a).item(), 0.0);
  EXPECT_DOUBLE_EQ(mse_loss(Tensor::from({2}, {3, -3}), Tensor::from({2}, {0, 0})).item(), 9.0);
  EXPECT_THROW(mse_loss(a, Tensor::zeros({2})), ShapeError);
}

TEST(MseLoss, GradientIsScaledResidual) {
  std::mt19937_64 rng(1);
  Tensor p = fd::uniform(rng, {5});
  Tensor g = fd::uniform(rng, {5}, false);
  backward(mse_loss(p, g));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(p.grad()[i], 2.0 * (p.at(i) - g.at(i)) / 5.0, 1e-15);
  auto o = fd::compare([&] { return mse_loss(p, g); }, {{"p", p}});
  EXPECT_LT(o.max_rel, 1e-4);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Tensor p = Tensor::from({3}, {1, 2, 3}, true);
  std::vector<Tensor> params{p};
  AdamState s = AdamState::for_params(params);
  backward(scale(sum(p), 0.0));
  adam_step(params, s, 1e-3);
  EXPECT_EQ(p.at(0), 1.0);
  EXPECT_EQ(p.at(2), 3.0);
  Tensor q = Tensor::from({2}, {5, 6}, true);
  std::vector<Tensor> untouched{q};
  AdamState s2 = AdamState::for_params(untouched);
  adam_step(untouched, s2, 1e-3);
  EXPECT_EQ(q.at(1), 6.0);
}

TEST(Adam, FirstStepClosedForm) {
  Tensor p = Tensor::from({1}, {0.5}, true);
  std::vector<Tensor> params{p};
  AdamState s = AdamState::for_params(params);
  backward(sum(p));  // gradient 1
  adam_step(params, s, 1e-3);
  EXPECT_NEAR(p.item(), 0.5 - 1e-3 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, DescendsQuadratic) {
  Tensor p = Tensor::from({1}, {1.0}, true);
  std::vector<Tensor> params{p};
  AdamState s = AdamState::for_params(params);
  double prev = 1.0;
  for (int i = 0; i < 50; ++i) {
    p.zero_grad();
    backward(sum(mul(p, p)));
    adam_step(params, s, 1e-2);
    EXPECT_LT(std::abs(p.item()), prev);
    prev = std::abs(p.item());
  }
}

TEST(Adam, ShapeMismatch) {
  Tensor p = Tensor::from({2}, {1, 2}, true);
  std::vector<Tensor> params{p};
  AdamState s = AdamState::for_params(params);
  std::vector<Tensor> other{Tensor::from({3}, {1, 2, 3}, true)};
  EXPECT_THROW(adam_step(other, s, 1e-3), ShapeError);
}

TEST(TrainConfig, DefaultsAndValidation) {
  TrainConfig c;
  EXPECT_EQ(c.learning_rate, 1e-3);
  EXPECT_EQ(c.batch_size, 128u);
  EXPECT_EQ(c.epochs, 10u);
  EXPECT_FALSE(c.clip_norm.has_value());
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.clip_norm = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, EmptyWindowSet) {
  model::PvClient net(toy(), {}, 1);
  EXPECT_THROW(train::train(net, {}, TrainConfig{}), DataError);
}

TEST(Train, DeterministicTrajectories) {
  const auto windows = toy_windows(40, 2);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  model::PvClient a(toy(), {}, 3), b(toy(), {}, 3);
  const auto la = train::train(a, windows, cfg);
  const auto lb = train::train(b, windows, cfg);
  EXPECT_EQ(la.epoch_loss, lb.epoch_loss);
  EXPECT_EQ(snapshot(a), snapshot(b));
  EXPECT_EQ(la.steps, 15u);
  cfg.seed = 99;
  model::PvClient c(toy(), {}, 3);
  EXPECT_NE(train::train(c, windows, cfg).epoch_loss, la.epoch_loss);
}

TEST(Train, ZeroLearningRateKeepsParameters) {
  const auto windows = toy_windows(20, 4);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 7;
  cfg.learning_rate = 0.0;
  model::PvClient net(toy(), {}, 5);
  const auto before = snapshot(net);
  train::train(net, windows, cfg);
  EXPECT_EQ(snapshot(net), before);
}

TEST(Train, CombineWeightsMoveAfterOneStep) {
  const auto windows = toy_windows(16, 6);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  model::PvClient net(toy(), {}, 7);
  train::train(net, windows, cfg);
  EXPECT_NE(net.w_trans().item(), 1.0);
  EXPECT_NE(net.w_lin().item(), 1.0);
}

TEST(Train, LossDecreasesAndClipHonored) {
  const auto windows = toy_windows(32, 8);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 8;
  cfg.learning_rate = 3e-3;
  model::PvClient net(toy(), {}, 9);
  TrainHooks hooks;
  hooks.track_full_loss = true;
  std::size_t calls = 0;
  hooks.on_epoch = [&](std::size_t, double) { ++calls; };
  const auto log = train::train(net, windows, cfg, hooks);
  EXPECT_EQ(calls, 30u);
  EXPECT_EQ(log.final_loss.size(), 30u);
  EXPECT_LT(log.final_loss.back(), 0.2 * log.initial_loss);

  cfg.clip_norm = 1e-3;
  cfg.epochs = 3;
  model::PvClient clipped(toy(), {}, 9);
  const auto clog = train::train(clipped, windows, cfg);
  EXPECT_EQ(clog.epoch_loss.size(), 3u);
}

TEST(Train, FixedSumWeightsNeverUpdated) {
  model::VariantFlags f;
  f.output_mode = model::OutputMode::SumFixed;
  model::PvClient net(toy(), f, 10);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 5;
  train::train(net, toy_windows(10, 11), cfg);
  EXPECT_EQ(net.sum_weights().at(0), 0.5);
  EXPECT_EQ(net.sum_weights().at(1), 0.5);

  f.output_mode = model::OutputMode::SumLearnable;
  model::PvClient learn(toy(), f, 10);
  train::train(learn, toy_windows(10, 11), cfg);
  EXPECT_NE(learn.sum_weights().at(0), 0.5);
}

TEST(Train, EvaluateLossMatchesManualMean) {
  const auto windows = toy_windows(7, 12);
  model::PvClient net(toy(), {}, 13);
  double total = 0.0;
  for (const auto& w : windows) {
    auto pred = net.forward(Tensor::from({16, 3}, w.inputs)).final;
    for (std::size_t k = 0; k < 4; ++k) total += std::pow(pred.at(k) - w.target[k], 2);
  }
  EXPECT_NEAR(evaluate_loss(net, windows, 3), total / 28.0, 1e-12);
}

// ---------------------------------------------------------------------------

TEST_F(Scratch, CheckpointRoundTripIsExact) {
  model::VariantFlags f;
  f.output_mode = model::OutputMode::SumLearnable;
  model::PvClient net(toy(), f, 20);
  train::train(net, toy_windows(12, 21), TrainConfig{.batch_size = 6, .epochs = 1, .seed = 42, .clip_norm = std::nullopt});
  CheckpointMeta meta;
  meta.standardizer = data::Standardizer({1, 2, 3}, {4, 5, 6});
  meta.capacity = 750.0;
  meta.seed = 20;
  save_checkpoint(file("a.ckpt"), net, meta);
  const auto loaded = load_checkpoint(file("a.ckpt"));
  EXPECT_EQ(loaded.meta.config, toy());
  EXPECT_EQ(loaded.meta.flags, f);
  EXPECT_EQ(loaded.meta.capacity, 750.0);
  EXPECT_EQ(loaded.meta.seed, 20u);
  ASSERT_TRUE(loaded.meta.standardizer.has_value());
  EXPECT_EQ(loaded.meta.standardizer->stddev(), (std::vector<double>{4, 5, 6}));
  EXPECT_EQ(snapshot(loaded.model), snapshot(net));

  std::mt19937_64 rng(22);
  Tensor h = fd::uniform(rng, {16, 3}, false);
  const auto a = net.forward(h).final;
  const auto b = loaded.model.forward(h).final;
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.at(i), b.at(i));

  save_checkpoint(file("b.ckpt"), loaded.model, loaded.meta);
  EXPECT_EQ(slurp(file("a.ckpt")), slurp(file("b.ckpt")));
}

TEST_F(Scratch, CheckpointHeaderLayout) {
  model::PvClient net(toy(), {}, 23);
  save_checkpoint(file("c.ckpt"), net, {});
  const std::string bytes = slurp(file("c.ckpt"));
  ASSERT_GT(bytes.size(), 16u);
  EXPECT_EQ(bytes.substr(0, 4), "PVCL");
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  EXPECT_EQ(version, kCheckpointVersion);
  std::uint64_t header = 0;
  std::memcpy(&header, bytes.data() + 8, 8);
  EXPECT_EQ(bytes.size(), 16 + header + 8 * net.parameter_count());
  EXPECT_EQ(bytes[16], '{');
}

TEST_F(Scratch, CorruptedMagicRejected) {
  model::PvClient net(toy(), {}, 24);
  save_checkpoint(file("m.ckpt"), net, {});
  std::string bytes = slurp(file("m.ckpt"));
  bytes[0] = 'X';
  std::ofstream(file("m.ckpt"), std::ios::binary) << bytes;
  EXPECT_THROW(load_checkpoint(file("m.ckpt")), CheckpointError);
}

TEST_F(Scratch, WrongVersionRejected) {
  model::PvClient net(toy(), {}, 24);
  save_checkpoint(file("v.ckpt"), net, {});
  std::string bytes = slurp(file("v.ckpt"));
  bytes[4] = 9;
  std::ofstream(file("v.ckpt"), std::ios::binary) << bytes;
  try {
    load_checkpoint(file("v.ckpt"));
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST_F(Scratch, TruncatedAndTrailingRejected) {
  model::PvClient net(toy(), {}, 25);
  save_checkpoint(file("t.ckpt"), net, {});
  const std::string bytes = slurp(file("t.ckpt"));
  std::ofstream(file("short.ckpt"), std::ios::binary) << bytes.substr(0, bytes.size() - 5);
  EXPECT_THROW(load_checkpoint(file("short.ckpt")), CheckpointError);
  std::ofstream(file("long.ckpt"), std::ios::binary) << bytes << "xx";
  EXPECT_THROW(load_checkpoint(file("long.ckpt")), CheckpointError);
  EXPECT_THROW(load_checkpoint(file("missing.ckpt")), CheckpointError);
}

TEST_F(Scratch, MismatchedConfigNamesFirstTensor) {
  model::PvClient net(toy(), {}, 26);
  save_checkpoint(file("s.ckpt"), net, {});
  model::ModelConfig other = toy();
  other.horizon = 5;
  model::PvClient target(other, {}, 26);
  try {
    load_checkpoint_into(file("s.ckpt"), target);
    FAIL();
  } catch (const CheckpointError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("projection.weight"), std::string::npos) << msg;
  }
}

TEST_F(Scratch, ZeroEpochCheckpointEqualsInitialization) {
  model::PvClient net(toy(), {}, 27);
  const auto init = snapshot(net);
  train::train(net, toy_windows(5, 28), TrainConfig{.epochs = 0, .seed = 42, .clip_norm = std::nullopt});
  save_checkpoint(file("z.ckpt"), net, {});
  EXPECT_EQ(snapshot(load_checkpoint(file("z.ckpt")).model), init);
}
