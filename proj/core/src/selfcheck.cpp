#include "pvclient/selfcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "pvclient/model.hpp"
#include "pvclient/rng.hpp"
#include "pvclient/training.hpp"

namespace pvclient::check {

using namespace pvclient::ad;
using namespace pvclient::layers;

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult gradient_check(const std::function<Tensor()>& loss, const ParamList& params,
                               double step, std::size_t max_entries) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
  backward(loss());
  GradCheckResult result;
  for (const auto& p : params) {
    Tensor t = p.tensor;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto values = t.mutable_data();
    const std::size_t n = values.size();
    const std::size_t stride = std::max<std::size_t>(1, n / std::min(n, max_entries));
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = values[i];
      double plus, minus;
      {
        NoGradGuard guard;
        values[i] = saved + step;
        plus = loss().item();
        values[i] = saved - step;
        minus = loss().item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double err = relative_error(a, numeric);
      ++result.checked;
      if (err >= result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = p.name + "[" + std::to_string(i) + "]";
      }
    }
    t.zero_grad();
  }
  return result;
}

bool SelfcheckReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

namespace {

Tensor random_tensor(Rng& rng, Shape shape, bool requires_grad, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

CheckResult grad_result(const std::string& name, const GradCheckResult& r) {
  return {name, r.max_rel_error < 1e-4,
          "max rel err " + fmt(r.max_rel_error) + " at " + r.worst + " over " +
              std::to_string(r.checked) + " entries"};
}

model::ModelConfig toy_config() {
  model::ModelConfig cfg;
  cfg.input_len = 16;
  cfg.horizon = 4;
  cfg.channels = 3;
  cfg.num_blocks = 1;
  cfg.heads = 2;
  cfg.d_model = 8;
  cfg.target_channel = 0;
  cfg.radiation_channel = 1;
  return cfg;
}

// Nudges every parameter away from its initialization so zero biases and unit
// gains do not hide errors in their gradient rules.
void jitter(const ParamList& params, Rng& rng, double amount) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    for (double& v : t.mutable_data()) v += rng.uniform(-amount, amount);
  }
}

std::vector<CheckResult> gradient_checks(Rng& rng) {
  std::vector<CheckResult> out;
  {
    Tensor a = random_tensor(rng, {5, 7}, true);
    Tensor b = random_tensor(rng, {7, 3}, true);
    Tensor w = random_tensor(rng, {5, 3}, false);
    out.push_back(grad_result("grad: matmul", gradient_check([&] { return sum(mul(matmul(a, b), w)); },
                                                             {{"a", a}, {"b", b}})));
  }
  {
    Tensor x = random_tensor(rng, {3, 5}, true);
    Tensor w = random_tensor(rng, {3, 5}, false);
    out.push_back(grad_result("grad: softmax_rows",
                              gradient_check([&] { return sum(mul(softmax_rows(x), w)); }, {{"x", x}})));
    Tensor w2 = random_tensor(rng, {5, 3}, false);
    out.push_back(grad_result("grad: permute10",
                              gradient_check([&] { return sum(mul(permute10(x), w2)); }, {{"x", x}})));
    Tensor wr = random_tensor(rng, {3}, false);
    out.push_back(grad_result("grad: rowwise_mean_std", gradient_check([&] {
                                auto s = rowwise_mean_std(x, 1e-5);
                                return add(sum(mul(s.mean, wr)), sum(mul(mul(s.std, s.std), wr)));
                              }, {{"x", x}})));
  }
  {
    Tensor a = random_tensor(rng, {4, 4}, true);
    Tensor b = random_tensor(rng, {4, 4}, true, 0.5, 1.5);
    Tensor v = random_tensor(rng, {4}, true, 0.5, 1.5);
    Tensor w = random_tensor(rng, {4, 4}, false);
    out.push_back(grad_result("grad: elementwise", gradient_check([&] {
                                Tensor y = add(sub(mul(a, b), div(a, b)), scale(relu(a), 0.7));
                                y = div_rows(mul_rows(sub_rows(add_rows(y, v), v), v), v);
                                return sum(mul(y, w));
                              }, {{"a", a}, {"b", b}, {"v", v}})));
  }
  {
    // Shared subexpressions accumulate along every path.
    Tensor x = random_tensor(rng, {4, 4}, true);
    Tensor x2 = random_tensor(rng, {4, 4}, true);
    out.push_back(grad_result("grad: composite graph", gradient_check([&] {
                                Tensor h = relu(matmul(x, x2));
                                return sum(mul(softmax_rows(h), add(h, x)));
                              }, {{"x", x}, {"x2", x2}})));
  }
  {
    MhaParams mha = make_mha(rng, 16, 2, 4);
    Tensor tokens = random_tensor(rng, {6, 16}, true);
    Tensor w = random_tensor(rng, {6, 16}, false);
    ParamList params{{"tokens", tokens}};
    append_params("mha", MixerParams{mha}, params);
    out.push_back(grad_result("grad: cross_variable_attention", gradient_check([&] {
                                return sum(mul(cross_variable_attention(tokens, mha), w));
                              }, params)));
  }
  {
    EncoderBlockParams b1{make_mha(rng, 12, 2, 4), make_ffn(rng, 12, 8), make_layer_norm(12),
                          make_layer_norm(12)};
    EncoderBlockParams b2{make_mha(rng, 12, 2, 4), make_ffn(rng, 12, 8), make_layer_norm(12),
                          make_layer_norm(12)};
    Tensor tokens = random_tensor(rng, {2, 3, 12}, true);
    Tensor w = random_tensor(rng, {3, 12}, false);
    ParamList params{{"tokens", tokens}};
    append_params("b1", b1, params);
    append_params("b2", b2, params);
    jitter(ParamList(params.begin() + 1, params.end()), rng, 0.1);
    out.push_back(grad_result("grad: encoder_block x2", gradient_check([&] {
                                return sum(mul(encoder_block(encoder_block(tokens, b1), b2), w));
                              }, params)));
  }
  {
    AffineParams proj = make_affine(rng, 16, 8);
    AffineParams lin = make_affine(rng, 16, 8);
    AffineParams emb = make_affine(rng, 16, 12);
    EncoderBlockParams blk{make_mha(rng, 12, 2, 4), make_ffn(rng, 12, 8), make_layer_norm(12),
                           make_layer_norm(12)};
    Tensor tokens = random_tensor(rng, {6, 16}, true);
    Tensor o = random_tensor(rng, {16, 4}, true);
    Tensor w = random_tensor(rng, {8, 6}, false);
    Tensor w4 = random_tensor(rng, {8, 4}, false);
    Tensor we = random_tensor(rng, {6, 12}, false);
    jitter({{"pb", proj.bias}, {"lb", lin.bias}, {"eb", emb.bias}}, rng, 0.1);
    ParamList pp{{"tokens", tokens}};
    append_params("projection", proj, pp);
    out.push_back(grad_result("grad: projection_head", gradient_check([&] {
                                return sum(mul(projection_head(tokens, proj), w));
                              }, pp)));
    ParamList lp{{"o", o}};
    append_params("linear", lin, lp);
    out.push_back(grad_result("grad: linear_trend", gradient_check([&] {
                                return sum(mul(linear_trend(o, lin), w4));
                              }, lp)));
    ParamList ep{{"tokens", tokens}};
    append_params("embedding", emb, ep);
    append_params("block", blk, ep);
    out.push_back(grad_result("grad: embedding + encoder_block", gradient_check([&] {
                                return sum(mul(encoder_block(optional_embedding(tokens, emb, true), blk), we));
                              }, ep)));
  }
  {
    RevInParams revin = make_revin(4);
    jitter({{"alpha", revin.alpha}, {"beta", revin.beta}}, rng, 0.3);
    Tensor h = random_tensor(rng, {10, 4}, true);
    Tensor w = random_tensor(rng, {10, 4}, false);
    Tensor wf = random_tensor(rng, {5, 2}, false);
    Tensor f = random_tensor(rng, {5, 2}, true);
    ParamList params{{"h", h}, {"f", f}};
    append_params("revin", revin, params);
    out.push_back(grad_result("grad: revin normalize/denormalize", gradient_check([&] {
                                auto r = revin_normalize(h, revin);
                                Tensor back = revin_denormalize(f, revin, r.state, {2, 0});
                                return add(sum(mul(r.normalized, w)), sum(mul(back, wf)));
                              }, params)));
  }
  {
    LinearMixerParams lm = make_linear_mixer(rng, 5);
    MlpMixerParams mm = make_mlp_mixer(rng, 5, 7);
    jitter({{"lb", lm.bias}, {"b1", mm.b1}, {"b2", mm.b2}}, rng, 0.1);
    Tensor tokens = random_tensor(rng, {2, 5, 6}, true);
    Tensor w = random_tensor(rng, {5, 6}, false);
    ParamList lp{{"tokens", tokens}};
    append_params("linear_mixer", MixerParams{lm}, lp);
    out.push_back(grad_result("grad: linear_mixer", gradient_check([&] {
                                return sum(mul(linear_mixer(tokens, lm), w));
                              }, lp)));
    ParamList mp{{"tokens", tokens}};
    append_params("mlp_mixer", MixerParams{mm}, mp);
    out.push_back(grad_result("grad: mlp_mixer", gradient_check([&] {
                                return sum(mul(mlp_mixer(tokens, mm), w));
                              }, mp)));
  }
  {
    using model::AttentionKind;
    using model::OutputMode;
    std::vector<std::pair<std::string, model::VariantFlags>> variants(8);
    variants[0].first = "-Linear";
    variants[0].second.use_linear = false;
    variants[1].first = "-RevIN";
    variants[1].second.use_revin = false;
    variants[2].first = "+Embed";
    variants[2].second.add_embedding = true;
    variants[3].first = "linear mixer";
    variants[3].second.attention = AttentionKind::LinearMixer;
    variants[4].first = "mlp mixer";
    variants[4].second.attention = AttentionKind::MlpMixer;
    variants[5].first = "no attention";
    variants[5].second.attention = AttentionKind::NoAttention;
    variants[6].first = "radiation output";
    variants[6].second.output_mode = OutputMode::RadiationDim;
    variants[7].first = "learnable sum output";
    variants[7].second.output_mode = OutputMode::SumLearnable;
    for (const auto& [name, flags] : variants) {
      model::PvClient net(toy_config(), flags, rng.engine()());
      jitter(net.parameters(), rng, 0.05);
      Tensor h = random_tensor(rng, {2, 16, 3}, false);
      Tensor g = random_tensor(rng, {2, 4}, false);
      out.push_back(grad_result("grad: model variant " + name, gradient_check([&] {
                                  return train::mse_loss(net.forward(h).final, g);
                                }, net.parameters(), 1e-5, 64)));
    }
  }
  {
    model::PvClient net(toy_config(), {}, rng.engine()());
    jitter(net.parameters(), rng, 0.05);
    Tensor h = random_tensor(rng, {2, 16, 3}, false);
    Tensor g = random_tensor(rng, {2, 4}, false);
    out.push_back(grad_result("grad: full model (L=16,T=4,C=3)", gradient_check([&] {
                                return train::mse_loss(net.forward(h).final, g);
                              }, net.parameters())));
  }
  return out;
}

CheckResult revin_round_trip(Rng& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    RevInParams p = make_revin(6);
    for (double& a : p.alpha.mutable_data()) a = rng.uniform(0.5, 2.0);
    for (double& b : p.beta.mutable_data()) b = rng.uniform(-1.0, 1.0);
    NoGradGuard guard;
    Tensor h = random_tensor(rng, {192, 6}, false, -50.0, 50.0);
    auto r = revin_normalize(h, p);
    Tensor back = revin_denormalize(r.normalized, p, r.state, {0, 1, 2, 3, 4, 5});
    for (std::size_t i = 0; i < h.numel(); ++i) worst = std::max(worst, std::abs(back.at(i) - h.at(i)));
  }
  return {"revin round trip", worst < 1e-6, "max abs err " + fmt(worst)};
}

CheckResult attention_rows(Rng& rng) {
  double worst = 0.0;
  bool nonnegative = true;
  NoGradGuard guard;
  for (int trial = 0; trial < 100; ++trial) {
    MhaParams mha = make_mha(rng, 32, 4, 8);
    std::vector<Tensor> weights;
    cross_variable_attention(random_tensor(rng, {4, 6, 32}, false, -3.0, 3.0), mha, &weights);
    for (const auto& a : weights) {
      const std::size_t cols = a.dim(-1);
      for (std::size_t r = 0; r < a.numel() / cols; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          s += a.at(r * cols + c);
          nonnegative = nonnegative && a.at(r * cols + c) >= 0.0;
        }
        worst = std::max(worst, std::abs(s - 1.0));
      }
    }
  }
  return {"attention row-stochastic", nonnegative && worst < 1e-12, "max |row sum - 1| " + fmt(worst)};
}

CheckResult permutation_equivariance(Rng& rng) {
  model::ModelConfig cfg;
  cfg.input_len = 48;
  cfg.horizon = 12;
  cfg.d_model = 32;
  cfg.heads = 4;
  model::PvClient net(cfg, {}, rng.engine()());
  NoGradGuard guard;
  Tensor h = random_tensor(rng, {cfg.input_len, cfg.channels}, false);
  const std::vector<std::size_t> perm{0, 3, 5, 1, 4, 2};  // target column stays first
  std::vector<double> permuted(h.numel());
  for (std::size_t t = 0; t < cfg.input_len; ++t) {
    for (std::size_t c = 0; c < cfg.channels; ++c) {
      permuted[t * cfg.channels + c] = h.at(t, perm[c]);
    }
  }
  const auto a = net.forward(h).final;
  const auto b = net.forward(Tensor::from(h.shape(), permuted)).final;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a.at(i) - b.at(i)));
  return {"channel permutation equivariance", worst < 1e-9, "max |diff| " + fmt(worst)};
}

CheckResult checkpoint_round_trip(Rng& rng) {
  const auto path = std::filesystem::temp_directory_path() /
                    ("pvclient_selfcheck_" + std::to_string(rng.engine()()) + ".ckpt");
  model::PvClient net(toy_config(), {}, rng.engine()());
  jitter(net.parameters(), rng, 0.1);
  Tensor h = random_tensor(rng, {16, 3}, false);
  NoGradGuard guard;
  const auto before = net.forward(h).final;
  train::save_checkpoint(path, net, {});
  const auto loaded = train::load_checkpoint(path);
  const auto after = loaded.model.forward(h).final;
  std::filesystem::remove(path);
  const bool same = std::equal(before.data().begin(), before.data().end(), after.data().begin());
  return {"checkpoint round trip", same, same ? "bitwise equal" : "forward output differs"};
}

}  // namespace

SelfcheckReport run_selfcheck(std::ostream& log, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(seed);
  SelfcheckReport report;
  auto record = [&](CheckResult r) {
    log << (r.passed ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << '\n';
    report.checks.push_back(std::move(r));
  };
  for (auto& r : gradient_checks(rng)) record(std::move(r));
  record(revin_round_trip(rng));
  record(attention_rows(rng));
  record(permutation_equivariance(rng));
  record(checkpoint_round_trip(rng));
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace pvclient::check
