// Acceptance suite: one test case per criterion, each printing a PASS line.
// The heavyweight corpus (1 subject, 100 trials per class, fs 512, snr 0 dB,
// full preprocessing chain) is built once and shared.

#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>

#include "diffe/diffe.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace diffe;
using diffe::testing::gradcheck;
using Catch::Approx;

namespace {

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

void criterion_pass(int n, const std::string& what) {
  std::printf("[PASS] criterion %d: %s\n", n, what.c_str());
  std::fflush(stdout);
}

const EpochSet& default_corpus() {
  static const EpochSet set = [] {
    std::fprintf(stderr, "[acceptance] building the default corpus (100/class, 64 ch, 512 Hz)...\n");
    SyntheticConfig cfg;  // defaults: 1 subject, 100 per class, 64 channels, fs 512, snr 0
    return diffe::testing::make_preprocessed_corpus(cfg);
  }();
  return set;
}

const EpochSet& reduced_corpus() {
  static const EpochSet set = [] {
    SyntheticConfig cfg;
    cfg.per_class = 10;
    return diffe::testing::make_preprocessed_corpus(cfg);
  }();
  return set;
}

ModelConfig micro_model() {
  ModelConfig cfg;
  cfg.in_channels = 4;
  cfg.time_dim = 8;
  cfg.groups = 2;
  cfg.ddpm_widths = {4, 6, 8};
  cfg.enc_widths = {4, 6, 8};
  cfg.dec_width = 6;
  cfg.classes = 3;
  return cfg;
}

TrainConfig acceptance_train_config(std::size_t epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.diffusion_steps = 200;
  cfg.seed = 42;
  cfg.verbose = true;
  return cfg;
}

template <typename T>
Tensor<T> randn_grad(Shape s, Rng& rng) {
  auto t = Tensor<T>::randn(std::move(s), rng);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// 1. gradient suite
// ---------------------------------------------------------------------------
TEST_CASE("criterion 1: gradient suite") {
  const double t0 = now_s();
  const double tol = 1e-3;
  Rng rng(20240401);

  // >= 20 randomized shape rounds over every primitive
  for (int round = 0; round < 20; ++round) {
    const std::size_t batch = 1 + rng.uniform_int(0, 2);
    const std::size_t cin = 1 + rng.uniform_int(0, 4);
    const std::size_t cout = 1 + rng.uniform_int(0, 4);
    const std::size_t kernel = 1 + rng.uniform_int(0, 2) * 2;  // 1, 3, 5
    const std::size_t stride = 1 + rng.uniform_int(0, 1);
    const std::size_t pad = rng.uniform_int(0, 1);
    const std::size_t len = kernel + 2 + rng.uniform_int(0, 12);
    const std::size_t lo = (len + 2 * pad - kernel) / stride + 1;

    {
      auto x = randn_grad<double>({batch, cin, len}, rng);
      auto w = randn_grad<double>({cout, cin, kernel}, rng);
      auto b = randn_grad<double>({cout}, rng);
      auto tgt = Tensor<double>::randn({batch, cout, lo}, rng);
      auto f = [&](Tape<double>* t) { return mse_loss(conv1d(x, w, b, stride, pad, t), tgt, t); };
      REQUIRE(gradcheck(f, {x, w, b}) < tol);
    }
    {
      const std::size_t ch = 2 * (1 + rng.uniform_int(0, 3));
      const std::size_t groups = ch % 4 == 0 && rng.uniform() < 0.5 ? 4 : 2;
      auto x = randn_grad<double>({batch, ch, len}, rng);
      auto g = randn_grad<double>({ch}, rng);
      auto b = randn_grad<double>({ch}, rng);
      auto tgt = Tensor<double>::randn({batch, ch, len}, rng);
      auto f = [&](Tape<double>* t) {
        return mse_loss(group_norm(x, groups, g, b, 1e-5, t), tgt, t);
      };
      REQUIRE(gradcheck(f, {x, g, b}) < tol);
    }
    {
      auto x = randn_grad<double>({batch, len}, rng);
      auto tgt = Tensor<double>::randn({batch, len}, rng);
      auto f = [&](Tape<double>* t) { return mse_loss(elu(x, 1.0, t), tgt, t); };
      REQUIRE(gradcheck(f, {x}) < tol);
    }
    {
      const std::size_t n = 2 + rng.uniform_int(0, 6);
      const std::size_t m = 1 + rng.uniform_int(0, 6);
      auto x = randn_grad<double>({batch, n}, rng);
      auto w = randn_grad<double>({m, n}, rng);
      auto b = randn_grad<double>({m}, rng);
      auto tgt = Tensor<double>::randn({batch, m}, rng);
      auto f = [&](Tape<double>* t) { return mse_loss(affine(x, w, b, t), tgt, t); };
      REQUIRE(gradcheck(f, {x, w, b}) < tol);
    }
    {
      const std::size_t target = 1 + rng.uniform_int(0, static_cast<std::int64_t>(len) - 1);
      auto x = randn_grad<double>({batch, cin, len}, rng);
      auto tgt = Tensor<double>::randn({batch, cin, target}, rng);
      auto f = [&](Tape<double>* t) { return mse_loss(adaptive_avg_pool(x, target, t), tgt, t); };
      REQUIRE(gradcheck(f, {x}) < tol);
    }
    {
      auto x = randn_grad<double>({batch, cin, len}, rng);
      auto y = randn_grad<double>({batch, cin, 2 * len}, rng);
      auto v = randn_grad<double>({batch, cin + cin}, rng);
      auto tgt = Tensor<double>::randn({batch, 2 * cin, 2 * len}, rng);
      auto f = [&](Tape<double>* t) {
        auto cat = concat_channels<double>({upsample_nearest2(x, t), y}, t);
        auto biased = add_channel_bias(cat, v, t);
        return mse_loss(mul_scalar(add(biased, cat, t), 0.3, t), tgt, t);
      };
      REQUIRE(gradcheck(f, {x, y, v}) < tol);
    }
    {
      auto p = randn_grad<double>({batch, len}, rng);
      auto q = Tensor<double>::randn({batch, len}, rng);
      auto f1 = [&](Tape<double>* t) { return l1_loss(p, q, Reduce::Mean, t); };
      REQUIRE(gradcheck(f1, {p}) < tol);
      auto f2 = [&](Tape<double>* t) { return mse_loss(p, q, t); };
      REQUIRE(gradcheck(f2, {p}) < tol);
    }
  }

  // full composite graph, both sides of the objective, in 64-bit
  {
    const ModelConfig cfg = micro_model();
    auto bundle = ModelBundle<double>::init(cfg, AblationMode::Full, 4242);
    Rng xr(99);
    const std::size_t L = 16;
    Tensor<double> x0 = Tensor<double>::randn({2, 4, L}, xr);
    Tensor<double> x_t = Tensor<double>::randn({2, 4, L}, xr);
    const std::vector<std::size_t> tsteps{3, 9};

    auto theta_params = bundle.theta_params();
    auto f_theta = [&](Tape<double>* t) {
      auto [x_hat, acts] = bundle.theta->forward(x_t, tsteps, t);
      return ddpm_loss(x0, x_hat, t).first;
    };
    {
      // keep finite differences off the |.| kink: the gap between x0 and the
      // prediction must dominate the perturbation
      auto [x_hat, acts] = bundle.theta->forward(x_t, tsteps);
      double min_gap = 1e300;
      for (std::size_t i = 0; i < x0.size(); ++i) {
        min_gap = std::min(min_gap, std::abs(x0[i] - x_hat[i]));
      }
      REQUIRE(min_gap > 1e-2);
    }
    REQUIRE(gradcheck(f_theta, theta_params, 1e-4, 6) < tol);

    auto [x_hat, acts] = bundle.theta->forward(x_t, tsteps);
    auto [lddpm, emap] = ddpm_loss(x0, x_hat);
    std::vector<Tensor<double>> skips{acts.quarter.detach(), acts.half.detach(),
                                      acts.full.detach()};
    Tensor<double> x_hat_d = x_hat.detach();
    Tensor<double> onehot({2, 3});
    onehot[0] = 1.0;
    onehot[3 + 2] = 1.0;

    auto cae_params = bundle.cae_params();
    auto f_cae = [&](Tape<double>* t) {
      auto enc = bundle.phi.forward(x0, t);
      auto pred = bundle.psi->forward(enc.e3, skips, &x0, &x_hat_d, t);
      auto lcae = l1_loss(pred, emap, Reduce::Mean, t);
      auto lcls = mse_loss(bundle.rho.forward(enc.z, t), onehot, t);
      return add(lcae, mul_scalar(lcls, 0.1, t), t);
    };
    {
      auto enc = bundle.phi.forward(x0);
      auto pred = bundle.psi->forward(enc.e3, skips, &x0, &x_hat_d);
      double min_gap = 1e300;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        min_gap = std::min(min_gap, std::abs(pred[i] - emap[i]));
      }
      REQUIRE(min_gap > 1e-2);
    }
    REQUIRE(gradcheck(f_cae, cae_params, 1e-4, 6) < tol);

    // the denoiser must receive nothing through the detached hand-off
    Tape<double> tape;
    Tensor<double> loss = f_cae(&tape);
    backward(loss, tape);
    for (auto& p : theta_params) REQUIRE_FALSE(p.has_grad());
  }

  const double elapsed = now_s() - t0;
  REQUIRE(elapsed < 120.0);
  criterion_pass(1, "all primitives and the composite graph match finite differences (" +
                        std::to_string(elapsed) + " s)");
}

// ---------------------------------------------------------------------------
// 2. diffusion correctness
// ---------------------------------------------------------------------------
TEST_CASE("criterion 2: diffusion correctness") {
  const double t0 = now_s();

  // iterated kernels vs the closed form, 10k chains at T = 8
  {
    NoiseSchedule s = make_schedule(8, 0.05, 0.3);
    const std::vector<double> x0v{1.0, -0.5, 2.0, 0.25};
    Tensor<float> x0 = Tensor<float>::from({4}, {1.f, -0.5f, 2.f, 0.25f});
    Rng rng(20240402);
    const std::size_t kChains = 10000;
    std::vector<double> sum(4, 0.0), sum2(4, 0.0);
    for (std::size_t c = 0; c < kChains; ++c) {
      Tensor<float> x = x0;
      for (std::size_t t = 1; t <= 8; ++t) x = q_step(x, t, s, rng);
      for (std::size_t i = 0; i < 4; ++i) {
        sum[i] += x[i];
        sum2[i] += static_cast<double>(x[i]) * x[i];
      }
    }
    const double ab = s.alpha_bar_at(8);
    for (std::size_t i = 0; i < 4; ++i) {
      const double mean = sum[i] / kChains;
      const double var = sum2[i] / kChains - mean * mean;
      REQUIRE(std::abs(mean - std::sqrt(ab) * x0v[i]) <= 3.0 * std::sqrt((1.0 - ab) / kChains));
      REQUIRE(var == Approx(1.0 - ab).epsilon(0.05));
    }
  }

  // recurrence at the default schedule, 64-bit
  {
    NoiseSchedule s = make_schedule();
    for (std::size_t t = 1; t <= s.steps; ++t) {
      REQUIRE(std::abs(s.alpha_bar_at(t) - s.alpha_bar_at(t - 1) * (1.0 - s.beta_at(t))) <= 1e-12);
    }
  }

  // timestep uniformity
  {
    std::vector<std::size_t> counts(10, 0);
    Rng rng(20240403);
    for (std::size_t i = 0; i < 10000; ++i) ++counts[sample_timesteps(1, 10, rng)[0] - 1];
    REQUIRE(diffe::testing::chi_square_uniform_pvalue(counts, 1000.0) > 0.001);
  }

  const double elapsed = now_s() - t0;
  REQUIRE(elapsed < 60.0);
  criterion_pass(2, "closed form matches iterated kernels; recurrence and uniformity hold (" +
                        std::to_string(elapsed) + " s)");
}

// ---------------------------------------------------------------------------
// 3. end-to-end learning
// ---------------------------------------------------------------------------
TEST_CASE("criterion 3: end-to-end learning on the synthetic corpus") {
  const double t0 = now_s();
  const EpochSet& set = default_corpus();
  REQUIRE(set.trials == 1300);
  REQUIRE(set.samples == 1024);

  // the corpus must be learnable by the independent band-power oracle first
  DatasetSplit split = stratified_split(set.labels, 0.2, 42);
  const double oracle_acc = diffe::testing::BandPowerOracle::accuracy(set, split.train, split.test);
  std::fprintf(stderr, "[acceptance] band-power oracle accuracy: %.1f%%\n", 100.0 * oracle_acc);
  REQUIRE(oracle_acc >= 0.90);

  TrainConfig cfg = acceptance_train_config(150);
  ModelConfig model;
  double best_acc = 0.0, best_auc = 0.0;
  bool reached = false;
  TrainResult res = train(set, cfg, model, [&](const EpochStats& e, const ModelBundle<float>&) {
    best_acc = std::max(best_acc, e.test_acc);
    best_auc = std::max(best_auc, e.test_auc);
    reached = e.test_acc >= 0.60 && e.test_auc >= 0.85;
    const bool in_budget = now_s() - t0 < 1700.0;
    return !reached && in_budget;
  });

  const double elapsed = now_s() - t0;
  std::fprintf(stderr, "[acceptance] full mode: best acc %.3f, best auc %.3f after %zu epochs, %.0f s\n",
               best_acc, best_auc, res.history.epochs.size(), elapsed);
  REQUIRE(reached);
  REQUIRE(elapsed < 1800.0);

  // the denoising objective itself must have improved
  REQUIRE(res.history.epochs.back().l_ddpm < res.history.epochs.front().l_ddpm);
  criterion_pass(3, "full mode reached 60% accuracy and 0.85 AUC in " +
                        std::to_string(res.history.epochs.size()) + " epochs (" +
                        std::to_string(static_cast<int>(elapsed)) + " s)");
}

// ---------------------------------------------------------------------------
// 4. shuffled-label control
// ---------------------------------------------------------------------------
TEST_CASE("criterion 4: shuffled-label control") {
  EpochSet permuted = default_corpus();
  Rng rng(42, "label.permutation");
  rng.shuffle(permuted.labels);

  TrainConfig cfg = acceptance_train_config(8);
  ModelConfig model;
  TrainResult res = train(permuted, cfg, model);
  RunMetrics m = evaluate_split(permuted, res.split.test, res.best_models, "shuffled");
  const double acc = m.accuracy_pct / 100.0;
  const double auc = m.auc_pct / 100.0;
  std::fprintf(stderr, "[acceptance] shuffled labels: acc %.4f auc %.4f\n", acc, auc);
  REQUIRE(acc >= 1.0 / 13.0 - 0.03);
  REQUIRE(acc <= 1.0 / 13.0 + 0.05);
  REQUIRE(auc >= 0.45);
  REQUIRE(auc <= 0.55);
  criterion_pass(4, "label-permuted training stays at chance (acc " + std::to_string(acc) +
                        ", auc " + std::to_string(auc) + ")");
}

// ---------------------------------------------------------------------------
// 5. ablation harness
// ---------------------------------------------------------------------------
TEST_CASE("criterion 5: ablation harness") {
  const EpochSet& set = default_corpus();
  TrainConfig cfg = acceptance_train_config(4);
  ModelConfig model;
  const auto results = run_ablation(set, cfg, model);
  REQUIRE(results.size() == 3);
  REQUIRE(results[0].row_label == "Diff-E");
  REQUIRE(results[1].row_label == "w/o DDPM");
  REQUIRE(results[2].row_label == "w/o DDPM & decoder");
  for (std::size_t i = 1; i < 3; ++i) {
    REQUIRE(results[i].split.train == results[0].split.train);
    REQUIRE(results[i].split.test == results[0].split.test);
  }

  std::vector<RunMetrics> runs;
  for (const auto& r : results) runs.push_back(r.metrics);
  std::vector<ReportRow> rows;
  for (const auto& r : results) rows.push_back(aggregate_runs(r.row_label, runs));
  const std::string table = format_report(rows);
  std::printf("%s", table.c_str());
  REQUIRE(table.find("Diff-E") != std::string::npos);

  const double enc_cls_acc = results[2].metrics.accuracy_pct / 100.0;
  std::fprintf(stderr, "[acceptance] encoder+classifier alone: %.1f%%\n", 100.0 * enc_cls_acc);
  REQUIRE(enc_cls_acc >= 5.0 / 13.0);
  criterion_pass(5, "three-row report on one split; encoder path alone beats 5x chance");
}

// ---------------------------------------------------------------------------
// 6. gradient-boundary audit
// ---------------------------------------------------------------------------
TEST_CASE("criterion 6: gradient-boundary audit over a two-epoch run") {
  const EpochSet& set = reduced_corpus();
  TrainConfig cfg = acceptance_train_config(2);
  cfg.audit_gradient_boundary = true;
  ModelConfig model;
  TrainResult res = train(set, cfg, model);  // the audit throws on any violation
  REQUIRE(res.history.epochs.size() == 2);
  criterion_pass(6, "denoiser and joint objective stayed on their own parameters every step");
}

// ---------------------------------------------------------------------------
// 7. preprocessing specs
// ---------------------------------------------------------------------------
TEST_CASE("criterion 7: preprocessing specifications") {
  const double fs = 512.0;
  // notch attenuation at 60 and 120 Hz
  for (double f : {60.0, 120.0}) {
    const std::size_t n = static_cast<std::size_t>(10 * fs);
    Recording rec = Recording::zeros(1, n, fs);
    const auto s = diffe::testing::make_sine(f, fs, n);
    for (std::size_t i = 0; i < n; ++i) rec.row(0)[i] = static_cast<float>(s[i]);
    Recording out = notch(std::move(rec), {60.0, 120.0});
    std::vector<double> y(out.samples);
    for (std::size_t i = 0; i < out.samples; ++i) y[i] = out.row(0)[i];
    const double residual = diffe::testing::central_amplitude(y);
    REQUIRE(20.0 * std::log10(residual + 1e-12) <= -20.0);
  }

  // 1-100 Hz passband within 3 dB
  for (double f : {1.0, 2.0, 5.0, 10.0, 20.0, 40.0, 60.0, 80.0, 100.0}) {
    const std::size_t n = static_cast<std::size_t>(20 * fs);
    Recording rec = Recording::zeros(1, n, fs);
    const auto s = diffe::testing::make_sine(f, fs, n);
    for (std::size_t i = 0; i < n; ++i) rec.row(0)[i] = static_cast<float>(s[i]);
    Recording out = bandpass(std::move(rec), 0.5, 125.0);
    std::vector<double> y(out.samples);
    for (std::size_t i = 0; i < out.samples; ++i) y[i] = out.row(0)[i];
    const double amp = diffe::testing::central_amplitude(y);
    REQUIRE(std::abs(20.0 * std::log10(amp)) <= 3.0);
  }

  // CAR mean
  {
    Rng rng(20240404);
    Recording rec = Recording::zeros(64, 20000, fs);
    for (auto& v : rec.data) v = static_cast<float>(3.0 * rng.normal());
    Recording out = car(std::move(rec));
    for (std::size_t i = 0; i < out.samples; i += 97) {
      double m = 0.0;
      for (std::size_t c = 0; c < out.channels; ++c) m += out.row(c)[i];
      REQUIRE(std::abs(m / 64.0) <= 1e-6);
    }
  }

  // constant signal epochs are exactly zero after baseline correction
  {
    Recording rec = Recording::zeros(4, 4096, fs);
    for (auto& v : rec.data) v = -2.75f;
    EpochSet set = epoch_and_baseline(rec, {{512, 0}, {512 + 1792, 5}});
    for (float v : set.data) REQUIRE(v == 0.0f);
  }
  criterion_pass(7, "notch >= 20 dB, 1-100 Hz within 3 dB, CAR mean <= 1e-6, zero baselines exact");
}

// ---------------------------------------------------------------------------
// 8. determinism
// ---------------------------------------------------------------------------
TEST_CASE("criterion 8: determinism across full runs") {
  namespace fs2 = std::filesystem;
  const EpochSet& set = reduced_corpus();
  TrainConfig cfg = acceptance_train_config(3);
  cfg.verbose = false;
  ModelConfig model;

  TrainResult a = train(set, cfg, model);
  TrainResult b = train(set, cfg, model);
  REQUIRE(a.split.train == b.split.train);
  REQUIRE(a.split.test == b.split.test);

  const fs2::path dir = fs2::temp_directory_path() / "diffe_acceptance_det";
  fs2::create_directories(dir);
  write_history_csv((dir / "a.csv").string(), a.history);
  write_history_csv((dir / "b.csv").string(), b.history);
  std::ifstream fa(dir / "a.csv"), fb(dir / "b.csv");
  const std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  const std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  REQUIRE(ca == cb);
  fs2::remove_all(dir);

  RunMetrics ma = evaluate_split(set, a.split.test, a.best_models, "a");
  RunMetrics mb = evaluate_split(set, b.split.test, b.best_models, "b");
  REQUIRE(ma.accuracy_pct == mb.accuracy_pct);
  REQUIRE(ma.auc_pct == mb.auc_pct);
  criterion_pass(8, "identical splits, history files and final metrics for seed 42");
}

// ---------------------------------------------------------------------------
// 9. parameter budget
// ---------------------------------------------------------------------------
TEST_CASE("criterion 9: parameter budget") {
  ModelConfig cfg;  // paper-facing defaults, 64 channels
  auto bundle = ModelBundle<float>::init(cfg, AblationMode::Full, 42);
  const ParamCounts counts = param_count(bundle);
  std::printf("parameters: theta=%zu phi=%zu psi=%zu combined=%zu classifier=%zu\n", counts.theta,
              counts.phi, counts.psi, counts.networks_combined(), counts.rho);
  REQUIRE(counts.networks_combined() >= 200000);
  REQUIRE(counts.networks_combined() <= 400000);
  criterion_pass(9, "theta+phi+psi = " + std::to_string(counts.networks_combined()) +
                        " within [200k, 400k]; classifier = " + std::to_string(counts.rho) +
                        " (logged)");
}

// ---------------------------------------------------------------------------
// 10. corruption demo property
// ---------------------------------------------------------------------------
TEST_CASE("criterion 10: corruption demo correlation decays") {
  const EpochSet& set = default_corpus();
  const auto names = standard_channel_names(set.channels);
  std::size_t ch = 0;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == "FT7") ch = i;
  }
  const float* row = set.trial(0) + ch * set.samples;
  std::vector<float> x0(row, row + set.samples);

  const NoiseSchedule sched = make_schedule();  // demo default: T = 1000
  const std::vector<std::size_t> ts{0, 50, 100, 200, 400, 700, 1000};
  std::vector<double> avg(ts.size(), 0.0);
  for (std::uint64_t draw = 0; draw < 10; ++draw) {
    Rng rng(42 + draw, "demo");
    const auto cols = diffusion_demo_table(x0, ts, sched, rng);
    for (std::size_t i = 0; i < ts.size(); ++i) {
      avg[i] += pearson_correlation(x0, cols[i]) / 10.0;
    }
  }
  REQUIRE(avg[0] == Approx(1.0));
  for (std::size_t i = 1; i < avg.size(); ++i) REQUIRE(avg[i] <= avg[i - 1] + 0.02);
  REQUIRE(std::abs(avg.back()) < 0.1);
  criterion_pass(10, "correlation with the source is nonincreasing and vanishes at t = T");
}
