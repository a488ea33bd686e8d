#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "diffe/checkpoint.hpp"
#include "diffe/networks.hpp"

using namespace diffe;
using Catch::Approx;

namespace {

ModelConfig micro_config() {
  ModelConfig cfg;
  cfg.in_channels = 4;
  cfg.time_dim = 8;
  cfg.groups = 2;
  cfg.ddpm_widths = {4, 6, 8};
  cfg.enc_widths = {4, 6, 8};
  cfg.dec_width = 6;
  cfg.classes = 13;
  return cfg;
}

}  // namespace

TEST_CASE("time_embed closed form at t = 0 and distinctness") {
  auto e = time_embed<float>({0, 0, 1, 2}, 64);
  REQUIRE(e.shape() == Shape{4, 64});
  for (std::size_t k = 0; k < 32; ++k) {
    CHECK(e[k] == 0.0f);          // sin block
    CHECK(e[32 + k] == 1.0f);     // cos block
  }
  // equal timesteps give identical rows
  for (std::size_t k = 0; k < 64; ++k) CHECK(e[k] == e[64 + k]);
  // distinct timesteps differ
  double dist = 0.0;
  for (std::size_t k = 0; k < 64; ++k) {
    const double d = static_cast<double>(e[2 * 64 + k]) - e[3 * 64 + k];
    dist += d * d;
  }
  CHECK(std::sqrt(dist) > 0.0);
  CHECK_THROWS_AS(time_embed<float>({1}, 63), ConfigError);
}

TEST_CASE("ddpm forward preserves shape at the documented size") {
  ModelConfig cfg;  // default widths, 64 channels
  Rng rng(42, "init.theta");
  auto theta = DdpmNet<float>::make(cfg, rng);
  Rng xr(1);
  Tensor<float> x = Tensor<float>::randn({4, 64, 512}, xr, 0.5f);
  auto [x_hat, acts] = theta.forward(x, {1, 10, 100, 500});
  CHECK(x_hat.shape() == Shape{4, 64, 512});
  CHECK(acts.quarter.shape() == Shape{4, 64, 128});
  CHECK(acts.half.shape() == Shape{4, 32, 256});
  CHECK(acts.full.shape() == Shape{4, 32, 512});
}

TEST_CASE("ddpm forward is deterministic and time conditioning is live") {
  ModelConfig cfg = micro_config();
  Rng rng(3, "init.theta");
  auto theta = DdpmNet<float>::make(cfg, rng);
  Rng xr(2);
  Tensor<float> x = Tensor<float>::randn({2, 4, 32}, xr);
  auto [a, acts_a] = theta.forward(x, {3, 3});
  auto [b, acts_b] = theta.forward(x, {3, 3});
  CHECK(a.values() == b.values());

  auto [c, acts_c] = theta.forward(x, {200, 200});
  double max_diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    max_diff = std::max(max_diff, std::abs(static_cast<double>(a[i]) - c[i]));
  }
  CHECK(max_diff > 0.0);
}

TEST_CASE("ddpm forward rejects lengths not divisible by 8") {
  ModelConfig cfg = micro_config();
  Rng rng(3, "init.theta");
  auto theta = DdpmNet<float>::make(cfg, rng);
  Tensor<float> x({2, 4, 30});
  CHECK_THROWS_WITH(theta.forward(x, {1, 1}).first, Catch::Matchers::ContainsSubstring("8"));
}

TEST_CASE("encoder yields a fixed-width latent and survives constant input") {
  ModelConfig cfg;  // z = 256
  Rng rng(42, "init.phi");
  auto phi = Encoder<float>::make(cfg, rng);
  Rng xr(5);
  Tensor<float> x = Tensor<float>::randn({4, 64, 512}, xr);
  auto out = phi.forward(x);
  CHECK(out.z.shape() == Shape{4, 256});
  auto out2 = phi.forward(x);
  CHECK(out.z.values() == out2.z.values());

  Tensor<float> zeros({2, 64, 512});
  auto oz = phi.forward(zeros);
  CHECK(oz.z.all_finite());
}

TEST_CASE("decoder output matches the signal shape and final skips are live") {
  ModelConfig cfg = micro_config();
  Rng ir(7, "init");
  auto psi = Decoder<float>::make(cfg, {cfg.ddpm_widths[1], cfg.ddpm_widths[0], cfg.ddpm_widths[0]},
                                  true, ir);
  Rng xr(8);
  const std::size_t L = 32;
  Tensor<float> deep = Tensor<float>::randn({2, 8, L / 8}, xr);
  std::vector<Tensor<float>> skips{Tensor<float>::randn({2, 6, L / 4}, xr),
                                   Tensor<float>::randn({2, 4, L / 2}, xr),
                                   Tensor<float>::randn({2, 4, L}, xr)};
  Tensor<float> x0 = Tensor<float>::randn({2, 4, L}, xr);
  Tensor<float> x_hat = Tensor<float>::randn({2, 4, L}, xr);
  Tensor<float> out = psi.forward(deep, skips, &x0, &x_hat);
  CHECK(out.shape() == x0.shape());

  // perturbing the x_hat input changes the output
  Tensor<float> x_hat2 = x_hat.clone();
  x_hat2[0] += 1.0f;
  Tensor<float> out2 = psi.forward(deep, skips, &x0, &x_hat2);
  double diff = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(out[i]) - out2[i]));
  }
  CHECK(diff > 0.0);

  // mismatched skip resolution is a configuration error
  std::vector<Tensor<float>> bad{Tensor<float>::randn({2, 6, L / 2}, xr), skips[1], skips[2]};
  CHECK_THROWS_AS(psi.forward(deep, bad, &x0, &x_hat), ConfigError);
}

TEST_CASE("gradient flows to decoder and encoder but not to detached denoiser outputs") {
  ModelConfig cfg = micro_config();
  auto bundle = ModelBundle<float>::init(cfg, AblationMode::Full, 11);
  Rng xr(12);
  const std::size_t L = 32;
  Tensor<float> x0 = Tensor<float>::randn({2, 4, L}, xr);
  Tensor<float> x_t = Tensor<float>::randn({2, 4, L}, xr);

  Tape<float> tape_theta;
  auto [x_hat, acts] = bundle.theta->forward(x_t, {3, 7}, &tape_theta);

  Tape<float> tape;
  auto enc = bundle.phi.forward(x0, &tape);
  std::vector<Tensor<float>> skips{acts.quarter.detach(), acts.half.detach(), acts.full.detach()};
  Tensor<float> x_hat_d = x_hat.detach();
  Tensor<float> pred = bundle.psi->forward(enc.e3, skips, &x0, &x_hat_d, &tape);
  Tensor<float> loss = l1_loss(pred, Tensor<float>({2, 4, L}), Reduce::Mean, &tape);
  backward(loss, tape);

  for (auto& p : bundle.theta_params()) CHECK_FALSE(p.has_grad());
  bool psi_has = false, phi_has = false;
  auto named = bundle.named_params();
  for (auto& [name, p] : named) {
    if (name.rfind("psi.", 0) == 0 && p.has_grad()) psi_has = true;
    if (name.rfind("phi.", 0) == 0 && p.has_grad()) phi_has = true;
  }
  CHECK(psi_has);
  CHECK(phi_has);
}

TEST_CASE("classifier is linear with the expected width") {
  ModelConfig cfg;
  Rng rng(1, "init.rho");
  auto rho = Classifier<float>::make(cfg, rng);
  Rng xr(2);
  Tensor<float> z = Tensor<float>::randn({3, 256}, xr);
  Tensor<float> s = classify(z, rho);
  REQUIRE(s.shape() == Shape{3, 13});

  // zero weights and bias give all-zero scores
  Classifier<float> zero = rho;
  zero.w = Tensor<float>({13, 256});
  zero.b = Tensor<float>({13});
  Tensor<float> zs = classify(z, zero);
  for (std::size_t i = 0; i < zs.size(); ++i) CHECK(zs[i] == 0.0f);

  // linearity when bias = 0: classify(2z) = 2*classify(z)
  Classifier<float> nob = rho;
  nob.b = Tensor<float>({13});
  Tensor<float> z2 = z.clone();
  for (std::size_t i = 0; i < z2.size(); ++i) z2[i] *= 2.0f;
  Tensor<float> s1 = classify(z, nob);
  Tensor<float> s2 = classify(z2, nob);
  for (std::size_t i = 0; i < s1.size(); ++i) CHECK(s2[i] == Approx(2.0f * s1[i]).margin(1e-4));

  Tensor<float> bad = Tensor<float>::randn({3, 100}, xr);
  CHECK_THROWS_AS(classify(bad, rho), DimensionError);
}

TEST_CASE("parameter counts: classifier, combined budget, absent networks") {
  ModelConfig cfg;
  auto bundle = ModelBundle<float>::init(cfg, AblationMode::Full, 42);
  auto counts = param_count(bundle);
  CHECK(counts.rho == 256 * 13 + 13);  // 3341
  CHECK(counts.networks_combined() >= 200000);
  CHECK(counts.networks_combined() <= 400000);

  auto ec = ModelBundle<float>::init(cfg, AblationMode::EncoderClassifier, 42);
  CHECK(param_count(ec).theta == 0);
  CHECK(param_count(ec).psi == 0);

  ModelConfig hidden = cfg;
  hidden.classifier_hidden = 1487;
  auto hb = ModelBundle<float>::init(hidden, AblationMode::EncoderClassifier, 42);
  CHECK(param_count(hb).rho == 256 * 1487 + 1487 + 1487 * 13 + 13);  // about 400k
}

TEST_CASE("initialization is bit-reproducible for a fixed seed") {
  ModelConfig cfg = micro_config();
  auto a = ModelBundle<float>::init(cfg, AblationMode::Full, 42);
  auto b = ModelBundle<float>::init(cfg, AblationMode::Full, 42);
  auto pa = a.named_params();
  auto pb = b.named_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(pa[i].second.values() == pb[i].second.values());
  }
  auto c = ModelBundle<float>::init(cfg, AblationMode::Full, 43);
  CHECK(c.named_params()[0].second.values() != pa[0].second.values());
}

TEST_CASE("checkpoint round-trip is bit-exact and corruption is detected") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "diffe_ckpt_test";
  fs::create_directories(dir);
  const std::string path = (dir / "model.dife").string();

  ModelConfig cfg = micro_config();
  auto bundle = ModelBundle<float>::init(cfg, AblationMode::Full, 77);
  save_checkpoint(path, bundle);
  auto loaded = load_checkpoint(path);
  auto pa = bundle.named_params();
  auto pb = loaded.named_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].second.values() == pb[i].second.values());
  }
  CHECK(loaded.mode == AblationMode::Full);

  // corrupt the magic
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);

  // rewrite, then truncate
  save_checkpoint(path, bundle);
  fs::resize_file(path, fs::file_size(path) / 2);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  fs::remove_all(dir);
}
