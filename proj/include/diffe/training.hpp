#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "diffe/data.hpp"
#include "diffe/diffusion.hpp"
#include "diffe/eval.hpp"
#include "diffe/networks.hpp"
#include "diffe/optim.hpp"

namespace diffe {

struct TrainConfig {
  double alpha = 0.1;
  std::size_t epochs = 500;
  std::size_t batch_size = 32;
  double base_lr = 9e-5;
  double max_lr = 1.5e-3;
  std::size_t lr_step_epochs = 4;  // half-cycle length in epochs
  std::size_t diffusion_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::uint64_t seed = 42;
  double test_fraction = 0.2;
  AblationMode mode = AblationMode::Full;
  // Verifies on every step that the denoiser and the joint objective stay on
  // their own parameter sets.
  bool audit_gradient_boundary = false;
  bool verbose = false;
};

struct EpochStats {
  std::size_t epoch = 0;
  double l_ddpm = 0.0;
  double l_cae = 0.0;
  double l_cls = 0.0;
  double train_acc = 0.0;
  double lr = 0.0;
  double test_acc = 0.0;
  double test_auc = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

inline void write_history_csv(const std::string& path, const TrainHistory& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "epoch,l_ddpm,l_cae,l_cls,train_acc,lr\n";
  char buf[256];
  for (const auto& e : history.epochs) {
    std::snprintf(buf, sizeof(buf), "%zu,%.8f,%.8f,%.8f,%.6f,%.8f\n", e.epoch, e.l_ddpm, e.l_cae,
                  e.l_cls, e.train_acc, e.lr);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// batch assembly
// ---------------------------------------------------------------------------
inline Tensor<float> gather_batch(const EpochSet& set, const std::vector<std::size_t>& idx) {
  Tensor<float> out({idx.size(), set.channels, set.samples});
  const std::size_t stride = set.trial_len();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::memcpy(out.data() + i * stride, set.trial(idx[i]), stride * sizeof(float));
  }
  return out;
}

inline std::vector<int> gather_labels(const EpochSet& set, const std::vector<std::size_t>& idx) {
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = set.labels[idx[i]];
  return out;
}

inline Tensor<float> one_hot(const std::vector<int>& labels, std::size_t n_classes) {
  Tensor<float> out({labels.size(), n_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= static_cast<int>(n_classes)) {
      throw DataError("label " + std::to_string(labels[i]) + " outside [0, " +
                      std::to_string(n_classes) + ")");
    }
    out[i * n_classes + static_cast<std::size_t>(labels[i])] = 1.0f;
  }
  return out;
}

// ---------------------------------------------------------------------------
// inference: encoder + classifier only
// ---------------------------------------------------------------------------
struct InferResult {
  std::vector<int> labels;
  std::vector<std::vector<double>> scores;
};

template <typename T>
InferResult infer(const Tensor<T>& x0, const Encoder<T>& phi, const Classifier<T>& rho) {
  auto enc = phi.forward(x0, nullptr);
  Tensor<T> y = rho.forward(enc.z, nullptr);
  const std::size_t batch = y.dim(0), classes = y.dim(1);
  InferResult res;
  res.labels.resize(batch);
  res.scores.assign(batch, std::vector<double>(classes));
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t best = 0;
    for (std::size_t k = 0; k < classes; ++k) {
      const double s = static_cast<double>(y[b * classes + k]);
      res.scores[b][k] = s;
      if (s > res.scores[b][best]) best = k;  // ties keep the lowest index
    }
    res.labels[b] = static_cast<int>(best);
  }
  return res;
}

inline InferResult infer_epochs(const EpochSet& set, const std::vector<std::size_t>& idx,
                                const Encoder<float>& phi, const Classifier<float>& rho,
                                std::size_t chunk = 64) {
  InferResult all;
  for (std::size_t start = 0; start < idx.size(); start += chunk) {
    const std::size_t end = std::min(idx.size(), start + chunk);
    std::vector<std::size_t> part(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                  idx.begin() + static_cast<std::ptrdiff_t>(end));
    InferResult r = infer(gather_batch(set, part), phi, rho);
    all.labels.insert(all.labels.end(), r.labels.begin(), r.labels.end());
    all.scores.insert(all.scores.end(), r.scores.begin(), r.scores.end());
  }
  return all;
}

inline RunMetrics evaluate_split(const EpochSet& set, const std::vector<std::size_t>& idx,
                                 const ModelBundle<float>& models, const std::string& mode_label) {
  InferResult r = infer_epochs(set, idx, models.phi, models.rho);
  const std::vector<int> truth = gather_labels(set, idx);
  RunMetrics m;
  m.mode = mode_label;
  m.accuracy_pct = 100.0 * accuracy(r.labels, truth);
  m.auc_pct = 100.0 * multiclass_auc(r.scores, truth, models.config.classes);
  m.confusion = confusion_matrix(r.labels, truth, models.config.classes);
  return m;
}

// ---------------------------------------------------------------------------
// one optimization step
// ---------------------------------------------------------------------------
struct StepMetrics {
  double l_ddpm = 0.0;
  double l_cae = 0.0;
  double l_cls = 0.0;
  std::size_t correct = 0;
};

namespace detail {

inline std::vector<std::vector<float>> snapshot_grads(const std::vector<Tensor<float>>& params) {
  std::vector<std::vector<float>> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    out.push_back(p.has_grad() ? std::vector<float>(p.grad().begin(), p.grad().end())
                               : std::vector<float>());
  }
  return out;
}

inline void require_no_grads(const std::vector<Tensor<float>>& params, const char* what) {
  for (const auto& p : params) {
    if (p.has_grad()) {
      throw TrainingError(std::string("gradient boundary violated: ") + what);
    }
  }
}

inline void require_same_grads(const std::vector<Tensor<float>>& params,
                               const std::vector<std::vector<float>>& snap, const char* what) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const bool has = params[i].has_grad();
    if (has != !snap[i].empty()) {
      throw TrainingError(std::string("gradient boundary violated: ") + what);
    }
    if (!has) continue;
    auto g = params[i].grad();
    if (!std::equal(g.begin(), g.end(), snap[i].begin())) {
      throw TrainingError(std::string("gradient boundary violated: ") + what);
    }
  }
}

inline void check_finite_loss(double v, const char* term, std::size_t epoch, std::size_t step) {
  if (!std::isfinite(v)) {
    throw TrainingError(std::string(term) + " became non-finite at epoch " + std::to_string(epoch) +
                        ", step " + std::to_string(step));
  }
}

}  // namespace detail

// Holds everything a step mutates, so callers can drive epochs themselves.
struct TrainContext {
  ModelBundle<float> models;
  RmsProp<float> opt_theta;
  RmsProp<float> opt_cae;
  NoiseSchedule sched;
  CyclicLr lr_sched;
  Rng noise_rng;
  std::size_t global_step = 0;

  TrainContext(ModelBundle<float> m, const TrainConfig& cfg, std::size_t steps_per_epoch)
      : models(std::move(m)),
        opt_theta(models.theta_params()),
        opt_cae(models.cae_params()),
        sched(make_schedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end)),
        lr_sched{cfg.base_lr, cfg.max_lr, std::max<std::size_t>(1, cfg.lr_step_epochs * steps_per_epoch)},
        noise_rng(cfg.seed, "train.noise") {}
};

// One joint step: the denoiser trains on its own reconstruction scalar, then
// — with every denoiser output detached — encoder, decoder and classifier
// train on the error-map prediction plus the weighted classification term.
inline StepMetrics diffe_step(TrainContext& ctx, const Tensor<float>& x0,
                              const std::vector<int>& labels, const TrainConfig& cfg,
                              std::size_t epoch = 0, std::size_t step_in_epoch = 0) {
  if (x0.dim(0) == 0) throw DataError("diffe_step: empty batch");
  const std::size_t batch = x0.dim(0);
  const double lr = cyclic_lr(ctx.global_step, ctx.lr_sched);
  StepMetrics out;
  Tensor<float> targets = one_hot(labels, ctx.models.config.classes);

  Tensor<float> error_map;
  std::vector<Tensor<float>> skips;
  Tensor<float> x_hat_detached;
  std::vector<std::vector<float>> theta_grad_snapshot;

  if (ctx.models.mode == AblationMode::Full) {
    // corrupt each trial at its own uniformly drawn stage
    const std::vector<std::size_t> t =
        sample_timesteps(batch, ctx.sched.steps, ctx.noise_rng);
    Tensor<float> x_t(x0.shape());
    const std::size_t stride = x0.dim(1) * x0.dim(2);
    for (std::size_t b = 0; b < batch; ++b) {
      const double ab = ctx.sched.alpha_bar_at(t[b]);
      const double keep = std::sqrt(ab), noise = std::sqrt(1.0 - ab);
      const float* src = x0.data() + b * stride;
      float* dst = x_t.data() + b * stride;
      for (std::size_t i = 0; i < stride; ++i) {
        dst[i] = static_cast<float>(keep * src[i] + noise * ctx.noise_rng.normal());
      }
    }

    Tape<float> tape_theta;
    auto [x_hat, acts] = ctx.models.theta->forward(x_t, t, &tape_theta);
    auto [l_ddpm, emap] = ddpm_loss(x0, x_hat, &tape_theta);
    out.l_ddpm = static_cast<double>(l_ddpm[0]);
    detail::check_finite_loss(out.l_ddpm, "ddpm loss", epoch, step_in_epoch);
    backward(l_ddpm, tape_theta);

    if (cfg.audit_gradient_boundary) {
      detail::require_no_grads(ctx.models.cae_params(),
                               "encoder/decoder/classifier received gradient from the ddpm scalar");
      theta_grad_snapshot = detail::snapshot_grads(ctx.models.theta_params());
    }

    error_map = emap;
    x_hat_detached = x_hat.detach();
    skips = {acts.quarter.detach(), acts.half.detach(), acts.full.detach()};
    tape_theta.clear();
  }

  Tape<float> tape;
  auto enc = ctx.models.phi.forward(x0, &tape);
  Tensor<float> y_hat = classify(enc.z, ctx.models.rho, &tape);
  Tensor<float> l_cls = mse_loss(y_hat, targets, &tape);
  out.l_cls = static_cast<double>(l_cls[0]);
  detail::check_finite_loss(out.l_cls, "classification loss", epoch, step_in_epoch);

  Tensor<float> total;
  if (ctx.models.mode == AblationMode::Full) {
    Tensor<float> e_hat =
        ctx.models.psi->forward(enc.e3, skips, &x0, &x_hat_detached, &tape);
    Tensor<float> l_cae = l1_loss(e_hat, error_map, Reduce::Mean, &tape);
    out.l_cae = static_cast<double>(l_cae[0]);
    total = add(l_cae, mul_scalar(l_cls, static_cast<float>(cfg.alpha), &tape), &tape);
  } else if (ctx.models.mode == AblationMode::NoDdpm) {
    // plain autoencoder: reconstruct the signal itself, skips from the encoder
    std::vector<Tensor<float>> enc_skips{enc.e2, enc.e1};
    Tensor<float> e_hat = ctx.models.psi->forward(enc.e3, enc_skips, nullptr, nullptr, &tape);
    Tensor<float> l_cae = l1_loss(e_hat, x0, Reduce::Mean, &tape);
    out.l_cae = static_cast<double>(l_cae[0]);
    total = add(l_cae, mul_scalar(l_cls, static_cast<float>(cfg.alpha), &tape), &tape);
  } else {
    total = l_cls;
  }
  detail::check_finite_loss(static_cast<double>(total[0]), "total loss", epoch, step_in_epoch);
  backward(total, tape);

  if (cfg.audit_gradient_boundary && ctx.models.mode == AblationMode::Full) {
    detail::require_same_grads(ctx.models.theta_params(), theta_grad_snapshot,
                               "denoiser received gradient from the joint objective");
  }

  const float flr = static_cast<float>(lr);
  if (ctx.models.mode == AblationMode::Full) ctx.opt_theta.step(flr);
  ctx.opt_cae.step(flr);
  ctx.opt_theta.zero_grad();
  ctx.opt_cae.zero_grad();
  tape.clear();
  ++ctx.global_step;

  const std::size_t classes = ctx.models.config.classes;
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < classes; ++k) {
      if (y_hat[b * classes + k] > y_hat[b * classes + best]) best = k;
    }
    if (static_cast<int>(best) == labels[b]) ++out.correct;
  }
  return out;
}

// ---------------------------------------------------------------------------
// full training run
// ---------------------------------------------------------------------------
struct TrainResult {
  ModelBundle<float> models;       // final state
  ModelBundle<float> best_models;  // highest test accuracy
  std::size_t best_epoch = 0;
  double best_test_acc = 0.0;
  TrainHistory history;
  DatasetSplit split;
};

// Return false from the callback to stop after the current epoch.
using EpochCallback = std::function<bool(const EpochStats&, const ModelBundle<float>&)>;

inline TrainResult train(const EpochSet& set, const TrainConfig& cfg, ModelConfig model_cfg,
                         const EpochCallback& callback = {}) {
  if (set.trials == 0) throw DataError("train: dataset is empty");
  model_cfg.in_channels = set.channels;
  for (std::size_t i = 0; i < set.labels.size(); ++i) {
    if (set.labels[i] < 0 || set.labels[i] >= static_cast<int>(model_cfg.classes)) {
      throw DataError("train: label " + std::to_string(set.labels[i]) + " at trial " +
                      std::to_string(i) + " outside [0, " + std::to_string(model_cfg.classes) + ")");
    }
  }
  if (set.samples % 8 != 0) {
    throw ConfigError("train: epoch length " + std::to_string(set.samples) +
                      " must be divisible by 8");
  }

  TrainResult res;
  res.split = stratified_split(set.labels, cfg.test_fraction, cfg.seed);
  {
    std::vector<std::size_t> count(model_cfg.classes, 0);
    for (std::size_t i : res.split.train) ++count[static_cast<std::size_t>(set.labels[i])];
    for (std::size_t k = 0; k < count.size(); ++k) {
      if (count[k] == 0) {
        throw DataError("train: class " + std::to_string(k) + " has no samples in the training split");
      }
    }
  }

  const std::size_t steps_per_epoch =
      (res.split.train.size() + cfg.batch_size - 1) / cfg.batch_size;
  TrainContext ctx(ModelBundle<float>::init(model_cfg, cfg.mode, cfg.seed), cfg, steps_per_epoch);

  res.best_models = ctx.models.clone();
  res.best_test_acc = -1.0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batch_plan = batches(res.split.train, cfg.batch_size, cfg.seed, epoch);
    double sum_ddpm = 0.0, sum_cae = 0.0, sum_cls = 0.0;
    std::size_t correct = 0, seen = 0;
    double last_lr = cyclic_lr(ctx.global_step, ctx.lr_sched);
    for (std::size_t s = 0; s < batch_plan.size(); ++s) {
      const auto& idx = batch_plan[s];
      last_lr = cyclic_lr(ctx.global_step, ctx.lr_sched);
      StepMetrics m = diffe_step(ctx, gather_batch(set, idx), gather_labels(set, idx), cfg, epoch, s);
      const double w = static_cast<double>(idx.size());
      sum_ddpm += m.l_ddpm * w;
      sum_cae += m.l_cae * w;
      sum_cls += m.l_cls * w;
      correct += m.correct;
      seen += idx.size();
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.l_ddpm = sum_ddpm / static_cast<double>(seen);
    stats.l_cae = sum_cae / static_cast<double>(seen);
    stats.l_cls = sum_cls / static_cast<double>(seen);
    stats.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    stats.lr = last_lr;

    RunMetrics test = evaluate_split(set, res.split.test, ctx.models, to_string(cfg.mode));
    stats.test_acc = test.accuracy_pct / 100.0;
    stats.test_auc = test.auc_pct / 100.0;
    res.history.epochs.push_back(stats);

    if (stats.test_acc > res.best_test_acc) {
      res.best_test_acc = stats.test_acc;
      res.best_epoch = epoch;
      res.best_models = ctx.models.clone();
    }
    if (cfg.verbose) {
      std::fprintf(stderr,
                   "[diffe] epoch %3zu  l_ddpm %.4f  l_cae %.4f  l_cls %.4f  train %.3f  test %.3f  "
                   "auc %.3f  lr %.2e\n",
                   epoch, stats.l_ddpm, stats.l_cae, stats.l_cls, stats.train_acc, stats.test_acc,
                   stats.test_auc, stats.lr);
    }
    if (callback && !callback(stats, ctx.models)) break;
  }

  res.models = std::move(ctx.models);
  return res;
}

// ---------------------------------------------------------------------------
// ablation: all three configurations under one split and epoch budget
// ---------------------------------------------------------------------------
struct AblationResult {
  AblationMode mode = AblationMode::Full;
  std::string row_label;
  RunMetrics metrics;  // from the best checkpoint
  DatasetSplit split;
  TrainHistory history;
};

inline std::string ablation_row_label(AblationMode mode) {
  switch (mode) {
    case AblationMode::Full: return "Diff-E";
    case AblationMode::NoDdpm: return "w/o DDPM";
    case AblationMode::EncoderClassifier: return "w/o DDPM & decoder";
  }
  return "Diff-E";
}

inline std::vector<AblationResult> run_ablation(const EpochSet& set, TrainConfig cfg,
                                                const ModelConfig& model_cfg,
                                                const EpochCallback& callback = {}) {
  std::vector<AblationResult> out;
  for (AblationMode mode :
       {AblationMode::Full, AblationMode::NoDdpm, AblationMode::EncoderClassifier}) {
    cfg.mode = mode;
    TrainResult r = train(set, cfg, model_cfg, callback);
    AblationResult a;
    a.mode = mode;
    a.row_label = ablation_row_label(mode);
    a.metrics = evaluate_split(set, r.split.test, r.best_models, a.row_label);
    a.split = r.split;
    a.history = std::move(r.history);
    out.push_back(std::move(a));
  }
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].split.train != out[0].split.train || out[i].split.test != out[0].split.test) {
      throw TrainingError("run_ablation: split differs between modes despite a shared seed");
    }
  }
  return out;
}

}  // namespace diffe
