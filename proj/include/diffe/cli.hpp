#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "diffe/checkpoint.hpp"
#include "diffe/config.hpp"
#include "diffe/data.hpp"
#include "diffe/diffusion.hpp"
#include "diffe/eval.hpp"
#include "diffe/sigproc.hpp"
#include "diffe/training.hpp"

namespace diffe::cli {

namespace fs = std::filesystem;

inline constexpr const char* kVersion = "1.0.0";

namespace detail {

inline RunConfig resolve_config(const std::string& path) {
  if (path.empty()) return default_run_config();
  return load_run_config(path);
}

inline nlohmann::json base_manifest(const std::string& command, const RunConfig& cfg) {
  return nlohmann::json{{"command", command},
                        {"tool_version", kVersion},
                        {"format_version", kFormatVersion},
                        {"config", run_config_to_json(cfg)},
                        {"seeds", {{"data", cfg.data.seed}, {"train", cfg.train.seed}}}};
}

inline void write_manifest(const std::string& path, nlohmann::json manifest,
                           const std::vector<std::string>& artifacts, double wall_s) {
  manifest["artifacts"] = artifacts;
  manifest["wall_time_s"] = wall_s;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path);
  out << manifest.dump(2) << "\n";
}

inline void require_artifacts(const std::vector<std::string>& paths) {
  for (const auto& p : paths) {
    if (!fs::exists(p)) throw IoError("expected artifact was not written: " + p);
  }
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline std::string subject_path(const std::string& base, std::size_t subject,
                                std::size_t n_subjects) {
  if (n_subjects <= 1) return base;
  fs::path p(base);
  char suffix[16];
  std::snprintf(suffix, sizeof(suffix), "_s%02zu", subject + 1);
  fs::path out = p.parent_path() / (p.stem().string() + suffix + p.extension().string());
  return out.string();
}

inline void log_param_counts(const ParamCounts& c) {
  std::fprintf(stderr,
               "[diffe] parameters: theta=%zu phi=%zu psi=%zu rho=%zu combined(theta+phi+psi)=%zu "
               "total=%zu\n",
               c.theta, c.phi, c.psi, c.rho, c.networks_combined(), c.total());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// subcommand bodies
// ---------------------------------------------------------------------------

inline int cmd_generate(const std::string& config_path, const std::string& out_path) {
  detail::Stopwatch watch;
  const RunConfig cfg = detail::resolve_config(config_path);
  std::vector<std::string> artifacts;
  for (std::size_t s = 0; s < cfg.data.subjects; ++s) {
    SubjectRecording rec = generate_synthetic_subject(cfg.data, s);
    const std::string path = detail::subject_path(out_path, s, cfg.data.subjects);
    nlohmann::json extra{{"generator", run_config_to_json(cfg)["data"]}, {"subject", s + 1}};
    save_recording(path, rec.rec, rec.events, extra);
    artifacts.push_back(path);
    std::fprintf(stderr, "[diffe] wrote %s (%zu events, %zu channels, %.0f s at %.0f Hz)\n",
                 path.c_str(), rec.events.size(), rec.rec.channels,
                 static_cast<double>(rec.rec.samples) / rec.rec.fs, rec.rec.fs);
  }
  detail::require_artifacts(artifacts);
  detail::write_manifest(out_path + ".manifest.json", detail::base_manifest("generate", cfg),
                         artifacts, watch.seconds());
  return 0;
}

inline int cmd_preprocess(const std::string& config_path, const std::string& in_path,
                          const std::string& out_path) {
  detail::Stopwatch watch;
  const RunConfig cfg = detail::resolve_config(config_path);
  SubjectRecording raw = load_recording(in_path);
  EpochSet set = preprocess(std::move(raw.rec), raw.events, cfg.preprocess);
  nlohmann::json extra{{"source", in_path}, {"preprocess", run_config_to_json(cfg)["preprocess"]}};
  save_epochs(out_path, set, extra);
  detail::require_artifacts({out_path});
  detail::write_manifest(out_path + ".manifest.json", detail::base_manifest("preprocess", cfg),
                         {out_path}, watch.seconds());
  std::fprintf(stderr, "[diffe] wrote %s (%zu trials x %zu channels x %zu samples)\n",
               out_path.c_str(), set.trials, set.channels, set.samples);
  return 0;
}

inline int cmd_train(const std::string& config_path, const std::string& data_path,
                     const std::string& out_dir) {
  detail::Stopwatch watch;
  RunConfig cfg = detail::resolve_config(config_path);
  cfg.train.verbose = true;
  const EpochSet set = load_epochs(data_path);
  fs::create_directories(out_dir);

  ModelConfig probe_cfg = cfg.model;
  probe_cfg.in_channels = set.channels;
  const ParamCounts counts =
      ModelBundle<float>::init(probe_cfg, cfg.train.mode, cfg.train.seed).param_count();
  detail::log_param_counts(counts);

  TrainResult result = train(set, cfg.train, cfg.model);

  const std::string best_path = (fs::path(out_dir) / "checkpoint_best.dife").string();
  const std::string final_path = (fs::path(out_dir) / "checkpoint_final.dife").string();
  const std::string history_path = (fs::path(out_dir) / "history.csv").string();
  nlohmann::json ckpt_extra{{"source", data_path},
                            {"best_epoch", result.best_epoch},
                            {"best_test_accuracy", result.best_test_acc}};
  save_checkpoint(best_path, result.best_models, ckpt_extra);
  save_checkpoint(final_path, result.models, ckpt_extra);
  write_history_csv(history_path, result.history);

  RunMetrics best = evaluate_split(set, result.split.test, result.best_models, to_string(cfg.train.mode));
  if (!std::isfinite(best.accuracy_pct) || !std::isfinite(best.auc_pct)) {
    throw TrainingError("train: final metrics are not finite");
  }
  std::printf("mode=%s best_epoch=%zu test_accuracy=%.2f%% test_auc=%.2f%%\n",
              to_string(cfg.train.mode).c_str(), result.best_epoch, best.accuracy_pct, best.auc_pct);

  nlohmann::json manifest = detail::base_manifest("train", cfg);
  manifest["data"] = data_path;
  manifest["parameter_counts"] = {{"theta", counts.theta},
                                  {"phi", counts.phi},
                                  {"psi", counts.psi},
                                  {"rho", counts.rho},
                                  {"networks_combined", counts.networks_combined()},
                                  {"total", counts.total()}};
  manifest["best_epoch"] = result.best_epoch;
  manifest["test_accuracy_pct"] = best.accuracy_pct;
  manifest["test_auc_pct"] = best.auc_pct;
  const std::vector<std::string> artifacts{best_path, final_path, history_path};
  detail::require_artifacts(artifacts);
  detail::write_manifest((fs::path(out_dir) / "manifest.json").string(), manifest, artifacts,
                         watch.seconds());
  return 0;
}

inline int cmd_ablate(const std::string& config_path, const std::vector<std::string>& data_paths,
                      const std::string& out_dir) {
  detail::Stopwatch watch;
  RunConfig cfg = detail::resolve_config(config_path);
  cfg.train.verbose = true;
  fs::create_directories(out_dir);

  std::vector<RunMetrics> runs;
  nlohmann::json per_run = nlohmann::json::array();
  for (const auto& path : data_paths) {
    const EpochSet set = load_epochs(path);
    const auto results = run_ablation(set, cfg.train, cfg.model);
    for (const auto& r : results) {
      runs.push_back(r.metrics);
      per_run.push_back({{"data", path},
                         {"mode", r.row_label},
                         {"accuracy_pct", r.metrics.accuracy_pct},
                         {"auc_pct", r.metrics.auc_pct}});
    }
  }

  std::vector<ReportRow> rows;
  for (AblationMode mode :
       {AblationMode::Full, AblationMode::NoDdpm, AblationMode::EncoderClassifier}) {
    rows.push_back(aggregate_runs(ablation_row_label(mode), runs));
  }
  const std::string table = format_report(rows);
  std::printf("%s", table.c_str());

  const std::string report_path = (fs::path(out_dir) / "report.txt").string();
  const std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  {
    std::ofstream out(report_path);
    if (!out) throw IoError("cannot write " + report_path);
    out << table;
  }
  write_metrics_csv(metrics_path, rows);

  nlohmann::json manifest = detail::base_manifest("ablate", cfg);
  manifest["data"] = data_paths;
  manifest["runs"] = per_run;
  {
    ModelConfig probe = cfg.model;
    probe.in_channels = load_epochs(data_paths.front()).channels;
    const ParamCounts counts =
        ModelBundle<float>::init(probe, AblationMode::Full, cfg.train.seed).param_count();
    manifest["parameter_counts"] = {{"theta", counts.theta},
                                    {"phi", counts.phi},
                                    {"psi", counts.psi},
                                    {"rho", counts.rho},
                                    {"networks_combined", counts.networks_combined()},
                                    {"total", counts.total()}};
  }
  const std::vector<std::string> artifacts{report_path, metrics_path};
  detail::require_artifacts(artifacts);
  detail::write_manifest((fs::path(out_dir) / "manifest.json").string(), manifest, artifacts,
                         watch.seconds());
  return 0;
}

inline int cmd_eval(const std::string& config_path, const std::string& checkpoint_path,
                    const std::string& data_path, const std::string& out_dir,
                    const std::string& which_split) {
  detail::Stopwatch watch;
  const RunConfig cfg = detail::resolve_config(config_path);
  const EpochSet set = load_epochs(data_path);
  const ModelBundle<float> models = load_checkpoint(checkpoint_path);
  fs::create_directories(out_dir);

  std::vector<std::size_t> idx;
  if (which_split == "all") {
    idx.resize(set.trials);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  } else if (which_split == "test") {
    idx = stratified_split(set.labels, cfg.train.test_fraction, cfg.train.seed).test;
  } else {
    throw UsageError("eval: --split must be 'test' or 'all'");
  }

  const RunMetrics m = evaluate_split(set, idx, models, to_string(models.mode));
  std::vector<ReportRow> rows{aggregate_runs(m.mode, {m})};
  const std::string table = format_report(rows);
  std::printf("%s", table.c_str());

  const std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  const std::string report_path = (fs::path(out_dir) / "report.txt").string();
  const std::string confusion_path = (fs::path(out_dir) / "confusion.csv").string();
  write_metrics_csv(metrics_path, rows);
  {
    std::ofstream out(report_path);
    out << table;
  }
  {
    std::ofstream out(confusion_path);
    if (!out) throw IoError("cannot write " + confusion_path);
    for (const auto& row : m.confusion) {
      for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << row[j];
      out << "\n";
    }
  }

  nlohmann::json manifest = detail::base_manifest("eval", cfg);
  manifest["data"] = data_path;
  manifest["checkpoint"] = checkpoint_path;
  manifest["split"] = which_split;
  manifest["accuracy_pct"] = m.accuracy_pct;
  manifest["auc_pct"] = m.auc_pct;
  const std::vector<std::string> artifacts{metrics_path, report_path, confusion_path};
  detail::require_artifacts(artifacts);
  detail::write_manifest((fs::path(out_dir) / "manifest.json").string(), manifest, artifacts,
                         watch.seconds());
  return 0;
}

inline int cmd_diffuse_demo(const std::string& config_path, const std::string& data_path,
                            std::size_t epoch_index, const std::string& channel,
                            const std::string& t_list, const std::string& out_path,
                            std::uint64_t seed) {
  detail::Stopwatch watch;
  const RunConfig cfg = detail::resolve_config(config_path);
  const EpochSet set = load_epochs(data_path);
  if (epoch_index >= set.trials) {
    throw UsageError("diffuse-demo: epoch index " + std::to_string(epoch_index) +
                     " out of range, dataset has " + std::to_string(set.trials) + " trials");
  }

  // channel by montage name or numeric index
  const auto names = standard_channel_names(set.channels);
  std::size_t ch = set.channels;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == channel) {
      ch = i;
      break;
    }
  }
  if (ch == set.channels) {
    try {
      ch = static_cast<std::size_t>(std::stoul(channel));
    } catch (...) {
      throw UsageError("diffuse-demo: unknown channel '" + channel + "'");
    }
    if (ch >= set.channels) {
      throw UsageError("diffuse-demo: channel index " + std::to_string(ch) + " out of range");
    }
  }

  std::vector<std::size_t> ts;
  {
    std::istringstream in(t_list);
    std::string item;
    while (std::getline(in, item, ',')) {
      std::size_t t = 0;
      if (!diffe::detail::parse_size(diffe::detail::trim(item), t)) {
        throw UsageError("diffuse-demo: cannot parse timestep '" + item + "'");
      }
      if (t > cfg.train.diffusion_steps) {
        throw UsageError("diffuse-demo: timestep " + std::to_string(t) + " exceeds T = " +
                         std::to_string(cfg.train.diffusion_steps));
      }
      ts.push_back(t);
    }
  }
  if (ts.empty()) throw UsageError("diffuse-demo: no timesteps given");

  const float* row = set.trial(epoch_index) + ch * set.samples;
  std::vector<float> x0(row, row + set.samples);
  const NoiseSchedule sched =
      make_schedule(cfg.train.diffusion_steps, cfg.train.beta_start, cfg.train.beta_end);
  Rng rng(seed, "demo");
  const auto columns = diffusion_demo_table(x0, ts, sched, rng);

  std::ofstream out(out_path);
  if (!out) throw IoError("cannot write " + out_path);
  out << "sample";
  for (std::size_t t : ts) out << ",t" << t;
  out << "\n";
  char buf[64];
  for (std::size_t i = 0; i < set.samples; ++i) {
    out << i;
    for (std::size_t c = 0; c < columns.size(); ++c) {
      std::snprintf(buf, sizeof(buf), ",%.7g", static_cast<double>(columns[c][i]));
      out << buf;
    }
    out << "\n";
  }
  out.close();

  nlohmann::json manifest = detail::base_manifest("diffuse-demo", cfg);
  manifest["data"] = data_path;
  manifest["epoch"] = epoch_index;
  manifest["channel"] = names[ch];
  manifest["timesteps"] = ts;
  manifest["demo_seed"] = seed;
  detail::require_artifacts({out_path});
  detail::write_manifest(out_path + ".manifest.json", manifest, {out_path}, watch.seconds());
  return 0;
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------
inline int run(int argc, const char* const* argv) {
  CLI::App app{"Diff-E: diffusion-guided EEG imagined-speech decoding"};
  app.require_subcommand(1);

  std::string config_path, out_path, in_path, data_path, checkpoint_path;
  std::vector<std::string> data_paths;
  std::string channel = "FT7";
  std::string t_list = "0,100,500,1000";
  std::string which_split = "test";
  std::size_t epoch_index = 0;
  std::uint64_t demo_seed = 42;

  auto* gen = app.add_subcommand("generate", "synthesize a benchmark recording");
  gen->add_option("--config", config_path, "run configuration file");
  gen->add_option("--out", out_path, "output recording container")->required();

  auto* pre = app.add_subcommand("preprocess", "filter, re-reference and epoch a recording");
  pre->add_option("--config", config_path, "run configuration file");
  pre->add_option("--in", in_path, "input recording container")->required();
  pre->add_option("--out", out_path, "output epoch container")->required();

  auto* tr = app.add_subcommand("train", "train on an epoch container");
  tr->add_option("--config", config_path, "run configuration file");
  tr->add_option("--data", data_path, "epoch container")->required();
  tr->add_option("--out", out_path, "output directory")->required();

  auto* ab = app.add_subcommand("ablate", "run all three ablation configurations");
  ab->add_option("--config", config_path, "run configuration file");
  ab->add_option("--data", data_paths, "epoch container(s)")->required();
  ab->add_option("--out", out_path, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a container");
  ev->add_option("--config", config_path, "run configuration file");
  ev->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  ev->add_option("--data", data_path, "epoch container")->required();
  ev->add_option("--out", out_path, "output directory")->required();
  ev->add_option("--split", which_split, "which trials to score: test | all");

  auto* dm = app.add_subcommand("diffuse-demo", "emit one trial channel at several corruption stages");
  dm->add_option("--config", config_path, "run configuration file");
  dm->add_option("--data", data_path, "epoch container")->required();
  dm->add_option("--epoch", epoch_index, "trial index");
  dm->add_option("--channel", channel, "channel name (10-10 montage) or index");
  dm->add_option("--t", t_list, "comma-separated timesteps");
  dm->add_option("--out", out_path, "output CSV")->required();
  dm->add_option("--seed", demo_seed, "noise seed for the demo");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) return cmd_generate(config_path, out_path);
    if (pre->parsed()) return cmd_preprocess(config_path, in_path, out_path);
    if (tr->parsed()) return cmd_train(config_path, data_path, out_path);
    if (ab->parsed()) return cmd_ablate(config_path, data_paths, out_path);
    if (ev->parsed()) return cmd_eval(config_path, checkpoint_path, data_path, out_path, which_split);
    if (dm->parsed()) {
      return cmd_diffuse_demo(config_path, data_path, epoch_index, channel, t_list, out_path,
                              demo_seed);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 1;
  }
  return 1;
}

}  // namespace diffe::cli
