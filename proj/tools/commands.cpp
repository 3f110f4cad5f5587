#include "commands.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "tssl/checkpoint.hpp"
#include "tssl/config.hpp"
#include "tssl/dataset.hpp"
#include "tssl/error.hpp"
#include "tssl/evaluation.hpp"
#include "tssl/image.hpp"
#include "tssl/ood.hpp"
#include "tssl/parallel.hpp"
#include "tssl/reports.hpp"
#include "tssl/trainer.hpp"

namespace tssl::cli {
namespace {

namespace fs = std::filesystem;

/// Bad invocation or unusable inputs; maps to exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> threads;
};

struct EvalOptions {
  std::string checkpoint;
  std::string dataset;
};

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("missing ") + what);
  if (!fs::exists(path)) throw UsageError(std::string(what) + " not found: " + path);
}

void apply_threads(const GlobalOptions& g, std::size_t config_threads) {
  std::size_t n = g.threads.value_or(config_threads);
  if (const char* env = std::getenv("TSSL_THREADS"); env && *env) {
    try {
      n = std::stoul(env);
    } catch (const std::exception&) {
      throw UsageError(std::string("TSSL_THREADS is not a number: ") + env);
    }
  }
  set_thread_count(n);
}

ExperimentConfig base_config(const GlobalOptions& g) {
  ExperimentConfig c = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
  if (g.seed) c.seed = *g.seed;
  if (!g.out.empty()) c.output_dir = g.out;
  validate(c);
  return c;
}

struct LoadedRun {
  Checkpoint checkpoint;
  ExperimentConfig config;  // checkpoint config with CLI overrides
  fs::path out_dir;
};

LoadedRun load_run(const GlobalOptions& g, const EvalOptions& e) {
  require_file(e.checkpoint, "checkpoint");
  LoadedRun r{load_checkpoint(e.checkpoint), {}, {}};
  r.config = r.checkpoint.config;
  if (g.seed) r.config.seed = *g.seed;
  if (!e.dataset.empty()) {
    if (!fs::is_directory(e.dataset)) throw UsageError("dataset directory not found: " + e.dataset);
    r.config.data.source = "directory";
    r.config.data.path = e.dataset;
  }
  r.out_dir = g.out.empty() ? fs::path(r.config.output_dir) : fs::path(g.out);
  apply_threads(g, r.config.threads);
  return r;
}

Dataset split_of(const ExperimentConfig& c, const std::string& split) {
  try {
    return load_split(c, split);
  } catch (const IoError& e) {
    throw UsageError(e.what());
  }
}

void finish_manifest(const fs::path& dir, const std::string& command, const std::string& hash,
                     const std::string& started, const std::string& name) {
  RunManifest m;
  m.command = command;
  m.config_hash = hash;
  m.started_at = started;
  m.finished_at = utc_timestamp();
  m.files = inventory(dir);
  write_text(dir / name, manifest_json(m));
}

int cmd_pretrain(const GlobalOptions& g, const std::string& resume, std::optional<std::size_t> stop_after,
                 std::ostream& out) {
  const std::string started = utc_timestamp();
  ExperimentConfig c = base_config(g);
  apply_threads(g, c.threads);
  PretrainOptions opts;
  if (!resume.empty()) {
    require_file(resume, "checkpoint");
    opts.resume_from = resume;
  }
  opts.stop_after = stop_after;
  const fs::path dir = c.output_dir;
  fs::create_directories(dir);
  write_text(dir / "config.json", to_json(c));
  const PretrainResult r = run_pretraining(c, opts);
  finish_manifest(dir, "pretrain", config_hash(c), started, "manifest.json");
  out << "variant " << variant_name(c.variant) << ", " << r.metrics.size() << " epochs run";
  if (!r.metrics.empty()) out << ", final loss " << r.metrics.back().mean_total;
  out << "\nconfig hash " << config_hash(c) << "\n";
  if (fs::exists(r.final_checkpoint)) out << "checkpoint " << r.final_checkpoint.string() << "\n";
  return kExitOk;
}

int cmd_probe(const GlobalOptions& g, const EvalOptions& e, std::optional<std::size_t> epochs, bool dump,
              std::ostream& out) {
  const std::string started = utc_timestamp();
  const LoadedRun run = load_run(g, e);
  const Dataset train = split_of(run.config, "train");
  const Dataset test = split_of(run.config, "test");
  const Tensor ftr = dataset_features(run.config.model, run.checkpoint.params, train);
  const Tensor fte = dataset_features(run.config.model, run.checkpoint.params, test);
  ProbeResult r = linear_probe(ftr, train.manifest.labels, fte, test.manifest.labels,
                               probe_config(run.config, epochs.value_or(run.config.eval.probe_epochs)));
  r.dataset = run.config.data.source == "synthetic" ? "synthetic" : run.config.data.path;
  write_text(run.out_dir / "probe.json", probe_json(r));
  if (dump) {
    write_packed(pack_matrix(ftr), run.out_dir / "features_train.tssl");
    write_packed(pack_matrix(fte), run.out_dir / "features_test.tssl");
  }
  finish_manifest(run.out_dir, "probe", config_hash(run.config), started, "manifest.probe.json");
  out << "probe accuracy " << r.accuracy << " (val " << r.val_accuracy << ", epoch " << r.best_epoch << ")\n";
  return kExitOk;
}

int cmd_corrupt_eval(const GlobalOptions& g, const EvalOptions& e, std::ostream& out) {
  const std::string started = utc_timestamp();
  const LoadedRun run = load_run(g, e);
  const Dataset train = split_of(run.config, "train");
  const Dataset test = split_of(run.config, "test");
  const Tensor ftr = dataset_features(run.config.model, run.checkpoint.params, train);
  const Tensor fte = dataset_features(run.config.model, run.checkpoint.params, test);
  const ProbeResult probe = linear_probe(ftr, train.manifest.labels, fte, test.manifest.labels,
                                         probe_config(run.config, run.config.eval.robust_probe_epochs));
  const RobustnessGrid grid =
      corruption_grid(run.config.model, run.checkpoint.params, probe.head, test, run.config.seed);
  write_text(run.out_dir / "grid.csv", grid_csv(grid));
  finish_manifest(run.out_dir, "corrupt-eval", config_hash(run.config), started, "manifest.corrupt-eval.json");
  const auto erasure = families_in(FamilyGroup::kErasure);
  out << "clean " << grid.clean << ", erasure mean at s5 " << grid.mean_at(erasure, 5) << "\n";
  return kExitOk;
}

int cmd_ki_trace(const GlobalOptions& g, const EvalOptions& e, std::optional<std::size_t> pairs, std::ostream& out) {
  const std::string started = utc_timestamp();
  const LoadedRun run = load_run(g, e);
  require_evidential(run.config);
  const Dataset test = split_of(run.config, "test");
  const auto& fams = corruption_families();
  const int severities[] = {1, 2, 3, 4, 5};
  const KITrace t = ki_trajectory(run.config, run.checkpoint.params, test, pairs.value_or(run.config.eval.ki_pairs),
                                  fams, severities, run.config.seed);
  write_text(run.out_dir / "ki_trace.json", ki_trace_json(t));
  write_text(run.out_dir / "ki_trace.csv", ki_trace_csv(t));
  finish_manifest(run.out_dir, "ki-trace", config_hash(run.config), started, "manifest.ki-trace.json");
  out << "baseline K " << t.baseline.mean_conflict << ", I " << t.baseline.mean_ignorance << "; " << t.rows.size()
      << " corrupted rows\n";
  return kExitOk;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_ood(const GlobalOptions& g, const EvalOptions& e, const std::string& detectors, const std::string& shifts,
            std::optional<int> severity, std::ostream& out) {
  const std::string started = utc_timestamp();
  std::vector<Detector> dets;
  std::vector<OodShift> shs;
  for (const auto& d : split_list(detectors)) dets.push_back(detector_from_name(d));
  for (const auto& s : split_list(shifts)) shs.push_back(shift_from_name(s));
  if (dets.empty() || shs.empty()) throw UsageError("ood: at least one detector and one shift are required");
  const LoadedRun run = load_run(g, e);
  if (std::find(dets.begin(), dets.end(), Detector::kNativeKI) != dets.end()) require_evidential(run.config);
  const Dataset train = split_of(run.config, "train");
  const Dataset test = split_of(run.config, "test");
  const int s = severity.value_or(run.config.eval.ood_severity);
  if (s < 1 || s > kMaxSeverity) throw UsageError("ood: --severity must lie in 1..5");
  std::vector<OodScoreSet> results;
  for (auto shift : shs) {
    const auto shifted = apply_shift(test.images, shift, s, run.config.seed);
    const OodInputs in{&train.images, &test.images, &shifted, std::string(shift_name(shift))};
    for (auto d : dets) {
      results.push_back(run_detector(d, run.config, run.checkpoint.params, in));
      out << results.back().detector << " on " << results.back().shift << ": AUROC " << results.back().auroc << "\n";
    }
  }
  write_text(run.out_dir / "ood.json", ood_json(results));
  finish_manifest(run.out_dir, "ood", config_hash(run.config), started, "manifest.ood.json");
  return kExitOk;
}

int cmd_gen_data(const GlobalOptions& g, std::size_t train_n, std::size_t test_n, std::size_t classes,
                 std::size_t size, bool ppm, std::ostream& out) {
  if (g.out.empty()) throw UsageError("gen-data requires --out");
  const ExperimentConfig c = base_config(g);
  apply_threads(g, c.threads);
  const fs::path dir = g.out;
  save_dataset(generate_synthetic_dataset(train_n, classes, size, c.seed, "train"), dir / "train", ppm);
  save_dataset(generate_synthetic_dataset(test_n, classes, size, c.seed, "test"), dir / "test", ppm);
  out << "wrote " << train_n << " train and " << test_n << " test images to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_diff_grids(const GlobalOptions& g, const std::string& reference, const std::string& candidate,
                   std::ostream& out) {
  require_file(reference, "reference grid");
  require_file(candidate, "candidate grid");
  const std::string diff = grid_diff_csv(parse_grid_csv(read_text(reference)), parse_grid_csv(read_text(candidate)));
  if (g.out.empty()) {
    out << diff;
  } else {
    write_text(g.out, diff);
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Trust-gated contrastive pretraining and evaluation", "tssl"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config, "Experiment config JSON");
  app.add_option("--seed", g.seed, "Override the global seed");
  app.add_option("--out", g.out, "Output directory (file for diff-grids)");
  app.add_option("--threads", g.threads, "Worker threads, 0 = all cores (TSSL_THREADS overrides)");

  auto* pretrain = app.add_subcommand("pretrain", "Run pretraining for the configured variant");
  std::string resume;
  std::optional<std::size_t> stop_after;
  pretrain->add_option("--resume", resume, "Continue from a checkpoint");
  pretrain->add_option("--stop-after", stop_after, "Stop once this many epochs are complete");

  EvalOptions ev;
  auto add_eval = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", ev.checkpoint, "TSSLCKPT checkpoint")->required();
    sub->add_option("--dataset", ev.dataset, "Dataset root with train/ and test/ (default: from checkpoint config)");
  };
  auto* probe = app.add_subcommand("probe", "Linear probe on frozen features");
  add_eval(probe);
  std::optional<std::size_t> probe_epochs;
  bool dump = false;
  probe->add_option("--epochs", probe_epochs, "Probe epochs");
  probe->add_flag("--dump-features", dump, "Write features as packed containers");

  auto* corrupt = app.add_subcommand("corrupt-eval", "Corruption robustness grid");
  add_eval(corrupt);

  auto* ki = app.add_subcommand("ki-trace", "Conflict/ignorance trace over corruption severities");
  add_eval(ki);
  std::optional<std::size_t> pairs;
  ki->add_option("--pairs", pairs, "Number of clean/corrupted pairs");

  auto* ood = app.add_subcommand("ood", "Out-of-distribution detectors and AUROC");
  add_eval(ood);
  std::string detectors = "mahalanobis,energy,feature_norm,native_ki";
  std::string shifts = "haze,rain,darken,hue_rotation";
  std::optional<int> severity;
  ood->add_option("--detectors", detectors, "Comma-separated detector names");
  ood->add_option("--shifts", shifts, "Comma-separated shifts");
  ood->add_option("--severity", severity, "Shift severity 1..5");

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset");
  std::size_t train_n = 2000, test_n = 500, classes = 8, size = 32;
  bool ppm = false;
  gen->add_option("--train", train_n, "Training samples");
  gen->add_option("--test", test_n, "Test samples");
  gen->add_option("--classes", classes, "Number of classes");
  gen->add_option("--size", size, "Image side in pixels");
  gen->add_flag("--ppm", ppm, "Write PPM files instead of a packed container");

  auto* diff = app.add_subcommand("diff-grids", "Signed per-cell difference of two grid CSVs");
  std::string reference, candidate;
  diff->add_option("reference", reference, "Reference grid CSV")->required();
  diff->add_option("candidate", candidate, "Candidate grid CSV")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*pretrain) return cmd_pretrain(g, resume, stop_after, out);
    if (*probe) return cmd_probe(g, ev, probe_epochs, dump, out);
    if (*corrupt) return cmd_corrupt_eval(g, ev, out);
    if (*ki) return cmd_ki_trace(g, ev, pairs, out);
    if (*ood) return cmd_ood(g, ev, detectors, shifts, severity, out);
    if (*gen) return cmd_gen_data(g, train_n, test_n, classes, size, ppm, out);
    if (*diff) return cmd_diff_grids(g, reference, candidate, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace tssl::cli
