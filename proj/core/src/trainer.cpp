#include "tssl/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tssl/error.hpp"
#include "tssl/fusion.hpp"
#include "tssl/parallel.hpp"
#include "tssl/rng.hpp"

namespace tssl {
namespace {

using json = nlohmann::json;

constexpr std::uint64_t kShuffleTag = 0x5348554646ULL;
constexpr std::size_t kAugmentChunk = 8;

std::string checkpoint_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%04zu.tsslckpt", epoch);
  return buf;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::vector<std::string> lines;
  std::ifstream in(path);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) lines.push_back(line);
  return lines;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

/// Drop log rows belonging to epochs >= keep so a resumed run appends cleanly.
void truncate_log(const std::filesystem::path& path, std::size_t keep) {
  if (!std::filesystem::exists(path)) return;
  std::vector<std::string> kept;
  for (auto& line : read_lines(path))
    if (json::parse(line).at("epoch").get<std::size_t>() < keep) kept.push_back(std::move(line));
  write_lines(path, kept);
}

std::ofstream open_append(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot open " + path.string() + " for appending");
  return out;
}

std::string describe(const LossBreakdown& b) {
  std::ostringstream os;
  os << "base=" << b.base << " selective=" << b.selective << " anchor=" << b.anchor << " diversity=" << b.diversity
     << " aux=" << b.aux << " kl=" << b.kl << " total=" << b.total;
  return os.str();
}

}  // namespace

AugmentConfig augment_config(const ExperimentConfig& config) {
  AugmentConfig a;
  a.output_size = config.model.image_size;
  a.min_crop_scale = config.augment.min_crop_scale;
  a.flip_probability = config.augment.flip_probability;
  a.corruption_probability = config.augment.corruption_probability;
  a.max_severity = config.augment.max_severity;
  return a;
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, const ExperimentConfig& config,
                 std::size_t epoch) {
  const std::size_t n = indices.size();
  const AugmentConfig aug = augment_config(config);
  std::vector<AugmentedView> v1(n), v2(n);
  parallel_chunks(n, kAugmentChunk, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t sample = indices[i];
      const ImageTensor& img = data.images.at(sample);
      v1[i] = augment_view(img, RngStream::derive(config.seed, epoch, sample, 0), aug);
      v2[i] = augment_view(img, RngStream::derive(config.seed, epoch, sample, 1), aug);
    }
  });
  Batch b;
  std::vector<ImageTensor> i1, i2;
  i1.reserve(n);
  i2.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    i1.push_back(std::move(v1[i].image));
    i2.push_back(std::move(v2[i].image));
    b.families1.push_back(v1[i].family);
    b.families2.push_back(v2[i].family);
  }
  b.view1 = stack_images(i1);
  b.view2 = stack_images(i2);
  return b;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  RngStream rng = RngStream::derive(seed, epoch, kShuffleTag, 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  return order;
}

AssembledLoss build_loss(const ModelGraph& model, const Batch& batch, const ExperimentConfig& config,
                         double epoch) {
  ad::Graph& g = model.graph();
  const ModelConfig& mc = model.config();
  const ObjectiveConfig& oc = config.objective;
  const std::size_t n = batch.view1.dim(0);
  const ScheduleState schedule = ScheduleState::from_config(config, epoch);
  const double lambda_min = schedule_lambda_min(schedule);

  Shape both_shape = batch.view1.shape();
  both_shape[0] = 2 * n;
  std::vector<double> both(batch.view1.values().begin(), batch.view1.values().end());
  both.insert(both.end(), batch.view2.values().begin(), batch.view2.values().end());
  const ad::Var h = model.encode(Tensor(both_shape, std::move(both)));
  const ad::Var h1 = ad::slice(h, 0, 0, n);
  const ad::Var h2 = ad::slice(h, 0, n, 2 * n);
  const ad::Var p = model.project(h);
  const ad::Var base = simclr_ntxent(ad::slice(p, 0, 0, n), ad::slice(p, 0, n, 2 * n), oc.temperature);

  const ad::Var zero = g.constant(Tensor::scalar(0.0));
  LossTerms terms{base, zero, zero, zero, zero, zero};
  LossWeights weights = loss_weights(oc, schedule_lambda_sel(schedule));
  double mean_k = 0.0, mean_i = 0.0;

  if (config.variant == Variant::kSimclrOnly) {
    return total_loss(terms, LossWeights{}, lambda_min);
  }

  const std::vector<ad::Var> z1 = model.factorize(h1);
  const std::vector<ad::Var> z2 = model.factorize(h2);
  const std::size_t factors = z1.size();
  std::vector<ad::Var> gate;
  gate.reserve(factors);

  if (has_evidential_gate(config.variant)) {
    std::vector<ad::Var> alphas;
    const double beta = mc.prior_strength;
    for (std::size_t t = 0; t < factors; ++t) {
      const ad::Var e1 = model.evidence(z1[t], t);
      const ad::Var e2 = model.evidence(z2[t], t);
      const GateGraph gg = evidential_gate_graph(e1, e2, beta, lambda_min, config.gate);
      gate.push_back(gg.weight);
      mean_k += ad::mean(gg.conflict).value().item();
      mean_i += ad::mean(gg.ignorance).value().item();
      alphas.push_back(e1 + beta);
      alphas.push_back(e2 + beta);
    }
    mean_k /= static_cast<double>(factors);
    mean_i /= static_cast<double>(factors);
    const double prior = oc.kl_prior == KlPrior::kOnes ? 1.0 : beta;
    terms.kl = kl_uniform_dirichlet(alphas, prior);
  } else {
    const ad::Var tau = model.cosine_temperature();
    for (std::size_t t = 0; t < factors; ++t)
      gate.push_back(cosine_gate_graph(z1[t], z2[t], ad::slice(tau, 0, t, t + 1)));
  }

  if (config.variant == Variant::kTrustSslMultiplicative) {
    terms.selective = selective_multiplicative(z1, z2, gate);
    weights.base = 1.0 - ramp_fraction(schedule);
    weights.selective = oc.multiplicative_weight;
  } else {
    terms.selective = selective_additive(z1, z2, gate);
  }
  terms.anchor = anchor_loss(z1, z2, batch.families1, batch.families2, oc.anchor_temperature);
  terms.diversity = (diversity_loss(z1) + diversity_loss(z2)) * 0.5;

  std::vector<int> tags;
  tags.reserve(2 * n);
  for (auto f : batch.families1) tags.push_back(family_id(f));
  for (auto f : batch.families2) tags.push_back(family_id(f));
  terms.aux = cross_entropy(model.aux_logits(h), tags);

  AssembledLoss out = total_loss(terms, weights, lambda_min);
  out.breakdown.mean_conflict = mean_k;
  out.breakdown.mean_ignorance = mean_i;
  return out;
}

TrainingState initial_state(const ExperimentConfig& config) {
  TrainingState s;
  s.params = init_parameters(config.model, config.seed);
  s.optimizer = OptimizerState::zeros_like(s.params);
  return s;
}

LossBreakdown train_step(TrainingState& state, const Batch& batch, const ExperimentConfig& config,
                         std::size_t epoch, double learning_rate, std::size_t step_index) {
  ad::Graph g;
  const ModelGraph model(g, config.model, state.params);
  const AssembledLoss loss = build_loss(model, batch, config, static_cast<double>(epoch));
  if (!std::isfinite(loss.breakdown.total)) {
    throw Error("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step_index) + ": " +
                describe(loss.breakdown));
  }
  const ad::GradientMap grads = g.backward(loss.total);
  sgd_step(state.params, collect_gradients(model, grads), state.optimizer, learning_rate,
           config.train.momentum, config.train.weight_decay);
  return loss.breakdown;
}

EpochMetrics train_epoch(TrainingState& state, const Dataset& data, const ExperimentConfig& config,
                         std::size_t epoch, const StepCallback& on_step) {
  const std::size_t n = data.images.size();
  const std::size_t bs = config.train.batch_size;
  const std::vector<std::size_t> order = epoch_order(n, config.seed, epoch);
  const std::size_t steps = (n + bs - 1) / bs;
  const double total_epochs = static_cast<double>(config.train.epochs);

  EpochMetrics m;
  m.epoch = epoch;
  m.steps = steps;
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t begin = s * bs;
    const std::size_t end = std::min(n, begin + bs);
    const Batch batch = make_batch(data, std::span(order).subspan(begin, end - begin), config, epoch);
    const double progress = static_cast<double>(epoch) + static_cast<double>(s) / static_cast<double>(steps);
    const double lr = cosine_learning_rate(config.train.learning_rate, progress, total_epochs);
    const LossBreakdown b = train_step(state, batch, config, epoch, lr, s);
    m.mean_total += b.total;
    m.mean_base += b.base;
    m.mean_selective += b.selective;
    m.mean_conflict += b.mean_conflict;
    m.mean_ignorance += b.mean_ignorance;
    m.mean_aux += b.aux;
    m.lambda_sel = b.lambda_sel;
    m.lambda_min = b.lambda_min;
    if (s == 0) m.learning_rate = lr;
    if (on_step) on_step(StepRecord{epoch, s, b});
  }
  const double k = static_cast<double>(std::max<std::size_t>(steps, 1));
  m.mean_total /= k;
  m.mean_base /= k;
  m.mean_selective /= k;
  m.mean_conflict /= k;
  m.mean_ignorance /= k;
  m.mean_aux /= k;
  return m;
}

Dataset load_split(const ExperimentConfig& config, const std::string& split) {
  const DataConfig& d = config.data;
  if (d.source == "synthetic") {
    const std::size_t n = split == "train" ? d.train_samples : d.test_samples;
    return generate_synthetic_dataset(n, d.num_classes, config.model.image_size, config.seed, split);
  }
  if (d.source == "directory") return load_dataset(std::filesystem::path(d.path) / split);
  throw ConfigError("data.source: unknown source '" + d.source + "'");
}

std::string to_json_line(const EpochMetrics& m) {
  return json{{"epoch", m.epoch},
              {"steps", m.steps},
              {"mean_total", m.mean_total},
              {"mean_base", m.mean_base},
              {"mean_selective", m.mean_selective},
              {"mean_conflict", m.mean_conflict},
              {"mean_ignorance", m.mean_ignorance},
              {"mean_aux", m.mean_aux},
              {"lambda_sel", m.lambda_sel},
              {"lambda_min", m.lambda_min},
              {"learning_rate", m.learning_rate}}
      .dump();
}

std::string to_json_line(const StepRecord& r) {
  const LossBreakdown& b = r.loss;
  return json{{"epoch", r.epoch},           {"step", r.step},
              {"base", b.base},             {"selective", b.selective},
              {"anchor", b.anchor},         {"diversity", b.diversity},
              {"aux", b.aux},               {"kl", b.kl},
              {"total", b.total},           {"base_weight", b.base_weight},
              {"lambda_sel", b.lambda_sel}, {"lambda_min", b.lambda_min},
              {"mean_conflict", b.mean_conflict}, {"mean_ignorance", b.mean_ignorance}}
      .dump();
}

std::vector<EpochMetrics> read_metrics(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("metrics file not found: " + path.string());
  std::vector<EpochMetrics> rows;
  for (const auto& line : read_lines(path)) {
    const json j = json::parse(line);
    EpochMetrics m;
    m.epoch = j.at("epoch");
    m.steps = j.at("steps");
    m.mean_total = j.at("mean_total");
    m.mean_base = j.at("mean_base");
    m.mean_selective = j.at("mean_selective");
    m.mean_conflict = j.at("mean_conflict");
    m.mean_ignorance = j.at("mean_ignorance");
    m.mean_aux = j.at("mean_aux");
    m.lambda_sel = j.at("lambda_sel");
    m.lambda_min = j.at("lambda_min");
    m.learning_rate = j.at("learning_rate");
    rows.push_back(m);
  }
  return rows;
}

PretrainResult run_pretraining(const ExperimentConfig& config, const PretrainOptions& options) {
  validate(config);
  const std::filesystem::path out = config.output_dir;
  const std::filesystem::path ckpt_dir = out / "checkpoints";
  std::filesystem::create_directories(ckpt_dir);

  Dataset owned;
  const Dataset* data = options.train_data;
  if (!data) {
    owned = load_split(config, "train");
    data = &owned;
  }
  if (data->images.empty()) throw ConfigError("training split is empty");

  TrainingState state = initial_state(config);
  if (options.resume_from) {
    Checkpoint c = load_checkpoint(*options.resume_from);
    if (config_hash(c.config) != config_hash(config)) {
      throw ConfigError("checkpoint " + options.resume_from->string() + " was written with a different config");
    }
    if (!c.optimizer) throw FormatError("checkpoint " + options.resume_from->string() + " has no optimizer state");
    state.params = std::move(c.params);
    state.optimizer = std::move(*c.optimizer);
    state.epochs_completed = c.epochs_completed;
  }

  const std::size_t start = state.epochs_completed;
  for (const char* log : {"metrics.jsonl", "steps.jsonl", "timing.jsonl"}) {
    if (start == 0) {
      std::filesystem::remove(out / log);
    } else {
      truncate_log(out / log, start);
    }
  }

  const std::size_t total = config.train.epochs;
  const std::size_t stop = options.stop_after ? std::min(total, *options.stop_after) : total;
  PretrainResult result;
  result.final_checkpoint = out / "final.tsslckpt";
  auto save = [&](const std::filesystem::path& path) {
    save_checkpoint(Checkpoint{config, state.epochs_completed, state.params, state.optimizer}, path);
  };

  for (std::size_t epoch = start; epoch < stop; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::ofstream steps = open_append(out / "steps.jsonl");
    const EpochMetrics m =
        train_epoch(state, *data, config, epoch, [&](const StepRecord& r) { steps << to_json_line(r) << '\n'; });
    steps.close();
    state.epochs_completed = epoch + 1;
    open_append(out / "metrics.jsonl") << to_json_line(m) << '\n';
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    open_append(out / "timing.jsonl") << json{{"epoch", epoch}, {"wall_seconds", seconds}}.dump() << '\n';
    result.metrics.push_back(m);
    const bool periodic = config.train.checkpoint_every > 0 && state.epochs_completed % config.train.checkpoint_every == 0;
    if (periodic || state.epochs_completed == total) save(ckpt_dir / checkpoint_name(state.epochs_completed));
  }
  if (state.epochs_completed == total) save(result.final_checkpoint);
  return result;
}

}  // namespace tssl
