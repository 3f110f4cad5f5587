#include "tssl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tssl/error.hpp"
#include "tssl/fusion.hpp"
#include "tssl/parallel.hpp"
#include "tssl/rng.hpp"

namespace tssl {
namespace {

constexpr std::uint64_t kProbeSplitTag = 0x50524f4245ULL;
constexpr std::size_t kInferenceBatch = 128;

struct Standardized {
  Tensor mean;
  Tensor scale;
};

Standardized fit_standardizer(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t d = x.dim(1);
  Standardized s{Tensor(Shape{d}), Tensor(Shape{d}, 1.0)};
  const double n = static_cast<double>(rows.size());
  for (std::size_t r : rows)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += x[r * d + j];
  for (std::size_t j = 0; j < d; ++j) s.mean[j] /= n;
  std::vector<double> var(d, 0.0);
  for (std::size_t r : rows)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x[r * d + j] - s.mean[j];
      var[j] += c * c;
    }
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(var[j] / n);
    s.scale[j] = sd > 1e-12 ? 1.0 / sd : 1.0;
  }
  return s;
}

void row_logits(const LinearHead& head, const double* x, std::vector<double>& z, std::vector<double>& xs) {
  const std::size_t d = head.mean.size(), c = head.classes();
  for (std::size_t j = 0; j < d; ++j) xs[j] = (x[j] - head.mean[j]) * head.scale[j];
  for (std::size_t k = 0; k < c; ++k) z[k] = head.bias[k];
  for (std::size_t j = 0; j < d; ++j) {
    const double v = xs[j];
    for (std::size_t k = 0; k < c; ++k) z[k] += v * head.weight[j * c + k];
  }
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

double subset_accuracy(const LinearHead& head, const Tensor& x, std::span<const int> labels,
                       std::span<const std::size_t> rows) {
  if (rows.empty()) return 0.0;
  const std::size_t d = x.dim(1);
  std::vector<double> z(head.classes()), xs(d);
  std::size_t correct = 0;
  for (std::size_t r : rows) {
    row_logits(head, x.data() + r * d, z, xs);
    if (static_cast<int>(argmax(z)) == labels[r]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(rows.size());
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

void shuffle(std::vector<std::size_t>& v, RngStream rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform_index(i)]);
}

}  // namespace

ProbeConfig probe_config(const ExperimentConfig& config, std::size_t epochs) {
  ProbeConfig p;
  p.epochs = epochs;
  p.learning_rate = config.eval.probe_learning_rate;
  p.batch_size = config.eval.probe_batch_size;
  p.val_fraction = config.eval.probe_val_fraction;
  p.seed = config.seed;
  return p;
}

Tensor predict_logits(const LinearHead& head, const Tensor& features) {
  const std::size_t n = features.dim(0), d = features.dim(1), c = head.classes();
  if (d != head.mean.size()) throw ShapeError("predict_logits: feature dimension mismatch");
  Tensor out(Shape{n, c});
  std::vector<double> z(c), xs(d);
  for (std::size_t i = 0; i < n; ++i) {
    row_logits(head, features.data() + i * d, z, xs);
    std::copy(z.begin(), z.end(), out.data() + i * c);
  }
  return out;
}

std::vector<int> predict(const LinearHead& head, const Tensor& features) {
  const Tensor logits = predict_logits(head, features);
  const std::size_t c = head.classes();
  std::vector<int> out(features.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<int>(argmax(logits.values().subspan(i * c, c)));
  return out;
}

double accuracy_percent(const LinearHead& head, const Tensor& features, std::span<const int> labels) {
  if (features.dim(0) != labels.size()) throw ShapeError("accuracy: features/labels mismatch");
  const auto rows = iota(labels.size());
  return subset_accuracy(head, features, labels, rows);
}

std::vector<double> per_class_accuracy(const LinearHead& head, const Tensor& features, std::span<const int> labels) {
  const auto pred = predict(head, features);
  std::vector<double> hit(head.classes(), 0.0), total(head.classes(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto k = static_cast<std::size_t>(labels[i]);
    if (k >= total.size()) continue;
    total[k] += 1.0;
    if (pred[i] == labels[i]) hit[k] += 1.0;
  }
  for (std::size_t k = 0; k < hit.size(); ++k) hit[k] = total[k] > 0 ? 100.0 * hit[k] / total[k] : 0.0;
  return hit;
}

ProbeResult linear_probe(const Tensor& train_x, std::span<const int> train_y, const Tensor& eval_x,
                         std::span<const int> eval_y, const ProbeConfig& cfg) {
  if (train_x.rank() != 2 || train_x.dim(0) != train_y.size() || train_y.empty()) {
    throw ShapeError("linear_probe: training features and labels disagree");
  }
  if (eval_x.rank() != 2 || eval_x.dim(1) != train_x.dim(1) || eval_x.dim(0) != eval_y.size()) {
    throw ShapeError("linear_probe: evaluation features and labels disagree");
  }
  if (cfg.batch_size == 0) throw ConfigError("linear_probe: batch size must be positive");
  const auto [lo, hi] = std::minmax_element(train_y.begin(), train_y.end());
  if (*lo < 0) throw DomainError("linear_probe: negative label");
  if (*lo == *hi) throw DomainError("linear_probe: training labels contain a single class");
  const std::size_t classes = static_cast<std::size_t>(*hi) + 1;
  const std::size_t n = train_y.size(), d = train_x.dim(1);

  std::vector<std::size_t> order = iota(n);
  const RngStream root = RngStream(cfg.seed).split(kProbeSplitTag);
  shuffle(order, root.split(0));
  const auto val_count = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(n)));
  const std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(val_count, n - 1)));
  std::vector<std::size_t> fit(order.begin() + static_cast<std::ptrdiff_t>(val.size()), order.end());
  std::sort(fit.begin(), fit.end());
  const std::span<const std::size_t> select = val.empty() ? std::span<const std::size_t>(fit) : val;

  const Standardized st = fit_standardizer(train_x, fit);
  LinearHead head{st.mean, st.scale, Tensor(Shape{d, classes}), Tensor(Shape{classes})};
  Tensor vw(head.weight.shape()), vb(head.bias.shape());
  Tensor gw(head.weight.shape()), gb(head.bias.shape());

  ProbeResult result;
  result.head = head;
  result.val_accuracy = -1.0;
  std::vector<double> z(classes), xs(d);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) /
                                                           static_cast<double>(cfg.epochs))) / 2.0;
    std::vector<std::size_t> batch_order = fit;
    shuffle(batch_order, root.split(epoch + 1));
    for (std::size_t b = 0; b < batch_order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(batch_order.size(), b + cfg.batch_size);
      gw.fill(0.0);
      gb.fill(0.0);
      for (std::size_t q = b; q < e; ++q) {
        const std::size_t r = batch_order[q];
        row_logits(head, train_x.data() + r * d, z, xs);
        const double m = *std::max_element(z.begin(), z.end());
        double s = 0.0;
        for (auto& v : z) s += (v = std::exp(v - m));
        for (std::size_t k = 0; k < classes; ++k) {
          const double g = z[k] / s - (static_cast<int>(k) == train_y[r] ? 1.0 : 0.0);
          gb[k] += g;
          for (std::size_t j = 0; j < d; ++j) gw[j * classes + k] += g * xs[j];
        }
      }
      const double inv = 1.0 / static_cast<double>(e - b);
      for (std::size_t i = 0; i < gw.size(); ++i) {
        vw[i] = cfg.momentum * vw[i] + gw[i] * inv;
        head.weight[i] -= lr * vw[i];
      }
      for (std::size_t i = 0; i < gb.size(); ++i) {
        vb[i] = cfg.momentum * vb[i] + gb[i] * inv;
        head.bias[i] -= lr * vb[i];
      }
    }
    const double acc = subset_accuracy(head, train_x, train_y, select);
    if (acc > result.val_accuracy) {
      result.val_accuracy = acc;
      result.best_epoch = epoch;
      result.head = head;
    }
  }
  if (cfg.epochs == 0) result.val_accuracy = subset_accuracy(head, train_x, train_y, select);
  result.accuracy = accuracy_percent(result.head, eval_x, eval_y);
  result.per_class_accuracy = per_class_accuracy(result.head, eval_x, eval_y);
  return result;
}

double RobustnessGrid::at(AugmentationFamily family, int severity) const {
  const auto& fams = corruption_families();
  const auto it = std::find(fams.begin(), fams.end(), family);
  if (it == fams.end()) throw DomainError("grid: not a corruption family");
  if (severity < 1 || severity > kMaxSeverity) throw DomainError("grid: severity out of range");
  return accuracy[static_cast<std::size_t>(it - fams.begin())][static_cast<std::size_t>(severity - 1)];
}

double RobustnessGrid::mean_at(std::span<const AugmentationFamily> families, int severity) const {
  if (families.empty()) return 0.0;
  double acc = 0.0;
  for (auto f : families) acc += at(f, severity);
  return acc / static_cast<double>(families.size());
}

std::vector<ImageTensor> corrupt_all(const std::vector<ImageTensor>& images, const CorruptionSpec& spec,
                                     std::uint64_t seed) {
  std::vector<ImageTensor> out(images.size());
  parallel_chunks(images.size(), 16, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      out[i] = apply_corruption(images[i], spec,
                                RngStream::derive(seed, static_cast<std::uint64_t>(family_id(spec.family())),
                                                  static_cast<std::uint64_t>(spec.severity()), i));
    }
  });
  return out;
}

Tensor dataset_features(const ModelConfig& model, const ParameterStore& params, const Dataset& data) {
  return encode_features(model, params, stack_images(data.images), kInferenceBatch);
}

RobustnessGrid corruption_grid(const ModelConfig& model, const ParameterStore& params, const LinearHead& head,
                               const Dataset& test, std::uint64_t seed) {
  const auto& labels = test.manifest.labels;
  RobustnessGrid grid;
  grid.clean = accuracy_percent(head, dataset_features(model, params, test), labels);
  const auto& fams = corruption_families();
  for (std::size_t f = 0; f < fams.size(); ++f) {
    for (int s = 1; s <= kMaxSeverity; ++s) {
      const auto corrupted = corrupt_all(test.images, CorruptionSpec(fams[f], s), seed);
      const Tensor feats = encode_features(model, params, stack_images(corrupted), kInferenceBatch);
      grid.accuracy[f][static_cast<std::size_t>(s - 1)] = accuracy_percent(head, feats, labels);
    }
  }
  return grid;
}

void require_evidential(const ExperimentConfig& config) {
  if (!has_evidential_gate(config.variant)) {
    throw ConfigError("checkpoint variant " + std::string(variant_name(config.variant)) + " has no evidential heads");
  }
}

PairDiagnostics pair_diagnostics(const ExperimentConfig& config, const ParameterStore& params,
                                 const std::vector<ImageTensor>& view1, const std::vector<ImageTensor>& view2) {
  require_evidential(config);
  if (view1.size() != view2.size()) throw ShapeError("pair_diagnostics: view counts differ");
  const std::size_t n = view1.size(), factors = config.model.factors;
  PairDiagnostics out{Tensor(Shape{n, factors}), Tensor(Shape{n, factors})};
  const auto frozen = [](std::string_view) { return false; };
  for (std::size_t b = 0; b < n; b += kInferenceBatch) {
    const std::size_t e = std::min(n, b + kInferenceBatch);
    const std::vector<ImageTensor> c1(view1.begin() + static_cast<std::ptrdiff_t>(b),
                                      view1.begin() + static_cast<std::ptrdiff_t>(e));
    const std::vector<ImageTensor> c2(view2.begin() + static_cast<std::ptrdiff_t>(b),
                                      view2.begin() + static_cast<std::ptrdiff_t>(e));
    ad::Graph g;
    const ModelGraph model(g, config.model, params, frozen);
    const auto z1 = model.factorize(model.encode(stack_images(c1)));
    const auto z2 = model.factorize(model.encode(stack_images(c2)));
    std::vector<Tensor> e1, e2;
    for (std::size_t t = 0; t < factors; ++t) {
      e1.push_back(model.evidence(z1[t], t).value());
      e2.push_back(model.evidence(z2[t], t).value());
    }
    const TrustWeights w =
        evidential_trust(e1, e2, config.model.prior_strength, config.gate.lambda_min_start, config.gate);
    std::copy(w.conflict.values().begin(), w.conflict.values().end(), out.conflict.data() + b * factors);
    std::copy(w.ignorance.values().begin(), w.ignorance.values().end(), out.ignorance.data() + b * factors);
  }
  return out;
}

namespace {

KIRow summarize(const PairDiagnostics& d, std::string family, int severity) {
  const std::size_t n = d.conflict.dim(0), t = d.conflict.dim(1);
  KIRow row{std::move(family), severity, 0.0, 0.0};
  for (std::size_t i = 0; i < n; ++i) {
    double k = 0.0, u = 0.0;
    for (std::size_t f = 0; f < t; ++f) {
      k += d.conflict[i * t + f];
      u += d.ignorance[i * t + f];
    }
    row.mean_conflict += k / static_cast<double>(t);
    row.mean_ignorance += u / static_cast<double>(t);
  }
  row.mean_conflict /= static_cast<double>(n);
  row.mean_ignorance /= static_cast<double>(n);
  return row;
}

}  // namespace

KITrace ki_trajectory(const ExperimentConfig& config, const ParameterStore& params, const Dataset& test,
                      std::size_t n_pairs, std::span<const AugmentationFamily> families,
                      std::span<const int> severities, std::uint64_t seed) {
  require_evidential(config);
  const std::size_t n = std::min(n_pairs, test.images.size());
  if (n == 0) throw DomainError("ki_trajectory: no image pairs");
  const std::vector<ImageTensor> clean(test.images.begin(), test.images.begin() + static_cast<std::ptrdiff_t>(n));
  KITrace trace;
  trace.baseline = summarize(pair_diagnostics(config, params, clean, clean), "clean", 0);
  for (auto f : families) {
    for (int s : severities) {
      const auto corrupted = corrupt_all(clean, CorruptionSpec(f, s), seed);
      trace.rows.push_back(summarize(pair_diagnostics(config, params, clean, corrupted),
                                     std::string(family_name(f)), s));
    }
  }
  return trace;
}

}  // namespace tssl
