#include "tssl/ood.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "tssl/augment.hpp"
#include "tssl/corruption.hpp"
#include "tssl/error.hpp"
#include "tssl/evaluation.hpp"
#include "tssl/rng.hpp"
#include "tssl/trainer.hpp"

namespace tssl {
namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const Matrix> as_matrix(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("expected a [N, D] feature matrix, got " + to_string(t.shape()));
  return {t.data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1))};
}

}  // namespace

MahalanobisDetector::MahalanobisDetector(const Tensor& id_features) {
  const auto x = as_matrix(id_features);
  const auto n = x.rows(), d = x.cols();
  if (n < d + 1) {
    throw DomainError("mahalanobis: " + std::to_string(n) + " ID samples for " + std::to_string(d) +
                      " dimensions; need at least d + 1");
  }
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const Matrix centered = x.rowwise() - mu;
  Matrix cov = (centered.transpose() * centered) / static_cast<double>(n);
  const double ridge = 1e-3 * cov.trace() / static_cast<double>(d);
  cov.diagonal().array() += ridge > 0.0 ? ridge : 1e-12;
  const Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) throw DomainError("mahalanobis: covariance is not positive definite");
  const Matrix precision = llt.solve(Matrix::Identity(d, d));
  mean_ = Tensor(Shape{static_cast<std::size_t>(d)}, std::vector<double>(mu.data(), mu.data() + d));
  precision_ = Tensor(Shape{static_cast<std::size_t>(d), static_cast<std::size_t>(d)},
                      std::vector<double>(precision.data(), precision.data() + d * d));
}

std::vector<double> MahalanobisDetector::score(const Tensor& features) const {
  const auto x = as_matrix(features);
  const auto d = static_cast<Eigen::Index>(mean_.size());
  if (x.cols() != d) throw ShapeError("mahalanobis: query dimension differs from the fit");
  const Eigen::Map<const Eigen::RowVectorXd> mu(mean_.data(), d);
  const Eigen::Map<const Matrix> p(precision_.data(), d, d);
  std::vector<double> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::RowVectorXd diff = x.row(i) - mu;
    out[static_cast<std::size_t>(i)] = diff * p * diff.transpose();
  }
  return out;
}

std::vector<double> mahalanobis_score(const Tensor& id_features, const Tensor& query) {
  return MahalanobisDetector(id_features).score(query);
}

std::vector<double> energy_score(const Tensor& features, double tau) {
  if (!(tau > 0.0)) throw DomainError("energy_score: temperature must be positive");
  const auto x = as_matrix(features);
  std::vector<double> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff() / tau;
    const double s = ((x.row(i).array() / tau) - m).exp().sum();
    out[static_cast<std::size_t>(i)] = -tau * (m + std::log(s));
  }
  return out;
}

std::vector<double> feature_norm_score(const Tensor& features) {
  const auto x = as_matrix(features);
  std::vector<double> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) out[static_cast<std::size_t>(i)] = -x.row(i).norm();
  return out;
}

std::vector<double> ki_pair_score(const ExperimentConfig& config, const ParameterStore& params,
                                  const std::vector<ImageTensor>& view1, const std::vector<ImageTensor>& view2) {
  const PairDiagnostics d = pair_diagnostics(config, params, view1, view2);
  const std::size_t n = view1.size(), t = config.model.factors;
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < t; ++f) out[i] += d.conflict[i * t + f] + d.ignorance[i * t + f];
    out[i] /= static_cast<double>(t);
  }
  return out;
}

std::vector<double> native_ki_score(const ExperimentConfig& config, const ParameterStore& params,
                                    const std::vector<ImageTensor>& images, std::size_t draws, std::uint64_t seed) {
  require_evidential(config);
  if (draws == 0) throw DomainError("native_ki_score: at least one view draw is required");
  const AugmentConfig aug = augment_config(config);
  std::vector<double> total(images.size(), 0.0);
  for (std::size_t r = 0; r < draws; ++r) {
    std::vector<ImageTensor> v1, v2;
    v1.reserve(images.size());
    v2.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
      RngStream a = RngStream::derive(seed, r, i, 0);
      RngStream b = RngStream::derive(seed, r, i, 1);
      v1.push_back(standard_view(images[i], a, aug));
      v2.push_back(standard_view(images[i], b, aug));
    }
    const auto s = ki_pair_score(config, params, v1, v2);
    for (std::size_t i = 0; i < s.size(); ++i) total[i] += s[i];
  }
  for (auto& v : total) v /= static_cast<double>(draws);
  return total;
}

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  if (id_scores.empty() || ood_scores.empty()) throw DomainError("auroc: both score sets must be nonempty");
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> items;
  items.reserve(id_scores.size() + ood_scores.size());
  for (double s : id_scores) items.push_back({s, false});
  for (double s : ood_scores) items.push_back({s, true});
  for (const auto& it : items)
    if (std::isnan(it.score)) throw DomainError("auroc: NaN score");
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score > b.score; });

  // Walk thresholds from high to low; twice the trapezoid area in integer units.
  unsigned long long tp = 0, fp = 0, area2 = 0;
  for (std::size_t i = 0; i < items.size();) {
    unsigned long long dtp = 0, dfp = 0;
    const double s = items[i].score;
    for (; i < items.size() && items[i].score == s; ++i) (items[i].positive ? dtp : dfp) += 1;
    area2 += dfp * (2 * tp + dtp);
    tp += dtp;
    fp += dfp;
  }
  return static_cast<double>(area2) / (2.0 * static_cast<double>(tp) * static_cast<double>(fp));
}

std::string_view shift_name(OodShift shift) {
  switch (shift) {
    case OodShift::kHaze: return "haze";
    case OodShift::kRain: return "rain";
    case OodShift::kDarken: return "darken";
    case OodShift::kHueRotation: return "hue_rotation";
  }
  return "unknown";
}

OodShift shift_from_name(std::string_view name) {
  for (auto s : kOodShifts)
    if (shift_name(s) == name) return s;
  throw ConfigError("unknown OOD shift '" + std::string(name) + "'");
}

std::vector<ImageTensor> apply_shift(const std::vector<ImageTensor>& images, OodShift shift, int severity,
                                     std::uint64_t seed) {
  if (severity < 1 || severity > kMaxSeverity) throw DomainError("apply_shift: severity out of range");
  switch (shift) {
    case OodShift::kHaze: return corrupt_all(images, CorruptionSpec(AugmentationFamily::kHaze, severity), seed);
    case OodShift::kRain: return corrupt_all(images, CorruptionSpec(AugmentationFamily::kRain, severity), seed);
    default: break;
  }
  std::vector<ImageTensor> out = images;
  if (shift == OodShift::kDarken) {
    const double gain = 1.0 - 0.15 * severity;
    for (auto& img : out)
      for (auto& v : img.values) v *= gain;
    return out;
  }
  // Rotation about the grey axis by 22.5 degrees per severity step.
  const double theta = std::numbers::pi / 8.0 * severity;
  const double c = std::cos(theta), s = std::sin(theta), k = (1.0 - c) / 3.0, r = s / std::sqrt(3.0);
  const double m[3][3] = {{c + k, k - r, k + r}, {k + r, c + k, k - r}, {k - r, k + r, c + k}};
  for (auto& img : out) {
    const ImageTensor src = img;
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x)
        for (std::size_t ch = 0; ch < 3; ++ch)
          img.at(ch, y, x) = m[ch][0] * src.at(0, y, x) + m[ch][1] * src.at(1, y, x) + m[ch][2] * src.at(2, y, x);
    img.clamp();
  }
  return out;
}

std::string_view detector_name(Detector d) {
  switch (d) {
    case Detector::kMahalanobis: return "mahalanobis";
    case Detector::kEnergy: return "energy";
    case Detector::kFeatureNorm: return "feature_norm";
    case Detector::kNativeKI: return "native_ki";
  }
  return "unknown";
}

Detector detector_from_name(std::string_view name) {
  for (auto d : kDetectors)
    if (detector_name(d) == name) return d;
  throw ConfigError("unknown detector '" + std::string(name) + "'");
}

OodScoreSet run_detector(Detector detector, const ExperimentConfig& config, const ParameterStore& params,
                         const OodInputs& in) {
  OodScoreSet out;
  out.detector = std::string(detector_name(detector));
  out.shift = in.shift;
  if (detector == Detector::kNativeKI) {
    out.id_scores = native_ki_score(config, params, *in.id_images, config.eval.native_ki_draws, config.seed);
    out.ood_scores = native_ki_score(config, params, *in.ood_images, config.eval.native_ki_draws, config.seed);
  } else {
    const Tensor id = encode_features(config.model, params, stack_images(*in.id_images));
    const Tensor ood = encode_features(config.model, params, stack_images(*in.ood_images));
    switch (detector) {
      case Detector::kMahalanobis: {
        const MahalanobisDetector m(encode_features(config.model, params, stack_images(*in.fit_images)));
        out.id_scores = m.score(id);
        out.ood_scores = m.score(ood);
        break;
      }
      case Detector::kEnergy:
        out.id_scores = energy_score(id, config.eval.energy_temperature);
        out.ood_scores = energy_score(ood, config.eval.energy_temperature);
        break;
      default:
        out.id_scores = feature_norm_score(id);
        out.ood_scores = feature_norm_score(ood);
        break;
    }
  }
  out.auroc = auroc(out.id_scores, out.ood_scores);
  return out;
}

}  // namespace tssl
