#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tssl/config.hpp"
#include "tssl/image.hpp"
#include "tssl/model.hpp"
#include "tssl/tensor.hpp"

namespace tssl {

/// Gaussian fit of in-distribution features with a ridge of
/// 1e-3 * trace(cov) / d on the diagonal.
class MahalanobisDetector {
 public:
  /// Needs at least d + 1 rows.
  explicit MahalanobisDetector(const Tensor& id_features);
  /// (x - mu)^T Sigma^-1 (x - mu) per row.
  std::vector<double> score(const Tensor& features) const;
  const Tensor& mean() const noexcept { return mean_; }

 private:
  Tensor mean_;
  Tensor precision_;  // [d, d]
};

std::vector<double> mahalanobis_score(const Tensor& id_features, const Tensor& query);
/// -tau * logsumexp(h / tau) per row.
std::vector<double> energy_score(const Tensor& features, double temperature = 1.0);
/// -||h|| per row.
std::vector<double> feature_norm_score(const Tensor& features);

/// Mean over factors of K + I between two standard views, averaged over
/// `draws` view pairs. Requires evidential heads.
std::vector<double> native_ki_score(const ExperimentConfig& config, const ParameterStore& params,
                                    const std::vector<ImageTensor>& images, std::size_t draws, std::uint64_t seed);
/// Same score for explicit, caller-chosen view pairs.
std::vector<double> ki_pair_score(const ExperimentConfig& config, const ParameterStore& params,
                                  const std::vector<ImageTensor>& view1, const std::vector<ImageTensor>& view2);

/// Area under the ROC curve with OOD as the positive class (higher score
/// means more OOD). Trapezoidal, so ties earn half credit.
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

/// Held-out shifts standing in for weather/night domains.
enum class OodShift { kHaze, kRain, kDarken, kHueRotation };
inline constexpr OodShift kOodShifts[] = {OodShift::kHaze, OodShift::kRain, OodShift::kDarken,
                                          OodShift::kHueRotation};
std::string_view shift_name(OodShift shift);
OodShift shift_from_name(std::string_view name);
std::vector<ImageTensor> apply_shift(const std::vector<ImageTensor>& images, OodShift shift, int severity,
                                     std::uint64_t seed);

enum class Detector { kMahalanobis, kEnergy, kFeatureNorm, kNativeKI };
inline constexpr Detector kDetectors[] = {Detector::kMahalanobis, Detector::kEnergy, Detector::kFeatureNorm,
                                          Detector::kNativeKI};
std::string_view detector_name(Detector d);
Detector detector_from_name(std::string_view name);

struct OodScoreSet {
  std::string detector;
  std::string shift;
  std::vector<double> id_scores;
  std::vector<double> ood_scores;
  double auroc = 0.5;
};

struct OodInputs {
  const std::vector<ImageTensor>* fit_images;  // ID split used to fit Mahalanobis
  const std::vector<ImageTensor>* id_images;   // ID evaluation split
  const std::vector<ImageTensor>* ood_images;
  std::string shift;
};

/// Runs one detector; native_ki raises ConfigError without evidential heads.
OodScoreSet run_detector(Detector detector, const ExperimentConfig& config, const ParameterStore& params,
                         const OodInputs& inputs);

}  // namespace tssl
