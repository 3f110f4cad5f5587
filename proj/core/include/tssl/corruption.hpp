#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "tssl/image.hpp"
#include "tssl/rng.hpp"

namespace tssl {

/// Augmentation family tags. The numeric ids are part of the on-disk and
/// auxiliary-label contract and never change.
enum class AugmentationFamily : int {
  kClean = 0,
  kGaussianBlur = 1,
  kMotionBlur = 2,
  kHaze = 3,
  kOcclusion = 4,
  kColorDistortion = 5,
  kBrightnessInversion = 6,
  kContrastReversal = 7,
  kChannelDropout = 8,
  kRain = 9,
};

inline constexpr std::size_t kFamilyCount = 10;
inline constexpr std::size_t kCorruptionCount = 9;
inline constexpr int kMaxSeverity = 5;

std::string_view family_name(AugmentationFamily f);
/// Throws DomainError for unknown names.
AugmentationFamily family_from_name(std::string_view name);
AugmentationFamily family_from_id(int id);
inline int family_id(AugmentationFamily f) { return static_cast<int>(f); }

/// The nine corruption families in id order.
const std::array<AugmentationFamily, kCorruptionCount>& corruption_families();

enum class FamilyGroup { kErasure, kContradiction, kWeather };
/// Analysis grouping; nullopt for clean.
std::optional<FamilyGroup> family_group(AugmentationFamily f);
std::vector<AugmentationFamily> families_in(FamilyGroup group);

/// Factor slot that a family anchors: 0 blur, 1 chromaticity, 2 geometry,
/// 3 illumination, 4 occlusion, 5 texture. Slot 2 has no corruption family
/// (geometry is covered by the crop). Clean anchors nothing.
std::optional<std::size_t> anchor_slot(AugmentationFamily f);
inline constexpr std::size_t kAnchorSlots = 6;

/// A (family, severity) pair; only valid combinations are constructible.
class CorruptionSpec {
 public:
  CorruptionSpec(AugmentationFamily family, int severity);
  AugmentationFamily family() const noexcept { return family_; }
  int severity() const noexcept { return severity_; }

 private:
  AugmentationFamily family_;
  int severity_;
};

/// Normalized 1-D Gaussian with sigma and radius ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);
std::vector<double> box_kernel(std::size_t length);

/// Reflect-101 index mapping (edge pixel not repeated).
std::size_t reflect_index(long i, std::size_t n);

/// Pure function of (image, spec, rng key). Output is clamped to [0, 1].
ImageTensor apply_corruption(const ImageTensor& x, const CorruptionSpec& spec, RngStream rng);

}  // namespace tssl
