#include "tssl/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "tssl/error.hpp"

namespace tssl {
namespace {

constexpr std::array<std::string_view, kFamilyCount> kNames = {
    "clean",        "gaussian_blur",        "motion_blur",       "haze",            "occlusion",
    "color_distortion", "brightness_inversion", "contrast_reversal", "channel_dropout", "rain"};

ImageTensor convolve_rows(const ImageTensor& x, const std::vector<double>& k) {
  const long r = static_cast<long>(k.size() / 2);
  ImageTensor out(x.height, x.width, x.channels);
  for (std::size_t c = 0; c < x.channels; ++c)
    for (std::size_t y = 0; y < x.height; ++y)
      for (std::size_t xx = 0; xx < x.width; ++xx) {
        double acc = 0.0;
        for (long t = -r; t <= r; ++t)
          acc += k[static_cast<std::size_t>(t + r)] * x.at(c, y, reflect_index(static_cast<long>(xx) + t, x.width));
        out.at(c, y, xx) = acc;
      }
  return out;
}

ImageTensor convolve_cols(const ImageTensor& x, const std::vector<double>& k) {
  const long r = static_cast<long>(k.size() / 2);
  ImageTensor out(x.height, x.width, x.channels);
  for (std::size_t c = 0; c < x.channels; ++c)
    for (std::size_t y = 0; y < x.height; ++y)
      for (std::size_t xx = 0; xx < x.width; ++xx) {
        double acc = 0.0;
        for (long t = -r; t <= r; ++t)
          acc += k[static_cast<std::size_t>(t + r)] * x.at(c, reflect_index(static_cast<long>(y) + t, x.height), xx);
        out.at(c, y, xx) = acc;
      }
  return out;
}

}  // namespace

std::string_view family_name(AugmentationFamily f) { return kNames.at(static_cast<std::size_t>(f)); }

AugmentationFamily family_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i)
    if (kNames[i] == name) return static_cast<AugmentationFamily>(i);
  throw DomainError("unknown augmentation family '" + std::string(name) + "'");
}

AugmentationFamily family_from_id(int id) {
  if (id < 0 || id >= static_cast<int>(kFamilyCount)) throw DomainError("unknown augmentation family id " + std::to_string(id));
  return static_cast<AugmentationFamily>(id);
}

const std::array<AugmentationFamily, kCorruptionCount>& corruption_families() {
  static const std::array<AugmentationFamily, kCorruptionCount> all = {
      AugmentationFamily::kGaussianBlur,       AugmentationFamily::kMotionBlur,
      AugmentationFamily::kHaze,               AugmentationFamily::kOcclusion,
      AugmentationFamily::kColorDistortion,    AugmentationFamily::kBrightnessInversion,
      AugmentationFamily::kContrastReversal,   AugmentationFamily::kChannelDropout,
      AugmentationFamily::kRain};
  return all;
}

std::optional<FamilyGroup> family_group(AugmentationFamily f) {
  switch (f) {
    case AugmentationFamily::kClean: return std::nullopt;
    case AugmentationFamily::kGaussianBlur:
    case AugmentationFamily::kMotionBlur:
    case AugmentationFamily::kHaze:
    case AugmentationFamily::kOcclusion: return FamilyGroup::kErasure;
    case AugmentationFamily::kColorDistortion:
    case AugmentationFamily::kBrightnessInversion:
    case AugmentationFamily::kContrastReversal:
    case AugmentationFamily::kChannelDropout: return FamilyGroup::kContradiction;
    case AugmentationFamily::kRain: return FamilyGroup::kWeather;
  }
  return std::nullopt;
}

std::vector<AugmentationFamily> families_in(FamilyGroup group) {
  std::vector<AugmentationFamily> out;
  for (auto f : corruption_families())
    if (family_group(f) == group) out.push_back(f);
  return out;
}

std::optional<std::size_t> anchor_slot(AugmentationFamily f) {
  switch (f) {
    case AugmentationFamily::kClean: return std::nullopt;
    case AugmentationFamily::kGaussianBlur:
    case AugmentationFamily::kMotionBlur: return 0;
    case AugmentationFamily::kColorDistortion:
    case AugmentationFamily::kChannelDropout: return 1;
    case AugmentationFamily::kHaze:
    case AugmentationFamily::kBrightnessInversion: return 3;
    case AugmentationFamily::kOcclusion:
    case AugmentationFamily::kRain: return 4;
    case AugmentationFamily::kContrastReversal: return 5;
  }
  return std::nullopt;
}

CorruptionSpec::CorruptionSpec(AugmentationFamily family, int severity) : family_(family), severity_(severity) {
  if (family == AugmentationFamily::kClean) throw DomainError("corruption spec: clean is not a corruption");
  if (static_cast<int>(family) < 0 || static_cast<std::size_t>(family) >= kFamilyCount) {
    throw DomainError("corruption spec: unknown family id " + std::to_string(static_cast<int>(family)));
  }
  if (severity < 1 || severity > kMaxSeverity) {
    throw DomainError("corruption spec: severity " + std::to_string(severity) + " outside 1..5");
  }
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw DomainError("gaussian_kernel: sigma must be positive");
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double t = static_cast<double>(i) - static_cast<double>(radius);
    k[i] = std::exp(-t * t / (2.0 * sigma * sigma));
  }
  const double total = std::accumulate(k.begin(), k.end(), 0.0);
  for (double& v : k) v /= total;
  return k;
}

std::vector<double> box_kernel(std::size_t length) {
  if (length == 0) throw DomainError("box_kernel: length must be positive");
  return std::vector<double>(length, 1.0 / static_cast<double>(length));
}

std::size_t reflect_index(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * (static_cast<long>(n) - 1);
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<long>(n) ? m : period - m);
}

ImageTensor apply_corruption(const ImageTensor& x, const CorruptionSpec& spec, RngStream rng) {
  const int s = spec.severity();
  const double sd = static_cast<double>(s);
  ImageTensor out = x;
  switch (spec.family()) {
    case AugmentationFamily::kClean:
      throw DomainError("apply_corruption: clean is not a corruption");
    case AugmentationFamily::kGaussianBlur: {
      const auto k = gaussian_kernel(0.5 * sd);
      out = convolve_cols(convolve_rows(x, k), k);
      break;
    }
    case AugmentationFamily::kMotionBlur:
      out = convolve_rows(x, box_kernel(static_cast<std::size_t>(2 * s + 1)));
      break;
    case AugmentationFamily::kHaze: {
      const double t = 1.0 - 0.15 * sd;
      constexpr double kAirlight = 0.8;
      for (double& v : out.values) v = t * v + (1.0 - t) * kAirlight;
      break;
    }
    case AugmentationFamily::kOcclusion: {
      // floor(0.12 * s * min(H, W)) in exact integer arithmetic
      const std::size_t side = (12 * static_cast<std::size_t>(s) * std::min(x.height, x.width)) / 100;
      if (side == 0) break;
      const std::size_t top = rng.uniform_index(x.height - side + 1);
      const std::size_t left = rng.uniform_index(x.width - side + 1);
      for (std::size_t c = 0; c < x.channels; ++c)
        for (std::size_t y = top; y < top + side; ++y)
          for (std::size_t xx = left; xx < left + side; ++xx) out.at(c, y, xx) = 0.0;
      break;
    }
    case AugmentationFamily::kColorDistortion: {
      for (std::size_t c = 0; c < x.channels; ++c) {
        const double gain = rng.uniform(1.0 - 0.15 * sd, 1.0 + 0.15 * sd);
        const double bias = rng.uniform(-0.08 * sd, 0.08 * sd);
        for (std::size_t i = 0; i < x.plane(); ++i) {
          double& v = out.values[c * x.plane() + i];
          v = gain * v + bias;
        }
      }
      break;
    }
    case AugmentationFamily::kBrightnessInversion: {
      const double lambda = 0.2 * sd;
      for (double& v : out.values) v = (1.0 - lambda) * v + lambda * (1.0 - v);
      break;
    }
    case AugmentationFamily::kContrastReversal: {
      // Factor 0.6, 0.2, -0.2, -0.6, -1.0: severity 5 is the full reversal 2*mu - x.
      const double factor = 1.0 - 0.4 * sd;
      for (std::size_t c = 0; c < x.channels; ++c) {
        double mu = 0.0;
        for (std::size_t i = 0; i < x.plane(); ++i) mu += x.values[c * x.plane() + i];
        mu /= static_cast<double>(x.plane());
        for (std::size_t i = 0; i < x.plane(); ++i) {
          double& v = out.values[c * x.plane() + i];
          v = mu + factor * (v - mu);
        }
      }
      break;
    }
    case AugmentationFamily::kChannelDropout: {
      std::size_t drop = s < 3 ? static_cast<std::size_t>(s / 2) : (s < 5 ? 1 : 2);
      drop = std::min(drop, x.channels);
      std::vector<std::size_t> order(x.channels);
      std::iota(order.begin(), order.end(), 0);
      // partial Fisher-Yates
      for (std::size_t i = 0; i < drop; ++i) std::swap(order[i], order[i + rng.uniform_index(order.size() - i)]);
      for (std::size_t i = 0; i < drop; ++i)
        std::fill_n(out.values.begin() + static_cast<long>(order[i] * x.plane()), x.plane(), 0.0);
      break;
    }
    case AugmentationFamily::kRain: {
      const std::size_t streaks = 20 * static_cast<std::size_t>(s);
      const std::size_t length = x.height / 4;
      constexpr double kIntensity = 0.6;
      for (std::size_t k = 0; k < streaks; ++k) {
        const std::size_t y0 = rng.uniform_index(x.height);
        const std::size_t x0 = rng.uniform_index(x.width);
        for (std::size_t i = 0; i < length; ++i) {
          const std::size_t y = y0 + i, xx = x0 + i;
          if (y >= x.height || xx >= x.width) break;
          for (std::size_t c = 0; c < x.channels; ++c) out.at(c, y, xx) += kIntensity;
        }
      }
      break;
    }
  }
  out.clamp();
  return out;
}

}  // namespace tssl
