#pragma once

#include <cstddef>
#include <vector>

#include "tssl/corruption.hpp"
#include "tssl/image.hpp"
#include "tssl/rng.hpp"

namespace tssl {

struct AugmentConfig {
  std::size_t output_size = 32;
  double min_crop_scale = 0.6;  // fraction of the source area
  double max_crop_scale = 1.0;
  double flip_probability = 0.5;
  double corruption_probability = 0.5;
  int max_severity = 3;
  std::vector<AugmentationFamily> eligible{corruption_families().begin(), corruption_families().end()};
};

struct AugmentedView {
  ImageTensor image;
  AugmentationFamily family = AugmentationFamily::kClean;
  int severity = 0;  // 0 when clean
};

/// Bilinear resample of the square window (top, left, side) to out x out.
ImageTensor resized_crop(const ImageTensor& x, std::size_t top, std::size_t left, std::size_t side,
                         std::size_t out);

ImageTensor horizontal_flip(const ImageTensor& x);

/// Random resized crop and horizontal flip only.
ImageTensor standard_view(const ImageTensor& x, RngStream& rng, const AugmentConfig& config);

/// Crop, flip, then with probability p one corruption family drawn uniformly
/// from the eligible set at a severity drawn uniformly from 1..max_severity.
AugmentedView augment_view(const ImageTensor& x, RngStream rng, const AugmentConfig& config);

}  // namespace tssl
