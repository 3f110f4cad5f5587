#include "tssl/augment.hpp"

#include <algorithm>
#include <cmath>

#include "tssl/error.hpp"

namespace tssl {

ImageTensor resized_crop(const ImageTensor& x, std::size_t top, std::size_t left, std::size_t side,
                         std::size_t out) {
  if (side == 0 || top + side > x.height || left + side > x.width || out == 0) {
    throw DomainError("resized_crop: window outside the image");
  }
  ImageTensor r(out, out, x.channels);
  const double step = static_cast<double>(side) / static_cast<double>(out);
  const double hi = static_cast<double>(side - 1);
  for (std::size_t oy = 0; oy < out; ++oy) {
    const double sy = std::clamp((static_cast<double>(oy) + 0.5) * step - 0.5, 0.0, hi);
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, side - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < out; ++ox) {
      const double sx = std::clamp((static_cast<double>(ox) + 0.5) * step - 0.5, 0.0, hi);
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, side - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < x.channels; ++c) {
        const double a = x.at(c, top + y0, left + x0), b = x.at(c, top + y0, left + x1);
        const double d = x.at(c, top + y1, left + x0), e = x.at(c, top + y1, left + x1);
        r.at(c, oy, ox) = (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * d + fx * e);
      }
    }
  }
  return r;
}

ImageTensor horizontal_flip(const ImageTensor& x) {
  ImageTensor r(x.height, x.width, x.channels);
  for (std::size_t c = 0; c < x.channels; ++c)
    for (std::size_t y = 0; y < x.height; ++y)
      for (std::size_t xx = 0; xx < x.width; ++xx) r.at(c, y, xx) = x.at(c, y, x.width - 1 - xx);
  return r;
}

ImageTensor standard_view(const ImageTensor& x, RngStream& rng, const AugmentConfig& config) {
  const double area = rng.uniform(config.min_crop_scale, config.max_crop_scale);
  const double base = static_cast<double>(std::min(x.height, x.width));
  const auto side = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(std::sqrt(area) * base)), 1,
                                            std::min(x.height, x.width));
  const std::size_t top = rng.uniform_index(x.height - side + 1);
  const std::size_t left = rng.uniform_index(x.width - side + 1);
  ImageTensor v = resized_crop(x, top, left, side, config.output_size);
  if (rng.bernoulli(config.flip_probability)) v = horizontal_flip(v);
  return v;
}

AugmentedView augment_view(const ImageTensor& x, RngStream rng, const AugmentConfig& config) {
  AugmentedView view;
  view.image = standard_view(x, rng, config);
  if (config.eligible.empty() || !rng.bernoulli(config.corruption_probability)) return view;
  view.family = config.eligible[rng.uniform_index(config.eligible.size())];
  view.severity = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(config.max_severity)));
  view.image = apply_corruption(view.image, CorruptionSpec(view.family, view.severity), rng.split(0xC0));
  return view;
}

}  // namespace tssl
