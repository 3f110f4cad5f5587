#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "tssl/tensor.hpp"

namespace tssl {

/// Channel-major RGB image with values in [0, 1].
struct ImageTensor {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<double> values;

  ImageTensor() = default;
  ImageTensor(std::size_t h, std::size_t w, std::size_t c = 3, double fill = 0.0)
      : height(h), width(w), channels(c), values(h * w * c, fill) {}

  std::size_t plane() const noexcept { return height * width; }
  double& at(std::size_t c, std::size_t y, std::size_t x) { return values[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return values[(c * height + y) * width + x]; }

  void clamp();
  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;
};

/// Binary P6, maxval 255.
ImageTensor load_ppm(const std::filesystem::path& path);
/// Quantizes to 8 bits with round-to-nearest.
void write_ppm(const ImageTensor& image, const std::filesystem::path& path);

/// Stack images of identical geometry into an [N, C, H, W] tensor.
Tensor stack_images(const std::vector<ImageTensor>& images);

/// Packed raw container: magic "TSSL", u32 count, u32 H, u32 W, u32 C, then
/// count*H*W*C little-endian doubles. Feature matrices use H = 1, C = 1.
struct PackedArray {
  std::uint32_t count = 0, height = 0, width = 0, channels = 0;
  std::vector<double> values;
};

void write_packed(const PackedArray& array, const std::filesystem::path& path);
PackedArray read_packed(const std::filesystem::path& path);

PackedArray pack_images(const std::vector<ImageTensor>& images);
std::vector<ImageTensor> unpack_images(const PackedArray& array);
/// Feature matrix [rows, cols] <-> packed container.
PackedArray pack_matrix(const Tensor& matrix);
Tensor unpack_matrix(const PackedArray& array);

}  // namespace tssl
