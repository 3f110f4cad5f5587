#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tssl/image.hpp"

namespace tssl {

struct DatasetManifest {
  std::string source = "synthetic";  // "synthetic" | "directory"
  std::size_t num_samples = 0;
  std::size_t num_classes = 0;
  std::size_t size = 0;
  std::string split = "train";  // "train" | "test"
  std::vector<int> labels;
  std::string images = "images.tssl";  // packed container, or a directory of PPM files
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<ImageTensor> images;
};

inline constexpr std::size_t kTextureFamilies = 8;

/// Class c draws texture family c mod 8 (striped, checker, blob, gradient,
/// ring, noise field, grid, diagonal) in a class-specific hue, with
/// per-sample phase, scale and hue jitter. Labels are assigned round-robin.
Dataset generate_synthetic_dataset(std::size_t num_samples, std::size_t num_classes, std::size_t size,
                                   std::uint64_t seed, const std::string& split = "train");

/// Writes manifest.json plus either images.tssl (packed) or one PPM per sample.
void save_dataset(const Dataset& data, const std::filesystem::path& dir, bool as_ppm = false);
/// Reads a directory written by save_dataset. A directory that holds only
/// PPM files and a labels.txt (one integer per line) is accepted as a
/// "directory" source.
Dataset load_dataset(const std::filesystem::path& dir);

void validate(const DatasetManifest& manifest);

}  // namespace tssl
