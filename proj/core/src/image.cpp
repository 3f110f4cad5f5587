#include "tssl/image.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "tssl/error.hpp"

namespace tssl {
namespace {

static_assert(std::endian::native == std::endian::little, "packed formats assume a little-endian host");

constexpr std::array<char, 4> kPackedMagic = {'T', 'S', 'S', 'L'};

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class HeaderReader {
 public:
  HeaderReader(const std::vector<unsigned char>& bytes, const std::filesystem::path& path)
      : bytes_(bytes), path_(path) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  unsigned long number(const char* field) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    unsigned long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 1'000'000'000UL) fail(std::string("value of ") + field + " too large");
      ++pos_;
    }
    if (pos_ == start) fail(std::string("missing ") + field);
    return v;
  }

  [[noreturn]] void fail(const std::string& why) const {
    throw FormatError("ppm: malformed header in " + path_.string() + ": " + why);
  }

  std::size_t pos_ = 0;

 private:
  const std::vector<unsigned char>& bytes_;
  const std::filesystem::path& path_;
};

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

}  // namespace

void ImageTensor::clamp() {
  for (double& v : values) v = std::clamp(v, 0.0, 1.0);
}

ImageTensor load_ppm(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  if (bytes.size() < 2) throw FormatError("ppm: malformed header in " + path.string() + ": file too short");
  if (bytes[0] != 'P' || bytes[1] != '6') {
    throw FormatError("ppm: unsupported magic '" + std::string(bytes.begin(), bytes.begin() + 2) + "' in " +
                      path.string() + " (only binary P6 is supported)");
  }
  HeaderReader rd(bytes, path);
  rd.pos_ = 2;
  const unsigned long width = rd.number("width");
  const unsigned long height = rd.number("height");
  const unsigned long maxval = rd.number("maxval");
  if (width == 0 || height == 0) rd.fail("zero image dimension");
  if (maxval != 255) {
    throw FormatError("ppm: unsupported maxval " + std::to_string(maxval) + " in " + path.string() +
                      " (only 255 is supported)");
  }
  if (rd.pos_ >= bytes.size() || !std::isspace(bytes[rd.pos_])) rd.fail("missing separator before pixel data");
  ++rd.pos_;
  const std::size_t need = static_cast<std::size_t>(width) * height * 3;
  if (bytes.size() - rd.pos_ < need) {
    throw FormatError("ppm: truncated payload in " + path.string() + ": expected " + std::to_string(need) +
                      " bytes, found " + std::to_string(bytes.size() - rd.pos_));
  }
  ImageTensor img(height, width, 3);
  const unsigned char* px = bytes.data() + rd.pos_;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<double>(px[(y * width + x) * 3 + c]) / 255.0;
  return img;
}

void write_ppm(const ImageTensor& image, const std::filesystem::path& path) {
  if (image.channels != 3) throw FormatError("ppm: writer needs 3 channels, got " + std::to_string(image.channels));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> px(image.plane() * 3);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
        px[(y * image.width + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Tensor stack_images(const std::vector<ImageTensor>& images) {
  if (images.empty()) throw ShapeError("stack_images: empty batch");
  const auto& f = images.front();
  Tensor out(Shape{images.size(), f.channels, f.height, f.width});
  const std::size_t per = f.values.size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = images[i];
    if (im.height != f.height || im.width != f.width || im.channels != f.channels) {
      throw ShapeError("stack_images: image " + std::to_string(i) + " has a different geometry");
    }
    std::copy(im.values.begin(), im.values.end(), out.data() + i * per);
  }
  return out;
}

void write_packed(const PackedArray& a, const std::filesystem::path& path) {
  const std::size_t expect = static_cast<std::size_t>(a.count) * a.height * a.width * a.channels;
  if (a.values.size() != expect) throw FormatError("packed: value count does not match header");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kPackedMagic.data(), kPackedMagic.size());
  put(out, a.count);
  put(out, a.height);
  put(out, a.width);
  put(out, a.channels);
  out.write(reinterpret_cast<const char*>(a.values.data()), static_cast<std::streamsize>(a.values.size() * sizeof(double)));
  if (!out) throw IoError("write failed for " + path.string());
}

PackedArray read_packed(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  constexpr std::size_t kHeader = 4 + 4 * sizeof(std::uint32_t);
  if (bytes.size() < kHeader) throw FormatError("packed: header truncated in " + path.string());
  if (!std::equal(kPackedMagic.begin(), kPackedMagic.end(), bytes.begin())) {
    throw FormatError("packed: bad magic in " + path.string());
  }
  PackedArray a;
  std::memcpy(&a.count, bytes.data() + 4, 4);
  std::memcpy(&a.height, bytes.data() + 8, 4);
  std::memcpy(&a.width, bytes.data() + 12, 4);
  std::memcpy(&a.channels, bytes.data() + 16, 4);
  const std::size_t n = static_cast<std::size_t>(a.count) * a.height * a.width * a.channels;
  if (bytes.size() - kHeader != n * sizeof(double)) {
    throw FormatError("packed: payload size mismatch in " + path.string() + ": expected " +
                      std::to_string(n * sizeof(double)) + " bytes, found " + std::to_string(bytes.size() - kHeader));
  }
  a.values.resize(n);
  std::memcpy(a.values.data(), bytes.data() + kHeader, n * sizeof(double));
  return a;
}

PackedArray pack_images(const std::vector<ImageTensor>& images) {
  PackedArray a;
  a.count = static_cast<std::uint32_t>(images.size());
  if (images.empty()) return a;
  const auto& f = images.front();
  a.height = static_cast<std::uint32_t>(f.height);
  a.width = static_cast<std::uint32_t>(f.width);
  a.channels = static_cast<std::uint32_t>(f.channels);
  a.values.reserve(images.size() * f.values.size());
  for (const auto& im : images) {
    if (im.height != f.height || im.width != f.width || im.channels != f.channels) {
      throw ShapeError("pack_images: images differ in geometry");
    }
    // on disk: [count][H][W][C]
    for (std::size_t y = 0; y < im.height; ++y)
      for (std::size_t x = 0; x < im.width; ++x)
        for (std::size_t c = 0; c < im.channels; ++c) a.values.push_back(im.at(c, y, x));
  }
  return a;
}

std::vector<ImageTensor> unpack_images(const PackedArray& a) {
  std::vector<ImageTensor> out;
  out.reserve(a.count);
  std::size_t k = 0;
  for (std::uint32_t i = 0; i < a.count; ++i) {
    ImageTensor im(a.height, a.width, a.channels);
    for (std::size_t y = 0; y < im.height; ++y)
      for (std::size_t x = 0; x < im.width; ++x)
        for (std::size_t c = 0; c < im.channels; ++c) im.at(c, y, x) = a.values[k++];
    out.push_back(std::move(im));
  }
  return out;
}

PackedArray pack_matrix(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("pack_matrix: rank 2 required, got " + to_string(m.shape()));
  PackedArray a;
  a.count = static_cast<std::uint32_t>(m.dim(0));
  a.height = 1;
  a.width = static_cast<std::uint32_t>(m.dim(1));
  a.channels = 1;
  a.values.assign(m.values().begin(), m.values().end());
  return a;
}

Tensor unpack_matrix(const PackedArray& a) {
  if (a.height != 1 || a.channels != 1) throw FormatError("packed: not a feature matrix (H and C must be 1)");
  return Tensor(Shape{a.count, a.width}, a.values);
}

}  // namespace tssl
