#include "tssl/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <numbers>
#include <sstream>

#include "tssl/error.hpp"
#include "tssl/rng.hpp"

namespace tssl {
namespace {

using json = nlohmann::json;

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(h, 360.0);
  if (h < 0) h += 360.0;
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  std::array<double, 3> rgb{};
  if (hp < 1) rgb = {c, x, 0};
  else if (hp < 2) rgb = {x, c, 0};
  else if (hp < 3) rgb = {0, c, x};
  else if (hp < 4) rgb = {0, x, c};
  else if (hp < 5) rgb = {x, 0, c};
  else rgb = {c, 0, x};
  const double m = v - c;
  for (double& ch : rgb) ch += m;
  return rgb;
}

// Pattern intensity in [0, 1] for texture family `kind` at pixel (y, x).
class Texture {
 public:
  Texture(std::size_t kind, std::size_t size, RngStream& rng) : kind_(kind), size_(static_cast<double>(size)) {
    const double unit = size_ / 32.0;
    phase_ = rng.uniform(0.0, 2.0 * std::numbers::pi);
    freq_ = rng.uniform(3.0, 5.0) / size_;
    angle_ = rng.uniform(-0.26, 0.26);
    cell_ = rng.uniform(3.0, 6.0) * unit;
    ox_ = rng.uniform(0.0, size_);
    oy_ = rng.uniform(0.0, size_);
    cx_ = rng.uniform(0.3, 0.7) * size_;
    cy_ = rng.uniform(0.3, 0.7) * size_;
    period_ = std::round(rng.uniform(5.0, 8.0) * unit);
    const std::size_t blobs = 3 + rng.uniform_index(3);
    for (std::size_t i = 0; i < blobs; ++i) {
      blobs_.push_back({rng.uniform(0.0, size_), rng.uniform(0.0, size_), rng.uniform(3.0, 6.0) * unit});
    }
    for (double& v : noise_) v = rng.uniform();
    theta_ = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }

  double operator()(double y, double x) const {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    switch (kind_) {
      case 0: {  // striped, near-vertical
        const double u = x * std::cos(angle_) + y * std::sin(angle_);
        return 0.5 + 0.5 * std::sin(two_pi * freq_ * u * 1.5 + phase_);
      }
      case 1: {  // checker
        const auto a = static_cast<long>(std::floor((x + ox_) / cell_));
        const auto b = static_cast<long>(std::floor((y + oy_) / cell_));
        return ((a + b) % 2 == 0) ? 1.0 : 0.0;
      }
      case 2: {  // blobs
        double best = 0.0;
        for (const auto& [by, bx, r] : blobs_) {
          const double d2 = (y - by) * (y - by) + (x - bx) * (x - bx);
          best = std::max(best, std::exp(-d2 / (2.0 * r * r)));
        }
        return best;
      }
      case 3: {  // linear gradient
        const double u = ((x - size_ / 2) * std::cos(theta_) + (y - size_ / 2) * std::sin(theta_)) / (size_ / 2);
        return std::clamp(0.5 + 0.5 * u, 0.0, 1.0);
      }
      case 4: {  // rings
        const double r = std::hypot(y - cy_, x - cx_);
        return 0.5 + 0.5 * std::sin(two_pi * freq_ * r * 1.5 + phase_);
      }
      case 5: {  // smooth value noise on a 5x5 lattice
        const double gy = y / size_ * 4.0, gx = x / size_ * 4.0;
        const auto iy = std::min<std::size_t>(static_cast<std::size_t>(gy), 3);
        const auto ix = std::min<std::size_t>(static_cast<std::size_t>(gx), 3);
        const double fy = gy - static_cast<double>(iy), fx = gx - static_cast<double>(ix);
        auto at = [&](std::size_t a, std::size_t b) { return noise_[a * 5 + b]; };
        const double top = (1 - fx) * at(iy, ix) + fx * at(iy, ix + 1);
        const double bot = (1 - fx) * at(iy + 1, ix) + fx * at(iy + 1, ix + 1);
        return (1 - fy) * top + fy * bot;
      }
      case 6: {  // grid lines
        const double a = std::fmod(x + ox_, period_), b = std::fmod(y + oy_, period_);
        return (a < 1.5 || b < 1.5) ? 1.0 : 0.0;
      }
      default: {  // diagonal stripes
        const double u = (x + y) / std::numbers::sqrt2;
        return 0.5 + 0.5 * std::sin(two_pi * freq_ * u * 1.5 + phase_);
      }
    }
  }

 private:
  std::size_t kind_;
  double size_;
  double phase_, freq_, angle_, cell_, ox_, oy_, cx_, cy_, period_, theta_;
  std::vector<std::array<double, 3>> blobs_;
  std::array<double, 25> noise_{};
};

ImageTensor render_sample(std::size_t label, std::size_t num_classes, std::size_t size, RngStream rng) {
  const double base_hue = 360.0 * static_cast<double>(label) / static_cast<double>(num_classes);
  const double hue = base_hue + rng.uniform(-90.0, 90.0);
  const auto fg = hsv_to_rgb(hue, rng.uniform(0.55, 0.9), rng.uniform(0.7, 0.95));
  const auto bg = hsv_to_rgb(hue + 30.0, rng.uniform(0.2, 0.5), rng.uniform(0.15, 0.35));
  const Texture tex(label % kTextureFamilies, size, rng);
  ImageTensor img(size, size, 3);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double p = tex(static_cast<double>(y), static_cast<double>(x));
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = bg[c] + p * (fg[c] - bg[c]) + 0.02 * rng.normal();
    }
  img.clamp();
  return img;
}

}  // namespace

void validate(const DatasetManifest& m) {
  if (m.source != "synthetic" && m.source != "directory") throw ConfigError("dataset: unknown source '" + m.source + "'");
  if (m.split != "train" && m.split != "test") throw ConfigError("dataset: unknown split '" + m.split + "'");
  if (m.num_classes < 2) throw ConfigError("dataset: num_classes must be >= 2");
  if (m.labels.size() != m.num_samples) throw ConfigError("dataset: label count does not match num_samples");
  for (int l : m.labels)
    if (l < 0 || static_cast<std::size_t>(l) >= m.num_classes) throw ConfigError("dataset: label " + std::to_string(l) + " out of range");
}

Dataset generate_synthetic_dataset(std::size_t num_samples, std::size_t num_classes, std::size_t size,
                                   std::uint64_t seed, const std::string& split) {
  if (num_classes < 2) throw ConfigError("synthetic dataset: num_classes must be >= 2");
  if (size < 16) throw ConfigError("synthetic dataset: size must be >= 16");
  Dataset d;
  d.manifest.source = "synthetic";
  d.manifest.num_samples = num_samples;
  d.manifest.num_classes = num_classes;
  d.manifest.size = size;
  d.manifest.split = split;
  const RngStream root = RngStream(seed).split(split == "test" ? 2 : 1);
  d.images.reserve(num_samples);
  for (std::size_t i = 0; i < num_samples; ++i) {
    const std::size_t label = i % num_classes;
    d.manifest.labels.push_back(static_cast<int>(label));
    d.images.push_back(render_sample(label, num_classes, size, root.split(i)));
  }
  return d;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir, bool as_ppm) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  DatasetManifest m = data.manifest;
  if (as_ppm) {
    m.images = "ppm";
    for (std::size_t i = 0; i < data.images.size(); ++i) {
      std::ostringstream name;
      name << std::setw(6) << std::setfill('0') << i << ".ppm";
      write_ppm(data.images[i], dir / name.str());
    }
  } else {
    m.images = "images.tssl";
    write_packed(pack_images(data.images), dir / m.images);
  }
  json j = {{"source", m.source}, {"num_samples", m.num_samples}, {"num_classes", m.num_classes},
            {"size", m.size},     {"split", m.split},             {"labels", m.labels},
            {"images", m.images}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << j.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  const auto manifest_path = dir / "manifest.json";
  std::vector<std::filesystem::path> ppms;
  auto collect_ppms = [&] {
    for (const auto& e : std::filesystem::directory_iterator(dir))
      if (e.path().extension() == ".ppm") ppms.push_back(e.path());
    std::sort(ppms.begin(), ppms.end());
  };
  if (std::filesystem::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    json j;
    try {
      j = json::parse(in);
      d.manifest.source = j.at("source").get<std::string>();
      d.manifest.num_samples = j.at("num_samples").get<std::size_t>();
      d.manifest.num_classes = j.at("num_classes").get<std::size_t>();
      d.manifest.size = j.at("size").get<std::size_t>();
      d.manifest.split = j.at("split").get<std::string>();
      d.manifest.labels = j.at("labels").get<std::vector<int>>();
      d.manifest.images = j.value("images", std::string("images.tssl"));
    } catch (const json::exception& e) {
      throw FormatError("dataset manifest " + manifest_path.string() + ": " + e.what());
    }
    if (d.manifest.images == "ppm") {
      collect_ppms();
      for (const auto& p : ppms) d.images.push_back(load_ppm(p));
    } else {
      d.images = unpack_images(read_packed(dir / d.manifest.images));
    }
  } else {
    // bare directory of PPM files plus labels.txt
    const auto labels_path = dir / "labels.txt";
    std::ifstream in(labels_path);
    if (!in) throw IoError("no manifest.json or labels.txt in " + dir.string());
    for (int l; in >> l;) d.manifest.labels.push_back(l);
    collect_ppms();
    for (const auto& p : ppms) d.images.push_back(load_ppm(p));
    d.manifest.source = "directory";
    d.manifest.num_samples = d.images.size();
    d.manifest.num_classes =
        d.manifest.labels.empty() ? 0 : static_cast<std::size_t>(*std::max_element(d.manifest.labels.begin(), d.manifest.labels.end()) + 1);
    d.manifest.size = d.images.empty() ? 0 : d.images.front().height;
  }
  if (d.images.size() != d.manifest.num_samples) {
    throw FormatError("dataset " + dir.string() + ": manifest lists " + std::to_string(d.manifest.num_samples) +
                      " samples, found " + std::to_string(d.images.size()));
  }
  validate(d.manifest);
  return d;
}

}  // namespace tssl
