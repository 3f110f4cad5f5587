#include "fixtures.hpp"

#include <atomic>
#include <chrono>
#include <unistd.h>

namespace tssl::testing {

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  path_ = std::filesystem::temp_directory_path() /
          ("tssl_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(stamp) + "_" +
           std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

ExperimentConfig tiny_config(Variant variant, const std::filesystem::path& out) {
  ExperimentConfig c;
  c.variant = variant;
  c.seed = 7;
  c.output_dir = out.string();
  c.data.train_samples = 48;
  c.data.test_samples = 24;
  c.data.num_classes = 4;
  c.model.image_size = 16;
  c.model.conv_widths = {4, 6, 8};
  c.model.backbone_dim = 12;
  c.model.projector_dim = 8;
  c.model.factors = variant == Variant::kScalarUncertainty ? 1 : 3;
  c.model.factor_dim = 4;
  c.model.prototypes = 5;
  c.train.epochs = 4;
  c.train.batch_size = 16;
  c.train.checkpoint_every = 2;
  c.eval.probe_epochs = 10;
  c.eval.robust_probe_epochs = 10;
  c.eval.ki_pairs = 8;
  c.eval.native_ki_draws = 2;
  return c;
}

}  // namespace tssl::testing
