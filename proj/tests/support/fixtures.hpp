#pragma once

#include <filesystem>
#include <string>

#include "tssl/config.hpp"

namespace tssl::testing {

/// Fresh, empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
};

/// A configuration small enough to train in seconds.
ExperimentConfig tiny_config(Variant variant, const std::filesystem::path& out);

}  // namespace tssl::testing
