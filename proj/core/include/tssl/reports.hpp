#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "tssl/evaluation.hpp"
#include "tssl/ood.hpp"

namespace tssl {

std::string_view artifact_version();

/// Rows follow corruption_families(); columns: family,clean,s1..s5.
std::string grid_csv(const RobustnessGrid& grid);
RobustnessGrid parse_grid_csv(std::string_view text);
/// Signed per-cell differences `candidate - reference`, same layout as grid_csv.
std::string grid_diff_csv(const RobustnessGrid& reference, const RobustnessGrid& candidate);

std::string probe_json(const ProbeResult& result);
std::string ki_trace_json(const KITrace& trace);
/// family,severity,mean_conflict,mean_ignorance; baseline first.
std::string ki_trace_csv(const KITrace& trace);
std::string ood_json(const std::vector<OodScoreSet>& results);

struct RunManifest {
  std::string command;
  std::string config_hash;
  std::string version = std::string(artifact_version());
  std::string started_at;
  std::string finished_at;
  std::vector<std::string> files;  // relative to the run directory
};

std::string utc_timestamp();
std::string manifest_json(const RunManifest& manifest);
/// Every regular file under dir, relative and sorted, excluding manifest files.
std::vector<std::string> inventory(const std::filesystem::path& dir);

void write_text(const std::filesystem::path& path, std::string_view content);
std::string read_text(const std::filesystem::path& path);

}  // namespace tssl
