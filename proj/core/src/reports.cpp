#include "tssl/reports.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "tssl/error.hpp"

#ifndef TSSL_VERSION
#define TSSL_VERSION "0.0.0"
#endif

namespace tssl {
namespace {

using json = nlohmann::json;

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string grid_header() { return "family,clean,s1,s2,s3,s4,s5\n"; }

}  // namespace

std::string_view artifact_version() { return TSSL_VERSION; }

std::string grid_csv(const RobustnessGrid& grid) {
  std::string out = grid_header();
  const auto& fams = corruption_families();
  for (std::size_t f = 0; f < fams.size(); ++f) {
    out += std::string(family_name(fams[f])) + "," + fixed(grid.clean);
    for (double v : grid.accuracy[f]) out += "," + fixed(v);
    out += "\n";
  }
  return out;
}

RobustnessGrid parse_grid_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || split(line, ',').size() != 7 || !line.starts_with("family,")) {
    throw FormatError("grid CSV: missing or malformed header");
  }
  RobustnessGrid grid;
  const auto& fams = corruption_families();
  std::vector<bool> seen(fams.size(), false);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != 7) throw FormatError("grid CSV: expected 7 columns in '" + line + "'");
    const AugmentationFamily f = family_from_name(cells[0]);
    const auto idx = static_cast<std::size_t>(std::find(fams.begin(), fams.end(), f) - fams.begin());
    if (idx >= fams.size()) throw FormatError("grid CSV: '" + cells[0] + "' is not a corruption family");
    try {
      grid.clean = std::stod(cells[1]);
      for (std::size_t s = 0; s < kMaxSeverity; ++s) grid.accuracy[idx][s] = std::stod(cells[2 + s]);
    } catch (const std::exception&) {
      throw FormatError("grid CSV: non-numeric cell in '" + line + "'");
    }
    seen[idx] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) throw FormatError("grid CSV: missing family rows");
  return grid;
}

std::string grid_diff_csv(const RobustnessGrid& a, const RobustnessGrid& b) {
  RobustnessGrid d;
  d.clean = b.clean - a.clean;
  for (std::size_t f = 0; f < kCorruptionCount; ++f)
    for (std::size_t s = 0; s < kMaxSeverity; ++s) d.accuracy[f][s] = b.accuracy[f][s] - a.accuracy[f][s];
  return grid_csv(d);
}

std::string probe_json(const ProbeResult& r) {
  json j{{"dataset", r.dataset},
         {"accuracy", r.accuracy},
         {"val_accuracy", r.val_accuracy},
         {"best_epoch", r.best_epoch},
         {"per_class_accuracy", r.per_class_accuracy},
         {"num_classes", r.head.classes()},
         {"feature_dim", r.head.mean.size()}};
  return j.dump(2) + "\n";
}

std::string ki_trace_json(const KITrace& t) {
  auto row = [](const KIRow& r) {
    return json{{"family", r.family},
                {"severity", r.severity},
                {"mean_conflict", r.mean_conflict},
                {"mean_ignorance", r.mean_ignorance}};
  };
  json rows = json::array();
  for (const auto& r : t.rows) rows.push_back(row(r));
  return json{{"baseline", row(t.baseline)}, {"rows", rows}}.dump(2) + "\n";
}

std::string ki_trace_csv(const KITrace& t) {
  std::string out = "family,severity,mean_conflict,mean_ignorance\n";
  auto emit = [&](const KIRow& r) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%s,%d,%.9f,%.9f\n", r.family.c_str(), r.severity, r.mean_conflict,
                  r.mean_ignorance);
    out += buf;
  };
  emit(t.baseline);
  for (const auto& r : t.rows) emit(r);
  return out;
}

std::string ood_json(const std::vector<OodScoreSet>& results) {
  json arr = json::array();
  for (const auto& r : results) {
    arr.push_back(json{{"detector", r.detector},
                       {"shift", r.shift},
                       {"auroc", r.auroc},
                       {"id_scores", r.id_scores},
                       {"ood_scores", r.ood_scores}});
  }
  return json{{"results", arr}}.dump(2) + "\n";
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string manifest_json(const RunManifest& m) {
  return json{{"command", m.command},         {"config_hash", m.config_hash}, {"version", m.version},
              {"started_at", m.started_at},   {"finished_at", m.finished_at}, {"files", m.files}}
             .dump(2) +
         "\n";
}

std::vector<std::string> inventory(const std::filesystem::path& dir) {
  std::vector<std::string> files;
  if (!std::filesystem::exists(dir)) return files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = std::filesystem::relative(e.path(), dir).generic_string();
    if (!rel.starts_with("manifest")) files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  return files;
}

void write_text(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace tssl
