#include "tssl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "tssl/error.hpp"

namespace tssl {
namespace {

using json = nlohmann::json;

constexpr char kMagic[8] = {'T', 'S', 'S', 'L', 'C', 'K', 'P', 'T'};
constexpr std::string_view kMomentumPrefix = "optim.momentum.";

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::string_view s) { out_.append(s); }
  const std::string& str() const { return out_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& data, const std::filesystem::path& path) : data_(data), path_(path) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) {
    if (data_.size() - pos_ < n) throw FormatError("checkpoint " + path_.string() + ": truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::string& data_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

void write_record(Writer& w, const std::string& name, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.bytes(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u64(d);
  for (double v : t.values()) w.f64(v);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const json blob{{"config", json::parse(to_json(ckpt.config))},
                  {"epochs_completed", ckpt.epochs_completed},
                  {"has_optimizer", ckpt.optimizer.has_value()},
                  {"learning_rate", ckpt.optimizer ? ckpt.optimizer->learning_rate : 0.0}};
  const std::string text = blob.dump();
  Writer w;
  w.bytes(std::string_view(kMagic, sizeof(kMagic)));
  w.u32(kCheckpointVersion);
  w.u64(text.size());
  w.bytes(text);
  const auto& entries = ckpt.params.entries();
  std::size_t records = entries.size();
  if (ckpt.optimizer) {
    if (ckpt.optimizer->momentum.size() != entries.size()) throw ShapeError("checkpoint: momentum count mismatch");
    records += entries.size();
  }
  w.u32(static_cast<std::uint32_t>(records));
  for (const auto& e : entries) write_record(w, e.name, e.value);
  if (ckpt.optimizer) {
    for (std::size_t k = 0; k < entries.size(); ++k)
      write_record(w, std::string(kMomentumPrefix) + entries[k].name, ckpt.optimizer->momentum[k]);
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(data, path);
  if (r.bytes(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
    throw FormatError(path.string() + " is not a TSSLCKPT checkpoint");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
  }
  const std::uint64_t blob_len = r.u64();
  json blob;
  try {
    blob = json::parse(r.bytes(blob_len));
  } catch (const json::exception& e) {
    throw FormatError("checkpoint " + path.string() + ": bad metadata: " + e.what());
  }
  Checkpoint ckpt;
  ckpt.config = parse_config(blob.at("config").dump());
  ckpt.epochs_completed = blob.at("epochs_completed").get<std::size_t>();
  const bool has_optimizer = blob.value("has_optimizer", false);

  const std::uint32_t records = r.u32();
  std::vector<NamedTensor> momentum;
  for (std::uint32_t k = 0; k < records; ++k) {
    std::string name = r.bytes(r.u32());
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    std::vector<double> values(shape_size(shape));
    for (auto& v : values) v = r.f64();
    Tensor t(shape, std::move(values));
    if (name.starts_with(kMomentumPrefix)) {
      momentum.push_back({name.substr(kMomentumPrefix.size()), std::move(t)});
    } else {
      ckpt.params.add(std::move(name), std::move(t));
    }
  }
  if (!r.done()) throw FormatError("checkpoint " + path.string() + ": trailing bytes");
  if (has_optimizer) {
    OptimizerState opt = OptimizerState::zeros_like(ckpt.params);
    if (momentum.size() != ckpt.params.size()) throw FormatError("checkpoint: incomplete optimizer state");
    for (auto& m : momentum) {
      const std::size_t idx = ckpt.params.index_of(m.name);
      if (m.value.shape() != opt.momentum[idx].shape()) throw FormatError("checkpoint: momentum shape for " + m.name);
      opt.momentum[idx] = std::move(m.value);
    }
    opt.learning_rate = blob.value("learning_rate", 0.0);
    ckpt.optimizer = std::move(opt);
  }
  return ckpt;
}

}  // namespace tssl
