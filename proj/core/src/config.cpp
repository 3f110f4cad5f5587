#include "tssl/config.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "tssl/error.hpp"

namespace tssl {
namespace {

using json = nlohmann::json;

constexpr std::array<std::string_view, 5> kVariantNames = {
    "trust_ssl_additive", "trust_ssl_multiplicative", "scalar_uncertainty", "cosine_gate", "simclr_only"};

json to_object(const ExperimentConfig& c) {
  const auto& m = c.model;
  const auto& g = c.gate;
  const auto& o = c.objective;
  const auto& a = c.augment;
  const auto& d = c.data;
  const auto& t = c.train;
  const auto& e = c.eval;
  return json{
      {"variant", variant_name(c.variant)},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"threads", c.threads},
      {"data",
       {{"source", d.source},
        {"path", d.path},
        {"train_samples", d.train_samples},
        {"test_samples", d.test_samples},
        {"num_classes", d.num_classes}}},
      {"model",
       {{"image_size", m.image_size},
        {"conv_widths", m.conv_widths},
        {"backbone_dim", m.backbone_dim},
        {"projector_dim", m.projector_dim},
        {"factors", m.factors},
        {"factor_dim", m.factor_dim},
        {"prototypes", m.prototypes},
        {"prior_strength", m.prior_strength},
        {"aux_classes", m.aux_classes}}},
      {"gate",
       {{"alpha", g.alpha},
        {"gamma", g.gamma},
        {"epsilon", g.epsilon},
        {"lambda_min_start", g.lambda_min_start},
        {"lambda_min_end", g.lambda_min_end},
        {"lambda_min_phase_restricted", g.lambda_min_phase_restricted}}},
      {"objective",
       {{"temperature", o.temperature},
        {"anchor_temperature", o.anchor_temperature},
        {"lambda_sel_max", o.lambda_sel_max},
        {"ramp_start", o.ramp_start},
        {"ramp_end", o.ramp_end},
        {"lambda_anchor", o.lambda_anchor},
        {"lambda_div", o.lambda_div},
        {"lambda_aux", o.lambda_aux},
        {"lambda_kl", o.lambda_kl},
        {"kl_prior", o.kl_prior == KlPrior::kOnes ? "ones" : "beta"},
        {"multiplicative_weight", o.multiplicative_weight}}},
      {"augment",
       {{"corruption_probability", a.corruption_probability},
        {"max_severity", a.max_severity},
        {"min_crop_scale", a.min_crop_scale},
        {"flip_probability", a.flip_probability}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"momentum", t.momentum},
        {"weight_decay", t.weight_decay},
        {"checkpoint_every", t.checkpoint_every}}},
      {"eval",
       {{"probe_epochs", e.probe_epochs},
        {"probe_learning_rate", e.probe_learning_rate},
        {"probe_batch_size", e.probe_batch_size},
        {"probe_val_fraction", e.probe_val_fraction},
        {"robust_probe_epochs", e.robust_probe_epochs},
        {"ki_pairs", e.ki_pairs},
        {"native_ki_draws", e.native_ki_draws},
        {"energy_temperature", e.energy_temperature},
        {"ood_severity", e.ood_severity}}},
  };
}

bool type_compatible(const json& expected, const json& given) {
  if (expected.is_boolean()) return given.is_boolean();
  if (expected.is_number_unsigned()) return given.is_number_unsigned() || (given.is_number_integer() && given.get<long long>() >= 0);
  if (expected.is_number_integer()) return given.is_number_integer();
  if (expected.is_number_float()) return given.is_number();
  if (expected.is_string()) return given.is_string();
  if (expected.is_array()) return given.is_array() && given.size() == expected.size();
  if (expected.is_object()) return given.is_object();
  return false;
}

// Overlay `given` onto the defaults, rejecting keys the defaults lack.
void overlay(json& base, const json& given, const std::string& path) {
  if (!given.is_object()) throw ConfigError("config: " + (path.empty() ? std::string("document") : path) + " must be an object");
  for (const auto& [key, value] : given.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("config: unknown key '" + where + "'");
    json& slot = base[key];
    if (!type_compatible(slot, value)) {
      throw ConfigError("config: key '" + where + "' has type " + value.type_name() + ", expected " + slot.type_name());
    }
    if (slot.is_object()) {
      overlay(slot, value, where);
    } else if (slot.is_array()) {
      for (std::size_t i = 0; i < value.size(); ++i)
        if (!type_compatible(slot[i], value[i])) throw ConfigError("config: key '" + where + "' has an element of the wrong type");
      slot = value;
    } else if (slot.is_number_float()) {
      slot = value.get<double>();
    } else {
      slot = value;
    }
  }
}

ExperimentConfig from_object(const json& j) {
  ExperimentConfig c;
  c.variant = variant_from_name(j.at("variant").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.output_dir = j.at("output_dir").get<std::string>();
  c.threads = j.at("threads").get<std::size_t>();

  const json& d = j.at("data");
  c.data.source = d.at("source").get<std::string>();
  c.data.path = d.at("path").get<std::string>();
  c.data.train_samples = d.at("train_samples").get<std::size_t>();
  c.data.test_samples = d.at("test_samples").get<std::size_t>();
  c.data.num_classes = d.at("num_classes").get<std::size_t>();

  const json& m = j.at("model");
  c.model.image_size = m.at("image_size").get<std::size_t>();
  c.model.conv_widths = m.at("conv_widths").get<std::array<std::size_t, 3>>();
  c.model.backbone_dim = m.at("backbone_dim").get<std::size_t>();
  c.model.projector_dim = m.at("projector_dim").get<std::size_t>();
  c.model.factors = m.at("factors").get<std::size_t>();
  c.model.factor_dim = m.at("factor_dim").get<std::size_t>();
  c.model.prototypes = m.at("prototypes").get<std::size_t>();
  c.model.prior_strength = m.at("prior_strength").get<double>();
  c.model.aux_classes = m.at("aux_classes").get<std::size_t>();

  const json& g = j.at("gate");
  c.gate.alpha = g.at("alpha").get<double>();
  c.gate.gamma = g.at("gamma").get<double>();
  c.gate.epsilon = g.at("epsilon").get<double>();
  c.gate.lambda_min_start = g.at("lambda_min_start").get<double>();
  c.gate.lambda_min_end = g.at("lambda_min_end").get<double>();
  c.gate.lambda_min_phase_restricted = g.at("lambda_min_phase_restricted").get<bool>();

  const json& o = j.at("objective");
  c.objective.temperature = o.at("temperature").get<double>();
  c.objective.anchor_temperature = o.at("anchor_temperature").get<double>();
  c.objective.lambda_sel_max = o.at("lambda_sel_max").get<double>();
  c.objective.ramp_start = o.at("ramp_start").get<double>();
  c.objective.ramp_end = o.at("ramp_end").get<double>();
  c.objective.lambda_anchor = o.at("lambda_anchor").get<double>();
  c.objective.lambda_div = o.at("lambda_div").get<double>();
  c.objective.lambda_aux = o.at("lambda_aux").get<double>();
  c.objective.lambda_kl = o.at("lambda_kl").get<double>();
  const auto prior = o.at("kl_prior").get<std::string>();
  if (prior == "ones") c.objective.kl_prior = KlPrior::kOnes;
  else if (prior == "beta") c.objective.kl_prior = KlPrior::kBeta;
  else throw ConfigError("config: objective.kl_prior must be \"ones\" or \"beta\", got \"" + prior + "\"");
  c.objective.multiplicative_weight = o.at("multiplicative_weight").get<double>();

  const json& a = j.at("augment");
  c.augment.corruption_probability = a.at("corruption_probability").get<double>();
  c.augment.max_severity = a.at("max_severity").get<int>();
  c.augment.min_crop_scale = a.at("min_crop_scale").get<double>();
  c.augment.flip_probability = a.at("flip_probability").get<double>();

  const json& t = j.at("train");
  c.train.epochs = t.at("epochs").get<std::size_t>();
  c.train.batch_size = t.at("batch_size").get<std::size_t>();
  c.train.learning_rate = t.at("learning_rate").get<double>();
  c.train.momentum = t.at("momentum").get<double>();
  c.train.weight_decay = t.at("weight_decay").get<double>();
  c.train.checkpoint_every = t.at("checkpoint_every").get<std::size_t>();

  const json& e = j.at("eval");
  c.eval.probe_epochs = e.at("probe_epochs").get<std::size_t>();
  c.eval.probe_learning_rate = e.at("probe_learning_rate").get<double>();
  c.eval.probe_batch_size = e.at("probe_batch_size").get<std::size_t>();
  c.eval.probe_val_fraction = e.at("probe_val_fraction").get<double>();
  c.eval.robust_probe_epochs = e.at("robust_probe_epochs").get<std::size_t>();
  c.eval.ki_pairs = e.at("ki_pairs").get<std::size_t>();
  c.eval.native_ki_draws = e.at("native_ki_draws").get<std::size_t>();
  c.eval.energy_temperature = e.at("energy_temperature").get<double>();
  c.eval.ood_severity = e.at("ood_severity").get<int>();
  return c;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("config: " + what);
}

}  // namespace

std::string_view variant_name(Variant v) { return kVariantNames.at(static_cast<std::size_t>(v)); }

Variant variant_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kVariantNames.size(); ++i)
    if (kVariantNames[i] == name) return static_cast<Variant>(i);
  throw ConfigError("config: unknown variant '" + std::string(name) + "'");
}

bool has_evidential_gate(Variant v) {
  return v == Variant::kTrustSslAdditive || v == Variant::kTrustSslMultiplicative || v == Variant::kScalarUncertainty;
}

void validate(const ExperimentConfig& c) {
  const auto& m = c.model;
  require(m.image_size >= 16, "model.image_size must be >= 16");
  for (std::size_t w : m.conv_widths) require(w > 0, "model.conv_widths must be positive");
  require(m.backbone_dim > 0 && m.projector_dim > 0 && m.factor_dim > 0 && m.prototypes > 0,
          "model dimensions must be positive");
  require(m.factors >= 1, "model.factors must be >= 1");
  require(c.variant != Variant::kScalarUncertainty || m.factors == 1, "variant scalar_uncertainty requires model.factors = 1");
  require(m.prior_strength > 0.0, "model.prior_strength must be > 0");
  require(m.aux_classes == 10, "model.aux_classes must be 10 (clean + nine corruption families)");

  const auto& g = c.gate;
  require(g.alpha > 0.0 && g.gamma > 0.0, "gate.alpha and gate.gamma must be > 0");
  require(g.epsilon >= 0.0, "gate.epsilon must be >= 0");
  require(g.lambda_min_start > 0.0 && g.lambda_min_start < 1.0, "gate.lambda_min_start must lie in (0, 1)");
  require(g.lambda_min_end > 0.0 && g.lambda_min_end < 1.0, "gate.lambda_min_end must lie in (0, 1)");

  const auto& o = c.objective;
  require(o.temperature > 0.0 && o.anchor_temperature > 0.0, "objective temperatures must be > 0");
  require(o.ramp_start >= 0.0 && o.ramp_start < o.ramp_end && o.ramp_end <= 1.0,
          "objective ramp bounds must satisfy 0 <= ramp_start < ramp_end <= 1");
  require(o.lambda_sel_max >= 0.0 && o.lambda_anchor >= 0.0 && o.lambda_div >= 0.0 && o.lambda_aux >= 0.0 &&
              o.lambda_kl >= 0.0 && o.multiplicative_weight >= 0.0,
          "objective weights must be >= 0");

  const auto& a = c.augment;
  require(a.corruption_probability >= 0.0 && a.corruption_probability <= 1.0, "augment.corruption_probability must lie in [0, 1]");
  require(a.max_severity >= 1 && a.max_severity <= 5, "augment.max_severity must lie in 1..5");
  require(a.min_crop_scale > 0.0 && a.min_crop_scale <= 1.0, "augment.min_crop_scale must lie in (0, 1]");
  require(a.flip_probability >= 0.0 && a.flip_probability <= 1.0, "augment.flip_probability must lie in [0, 1]");

  const auto& d = c.data;
  require(d.source == "synthetic" || d.source == "directory", "data.source must be \"synthetic\" or \"directory\"");
  require(d.source != "directory" || !d.path.empty(), "data.path is required for a directory source");
  require(d.num_classes >= 2, "data.num_classes must be >= 2");
  require(d.train_samples > 0 && d.test_samples > 0, "data sample counts must be positive");

  const auto& t = c.train;
  require(t.epochs >= 1, "train.epochs must be >= 1");
  require(t.batch_size >= 2, "train.batch_size must be >= 2");
  require(t.learning_rate > 0.0, "train.learning_rate must be > 0");
  require(t.momentum >= 0.0 && t.momentum < 1.0, "train.momentum must lie in [0, 1)");
  require(t.weight_decay >= 0.0, "train.weight_decay must be >= 0");

  const auto& e = c.eval;
  require(e.probe_epochs >= 1 && e.robust_probe_epochs >= 1, "eval probe epochs must be >= 1");
  require(e.probe_learning_rate > 0.0, "eval.probe_learning_rate must be > 0");
  require(e.probe_batch_size >= 1, "eval.probe_batch_size must be >= 1");
  require(e.probe_val_fraction > 0.0 && e.probe_val_fraction < 1.0, "eval.probe_val_fraction must lie in (0, 1)");
  require(e.ki_pairs >= 1 && e.native_ki_draws >= 1, "eval.ki_pairs and eval.native_ki_draws must be >= 1");
  require(e.energy_temperature > 0.0, "eval.energy_temperature must be > 0");
  require(e.ood_severity >= 1 && e.ood_severity <= 5, "eval.ood_severity must lie in 1..5");
}

ExperimentConfig parse_config(std::string_view text) {
  json given;
  try {
    given = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  json merged = to_object(ExperimentConfig{});
  overlay(merged, given, "");
  ExperimentConfig c = from_object(merged);
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_json(const ExperimentConfig& config) { return to_object(config).dump(); }

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

std::string config_hash(const ExperimentConfig& config) { return sha256_hex(to_json(config)); }

}  // namespace tssl
