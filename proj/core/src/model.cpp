#include "tssl/model.hpp"

#include <algorithm>
#include <cmath>

#include "tssl/error.hpp"
#include "tssl/rng.hpp"

namespace tssl {
namespace {

Tensor uniform_fan_in(Shape shape, std::size_t fan_in, RngStream rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

// Columns of a [rows, cols] matrix made mutually orthonormal by Gram-Schmidt,
// in blocks of `rows` columns when cols exceeds rows.
Tensor orthogonal_columns(std::size_t rows, std::size_t cols, RngStream rng) {
  Tensor t(Shape{rows, cols});
  for (double& v : t.values()) v = rng.normal();
  auto col = [&](std::size_t j, std::size_t i) -> double& { return t[i * cols + j]; };
  for (std::size_t j = 0; j < cols; ++j) {
    const std::size_t block_start = (j / rows) * rows;
    for (std::size_t k = block_start; k < j; ++k) {
      double dot = 0.0;
      for (std::size_t i = 0; i < rows; ++i) dot += col(j, i) * col(k, i);
      for (std::size_t i = 0; i < rows; ++i) col(j, i) -= dot * col(k, i);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < rows; ++i) norm += col(j, i) * col(j, i);
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < rows; ++i) col(j, i) /= norm;
  }
  return t;
}

}  // namespace

bool operator==(const NamedTensor& a, const NamedTensor& b) { return a.name == b.name && a.value == b.value; }
bool operator==(const ParameterStore& a, const ParameterStore& b) { return a.entries_ == b.entries_; }

void ParameterStore::add(std::string name, Tensor value) {
  if (contains(name)) throw Error("parameter store: duplicate name '" + name + "'");
  entries_.push_back({std::move(name), std::move(value)});
}

bool ParameterStore::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const NamedTensor& e) { return e.name == name; });
}

std::size_t ParameterStore::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  throw Error("parameter store: no parameter named '" + std::string(name) + "'");
}

const Tensor& ParameterStore::operator[](std::string_view name) const { return entries_[index_of(name)].value; }
Tensor& ParameterStore::operator[](std::string_view name) { return entries_[index_of(name)].value; }

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

ParameterStore init_parameters(const ModelConfig& c, std::uint64_t seed) {
  const RngStream root = RngStream(seed).split(0x1417);
  std::uint64_t tag = 0;
  ParameterStore p;
  auto linear = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    p.add(prefix + ".weight", uniform_fan_in(Shape{in, out}, in, root.split(++tag)));
    p.add(prefix + ".bias", Tensor(Shape{out}));
  };
  std::size_t in_ch = 3;
  for (std::size_t i = 0; i < c.conv_widths.size(); ++i) {
    const std::string name = "encoder.conv" + std::to_string(i + 1);
    const std::size_t out_ch = c.conv_widths[i];
    p.add(name + ".weight", uniform_fan_in(Shape{out_ch, in_ch, 3, 3}, in_ch * 9, root.split(++tag)));
    p.add(name + ".bias", Tensor(Shape{out_ch}));
    in_ch = out_ch;
  }
  linear("encoder.fc", in_ch, c.backbone_dim);
  linear("projector.fc1", c.backbone_dim, c.backbone_dim);
  linear("projector.fc2", c.backbone_dim, c.projector_dim);
  linear("factor.stem1", c.backbone_dim, c.backbone_dim);
  linear("factor.stem2", c.backbone_dim, c.backbone_dim);
  p.add("factor.proj.weight", orthogonal_columns(c.backbone_dim, c.factors * c.factor_dim, root.split(++tag)));
  for (std::size_t t = 0; t < c.factors; ++t) linear("evidential.t" + std::to_string(t), c.factor_dim, c.prototypes);
  linear("aux", c.backbone_dim, c.aux_classes);
  // softplus(log(e - 1)) = 1: every cosine-gate temperature starts at 1.
  p.add("gate.cosine.rho", Tensor(Shape{c.factors}, std::log(std::exp(1.0) - 1.0)));
  return p;
}

std::vector<std::string> evidential_parameter_names(const ModelConfig& c) {
  std::vector<std::string> out;
  for (std::size_t t = 0; t < c.factors; ++t) {
    out.push_back("evidential.t" + std::to_string(t) + ".weight");
    out.push_back("evidential.t" + std::to_string(t) + ".bias");
  }
  return out;
}

ModelGraph::ModelGraph(ad::Graph& graph, const ModelConfig& config, const ParameterStore& params,
                       const TrainablePredicate& trainable)
    : graph_(&graph), config_(config), params_(&params) {
  vars_.reserve(params.size());
  for (const auto& e : params.entries()) {
    const bool learn = !trainable || trainable(e.name);
    vars_.push_back(learn ? graph.parameter(e.value) : graph.constant(e.value));
  }
}

ad::Var ModelGraph::param(std::string_view name) const { return vars_[params_->index_of(name)]; }

ad::Var ModelGraph::linear(ad::Var x, std::string_view prefix) const {
  const std::string p(prefix);
  return ad::matmul(x, param(p + ".weight")) + param(p + ".bias");
}

ad::Var ModelGraph::encode(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(0) == 0) {
    throw ShapeError("encode: expected a nonempty [N, 3, H, W] batch, got " + to_string(images.shape()));
  }
  if (images.dim(2) != images.dim(3)) throw ShapeError("encode: images must be square, got " + to_string(images.shape()));
  ad::Var x = ad::add_scalar(graph_->constant(images), -0.5);
  for (std::size_t i = 0; i < config_.conv_widths.size(); ++i) {
    const std::string name = "encoder.conv" + std::to_string(i + 1);
    x = ad::relu(ad::conv2d(x, param(name + ".weight"), param(name + ".bias"), 2, 1));
  }
  return linear(ad::global_avg_pool(x), "encoder.fc");
}

ad::Var ModelGraph::project(ad::Var h) const {
  return ad::l2_normalize(linear(ad::relu(linear(h, "projector.fc1")), "projector.fc2"));
}

std::vector<ad::Var> ModelGraph::factorize(ad::Var h) const {
  const ad::Var stem = linear(ad::relu(linear(h, "factor.stem1")), "factor.stem2");
  const ad::Var projected = ad::matmul(stem, param("factor.proj.weight"));
  std::vector<ad::Var> z;
  z.reserve(config_.factors);
  for (std::size_t t = 0; t < config_.factors; ++t) {
    z.push_back(ad::l2_normalize(ad::slice(projected, 1, t * config_.factor_dim, (t + 1) * config_.factor_dim)));
  }
  return z;
}

ad::Var ModelGraph::evidence(ad::Var z, std::size_t factor) const {
  if (factor >= config_.factors) throw Error("evidence: factor index out of range");
  return ad::softplus(linear(z, "evidential.t" + std::to_string(factor)));
}

ad::Var ModelGraph::aux_logits(ad::Var h) const { return linear(h, "aux"); }

ad::Var ModelGraph::cosine_temperature() const { return ad::softplus(param("gate.cosine.rho")); }

std::vector<Tensor> collect_gradients(const ModelGraph& model, const ad::GradientMap& grads) {
  std::vector<Tensor> out;
  out.reserve(model.vars().size());
  for (const ad::Var& v : model.vars()) {
    out.push_back(grads.contains(v) ? grads[v] : Tensor(v.shape()));
  }
  return out;
}

Tensor encode_features(const ModelConfig& config, const ParameterStore& params, const Tensor& images,
                       std::size_t batch) {
  const std::size_t n = images.dim(0);
  const std::size_t per = images.size() / n;
  Tensor out(Shape{n, config.backbone_dim});
  for (std::size_t lo = 0; lo < n; lo += batch) {
    const std::size_t hi = std::min(n, lo + batch);
    Tensor chunk(Shape{hi - lo, images.dim(1), images.dim(2), images.dim(3)},
                 std::vector<double>(images.data() + lo * per, images.data() + hi * per));
    ad::Graph g;
    const ModelGraph model(g, config, params, [](std::string_view) { return false; });
    const Tensor& h = model.encode(chunk).value();
    std::copy(h.values().begin(), h.values().end(), out.data() + lo * config.backbone_dim);
  }
  return out;
}

}  // namespace tssl
