#include "tssl/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <string>

#include "tssl/error.hpp"
#include "tssl/parallel.hpp"
#include "tssl/special_functions.hpp"

namespace tssl::ad {
namespace {

constexpr double kNormEps = 1e-12;
constexpr std::size_t kConvChunk = 8;

[[noreturn]] void shape_fail(Op op, const Shape& a, const Shape& b, std::string_view why = {}) {
  std::string msg = std::string(op_name(op)) + ": incompatible shapes " + to_string(a) + " and " +
                    to_string(b);
  if (!why.empty()) msg += " (" + std::string(why) + ")";
  throw ShapeError(msg);
}

[[noreturn]] void shape_fail(Op op, const Shape& a, std::string_view why) {
  throw ShapeError(std::string(op_name(op)) + ": bad shape " + to_string(a) + " (" + std::string(why) +
                   ")");
}

// ---------------------------------------------------------------------------
// trailing-axis broadcasting

enum class Bcast { kSame, kScalar, kSuffix, kColumn };

std::optional<Bcast> broadcast_kind(const Shape& out, const Shape& in) {
  if (in == out) return Bcast::kSame;
  if (shape_size(in) == 1) return Bcast::kScalar;
  if (in.size() <= out.size() && std::equal(in.rbegin(), in.rend(), out.rbegin())) return Bcast::kSuffix;
  if (!out.empty() && in.size() == out.size() && in.back() == 1 &&
      std::equal(in.begin(), in.end() - 1, out.begin())) {
    return Bcast::kColumn;
  }
  return std::nullopt;
}

struct Broadcast {
  Bcast kind;
  std::size_t in_size;
  std::size_t last;

  std::size_t operator()(std::size_t i) const {
    switch (kind) {
      case Bcast::kSame:
        return i;
      case Bcast::kScalar:
        return 0;
      case Bcast::kSuffix:
        return i % in_size;
      case Bcast::kColumn:
        return i / last;
    }
    return i;
  }
};

struct BinaryLayout {
  Shape out;
  Broadcast a;
  Broadcast b;
};

BinaryLayout binary_layout(Op op, const Shape& sa, const Shape& sb) {
  const std::size_t na = shape_size(sa);
  const std::size_t nb = shape_size(sb);
  Shape out;
  if (sa == sb) {
    out = sa;
  } else if (na > nb || (na == nb && nb == 1)) {
    out = sa;
  } else if (nb > na) {
    out = sb;
  } else if (sa.size() != sb.size()) {
    // e.g. [1, D] against [D]: the higher-rank operand fixes the layout
    out = sa.size() > sb.size() ? sa : sb;
  } else {
    shape_fail(op, sa, sb, "equal sizes, different shapes");
  }
  const auto ka = broadcast_kind(out, sa);
  const auto kb = broadcast_kind(out, sb);
  if (!ka || !kb) shape_fail(op, sa, sb, "only trailing-axis broadcasting is supported");
  const std::size_t last = out.empty() ? 1 : out.back();
  return {out, {*ka, na, last}, {*kb, nb, last}};
}

// ---------------------------------------------------------------------------
// dense kernels

// c[m, n] = a[m, k] * b[k, n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void transpose_into(const double* a, double* out, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
}

double softplus_scalar(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, k, ho, wo, stride, pad;
  std::size_t patch() const { return c * k * k; }
  std::size_t pixels() const { return ho * wo; }
};

ConvGeometry conv_geometry(const Shape& xs, const Shape& ws, const Shape& bs, std::size_t stride,
                           std::size_t pad) {
  if (xs.size() != 4) shape_fail(Op::kConv2d, xs, "input must be [N, C, H, W]");
  if (ws.size() != 4 || ws[2] != ws[3] || ws[1] != xs[1]) shape_fail(Op::kConv2d, xs, ws, "weight must be [O, C, k, k]");
  if (bs.size() != 1 || bs[0] != ws[0]) shape_fail(Op::kConv2d, ws, bs, "bias must be [O]");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], 0, 0, stride, pad};
  if (g.h + 2 * pad < g.k || g.w + 2 * pad < g.k) shape_fail(Op::kConv2d, xs, ws, "kernel larger than padded input");
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  return g;
}

// cols[q, j] with q = (ci, ky, kx) and j = (oy, ox)
void im2col(const ConvGeometry& g, const double* img, double* cols) {
  const std::size_t px = g.pixels();
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = cols + ((ci * g.k + ky) * g.k + kx) * px;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w);
            row[oy * g.wo + ox] = inside ? img[(ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] : 0.0;
          }
        }
      }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* img) {
  const std::size_t px = g.pixels();
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((ci * g.k + ky) * g.k + kx) * px;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            img[(ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] += row[oy * g.wo + ox];
          }
        }
      }
}

// (outer, axis, inner) factorization of a shape around `axis`
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Shape drop_last(const Shape& s) { return Shape(s.begin(), s.end() - 1); }

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kParameter: return "parameter";
    case Op::kMatMul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kAdd: return "add";
    case Op::kSub: return "subtract";
    case Op::kMul: return "multiply";
    case Op::kDiv: return "divide";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kSoftplus: return "softplus";
    case Op::kRelu: return "relu";
    case Op::kSigmoid: return "sigmoid";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kLogGamma: return "log_gamma";
    case Op::kDigamma: return "digamma";
    case Op::kAbs: return "abs";
    case Op::kMinScalar: return "min_scalar";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kSumLast: return "sum_last";
    case Op::kDotLast: return "dot_last";
    case Op::kL2Normalize: return "l2_normalize";
    case Op::kLogSumExp: return "logsumexp";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kGatherRows: return "gather_rows";
    case Op::kStopGradient: return "stop_gradient";
    case Op::kConv2d: return "conv2d";
    case Op::kGlobalAvgPool: return "global_avg_pool";
    case Op::kReshape: return "reshape";
  }
  return "unknown";
}

const Tensor& Var::value() const { return graph->node(id).output; }
const Shape& Var::shape() const { return value().shape(); }

bool GradientMap::contains(Var v) const { return v.id < adjoints_.size() && adjoints_[v.id].has_value(); }

const Tensor& GradientMap::operator[](Var v) const {
  if (!contains(v)) throw Error("gradient map: node " + std::to_string(v.id) + " has no adjoint");
  return *adjoints_[v.id];
}

Var Graph::constant(Tensor value) {
  GraphNode n;
  n.op = Op::kConstant;
  n.output = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<NodeId>(nodes_.size() - 1)};
}

Var Graph::parameter(Tensor value) {
  GraphNode n;
  n.op = Op::kParameter;
  n.output = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, static_cast<NodeId>(nodes_.size() - 1)};
}

std::vector<Tensor> Graph::stop_gradient_values() const {
  std::vector<Tensor> out;
  for (const auto& n : nodes_)
    if (n.is_stop_gradient) out.push_back(n.output);
  return out;
}

Var Graph::apply(Op op, std::span<const Var> inputs, OpAttrs attrs) {
  for (const Var& v : inputs) {
    if (v.graph != this) throw Error(std::string(op_name(op)) + ": input belongs to a different graph");
  }
  Tensor out = forward(op, inputs, attrs);
  GraphNode n;
  n.op = op;
  n.attrs = std::move(attrs);
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  if (op == Op::kStopGradient) {
    n.is_stop_gradient = true;
    n.requires_grad = false;
    if (stop_gradient_count_ < frozen_.size()) {
      if (frozen_[stop_gradient_count_].shape() != out.shape()) {
        shape_fail(op, out.shape(), frozen_[stop_gradient_count_].shape(), "frozen value");
      }
      out = frozen_[stop_gradient_count_];
    }
    ++stop_gradient_count_;
  }
#ifndef NDEBUG
  if (!out.all_finite()) throw DomainError(std::string(op_name(op)) + ": produced a non-finite value");
#endif
  n.output = std::move(out);
  nodes_.push_back(std::move(n));
  return {this, static_cast<NodeId>(nodes_.size() - 1)};
}

Tensor Graph::forward(Op op, std::span<const Var> in, const OpAttrs& attrs) {
  auto val = [&](std::size_t i) -> const Tensor& { return nodes_[in[i].id].output; };
  auto need = [&](std::size_t count) {
    if (in.size() != count) {
      throw Error(std::string(op_name(op)) + ": expected " + std::to_string(count) + " inputs, got " +
                  std::to_string(in.size()));
    }
  };
  auto unary = [&](auto fn) {
    need(1);
    const Tensor& x = val(0);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = fn(x[i]);
    return out;
  };
  auto binary = [&](auto fn) {
    need(2);
    const Tensor& a = val(0);
    const Tensor& b = val(1);
    const BinaryLayout lay = binary_layout(op, a.shape(), b.shape());
    Tensor out(lay.out);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(a[lay.a(i)], b[lay.b(i)]);
    return out;
  };

  switch (op) {
    case Op::kConstant:
    case Op::kParameter:
      throw Error("apply: leaves are created with constant() or parameter()");
    case Op::kMatMul: {
      need(2);
      const Tensor& a = val(0);
      const Tensor& b = val(1);
      if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_fail(op, a.shape(), b.shape());
      Tensor out(Shape{a.dim(0), b.dim(1)});
      gemm_nn(a.data(), b.data(), out.data(), a.dim(0), a.dim(1), b.dim(1));
      return out;
    }
    case Op::kTranspose: {
      need(1);
      const Tensor& a = val(0);
      if (a.rank() != 2) shape_fail(op, a.shape(), "rank 2 required");
      Tensor out(Shape{a.dim(1), a.dim(0)});
      transpose_into(a.data(), out.data(), a.dim(0), a.dim(1));
      return out;
    }
    case Op::kAdd: return binary([](double x, double y) { return x + y; });
    case Op::kSub: return binary([](double x, double y) { return x - y; });
    case Op::kMul: return binary([](double x, double y) { return x * y; });
    case Op::kDiv: return binary([](double x, double y) { return x / y; });
    case Op::kScale: return unary([c = attrs.scalar](double x) { return c * x; });
    case Op::kAddScalar: return unary([c = attrs.scalar](double x) { return x + c; });
    case Op::kSoftplus: return unary(softplus_scalar);
    case Op::kRelu: return unary([](double x) { return x > 0.0 ? x : 0.0; });
    case Op::kSigmoid: return unary(sigmoid_scalar);
    case Op::kExp: return unary([](double x) { return std::exp(x); });
    case Op::kLog: return unary([](double x) { return std::log(x); });
    case Op::kLogGamma: return unary(special::log_gamma);
    case Op::kDigamma: return unary(special::digamma);
    case Op::kAbs: return unary([](double x) { return std::abs(x); });
    case Op::kMinScalar: return unary([c = attrs.scalar](double x) { return std::min(x, c); });
    case Op::kSum:
    case Op::kMean: {
      need(1);
      const Tensor& x = val(0);
      double acc = 0.0;
      for (double v : x.values()) acc += v;
      if (op == Op::kMean) acc /= static_cast<double>(x.size());
      return Tensor::scalar(acc);
    }
    case Op::kSumLast: {
      need(1);
      const Tensor& x = val(0);
      if (x.rank() == 0) shape_fail(op, x.shape(), "rank >= 1 required");
      const std::size_t last = x.shape().back();
      Shape s = drop_last(x.shape());
      if (attrs.axis == 1) s.push_back(1);  // keepdim
      Tensor out(s);
      for (std::size_t r = 0; r < out.size(); ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < last; ++j) acc += x[r * last + j];
        out[r] = acc;
      }
      return out;
    }
    case Op::kDotLast: {
      need(2);
      const Tensor& a = val(0);
      const Tensor& b = val(1);
      if (a.shape() != b.shape() || a.rank() == 0) shape_fail(op, a.shape(), b.shape());
      const std::size_t last = a.shape().back();
      Tensor out(drop_last(a.shape()));
      for (std::size_t r = 0; r < out.size(); ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < last; ++j) acc += a[r * last + j] * b[r * last + j];
        out[r] = acc;
      }
      return out;
    }
    case Op::kL2Normalize: {
      need(1);
      const Tensor& x = val(0);
      if (x.rank() == 0) shape_fail(op, x.shape(), "rank >= 1 required");
      const std::size_t last = x.shape().back();
      Tensor out(x.shape());
      for (std::size_t r = 0; r < x.size() / last; ++r) {
        double sq = 0.0;
        for (std::size_t j = 0; j < last; ++j) sq += x[r * last + j] * x[r * last + j];
        const double norm = std::sqrt(sq);
        if (norm < kNormEps) ++degenerate_;
        const double inv = 1.0 / (norm + kNormEps);
        for (std::size_t j = 0; j < last; ++j) out[r * last + j] = x[r * last + j] * inv;
      }
      return out;
    }
    case Op::kLogSumExp: {
      need(1);
      const Tensor& x = val(0);
      if (x.rank() == 0) shape_fail(op, x.shape(), "rank >= 1 required");
      const std::size_t last = x.shape().back();
      Tensor out(drop_last(x.shape()));
      for (std::size_t r = 0; r < out.size(); ++r) {
        const double* row = x.data() + r * last;
        const double m = *std::max_element(row, row + last);
        double acc = 0.0;
        for (std::size_t j = 0; j < last; ++j) acc += std::exp(row[j] - m);
        out[r] = m + std::log(acc);
      }
      return out;
    }
    case Op::kConcat: {
      if (in.empty()) throw Error("concat: no inputs");
      const Shape& first = val(0).shape();
      if (attrs.axis >= first.size()) shape_fail(op, first, "axis out of range");
      Shape out_shape = first;
      out_shape[attrs.axis] = 0;
      for (std::size_t i = 0; i < in.size(); ++i) {
        Shape s = val(i).shape();
        if (s.size() != first.size()) shape_fail(op, first, s);
        const std::size_t extent = s[attrs.axis];
        s[attrs.axis] = first[attrs.axis];
        if (s != first) shape_fail(op, first, val(i).shape(), "non-concat axes differ");
        out_shape[attrs.axis] += extent;
      }
      Tensor out(out_shape);
      const AxisSplit os = split_axis(out_shape, attrs.axis);
      std::size_t offset = 0;
      for (std::size_t i = 0; i < in.size(); ++i) {
        const Tensor& x = val(i);
        const AxisSplit xs = split_axis(x.shape(), attrs.axis);
        for (std::size_t o = 0; o < xs.outer; ++o)
          std::copy_n(x.data() + o * xs.extent * xs.inner, xs.extent * xs.inner,
                      out.data() + (o * os.extent + offset) * os.inner);
        offset += xs.extent;
      }
      return out;
    }
    case Op::kSlice: {
      need(1);
      const Tensor& x = val(0);
      if (attrs.axis >= x.rank() || attrs.begin > attrs.end || attrs.end > x.dim(attrs.axis)) {
        shape_fail(op, x.shape(), "slice [" + std::to_string(attrs.begin) + ", " + std::to_string(attrs.end) +
                                      ") on axis " + std::to_string(attrs.axis));
      }
      Shape s = x.shape();
      s[attrs.axis] = attrs.end - attrs.begin;
      Tensor out(s);
      const AxisSplit xs = split_axis(x.shape(), attrs.axis);
      const std::size_t width = (attrs.end - attrs.begin) * xs.inner;
      for (std::size_t o = 0; o < xs.outer; ++o)
        std::copy_n(x.data() + (o * xs.extent + attrs.begin) * xs.inner, width, out.data() + o * width);
      return out;
    }
    case Op::kGatherRows: {
      need(1);
      const Tensor& x = val(0);
      if (x.rank() == 0) shape_fail(op, x.shape(), "rank >= 1 required");
      const std::size_t row = shape_size(Shape(x.shape().begin() + 1, x.shape().end()));
      Shape s = x.shape();
      s[0] = attrs.indices.size();
      Tensor out(s);
      for (std::size_t i = 0; i < attrs.indices.size(); ++i) {
        if (attrs.indices[i] >= x.dim(0)) shape_fail(op, x.shape(), "row index out of range");
        std::copy_n(x.data() + attrs.indices[i] * row, row, out.data() + i * row);
      }
      return out;
    }
    case Op::kStopGradient: {
      need(1);
      return val(0);
    }
    case Op::kConv2d: {
      need(3);
      const Tensor& x = val(0);
      const Tensor& w = val(1);
      const Tensor& b = val(2);
      const ConvGeometry g = conv_geometry(x.shape(), w.shape(), b.shape(), attrs.stride, attrs.pad);
      Tensor out(Shape{g.n, g.o, g.ho, g.wo});
      const std::size_t in_sz = g.c * g.h * g.w;
      const std::size_t out_sz = g.o * g.pixels();
      parallel_chunks(g.n, kConvChunk, [&](std::size_t, std::size_t lo, std::size_t hi) {
        std::vector<double> cols(g.patch() * g.pixels());
        for (std::size_t s = lo; s < hi; ++s) {
          im2col(g, x.data() + s * in_sz, cols.data());
          double* dst = out.data() + s * out_sz;
          gemm_nn(w.data(), cols.data(), dst, g.o, g.patch(), g.pixels());
          for (std::size_t oc = 0; oc < g.o; ++oc)
            for (std::size_t j = 0; j < g.pixels(); ++j) dst[oc * g.pixels() + j] += b[oc];
        }
      });
      return out;
    }
    case Op::kGlobalAvgPool: {
      need(1);
      const Tensor& x = val(0);
      if (x.rank() != 4) shape_fail(op, x.shape(), "input must be [N, C, H, W]");
      const std::size_t px = x.dim(2) * x.dim(3);
      Tensor out(Shape{x.dim(0), x.dim(1)});
      for (std::size_t r = 0; r < out.size(); ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < px; ++j) acc += x[r * px + j];
        out[r] = acc / static_cast<double>(px);
      }
      return out;
    }
    case Op::kReshape: {
      need(1);
      if (shape_size(attrs.shape) != val(0).size()) shape_fail(op, val(0).shape(), attrs.shape);
      return val(0).reshaped(attrs.shape);
    }
  }
  throw Error("apply: unknown primitive");
}

GradientMap Graph::backward(Var loss) const {
  if (loss.graph != this) throw Error("backward: loss belongs to a different graph");
  const Tensor& lv = nodes_.at(loss.id).output;
  if (lv.size() != 1) throw ShapeError("backward: loss must be a scalar, got shape " + to_string(lv.shape()));

  std::vector<std::optional<Tensor>> adj(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].requires_grad) adj[i] = Tensor(nodes_[i].output.shape());
  if (adj[loss.id]) (*adj[loss.id])[0] = 1.0;

  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const GraphNode& n = nodes_[i];
    if (!n.requires_grad || n.inputs.empty()) continue;
    accumulate_backward(n, *adj[i], adj);
  }
  GradientMap map;
  map.adjoints_ = std::move(adj);
  return map;
}

void Graph::accumulate_backward(const GraphNode& n, const Tensor& g,
                                std::vector<std::optional<Tensor>>& adj) const {
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].output; };
  auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
  auto target = [&](std::size_t k) -> Tensor& { return *adj[n.inputs[k]]; };
  auto add_into = [&](std::size_t k, const Tensor& t) {
    Tensor& dst = target(k);
    for (std::size_t i = 0; i < t.size(); ++i) dst[i] += t[i];
  };
  // unary elementwise: dx += g * d(x)
  auto unary = [&](auto deriv) {
    if (!wants(0)) return;
    const Tensor& x = in(0);
    Tensor& dst = target(0);
    for (std::size_t i = 0; i < x.size(); ++i) dst[i] += g[i] * deriv(x[i], n.output[i]);
  };
  auto binary = [&](auto da, auto db) {
    const Tensor& a = in(0);
    const Tensor& b = in(1);
    const BinaryLayout lay = binary_layout(n.op, a.shape(), b.shape());
    if (wants(0)) {
      Tensor& dst = target(0);
      for (std::size_t i = 0; i < g.size(); ++i) dst[lay.a(i)] += g[i] * da(a[lay.a(i)], b[lay.b(i)]);
    }
    if (wants(1)) {
      Tensor& dst = target(1);
      for (std::size_t i = 0; i < g.size(); ++i) dst[lay.b(i)] += g[i] * db(a[lay.a(i)], b[lay.b(i)]);
    }
  };

  switch (n.op) {
    case Op::kConstant:
    case Op::kParameter:
    case Op::kStopGradient:
      return;
    case Op::kMatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t m = a.dim(0), k = a.dim(1), cols = b.dim(1);
      if (wants(0)) {
        std::vector<double> bt(k * cols);
        transpose_into(b.data(), bt.data(), k, cols);
        Tensor da(a.shape());
        gemm_nn(g.data(), bt.data(), da.data(), m, cols, k);
        add_into(0, da);
      }
      if (wants(1)) {
        std::vector<double> at(m * k);
        transpose_into(a.data(), at.data(), m, k);
        Tensor db(b.shape());
        gemm_nn(at.data(), g.data(), db.data(), k, m, cols);
        add_into(1, db);
      }
      return;
    }
    case Op::kTranspose: {
      if (!wants(0)) return;
      Tensor t(in(0).shape());
      transpose_into(g.data(), t.data(), g.dim(0), g.dim(1));
      add_into(0, t);
      return;
    }
    case Op::kAdd:
      binary([](double, double) { return 1.0; }, [](double, double) { return 1.0; });
      return;
    case Op::kSub:
      binary([](double, double) { return 1.0; }, [](double, double) { return -1.0; });
      return;
    case Op::kMul:
      binary([](double, double y) { return y; }, [](double x, double) { return x; });
      return;
    case Op::kDiv:
      binary([](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
      return;
    case Op::kScale:
      unary([c = n.attrs.scalar](double, double) { return c; });
      return;
    case Op::kAddScalar:
      unary([](double, double) { return 1.0; });
      return;
    case Op::kSoftplus:
      unary([](double x, double) { return sigmoid_scalar(x); });
      return;
    case Op::kRelu:
      unary([](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
      return;
    case Op::kSigmoid:
      unary([](double, double y) { return y * (1.0 - y); });
      return;
    case Op::kExp:
      unary([](double, double y) { return y; });
      return;
    case Op::kLog:
      unary([](double x, double) { return 1.0 / x; });
      return;
    case Op::kLogGamma:
      unary([](double x, double) { return special::digamma(x); });
      return;
    case Op::kDigamma:
      unary([](double x, double) { return special::trigamma(x); });
      return;
    case Op::kAbs:
      unary([](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
      return;
    case Op::kMinScalar:
      unary([c = n.attrs.scalar](double x, double) { return x < c ? 1.0 : 0.0; });
      return;
    case Op::kSum:
    case Op::kMean: {
      if (!wants(0)) return;
      Tensor& dst = target(0);
      const double s = n.op == Op::kMean ? g[0] / static_cast<double>(dst.size()) : g[0];
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s;
      return;
    }
    case Op::kSumLast: {
      if (!wants(0)) return;
      Tensor& dst = target(0);
      const std::size_t last = in(0).shape().back();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i / last];
      return;
    }
    case Op::kDotLast: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t last = a.shape().back();
      if (wants(0)) {
        Tensor& dst = target(0);
        for (std::size_t i = 0; i < a.size(); ++i) dst[i] += g[i / last] * b[i];
      }
      if (wants(1)) {
        Tensor& dst = target(1);
        for (std::size_t i = 0; i < b.size(); ++i) dst[i] += g[i / last] * a[i];
      }
      return;
    }
    case Op::kL2Normalize: {
      if (!wants(0)) return;
      const Tensor& x = in(0);
      Tensor& dst = target(0);
      const std::size_t last = x.shape().back();
      for (std::size_t r = 0; r < x.size() / last; ++r) {
        const double* xr = x.data() + r * last;
        const double* gr = g.data() + r * last;
        double sq = 0.0, gx = 0.0;
        for (std::size_t j = 0; j < last; ++j) {
          sq += xr[j] * xr[j];
          gx += gr[j] * xr[j];
        }
        const double norm = std::sqrt(sq);
        const double denom = norm + kNormEps;
        const double coupling = norm > 0.0 ? gx / (denom * denom * norm) : 0.0;
        for (std::size_t j = 0; j < last; ++j) dst[r * last + j] += gr[j] / denom - xr[j] * coupling;
      }
      return;
    }
    case Op::kLogSumExp: {
      if (!wants(0)) return;
      const Tensor& x = in(0);
      Tensor& dst = target(0);
      const std::size_t last = x.shape().back();
      for (std::size_t i = 0; i < x.size(); ++i) {
        const std::size_t r = i / last;
        dst[i] += g[r] * std::exp(x[i] - n.output[r]);
      }
      return;
    }
    case Op::kConcat: {
      const AxisSplit os = split_axis(n.output.shape(), n.attrs.axis);
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const AxisSplit xs = split_axis(in(k).shape(), n.attrs.axis);
        if (wants(k)) {
          Tensor& dst = target(k);
          for (std::size_t o = 0; o < xs.outer; ++o) {
            const double* src = g.data() + (o * os.extent + offset) * os.inner;
            double* d = dst.data() + o * xs.extent * xs.inner;
            for (std::size_t j = 0; j < xs.extent * xs.inner; ++j) d[j] += src[j];
          }
        }
        offset += xs.extent;
      }
      return;
    }
    case Op::kSlice: {
      if (!wants(0)) return;
      Tensor& dst = target(0);
      const AxisSplit xs = split_axis(in(0).shape(), n.attrs.axis);
      const std::size_t width = (n.attrs.end - n.attrs.begin) * xs.inner;
      for (std::size_t o = 0; o < xs.outer; ++o) {
        double* d = dst.data() + (o * xs.extent + n.attrs.begin) * xs.inner;
        const double* src = g.data() + o * width;
        for (std::size_t j = 0; j < width; ++j) d[j] += src[j];
      }
      return;
    }
    case Op::kGatherRows: {
      if (!wants(0)) return;
      Tensor& dst = target(0);
      const std::size_t row = shape_size(Shape(dst.shape().begin() + 1, dst.shape().end()));
      for (std::size_t i = 0; i < n.attrs.indices.size(); ++i) {
        double* d = dst.data() + n.attrs.indices[i] * row;
        const double* src = g.data() + i * row;
        for (std::size_t j = 0; j < row; ++j) d[j] += src[j];
      }
      return;
    }
    case Op::kConv2d: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const ConvGeometry geo = conv_geometry(x.shape(), w.shape(), in(2).shape(), n.attrs.stride, n.attrs.pad);
      const std::size_t in_sz = geo.c * geo.h * geo.w;
      const std::size_t out_sz = geo.o * geo.pixels();
      const std::size_t patch = geo.patch();
      const std::size_t px = geo.pixels();
      const bool need_x = wants(0), need_w = wants(1), need_b = wants(2);
      const std::size_t chunks = chunk_count(geo.n, kConvChunk);
      std::vector<std::vector<double>> dw_part(need_w ? chunks : 0);
      std::vector<std::vector<double>> db_part(need_b ? chunks : 0);
      std::vector<double> wt;
      if (need_x) {
        wt.resize(patch * geo.o);
        transpose_into(w.data(), wt.data(), geo.o, patch);
      }
      Tensor* dx = need_x ? &target(0) : nullptr;
      parallel_chunks(geo.n, kConvChunk, [&](std::size_t c, std::size_t lo, std::size_t hi) {
        std::vector<double> cols, colst, dcols;
        if (need_w) {
          dw_part[c].assign(geo.o * patch, 0.0);
          cols.resize(patch * px);
          colst.resize(px * patch);
        }
        if (need_b) db_part[c].assign(geo.o, 0.0);
        if (need_x) dcols.resize(patch * px);
        for (std::size_t s = lo; s < hi; ++s) {
          const double* gs = g.data() + s * out_sz;
          if (need_b) {
            for (std::size_t oc = 0; oc < geo.o; ++oc) {
              double acc = 0.0;
              for (std::size_t j = 0; j < px; ++j) acc += gs[oc * px + j];
              db_part[c][oc] += acc;
            }
          }
          if (need_w) {
            im2col(geo, x.data() + s * in_sz, cols.data());
            transpose_into(cols.data(), colst.data(), patch, px);
            double* dw = dw_part[c].data();
            for (std::size_t oc = 0; oc < geo.o; ++oc) {
              double* dwr = dw + oc * patch;
              for (std::size_t j = 0; j < px; ++j) {
                const double gv = gs[oc * px + j];
                if (gv == 0.0) continue;
                const double* cr = colst.data() + j * patch;
                for (std::size_t q = 0; q < patch; ++q) dwr[q] += gv * cr[q];
              }
            }
          }
          if (need_x) {
            gemm_nn(wt.data(), gs, dcols.data(), patch, geo.o, px);
            col2im_add(geo, dcols.data(), dx->data() + s * in_sz);
          }
        }
      });
      if (need_w) {
        Tensor& dst = target(1);
        for (const auto& part : dw_part)
          for (std::size_t i = 0; i < part.size(); ++i) dst[i] += part[i];
      }
      if (need_b) {
        Tensor& dst = target(2);
        for (const auto& part : db_part)
          for (std::size_t i = 0; i < part.size(); ++i) dst[i] += part[i];
      }
      return;
    }
    case Op::kGlobalAvgPool: {
      if (!wants(0)) return;
      Tensor& dst = target(0);
      const std::size_t px = dst.dim(2) * dst.dim(3);
      const double inv = 1.0 / static_cast<double>(px);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i / px] * inv;
      return;
    }
    case Op::kReshape: {
      if (!wants(0)) return;
      Tensor& dst = target(0);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// wrappers

namespace {

Var apply1(Op op, Var a, OpAttrs attrs = {}) {
  const std::array<Var, 1> in{a};
  return a.graph->apply(op, in, std::move(attrs));
}

Var apply2(Op op, Var a, Var b, OpAttrs attrs = {}) {
  const std::array<Var, 2> in{a, b};
  return a.graph->apply(op, in, std::move(attrs));
}

OpAttrs scalar_attr(double c) {
  OpAttrs at;
  at.scalar = c;
  return at;
}

}  // namespace

Var matmul(Var a, Var b) { return apply2(Op::kMatMul, a, b); }
Var transpose(Var a) { return apply1(Op::kTranspose, a); }
Var add(Var a, Var b) { return apply2(Op::kAdd, a, b); }
Var sub(Var a, Var b) { return apply2(Op::kSub, a, b); }
Var mul(Var a, Var b) { return apply2(Op::kMul, a, b); }
Var div(Var a, Var b) { return apply2(Op::kDiv, a, b); }
Var scale(Var a, double c) { return apply1(Op::kScale, a, scalar_attr(c)); }
Var add_scalar(Var a, double c) { return apply1(Op::kAddScalar, a, scalar_attr(c)); }
Var softplus(Var a) { return apply1(Op::kSoftplus, a); }
Var relu(Var a) { return apply1(Op::kRelu, a); }
Var sigmoid(Var a) { return apply1(Op::kSigmoid, a); }
Var exp(Var a) { return apply1(Op::kExp, a); }
Var log(Var a) { return apply1(Op::kLog, a); }
Var log_gamma(Var a) { return apply1(Op::kLogGamma, a); }
Var digamma(Var a) { return apply1(Op::kDigamma, a); }
Var abs(Var a) { return apply1(Op::kAbs, a); }
Var min_scalar(Var a, double c) { return apply1(Op::kMinScalar, a, scalar_attr(c)); }
Var sum(Var a) { return apply1(Op::kSum, a); }
Var mean(Var a) { return apply1(Op::kMean, a); }

Var sum_last(Var a, bool keepdim) {
  OpAttrs at;
  at.axis = keepdim ? 1 : 0;
  return apply1(Op::kSumLast, a, std::move(at));
}

Var dot_last(Var a, Var b) { return apply2(Op::kDotLast, a, b); }
Var l2_normalize(Var a) { return apply1(Op::kL2Normalize, a); }
Var logsumexp(Var a) { return apply1(Op::kLogSumExp, a); }

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw Error("concat: no inputs");
  OpAttrs at;
  at.axis = axis;
  return parts.front().graph->apply(Op::kConcat, parts, std::move(at));
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  OpAttrs at;
  at.axis = axis;
  at.begin = begin;
  at.end = end;
  return apply1(Op::kSlice, a, std::move(at));
}

Var gather_rows(Var a, std::vector<std::size_t> rows) {
  OpAttrs at;
  at.indices = std::move(rows);
  return apply1(Op::kGatherRows, a, std::move(at));
}

Var stop_gradient(Var a) { return apply1(Op::kStopGradient, a); }

Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t pad) {
  OpAttrs at;
  at.stride = stride;
  at.pad = pad;
  const std::array<Var, 3> in{x, w, b};
  return x.graph->apply(Op::kConv2d, in, std::move(at));
}

Var global_avg_pool(Var a) { return apply1(Op::kGlobalAvgPool, a); }

Var reshape(Var a, Shape shape) {
  OpAttrs at;
  at.shape = std::move(shape);
  return apply1(Op::kReshape, a, std::move(at));
}

}  // namespace tssl::ad
