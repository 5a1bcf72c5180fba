#include "bsrkit/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "bsrkit/error.hpp"

namespace bsrkit {

namespace {

using detail::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Builds the output node; graph bookkeeping only when some input tracks
// gradients.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   const char* op, std::function<void(Node&)> rule) {
  for (double v : value)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite output from ") + op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool track = false;
  for (auto& t : inputs) track = track || t.requires_grad();
  if (track) {
    node->requires_grad = true;
    for (auto& t : inputs) node->parents.push_back(t.node());
    node->backward = std::move(rule);
  }
  return Tensor(std::move(node));
}

// Grad buffer of an input, or nullptr when that input is not tracked.
std::vector<double>* grad_of(const std::shared_ptr<Node>& n) {
  return n->requires_grad ? &n->ensure_grad() : nullptr;
}

void require_rank(const Tensor& t, std::size_t r, const char* what) {
  if (t.rank() != r)
    throw DimensionError(std::string(what) + " expects rank " + std::to_string(r) + ", got " +
                         to_string(t.shape()));
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// For each flat output index, the flat index into `in` under broadcasting.
std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  Shape padded(r, 1);
  std::copy(in.begin(), in.end(), padded.begin() + static_cast<std::ptrdiff_t>(r - in.size()));
  auto in_strides = strides_of(padded);
  for (std::size_t i = 0; i < r; ++i)
    if (padded[i] == 1) in_strides[i] = 0;
  const std::size_t n = numel(out);
  std::vector<std::size_t> idx(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    idx[flat] = offset;
    for (std::size_t ax = r; ax-- > 0;) {
      ++counter[ax];
      offset += in_strides[ax];
      if (counter[ax] < out[ax]) break;
      offset -= in_strides[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  return idx;
}

template <class Fwd, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DA da, DB db) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = numel(out_shape);
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(n);
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i]);
    return make_result(out_shape, std::move(out), {a, b}, name, [an = a.node(), bn = b.node(), da, db](Node& self) {
      const auto& g = self.grad;
      if (auto* ga = grad_of(an))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * da(an->value[i], bn->value[i]);
      if (auto* gb = grad_of(bn))
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * db(an->value[i], bn->value[i]);
    });
  }
  auto ia = broadcast_index(a.shape(), out_shape);
  auto ib = broadcast_index(b.shape(), out_shape);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[ia[i]], bv[ib[i]]);
  return make_result(out_shape, std::move(out), {a, b}, name,
                     [an = a.node(), bn = b.node(), ia = std::move(ia), ib = std::move(ib), da, db](Node& self) {
                       const auto& g = self.grad;
                       if (auto* ga = grad_of(an))
                         for (std::size_t i = 0; i < g.size(); ++i)
                           (*ga)[ia[i]] += g[i] * da(an->value[ia[i]], bn->value[ib[i]]);
                       if (auto* gb = grad_of(bn))
                         for (std::size_t i = 0; i < g.size(); ++i)
                           (*gb)[ib[i]] += g[i] * db(an->value[ia[i]], bn->value[ib[i]]);
                     });
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return make_result(x.shape(), std::move(out), {x}, name, [xn = x.node(), deriv](Node& self) {
    auto& gx = xn->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * deriv(xn->value[i]);
  });
}

// Splits `shape` around `axis` into outer x n x inner.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) throw IndexError("axis " + std::to_string(axis) + " out of range for " + to_string(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw DimensionError("shapes " + to_string(a) + " and " + to_string(b) + " are not broadcastable");
    out[i] = std::max(ea, eb);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return unary(
      x, "gelu", [=](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [=](double v) { return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v); });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, "abs", [](double v) { return std::abs(v); },
      [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary(
      x, "square", [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [=](double v) { return v * factor; }, [=](double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      x, "add_scalar", [=](double v) { return v + value; }, [](double) { return 1.0; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      x, "clamp", [=](double v) { return std::clamp(v, lo, hi); },
      [=](double v) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const std::optional<Tensor>& b) {
  auto need_b = [&]() -> const Tensor& {
    if (!b) throw ContractError("binary elementwise op needs a second operand");
    return *b;
  };
  switch (op) {
    case ElementwiseOp::add: return add(a, need_b());
    case ElementwiseOp::sub: return sub(a, need_b());
    case ElementwiseOp::mul: return mul(a, need_b());
    case ElementwiseOp::relu: return relu(a);
    case ElementwiseOp::gelu: return gelu(a);
  }
  throw ContractError("unknown elementwise op");
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_result({1}, {s}, {x}, "sum", [xn = x.node()](Node& self) {
    auto& gx = xn->ensure_grad();
    for (auto& g : gx) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim) {
  const auto sp = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out_shape.empty()) out_shape = {1};
  }
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  const auto& xv = x.values();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.n; ++k)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += xv[(o * sp.n + k) * sp.inner + i];
  return make_result(std::move(out_shape), std::move(out), {x}, "sum_axis", [xn = x.node(), sp](Node& self) {
    auto& gx = xn->ensure_grad();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.n; ++k)
        for (std::size_t i = 0; i < sp.inner; ++i) gx[(o * sp.n + k) * sp.inner + i] += self.grad[o * sp.inner + i];
  });
}

Tensor gather(const Tensor& x, Shape out_shape, std::vector<std::size_t> index) {
  if (numel(out_shape) != index.size()) throw DimensionError("gather: index length does not match output shape");
  const auto& xv = x.values();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= xv.size()) throw IndexError("gather index out of range");
    out[i] = xv[index[i]];
  }
  return make_result(std::move(out_shape), std::move(out), {x}, "gather",
                     [xn = x.node(), index = std::move(index)](Node& self) {
                       auto& gx = xn->ensure_grad();
                       for (std::size_t i = 0; i < index.size(); ++i) gx[index[i]] += self.grad[i];
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size())
    throw DimensionError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return gather(x, std::move(shape), std::move(idx));
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const auto& in = x.shape();
  if (axes.size() != in.size()) throw DimensionError("permute: axis count mismatch");
  std::vector<bool> used(in.size(), false);
  Shape out(in.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= in.size() || used[axes[i]]) throw IndexError("permute: invalid axis list");
    used[axes[i]] = true;
    out[i] = in[axes[i]];
  }
  const auto in_strides = strides_of(in);
  std::vector<std::size_t> perm_strides(in.size());
  for (std::size_t i = 0; i < axes.size(); ++i) perm_strides[i] = in_strides[axes[i]];
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::vector<std::size_t> counter(out.size(), 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    idx[flat] = offset;
    for (std::size_t ax = out.size(); ax-- > 0;) {
      ++counter[ax];
      offset += perm_strides[ax];
      if (counter[ax] < out[ax]) break;
      offset -= perm_strides[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  return gather(x, std::move(out), std::move(idx));
}

Tensor transpose_last(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last needs rank >= 2");
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
  return permute(x, axes);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto sp = split_axis(x.shape(), axis);
  if (begin >= end || end > sp.n) throw IndexError("slice bounds out of range");
  Shape out = x.shape();
  out[axis] = end - begin;
  std::vector<std::size_t> idx;
  idx.reserve(numel(out));
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = begin; k < end; ++k)
      for (std::size_t i = 0; i < sp.inner; ++i) idx.push_back((o * sp.n + k) * sp.inner + i);
  return gather(x, std::move(out), std::move(idx));
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  Shape out = parts.front().shape();
  if (axis >= out.size()) throw IndexError("concat axis out of range");
  out[axis] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != out.size()) throw DimensionError("concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != parts.front().shape()[i]) throw DimensionError("concat extent mismatch");
    out[axis] += s[axis];
  }
  const auto sp = split_axis(out, axis);
  std::vector<double> value(numel(out));
  std::size_t base = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.shape()[axis];
    const auto& pv = p.values();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < len; ++k)
        for (std::size_t i = 0; i < sp.inner; ++i)
          value[(o * sp.n + base + k) * sp.inner + i] = pv[(o * len + k) * sp.inner + i];
    base += len;
  }
  std::vector<std::shared_ptr<Node>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_result(out, std::move(value), parts, "concat", [nodes, sp, axis](Node& self) {
    std::size_t base = 0;
    for (const auto& pn : nodes) {
      const std::size_t len = pn->shape[axis];
      if (auto* g = grad_of(pn))
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t k = 0; k < len; ++k)
            for (std::size_t i = 0; i < sp.inner; ++i)
              (*g)[(o * len + k) * sp.inner + i] += self.grad[(o * sp.n + base + k) * sp.inner + i];
      base += len;
    }
  });
}

namespace {

struct ConvGeometry {
  std::size_t cin, h, w, cout, k, pad, stride, ho, wo;
};

// cols[(c*k + ky)*k + kx, oy*wo + ox] = padded input sample.
RowMat im2col(const std::vector<double>& in, const ConvGeometry& g) {
  RowMat cols = RowMat::Zero(static_cast<Eigen::Index>(g.cin * g.k * g.k), static_cast<Eigen::Index>(g.ho * g.wo));
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const auto row = static_cast<Eigen::Index>((c * g.k + ky) * g.k + kx);
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            cols(row, static_cast<Eigen::Index>(oy * g.wo + ox)) =
                in[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)];
          }
        }
      }
  return cols;
}

void col2im_add(const RowMat& cols, const ConvGeometry& g, std::vector<double>& out) {
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const auto row = static_cast<Eigen::Index>((c * g.k + ky) * g.k + kx);
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            out[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] +=
                cols(row, static_cast<Eigen::Index>(oy * g.wo + ox));
          }
        }
      }
}

bool has_bias(const Tensor& bias) { return !(bias.rank() == 1 && bias.dim(0) == 1 && bias.values()[0] == 0.0 && !bias.requires_grad()); }

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t padding,
              std::size_t stride) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  if (stride == 0) throw DimensionError("conv2d stride must be positive");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), kernel.dim(0), kernel.dim(2), padding, stride, 0, 0};
  if (kernel.dim(1) != g.cin) throw DimensionError("conv2d channel mismatch: input " + to_string(input.shape()) + ", kernel " + to_string(kernel.shape()));
  if (kernel.dim(3) != g.k || g.k % 2 == 0) throw DimensionError("conv2d kernel must be square with odd size");
  const auto span_h = static_cast<std::ptrdiff_t>(g.h + 2 * padding) - static_cast<std::ptrdiff_t>(g.k);
  const auto span_w = static_cast<std::ptrdiff_t>(g.w + 2 * padding) - static_cast<std::ptrdiff_t>(g.k);
  if (span_h < 0 || span_w < 0) throw DimensionError("conv2d output size would be non-positive");
  g.ho = static_cast<std::size_t>(span_h) / stride + 1;
  g.wo = static_cast<std::size_t>(span_w) / stride + 1;
  const bool biased = has_bias(bias);
  if (biased && (bias.rank() != 1 || bias.dim(0) != g.cout)) throw DimensionError("conv2d bias extent mismatch");

  RowMat cols = im2col(input.values(), g);
  ConstMapMat kmat(kernel.values().data(), static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(g.cin * g.k * g.k));
  std::vector<double> out(g.cout * g.ho * g.wo);
  MapMat omat(out.data(), static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(g.ho * g.wo));
  omat.noalias() = kmat * cols;
  if (biased)
    for (std::size_t c = 0; c < g.cout; ++c) omat.row(static_cast<Eigen::Index>(c)).array() += bias.values()[c];

  std::vector<Tensor> inputs{input, kernel};
  if (biased) inputs.push_back(bias);
  return make_result({g.cout, g.ho, g.wo}, std::move(out), inputs, "conv2d",
                     [in = input.node(), kn = kernel.node(), bn = biased ? bias.node() : nullptr, g,
                      cols = std::move(cols)](Node& self) {
                       ConstMapMat gout(self.grad.data(), static_cast<Eigen::Index>(g.cout),
                                        static_cast<Eigen::Index>(g.ho * g.wo));
                       if (auto* gk = grad_of(kn)) {
                         MapMat gkm(gk->data(), static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(g.cin * g.k * g.k));
                         gkm.noalias() += gout * cols.transpose();
                       }
                       if (bn)
                         if (auto* gb = grad_of(bn))
                           for (std::size_t c = 0; c < g.cout; ++c) (*gb)[c] += gout.row(static_cast<Eigen::Index>(c)).sum();
                       if (auto* gi = grad_of(in)) {
                         ConstMapMat kmat(kn->value.data(), static_cast<Eigen::Index>(g.cout),
                                          static_cast<Eigen::Index>(g.cin * g.k * g.k));
                         RowMat gcols = kmat.transpose() * gout;
                         col2im_add(gcols, g, *gi);
                       }
                     });
}

Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t padding) {
  require_rank(input, 3, "depthwise_conv2d input");
  require_rank(kernel, 4, "depthwise_conv2d kernel");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2), k = kernel.dim(2);
  if (kernel.dim(0) != c || kernel.dim(1) != 1 || kernel.dim(3) != k || k % 2 == 0)
    throw DimensionError("depthwise kernel must be [C,1,k,k] with odd k");
  if (h + 2 * padding < k || w + 2 * padding < k) throw DimensionError("depthwise output size would be non-positive");
  const std::size_t ho = h + 2 * padding - k + 1, wo = w + 2 * padding - k + 1;
  const bool biased = has_bias(bias);
  if (biased && (bias.rank() != 1 || bias.dim(0) != c)) throw DimensionError("depthwise bias extent mismatch");
  const auto& x = input.values();
  const auto& kv = kernel.values();
  std::vector<double> out(c * ho * wo, 0.0);
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx)
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              fn((ch * ho + oy) * wo + ox, (ch * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix),
                 (ch * k + ky) * k + kx);
            }
          }
  };
  for_each_tap([&](std::size_t o, std::size_t i, std::size_t t) { out[o] += kv[t] * x[i]; });
  if (biased)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < ho * wo; ++p) out[ch * ho * wo + p] += bias.values()[ch];
  std::vector<Tensor> inputs{input, kernel};
  if (biased) inputs.push_back(bias);
  return make_result({c, ho, wo}, std::move(out), inputs, "depthwise_conv2d",
                     [in = input.node(), kn = kernel.node(), bn = biased ? bias.node() : nullptr, for_each_tap, c,
                      ho, wo](Node& self) {
                       auto* gi = grad_of(in);
                       auto* gk = grad_of(kn);
                       const auto& g = self.grad;
                       for_each_tap([&](std::size_t o, std::size_t i, std::size_t t) {
                         if (gi) (*gi)[i] += g[o] * kn->value[t];
                         if (gk) (*gk)[t] += g[o] * in->value[i];
                       });
                       if (bn)
                         if (auto* gb = grad_of(bn))
                           for (std::size_t ch = 0; ch < c; ++ch)
                             for (std::size_t p = 0; p < ho * wo; ++p) (*gb)[ch] += g[ch * ho * wo + p];
                     });
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride) {
  require_rank(input, 3, "conv_transpose2d input");
  require_rank(kernel, 4, "conv_transpose2d kernel");
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = kernel.dim(1), k = kernel.dim(2);
  if (kernel.dim(0) != cin || kernel.dim(3) != k) throw DimensionError("conv_transpose2d kernel must be [C_in,C_out,k,k]");
  if (stride != k) throw DimensionError("conv_transpose2d supports stride == kernel size only");
  const bool biased = has_bias(bias);
  if (biased && (bias.rank() != 1 || bias.dim(0) != cout)) throw DimensionError("conv_transpose2d bias extent mismatch");
  const auto rows_k = static_cast<Eigen::Index>(cout * k * k);
  const auto hw = static_cast<Eigen::Index>(h * w);
  ConstMapMat xin(input.values().data(), static_cast<Eigen::Index>(cin), hw);
  ConstMapMat kmat(kernel.values().data(), static_cast<Eigen::Index>(cin), rows_k);
  RowMat y = kmat.transpose() * xin;  // [cout*k*k, h*w]
  const std::size_t ho = h * k, wo = w * k;
  std::vector<double> out(cout * ho * wo);
  // (co, a, b, i, j) -> out[co, i*k + a, j*k + b]
  auto out_index = [=](std::size_t co, std::size_t a, std::size_t b, std::size_t i, std::size_t j) {
    return (co * ho + i * k + a) * wo + j * k + b;
  };
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j)
            out[out_index(co, a, b, i, j)] = y(static_cast<Eigen::Index>((co * k + a) * k + b), static_cast<Eigen::Index>(i * w + j)) +
                                             (biased ? bias.values()[co] : 0.0);
  std::vector<Tensor> inputs{input, kernel};
  if (biased) inputs.push_back(bias);
  return make_result({cout, ho, wo}, std::move(out), inputs, "conv_transpose2d",
                     [in = input.node(), kn = kernel.node(), bn = biased ? bias.node() : nullptr, cin, cout, k, h, w,
                      rows_k, hw, out_index](Node& self) {
                       RowMat gy(rows_k, hw);
                       for (std::size_t co = 0; co < cout; ++co)
                         for (std::size_t a = 0; a < k; ++a)
                           for (std::size_t b = 0; b < k; ++b)
                             for (std::size_t i = 0; i < h; ++i)
                               for (std::size_t j = 0; j < w; ++j)
                                 gy(static_cast<Eigen::Index>((co * k + a) * k + b), static_cast<Eigen::Index>(i * w + j)) =
                                     self.grad[out_index(co, a, b, i, j)];
                       if (auto* gi = grad_of(in)) {
                         ConstMapMat kmat(kn->value.data(), static_cast<Eigen::Index>(cin), rows_k);
                         MapMat(gi->data(), static_cast<Eigen::Index>(cin), hw).noalias() += kmat * gy;
                       }
                       if (auto* gk = grad_of(kn)) {
                         ConstMapMat xin(in->value.data(), static_cast<Eigen::Index>(cin), hw);
                         MapMat(gk->data(), static_cast<Eigen::Index>(cin), rows_k).noalias() += xin * gy.transpose();
                       }
                       if (bn)
                         if (auto* gb = grad_of(bn))
                           for (std::size_t co = 0; co < cout; ++co)
                             (*gb)[co] += gy.middleRows(static_cast<Eigen::Index>(co * k * k), static_cast<Eigen::Index>(k * k)).sum();
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() != a.rank()) throw DimensionError("matmul needs equal ranks >= 2");
  const std::size_t r = a.rank();
  const std::size_t m = a.dim(r - 2), k = a.dim(r - 1), n = b.dim(r - 1);
  if (b.dim(r - 2) != k)
    throw DimensionError("matmul inner extent mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < r; ++i) {
    if (a.dim(i) != b.dim(i)) throw DimensionError("matmul batch extents differ");
    batch *= a.dim(i);
  }
  Shape out_shape = a.shape();
  out_shape[r - 1] = n;
  std::vector<double> out(batch * m * n);
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    ConstMapMat am(a.values().data() + bi * m * k, M, K);
    ConstMapMat bm(b.values().data() + bi * k * n, K, N);
    MapMat(out.data() + bi * m * n, M, N).noalias() = am * bm;
  }
  return make_result(std::move(out_shape), std::move(out), {a, b}, "matmul",
                     [an = a.node(), bn = b.node(), batch, m, k, n, M, K, N](Node& self) {
                       auto* ga = grad_of(an);
                       auto* gb = grad_of(bn);
                       for (std::size_t bi = 0; bi < batch; ++bi) {
                         ConstMapMat g(self.grad.data() + bi * m * n, M, N);
                         if (ga) MapMat(ga->data() + bi * m * k, M, K).noalias() += g * ConstMapMat(bn->value.data() + bi * k * n, K, N).transpose();
                         if (gb) MapMat(gb->data() + bi * k * n, K, N).noalias() += ConstMapMat(an->value.data() + bi * m * k, M, K).transpose() * g;
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "linear weight");
  const std::size_t in = weight.dim(0), outd = weight.dim(1);
  if (x.rank() < 1 || x.shape().back() != in)
    throw DimensionError("linear: input " + to_string(x.shape()) + " vs weight " + to_string(weight.shape()));
  const bool biased = has_bias(bias);
  if (biased && (bias.rank() != 1 || bias.dim(0) != outd)) throw DimensionError("linear bias extent mismatch");
  const std::size_t rows = x.size() / in;
  Shape out_shape = x.shape();
  out_shape.back() = outd;
  const auto R = static_cast<Eigen::Index>(rows), I = static_cast<Eigen::Index>(in), O = static_cast<Eigen::Index>(outd);
  std::vector<double> out(rows * outd);
  MapMat om(out.data(), R, O);
  om.noalias() = ConstMapMat(x.values().data(), R, I) * ConstMapMat(weight.values().data(), I, O);
  if (biased) om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), O);
  std::vector<Tensor> inputs{x, weight};
  if (biased) inputs.push_back(bias);
  return make_result(std::move(out_shape), std::move(out), inputs, "linear",
                     [xn = x.node(), wn = weight.node(), bn = biased ? bias.node() : nullptr, R, I, O](Node& self) {
                       ConstMapMat g(self.grad.data(), R, O);
                       if (auto* gx = grad_of(xn))
                         MapMat(gx->data(), R, I).noalias() += g * ConstMapMat(wn->value.data(), I, O).transpose();
                       if (auto* gw = grad_of(wn))
                         MapMat(gw->data(), I, O).noalias() += ConstMapMat(xn->value.data(), R, I).transpose() * g;
                       if (bn)
                         if (auto* gb = grad_of(bn))
                           Eigen::Map<Eigen::RowVectorXd>(gb->data(), O) += g.colwise().sum();
                     });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis);
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto at = [&](std::size_t k) { return (o * sp.n + k) * sp.inner + i; };
      double mx = xv[at(0)];
      for (std::size_t k = 1; k < sp.n; ++k) mx = std::max(mx, xv[at(k)]);
      double s = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) s += (out[at(k)] = std::exp(xv[at(k)] - mx));
      for (std::size_t k = 0; k < sp.n; ++k) out[at(k)] /= s;
    }
  return make_result(x.shape(), out, {x}, "softmax", [xn = x.node(), sp, y = out](Node& self) {
    auto& gx = xn->ensure_grad();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        auto at = [&](std::size_t k) { return (o * sp.n + k) * sp.inner + i; };
        double dot = 0.0;
        for (std::size_t k = 0; k < sp.n; ++k) dot += self.grad[at(k)] * y[at(k)];
        for (std::size_t k = 0; k < sp.n; ++k) gx[at(k)] += y[at(k)] * (self.grad[at(k)] - dot);
      }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::size_t axis, double eps) {
  const auto sp = split_axis(x.shape(), axis);
  if (gamma.size() != sp.n || beta.size() != sp.n)
    throw DimensionError("layer_norm: gamma/beta must have " + std::to_string(sp.n) + " entries");
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  std::vector<double> out(xv.size()), xhat(xv.size()), inv_std(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto at = [&](std::size_t k) { return (o * sp.n + k) * sp.inner + i; };
      double mu = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) mu += xv[at(k)];
      mu /= static_cast<double>(sp.n);
      double var = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) var += (xv[at(k)] - mu) * (xv[at(k)] - mu);
      var /= static_cast<double>(sp.n);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[o * sp.inner + i] = is;
      for (std::size_t k = 0; k < sp.n; ++k) {
        xhat[at(k)] = (xv[at(k)] - mu) * is;
        out[at(k)] = gv[k] * xhat[at(k)] + bv[k];
      }
    }
  return make_result(x.shape(), std::move(out), {x, gamma, beta}, "layer_norm",
                     [xn = x.node(), gn = gamma.node(), bn = beta.node(), sp, xhat = std::move(xhat),
                      inv_std = std::move(inv_std)](Node& self) {
                       auto* gx = grad_of(xn);
                       auto* gg = grad_of(gn);
                       auto* gb = grad_of(bn);
                       const auto& g = self.grad;
                       const double inv_n = 1.0 / static_cast<double>(sp.n);
                       for (std::size_t o = 0; o < sp.outer; ++o)
                         for (std::size_t i = 0; i < sp.inner; ++i) {
                           auto at = [&](std::size_t k) { return (o * sp.n + k) * sp.inner + i; };
                           double m1 = 0.0, m2 = 0.0;
                           for (std::size_t k = 0; k < sp.n; ++k) {
                             const double dxh = g[at(k)] * gn->value[k];
                             m1 += dxh;
                             m2 += dxh * xhat[at(k)];
                             if (gg) (*gg)[k] += g[at(k)] * xhat[at(k)];
                             if (gb) (*gb)[k] += g[at(k)];
                           }
                           if (!gx) continue;
                           m1 *= inv_n;
                           m2 *= inv_n;
                           const double is = inv_std[o * sp.inner + i];
                           for (std::size_t k = 0; k < sp.n; ++k) {
                             const double dxh = g[at(k)] * gn->value[k];
                             (*gx)[at(k)] += is * (dxh - m1 - xhat[at(k)] * m2);
                           }
                         }
                     });
}

}  // namespace bsrkit
