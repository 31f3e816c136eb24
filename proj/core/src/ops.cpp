#include "freehand/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace freehand::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Eigen peels an unaligned head off its vector kernels, so one product on two
// differently aligned heap buffers can differ in the last bit. Products run on
// Eigen-owned (aligned) copies to keep results independent of allocation.
RowMat load(const double* p, std::size_t r, std::size_t c) {
  return ConstMapMat(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

void store(const RowMat& m, double* dst) { std::copy(m.data(), m.data() + m.size(), dst); }

void accumulate(const RowMat& m, double* dst) {
  const double* src = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) dst[i] += src[i];
}

using detail::make_result;
using NodePtr = std::shared_ptr<Node>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// Rank-aligned strides of `in` against `out`, zero where `in` broadcasts.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t ia = in.size() - 1 - k;
    const std::size_t oa = out.size() - 1 - k;
    strides[oa] = in[ia] == 1 && out[oa] != 1 ? 0 : stride;
    stride *= in[ia];
  }
  return strides;
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t ea = k < a.size() ? a[a.size() - 1 - k] : 1;
    const std::size_t eb = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (ea != eb && ea != 1 && eb != 1) shape_error(op, a, b);
    out[rank - 1 - k] = std::max(ea, eb);
  }
  return out;
}

// Visits every output position together with the matching input offsets.
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb,
                        F&& f) {
  const std::size_t rank = out.size();
  const std::size_t total = numel_of(out);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < total; ++o) {
    f(o, ia, ib);
    for (std::size_t k = rank; k-- > 0;) {
      ++idx[k];
      ia += sa[k];
      ib += sb[k];
      if (idx[k] < out[k]) break;
      ia -= sa[k] * out[k];
      ib -= sb[k] * out[k];
      idx[k] = 0;
    }
  }
}

// Binary elementwise op. `fwd(x, y)` gives the value, `dx(x, y)` and `dy(x, y)`
// the partial derivatives.
template <typename Fwd, typename Dx, typename Dy>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Dx dx, Dy dy) {
  const NodePtr& na = a.node();
  const NodePtr& nb = b.node();
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(na->data[i], nb->data[i]);
    return make_result(op, a.shape(), std::move(out), {na, nb}, [na, nb, dx, dy](Node& self) {
      const auto& g = self.grad;
      if (na->requires_grad) {
        auto& ga = na->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dx(na->data[i], nb->data[i]);
      }
      if (nb->requires_grad) {
        auto& gb = nb->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * dy(na->data[i], nb->data[i]);
      }
    });
  }
  Shape out_shape = broadcast_shape(op, a.shape(), b.shape());
  auto sa = broadcast_strides(a.shape(), out_shape);
  auto sb = broadcast_strides(b.shape(), out_shape);
  std::vector<double> out(numel_of(out_shape));
  for_each_broadcast(out_shape, sa, sb,
                     [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = fwd(na->data[ia], nb->data[ib]); });
  return make_result(op, out_shape, std::move(out), {na, nb}, [na, nb, out_shape, sa, sb, dx, dy](Node& self) {
    const auto& g = self.grad;
    std::vector<double>* ga = na->requires_grad ? &na->ensure_grad() : nullptr;
    std::vector<double>* gb = nb->requires_grad ? &nb->ensure_grad() : nullptr;
    for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      const double x = na->data[ia], y = nb->data[ib];
      if (ga) (*ga)[ia] += g[o] * dx(x, y);
      if (gb) (*gb)[ib] += g[o] * dy(x, y);
    });
  });
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  const NodePtr& nx = x.node();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(nx->data[i]);
  return make_result(op, x.shape(), std::move(out), {nx}, [nx, deriv](Node& self) {
    auto& gx = nx->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * deriv(nx->data[i], self.data[i]);
  });
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t k = 0; k < axis; ++k) s.outer *= shape[k];
  s.n = shape[axis];
  for (std::size_t k = axis + 1; k < shape.size(); ++k) s.inner *= shape[k];
  return s;
}

void check_axis(const char* op, const Tensor& x, std::size_t axis) {
  if (axis >= x.dim()) {
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                                shape_str(x.shape()));
  }
}

Shape reduced_shape(const Shape& shape, std::size_t axis, bool keepdim) {
  Shape out = shape;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out.empty()) out.push_back(1);
  }
  return out;
}

void require_rank(const char* op, const Tensor& x, std::size_t rank) {
  if (x.dim() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_str(x.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& a, double s) {
  return unary(
      "scale", a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(
      "add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor abs(const Tensor& x) {
  return unary(
      "abs", x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sum(const Tensor& x) {
  const NodePtr& nx = x.node();
  double s = 0.0;
  for (double v : nx->data) s += v;
  return make_result("sum", {1}, {s}, {nx}, [nx](Node& self) {
    auto& gx = nx->ensure_grad();
    for (auto& g : gx) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim) {
  check_axis("sum", x, axis);
  const NodePtr& nx = x.node();
  const AxisSplit s = split_at(x.shape(), axis);
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.n; ++k)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += nx->data[(o * s.n + k) * s.inner + i];
  return make_result("sum_axis", reduced_shape(x.shape(), axis, keepdim), std::move(out), {nx}, [nx, s](Node& self) {
    auto& gx = nx->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < s.n; ++k)
        for (std::size_t i = 0; i < s.inner; ++i) gx[(o * s.n + k) * s.inner + i] += self.grad[o * s.inner + i];
  });
}

Tensor mean(const Tensor& x, std::size_t axis, bool keepdim) {
  check_axis("mean", x, axis);
  return scale(sum(x, axis, keepdim), 1.0 / static_cast<double>(x.size(axis)));
}

Tensor max(const Tensor& x, std::size_t axis, bool keepdim) {
  check_axis("max", x, axis);
  const NodePtr& nx = x.node();
  const AxisSplit s = split_at(x.shape(), axis);
  std::vector<double> out(s.outer * s.inner);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = (o * s.n) * s.inner + i;
      for (std::size_t k = 1; k < s.n; ++k) {
        const std::size_t idx = (o * s.n + k) * s.inner + i;
        if (nx->data[idx] > nx->data[best]) best = idx;
      }
      out[o * s.inner + i] = nx->data[best];
      arg[o * s.inner + i] = best;
    }
  }
  return make_result("max_axis", reduced_shape(x.shape(), axis, keepdim), std::move(out), {nx},
                     [nx, arg = std::move(arg)](Node& self) {
                       auto& gx = nx->ensure_grad();
                       for (std::size_t j = 0; j < arg.size(); ++j) gx[arg[j]] += self.grad[j];
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  if (a.dim() != 2 || b.dim() != 2) shape_error("matmul", a.shape(), b.shape());
  const std::size_t ar = a.size(0), ac = a.size(1), br = b.size(0), bc = b.size(1);
  const std::size_t m = transpose_a ? ac : ar;
  const std::size_t k = transpose_a ? ar : ac;
  const std::size_t kb = transpose_b ? bc : br;
  const std::size_t n = transpose_b ? br : bc;
  if (k != kb) shape_error("matmul", a.shape(), b.shape());

  const NodePtr& na = a.node();
  const NodePtr& nb = b.node();
  std::vector<double> out(m * n);
  {
    const RowMat A = load(na->data.data(), ar, ac), B = load(nb->data.data(), br, bc);
    RowMat C;
    if (!transpose_a && !transpose_b) C.noalias() = A * B;
    else if (transpose_a && !transpose_b) C.noalias() = A.transpose() * B;
    else if (!transpose_a && transpose_b) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
    store(C, out.data());
  }
  return make_result("matmul", {m, n}, std::move(out), {na, nb},
                     [na, nb, ar, ac, br, bc, m, n, transpose_a, transpose_b](Node& self) {
                       const RowMat G = load(self.grad.data(), m, n);
                       const RowMat A = load(na->data.data(), ar, ac), B = load(nb->data.data(), br, bc);
                       RowMat T;
                       if (na->requires_grad) {
                         // op(B) = B or Bᵀ; dA = G op(B)ᵀ, transposed again when A was.
                         if (!transpose_a) {
                           if (!transpose_b) T.noalias() = G * B.transpose();
                           else T.noalias() = G * B;
                         } else {
                           if (!transpose_b) T.noalias() = B * G.transpose();
                           else T.noalias() = B.transpose() * G.transpose();
                         }
                         accumulate(T, na->ensure_grad().data());
                       }
                       if (nb->requires_grad) {
                         if (!transpose_b) {
                           if (!transpose_a) T.noalias() = A.transpose() * G;
                           else T.noalias() = A * G;
                         } else {
                           if (!transpose_a) T.noalias() = G.transpose() * A;
                           else T.noalias() = G.transpose() * A.transpose();
                         }
                         accumulate(T, nb->ensure_grad().data());
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tensor y = matmul(x, weight, false, true);
  if (bias.defined()) y = add(y, bias);
  return y;
}

namespace {

struct ConvGeom {
  std::size_t n, c, h, w, o, kh, kw, stride, pad, ho, wo;
};

void im2col(const double* x, const ConvGeom& g, double* col) {
  const std::size_t cols = g.ho * g.wo;
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = col + ((ci * g.kh + i) * g.kw + j) * cols;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t xx =
                static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = y >= 0 && y < static_cast<std::ptrdiff_t>(g.h) && xx >= 0 &&
                                xx < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.wo + ox] =
                inside ? x[(ci * g.h + static_cast<std::size_t>(y)) * g.w + static_cast<std::size_t>(xx)] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeom& g, double* dx) {
  const std::size_t cols = g.ho * g.wo;
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = col + ((ci * g.kh + i) * g.kw + j) * cols;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t xx =
                static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(g.w)) continue;
            dx[(ci * g.h + static_cast<std::size_t>(y)) * g.w + static_cast<std::size_t>(xx)] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opt) {
  require_rank("conv2d input", x, 4);
  require_rank("conv2d weight", weight, 4);
  if (x.size(1) != weight.size(1)) shape_error("conv2d", x.shape(), weight.shape());
  if (opt.stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  ConvGeom g{x.size(0), x.size(1), x.size(2), x.size(3), weight.size(0), weight.size(2), weight.size(3),
             opt.stride, opt.padding, 0, 0};
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) shape_error("conv2d", x.shape(), weight.shape());
  g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
  if (bias.defined() && (bias.dim() != 1 || bias.size(0) != g.o)) shape_error("conv2d bias", bias.shape(), weight.shape());

  const NodePtr& nx = x.node();
  const NodePtr& nw = weight.node();
  const NodePtr nb = bias.defined() ? bias.node() : nullptr;
  const std::size_t ckk = g.c * g.kh * g.kw;
  const std::size_t cols = g.ho * g.wo;
  std::vector<double> out(g.n * g.o * cols);
  RowMat col(ckk, cols), y;
  const RowMat W = load(nw->data.data(), g.o, ckk);
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(nx->data.data() + n * g.c * g.h * g.w, g, col.data());
    y.noalias() = W * col;
    double* dst = out.data() + n * g.o * cols;
    store(y, dst);
    if (nb) {
      for (std::size_t oc = 0; oc < g.o; ++oc)
        for (std::size_t j = 0; j < cols; ++j) dst[oc * cols + j] += nb->data[oc];
    }
  }
  std::vector<NodePtr> inputs{nx, nw};
  if (nb) inputs.push_back(nb);
  return make_result("conv2d", {g.n, g.o, g.ho, g.wo}, std::move(out), std::move(inputs), [nx, nw, nb, g](Node& self) {
    const std::size_t ckk = g.c * g.kh * g.kw;
    const std::size_t cols = g.ho * g.wo;
    RowMat col(ckk, cols), t;
    const RowMat W = load(nw->data.data(), g.o, ckk);
    for (std::size_t n = 0; n < g.n; ++n) {
      const double* gp = self.grad.data() + n * g.o * cols;
      const RowMat G = load(gp, g.o, cols);
      if (nw->requires_grad) {
        im2col(nx->data.data() + n * g.c * g.h * g.w, g, col.data());
        t.noalias() = G * col.transpose();
        accumulate(t, nw->ensure_grad().data());
      }
      if (nb && nb->requires_grad) {
        auto& gb = nb->ensure_grad();
        for (std::size_t oc = 0; oc < g.o; ++oc)
          for (std::size_t j = 0; j < cols; ++j) gb[oc] += gp[oc * cols + j];
      }
      if (nx->requires_grad) {
        t.noalias() = W.transpose() * G;
        col2im(t.data(), g, nx->ensure_grad().data() + n * g.c * g.h * g.w);
      }
    }
  });
}

Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  require_rank("max_pool2d", x, 4);
  const std::size_t n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  if (kernel == 0 || stride == 0 || kernel > h || kernel > w) {
    throw std::invalid_argument("max_pool2d: kernel " + std::to_string(kernel) + " invalid for " + shape_str(x.shape()));
  }
  const std::size_t ho = (h - kernel) / stride + 1, wo = (w - kernel) / stride + 1;
  const NodePtr& nx = x.node();
  std::vector<double> out(n * c * ho * wo);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = nx->data.data() + p * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (oy * stride) * w + ox * stride;
        for (std::size_t i = 0; i < kernel; ++i)
          for (std::size_t j = 0; j < kernel; ++j) {
            const std::size_t idx = (oy * stride + i) * w + ox * stride + j;
            if (src[idx] > src[best]) best = idx;
          }
        const std::size_t o = (p * ho + oy) * wo + ox;
        out[o] = src[best];
        arg[o] = p * h * w + best;
      }
    }
  }
  return make_result("max_pool2d", {n, c, ho, wo}, std::move(out), {nx}, [nx, arg = std::move(arg)](Node& self) {
    auto& gx = nx->ensure_grad();
    for (std::size_t o = 0; o < arg.size(); ++o) gx[arg[o]] += self.grad[o];
  });
}

namespace {

// Average pooling over arbitrary rectangular bins.
struct Bin {
  std::size_t y0, y1, x0, x1;
};

Tensor pool_bins(const char* op, const Tensor& x, std::size_t ho, std::size_t wo, std::vector<Bin> bins) {
  const std::size_t n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  const NodePtr& nx = x.node();
  std::vector<double> out(n * c * ho * wo);
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = nx->data.data() + p * h * w;
    for (std::size_t b = 0; b < bins.size(); ++b) {
      const Bin& bin = bins[b];
      double s = 0.0;
      for (std::size_t y = bin.y0; y < bin.y1; ++y)
        for (std::size_t xx = bin.x0; xx < bin.x1; ++xx) s += src[y * w + xx];
      out[p * ho * wo + b] = s / static_cast<double>((bin.y1 - bin.y0) * (bin.x1 - bin.x0));
    }
  }
  return make_result(op, {n, c, ho, wo}, std::move(out), {nx}, [nx, bins = std::move(bins), n, c, h, w, ho, wo](Node& self) {
    auto& gx = nx->ensure_grad();
    for (std::size_t p = 0; p < n * c; ++p) {
      for (std::size_t b = 0; b < bins.size(); ++b) {
        const Bin& bin = bins[b];
        const double g = self.grad[p * ho * wo + b] / static_cast<double>((bin.y1 - bin.y0) * (bin.x1 - bin.x0));
        for (std::size_t y = bin.y0; y < bin.y1; ++y)
          for (std::size_t xx = bin.x0; xx < bin.x1; ++xx) gx[p * h * w + y * w + xx] += g;
      }
    }
  });
}

}  // namespace

Tensor avg_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  require_rank("avg_pool2d", x, 4);
  const std::size_t h = x.size(2), w = x.size(3);
  if (kernel == 0 || stride == 0 || kernel > h || kernel > w) {
    throw std::invalid_argument("avg_pool2d: kernel " + std::to_string(kernel) + " invalid for " + shape_str(x.shape()));
  }
  const std::size_t ho = (h - kernel) / stride + 1, wo = (w - kernel) / stride + 1;
  std::vector<Bin> bins;
  for (std::size_t oy = 0; oy < ho; ++oy)
    for (std::size_t ox = 0; ox < wo; ++ox)
      bins.push_back({oy * stride, oy * stride + kernel, ox * stride, ox * stride + kernel});
  return pool_bins("avg_pool2d", x, ho, wo, std::move(bins));
}

Tensor adaptive_avg_pool2d(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_rank("adaptive_avg_pool2d", x, 4);
  const std::size_t h = x.size(2), w = x.size(3);
  if (out_h == 0 || out_w == 0 || out_h > h || out_w > w) {
    throw std::invalid_argument("adaptive_avg_pool2d: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                                " invalid for " + shape_str(x.shape()));
  }
  std::vector<Bin> bins;
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const std::size_t y0 = oy * h / out_h, y1 = ((oy + 1) * h + out_h - 1) / out_h;
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const std::size_t x0 = ox * w / out_w, x1 = ((ox + 1) * w + out_w - 1) / out_w;
      bins.push_back({y0, y1, x0, x1});
    }
  }
  return pool_bins("adaptive_avg_pool2d", x, out_h, out_w, std::move(bins));
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  check_axis("concat", parts[0], axis);
  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.dim() != parts[0].dim()) shape_error("concat", parts[0].shape(), p.shape());
    for (std::size_t k = 0; k < p.dim(); ++k) {
      if (k != axis && p.size(k) != parts[0].size(k)) shape_error("concat", parts[0].shape(), p.shape());
    }
    out_shape[axis] += p.size(axis);
  }
  const AxisSplit s = split_at(out_shape, axis);
  std::vector<double> out(numel_of(out_shape));
  std::vector<NodePtr> inputs;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.size(axis);
    const auto& src = p.node()->data;
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * len * s.inner), len * s.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * s.n + offset) * s.inner));
    inputs.push_back(p.node());
    offsets.push_back(offset);
    offset += len;
  }
  auto captured = inputs;
  return make_result("concat", out_shape, std::move(out), std::move(inputs),
                     [captured, offsets, s, axis](Node& self) {
                       for (std::size_t pi = 0; pi < captured.size(); ++pi) {
                         Node& in = *captured[pi];
                         if (!in.requires_grad) continue;
                         const std::size_t len = in.shape[axis];
                         auto& g = in.ensure_grad();
                         for (std::size_t o = 0; o < s.outer; ++o)
                           for (std::size_t q = 0; q < len * s.inner; ++q)
                             g[o * len * s.inner + q] += self.grad[(o * s.n + offsets[pi]) * s.inner + q];
                       }
                     });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (numel_of(shape) != x.numel()) shape_error("reshape", x.shape(), shape);
  const NodePtr& nx = x.node();
  return make_result("reshape", shape, nx->data, {nx}, [nx](Node& self) {
    auto& gx = nx->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const std::size_t rank = x.dim();
  if (order.size() != rank) throw std::invalid_argument("permute: order length does not match " + shape_str(x.shape()));
  std::vector<bool> seen(rank, false);
  for (auto a : order) {
    if (a >= rank || seen[a]) throw std::invalid_argument("permute: invalid axis order for " + shape_str(x.shape()));
    seen[a] = true;
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t k = rank - 1; k-- > 0;) in_strides[k] = in_strides[k + 1] * x.size(k + 1);
  Shape out_shape(rank);
  std::vector<std::size_t> gather(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    out_shape[k] = x.size(order[k]);
    gather[k] = in_strides[order[k]];
  }
  // source offset for every output element
  std::vector<std::size_t> src_index(x.numel());
  std::vector<std::size_t> zero(rank, 0);
  for_each_broadcast(out_shape, gather, zero, [&](std::size_t o, std::size_t i, std::size_t) { src_index[o] = i; });
  const NodePtr& nx = x.node();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = nx->data[src_index[o]];
  return make_result("permute", out_shape, std::move(out), {nx}, [nx, src_index = std::move(src_index)](Node& self) {
    auto& gx = nx->ensure_grad();
    for (std::size_t o = 0; o < src_index.size(); ++o) gx[src_index[o]] += self.grad[o];
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  check_axis("slice", x, axis);
  if (length == 0 || start + length > x.size(axis)) {
    throw std::invalid_argument("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                                ") out of bounds for " + shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const NodePtr& nx = x.node();
  std::vector<double> out(s.outer * length * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(nx->data.begin() + static_cast<std::ptrdiff_t>((o * s.n + start) * s.inner), length * s.inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * length * s.inner));
  return make_result("slice", out_shape, std::move(out), {nx}, [nx, s, start, length](Node& self) {
    auto& gx = nx->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t q = 0; q < length * s.inner; ++q)
        gx[(o * s.n + start) * s.inner + q] += self.grad[o * length * s.inner + q];
  });
}

Tensor index_select(const Tensor& x, std::size_t axis, const std::vector<std::size_t>& indices) {
  check_axis("index_select", x, axis);
  if (indices.empty()) throw std::invalid_argument("index_select: empty index list");
  for (auto i : indices) {
    if (i >= x.size(axis)) {
      throw std::invalid_argument("index_select: index " + std::to_string(i) + " out of range for " +
                                  shape_str(x.shape()));
    }
  }
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = indices.size();
  const NodePtr& nx = x.node();
  const std::size_t m = indices.size();
  std::vector<double> out(s.outer * m * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < m; ++j)
      std::copy_n(nx->data.begin() + static_cast<std::ptrdiff_t>((o * s.n + indices[j]) * s.inner), s.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * m + j) * s.inner));
  return make_result("index_select", out_shape, std::move(out), {nx}, [nx, s, indices, m](Node& self) {
    auto& gx = nx->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t i = 0; i < s.inner; ++i)
          gx[(o * s.n + indices[j]) * s.inner + i] += self.grad[(o * m + j) * s.inner + i];
  });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (broadcast_shape("broadcast_to", x.shape(), shape) != shape) shape_error("broadcast_to", x.shape(), shape);
  auto sx = broadcast_strides(x.shape(), shape);
  std::vector<std::size_t> zero(shape.size(), 0);
  const NodePtr& nx = x.node();
  std::vector<double> out(numel_of(shape));
  for_each_broadcast(shape, sx, zero, [&](std::size_t o, std::size_t i, std::size_t) { out[o] = nx->data[i]; });
  return make_result("broadcast_to", shape, std::move(out), {nx}, [nx, shape, sx, zero](Node& self) {
    auto& gx = nx->ensure_grad();
    for_each_broadcast(shape, sx, zero, [&](std::size_t o, std::size_t i, std::size_t) { gx[i] += self.grad[o]; });
  });
}

Tensor cosine_similarity_rows(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("cosine_similarity", a.shape(), b.shape());
  const std::size_t d = a.shape().back();
  const std::size_t rows = a.numel() / d;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  if (out_shape.empty()) out_shape.push_back(1);
  const NodePtr& na = a.node();
  const NodePtr& nb = b.node();
  std::vector<double> out(rows), norm_a(rows), norm_b(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double x = na->data[r * d + k], y = nb->data[r * d + k];
      dot += x * y;
      aa += x * x;
      bb += y * y;
    }
    norm_a[r] = std::sqrt(aa);
    norm_b[r] = std::sqrt(bb);
    out[r] = norm_a[r] > 0.0 && norm_b[r] > 0.0 ? dot / (norm_a[r] * norm_b[r]) : 0.0;
  }
  return make_result("cosine_similarity", out_shape, out, {na, nb}, [na, nb, d, rows, norm_a, norm_b, out](Node& self) {
    std::vector<double>* ga = na->requires_grad ? &na->ensure_grad() : nullptr;
    std::vector<double>* gb = nb->requires_grad ? &nb->ensure_grad() : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      if (!(norm_a[r] > 0.0 && norm_b[r] > 0.0)) continue;
      const double g = self.grad[r];
      const double inv_ab = 1.0 / (norm_a[r] * norm_b[r]);
      const double ca = out[r] / (norm_a[r] * norm_a[r]);
      const double cb = out[r] / (norm_b[r] * norm_b[r]);
      for (std::size_t k = 0; k < d; ++k) {
        const double x = na->data[r * d + k], y = nb->data[r * d + k];
        if (ga) (*ga)[r * d + k] += g * (y * inv_ab - ca * x);
        if (gb) (*gb)[r * d + k] += g * (x * inv_ab - cb * y);
      }
    }
  });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) shape_error("cosine_similarity", a.shape(), b.shape());
  return cosine_similarity_rows(reshape(a, {1, a.numel()}), reshape(b, {1, b.numel()}));
}

Tensor l2_distance_rows(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("l2_distance", a.shape(), b.shape());
  const std::size_t d = a.shape().back();
  const std::size_t rows = a.numel() / d;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  if (out_shape.empty()) out_shape.push_back(1);
  const NodePtr& na = a.node();
  const NodePtr& nb = b.node();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = na->data[r * d + k] - nb->data[r * d + k];
      s += diff * diff;
    }
    out[r] = std::sqrt(s);
  }
  return make_result("l2_distance", out_shape, out, {na, nb}, [na, nb, d, rows, out](Node& self) {
    std::vector<double>* ga = na->requires_grad ? &na->ensure_grad() : nullptr;
    std::vector<double>* gb = nb->requires_grad ? &nb->ensure_grad() : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      if (!(out[r] > 0.0)) continue;
      const double g = self.grad[r] / out[r];
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = na->data[r * d + k] - nb->data[r * d + k];
        if (ga) (*ga)[r * d + k] += g * diff;
        if (gb) (*gb)[r * d + k] -= g * diff;
      }
    }
  });
}

std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h, const Tensor& c, const LstmWeights& w) {
  require_rank("lstm_cell x", x, 2);
  require_rank("lstm_cell h", h, 2);
  const std::size_t hidden = h.size(1);
  if (c.shape() != h.shape()) shape_error("lstm_cell state", h.shape(), c.shape());
  if (w.w_ih.dim() != 2 || w.w_ih.size(0) != 4 * hidden || w.w_ih.size(1) != x.size(1)) {
    shape_error("lstm_cell w_ih", w.w_ih.shape(), x.shape());
  }
  if (w.w_hh.dim() != 2 || w.w_hh.size(0) != 4 * hidden || w.w_hh.size(1) != hidden) {
    shape_error("lstm_cell w_hh", w.w_hh.shape(), h.shape());
  }
  Tensor gates = add(linear(x, w.w_ih, w.bias), matmul(h, w.w_hh, false, true));
  Tensor i = sigmoid(slice(gates, 1, 0, hidden));
  Tensor f = sigmoid(slice(gates, 1, hidden, hidden));
  Tensor g = tanh(slice(gates, 1, 2 * hidden, hidden));
  Tensor o = sigmoid(slice(gates, 1, 3 * hidden, hidden));
  Tensor c_next = add(mul(f, c), mul(i, g));
  Tensor h_next = mul(o, tanh(c_next));
  return {h_next, c_next};
}

}  // namespace freehand::ad
