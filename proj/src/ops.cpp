// SPDX-License-Identifier: Apache-2.0
#include "tds/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

namespace tds {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

using detail::grad_sink;
using detail::make_result;

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.defined() && b.defined(), std::string(op) + ": undefined operand");
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

std::size_t resolve_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  require(a >= 0 && a < r, "axis " + std::to_string(axis) + " out of range");
  return static_cast<std::size_t>(a);
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename F, typename D>
Tensor unary(const char* op, const Tensor& a, F forward, D derivative) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = forward(x[i]);
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result(op, a.shape(), std::move(out), {a},
                     [a, y, derivative](std::span<const double> g) {
                       double* ga = grad_sink(a);
                       const auto x = a.data();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         ga[i] += g[i] * derivative(x[i], (*y)[i]);
                     });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result("add", a.shape(), std::move(out), {a, b},
                     [a, b](std::span<const double> g) {
                       if (double* ga = grad_sink(a))
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       if (double* gb = grad_sink(b))
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result("sub", a.shape(), std::move(out), {a, b},
                     [a, b](std::span<const double> g) {
                       if (double* ga = grad_sink(a))
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       if (double* gb = grad_sink(b))
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result("mul", a.shape(), std::move(out), {a, b},
                     [a, b](std::span<const double> g) {
                       const auto x = a.data(), y = b.data();
                       if (double* ga = grad_sink(a))
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
                       if (double* gb = grad_sink(b))
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
                     });
}

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double x) { return factor * x; },
               [factor](double, double) { return factor; });
}

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary("sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result("sum", {1}, {s}, {a}, [a](std::span<const double> g) {
    double* ga = grad_sink(a);
    for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += g[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor reshape(const Tensor& a, Shape shape) {
  require(numel_of(shape) == a.numel(),
          "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {a},
                     [a](std::span<const double> g) {
                       double* ga = grad_sink(a);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                     });
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, "transpose: rank-2 input required, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  Map(out.data(), n, m) = MapC(a.data().data(), m, n).transpose();
  return make_result("transpose", {n, m}, std::move(out), {a},
                     [a, m, n](std::span<const double> g) {
                       Map(grad_sink(a), m, n) += MapC(g.data(), n, m).transpose();
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  Map(out.data(), m, n).noalias() = MapC(a.data().data(), m, k) * MapC(b.data().data(), k, n);
  return make_result("matmul", {m, n}, std::move(out), {a, b},
                     [a, b, m, k, n](std::span<const double> g) {
                       MapC gm(g.data(), m, n);
                       if (double* ga = grad_sink(a))
                         Map(ga, m, k).noalias() += gm * MapC(b.data().data(), k, n).transpose();
                       if (double* gb = grad_sink(b))
                         Map(gb, k, n).noalias() += MapC(a.data().data(), m, k).transpose() * gm;
                     });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.defined() && w.defined() && w.rank() == 2, "linear: weight must be rank 2");
  const std::size_t n_in = w.dim(0), n_out = w.dim(1);
  require(x.shape().back() == n_in,
          "linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  if (b.defined()) {
    require(b.rank() == 1 && b.dim(0) == n_out,
            "linear: bias " + shape_str(b.shape()) + " vs n_out " + std::to_string(n_out));
  }
  const std::size_t rows = x.numel() / n_in;
  std::vector<double> out(rows * n_out);
  Map om(out.data(), rows, n_out);
  om.noalias() = MapC(x.data().data(), rows, n_in) * MapC(w.data().data(), n_in, n_out);
  if (b.defined()) om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data().data(), n_out);
  Shape shape = x.shape();
  shape.back() = n_out;
  std::vector<Tensor> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return make_result("linear", std::move(shape), std::move(out), std::move(parents),
                     [x, w, b, rows, n_in, n_out](std::span<const double> g) {
                       MapC gm(g.data(), rows, n_out);
                       if (double* gx = grad_sink(x))
                         Map(gx, rows, n_in).noalias() +=
                             gm * MapC(w.data().data(), n_in, n_out).transpose();
                       if (double* gw = grad_sink(w))
                         Map(gw, n_in, n_out).noalias() +=
                             MapC(x.data().data(), rows, n_in).transpose() * gm;
                       if (b.defined())
                         if (double* gb = grad_sink(b))
                           Map(gb, 1, n_out) += gm.colwise().sum();
                     });
}

std::size_t conv_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
  require(stride >= 1, "conv: stride must be >= 1");
  const std::size_t padded = length + 2 * padding;
  require(padded >= kernel, "conv: input of length " + std::to_string(length) +
                                " too short for kernel " + std::to_string(kernel));
  return (padded - kernel) / stride + 1;
}

Tensor conv2d_time(const Tensor& x, const Tensor& weight, const Tensor& bias,
                   std::size_t stride, std::size_t padding, Lengths lengths) {
  require(x.defined() && weight.defined(), "conv2d_time: undefined operand");
  require(x.rank() == 3 || x.rank() == 4,
          "conv2d_time: input must be [T,w,c] or [B,T,w,c], got " + shape_str(x.shape()));
  require(weight.rank() == 3, "conv2d_time: weight must be [k,c_in,c_out]");
  const bool batched = x.rank() == 4;
  const std::size_t B = batched ? x.dim(0) : 1;
  const std::size_t T = x.dim(batched ? 1 : 0);
  const std::size_t W = x.dim(batched ? 2 : 1);
  const std::size_t ci = x.dim(batched ? 3 : 2);
  const std::size_t k = weight.dim(0);
  const std::size_t co = weight.dim(2);
  require(weight.dim(1) == ci, "conv2d_time: weight " + shape_str(weight.shape()) +
                                   " does not match input channels " + std::to_string(ci));
  if (bias.defined()) require(bias.rank() == 1 && bias.dim(0) == co, "conv2d_time: bias shape");
  require(lengths.empty() || (batched && lengths.size() == B),
          "conv2d_time: lengths need a batch axis with one entry per example");

  const std::size_t t_out = conv_output_length(T, k, stride, padding);
  std::vector<std::size_t> in_len(B, T), out_len(B, t_out);
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    require(lengths[b] >= 1 && lengths[b] <= T, "conv2d_time: invalid length");
    in_len[b] = lengths[b];
    out_len[b] = conv_output_length(lengths[b], k, stride, padding);
  }

  const std::size_t in_row = W * ci, out_row = W * co;
  std::vector<double> out(B * t_out * out_row, 0.0);
  const double* xd = x.data().data();
  const double* wd = weight.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < out_len[b]; ++t) {
      Map om(out.data() + (b * t_out + t) * out_row, W, co);
      if (bias.defined()) om.rowwise() = Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), co);
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + j) -
                                   static_cast<std::ptrdiff_t>(padding);
        if (src < 0 || static_cast<std::size_t>(src) >= in_len[b]) continue;
        om.noalias() += MapC(xd + (b * T + src) * in_row, W, ci) * MapC(wd + j * ci * co, ci, co);
      }
    }
  }

  Shape shape = batched ? Shape{B, t_out, W, co} : Shape{t_out, W, co};
  std::vector<Tensor> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result(
      "conv2d_time", std::move(shape), std::move(out), std::move(parents),
      [=](std::span<const double> g) {
        double* gx = grad_sink(x);
        double* gw = grad_sink(weight);
        double* gb = bias.defined() ? grad_sink(bias) : nullptr;
        const double* xd = x.data().data();
        const double* wd = weight.data().data();
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t t = 0; t < out_len[b]; ++t) {
            MapC gm(g.data() + (b * t_out + t) * out_row, W, co);
            if (gb) Map(gb, 1, co) += gm.colwise().sum();
            for (std::size_t j = 0; j < k; ++j) {
              const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + j) -
                                         static_cast<std::ptrdiff_t>(padding);
              if (src < 0 || static_cast<std::size_t>(src) >= in_len[b]) continue;
              const std::size_t off = (b * T + src) * in_row;
              if (gx)
                Map(gx + off, W, ci).noalias() += gm * MapC(wd + j * ci * co, ci, co).transpose();
              if (gw)
                Map(gw + j * ci * co, ci, co).noalias() += MapC(xd + off, W, ci).transpose() * gm;
            }
          }
        }
      });
}

Tensor layer_norm_example(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps,
                          Lengths lengths) {
  require(x.defined() && gain.defined() && bias.defined(), "layer_norm: undefined operand");
  require(gain.numel() == 1 && bias.numel() == 1, "layer_norm: gain and bias are scalars");
  require(eps > 0.0, "layer_norm: eps must be positive");
  std::size_t B = 1, T = 1, row = x.numel();
  std::vector<std::size_t> valid{1};
  if (!lengths.empty()) {
    require(x.rank() >= 2 && lengths.size() == x.dim(0),
            "layer_norm: lengths need [B,T,...] input with one entry per example");
    B = x.dim(0);
    T = x.dim(1);
    row = x.numel() / (B * T);
    valid.assign(lengths.begin(), lengths.end());
    for (auto l : valid) require(l >= 1 && l <= T, "layer_norm: invalid length");
  }
  const std::size_t example = T * row;
  const double g = gain.item(), beta = bias.item();
  const auto xd = x.data();

  std::vector<double> out(x.numel(), 0.0);
  auto xhat = std::make_shared<std::vector<double>>(x.numel(), 0.0);
  auto inv_std = std::make_shared<std::vector<double>>(B);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t n = valid[b] * row, base = b * example;
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += xd[base + i];
    mu /= static_cast<double>(n);
    // second pass removes the rounding error of the first
    double resid = 0.0;
    for (std::size_t i = 0; i < n; ++i) resid += xd[base + i] - mu;
    mu += resid / static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = xd[base + i] - mu;
      var += c * c;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[b] = is;
    for (std::size_t i = 0; i < n; ++i) {
      const double h = (xd[base + i] - mu) * is;
      (*xhat)[base + i] = h;
      out[base + i] = g * h + beta;
    }
  }
  return make_result(
      "layer_norm_example", x.shape(), std::move(out), {x, gain, bias},
      [=](std::span<const double> gy) {
        double* gx = grad_sink(x);
        double* gg = grad_sink(gain);
        double* gbeta = grad_sink(bias);
        const double gval = gain.item();
        for (std::size_t b = 0; b < B; ++b) {
          const std::size_t n = valid[b] * row, base = b * example;
          double s_dy = 0.0, s_dy_xh = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            s_dy += gy[base + i];
            s_dy_xh += gy[base + i] * (*xhat)[base + i];
          }
          if (gg) gg[0] += s_dy_xh;
          if (gbeta) gbeta[0] += s_dy;
          if (gx) {
            const double inv_n = 1.0 / static_cast<double>(n);
            const double m1 = gval * s_dy * inv_n, m2 = gval * s_dy_xh * inv_n;
            const double is = (*inv_std)[b];
            for (std::size_t i = 0; i < n; ++i) {
              gx[base + i] += is * (gval * gy[base + i] - m1 - (*xhat)[base + i] * m2);
            }
          }
        }
      });
}

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = resolve_axis(axis, x.rank());
  const auto s = split_axis(x.shape(), ax);
  const auto xd = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = xd[base];
      for (std::size_t i = 1; i < s.n; ++i) mx = std::max(mx, xd[base + i * s.inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) {
        const double e = std::exp(xd[base + i * s.inner] - mx);
        out[base + i * s.inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < s.n; ++i) out[base + i * s.inner] /= z;
    }
  }
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result("softmax", x.shape(), std::move(out), {x},
                     [x, y, s](std::span<const double> g) {
                       double* gx = grad_sink(x);
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         for (std::size_t in = 0; in < s.inner; ++in) {
                           const std::size_t base = o * s.n * s.inner + in;
                           double dot = 0.0;
                           for (std::size_t i = 0; i < s.n; ++i) {
                             const std::size_t idx = base + i * s.inner;
                             dot += g[idx] * (*y)[idx];
                           }
                           for (std::size_t i = 0; i < s.n; ++i) {
                             const std::size_t idx = base + i * s.inner;
                             gx[idx] += (*y)[idx] * (g[idx] - dot);
                           }
                         }
                       }
                     });
}

Tensor log_softmax(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  const auto xd = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(row[i] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] = row[i] - lse;
  }
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result("log_softmax", x.shape(), std::move(out), {x},
                     [x, y, rows, n](std::span<const double> g) {
                       double* gx = grad_sink(x);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double gs = 0.0;
                         for (std::size_t i = 0; i < n; ++i) gs += g[r * n + i];
                         for (std::size_t i = 0; i < n; ++i) {
                           const std::size_t idx = r * n + i;
                           gx[idx] += g[idx] - std::exp((*y)[idx]) * gs;
                         }
                       }
                     });
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw std::invalid_argument("dropout: p must be in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  for (auto& m : *mask) m = rng.uniform() < p ? 0.0 : keep_scale;
  const auto xd = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * (*mask)[i];
  return make_result("dropout", x.shape(), std::move(out), {x},
                     [x, mask](std::span<const double> g) {
                       double* gx = grad_sink(x);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
                     });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  require(!parts.empty(), "concat: no inputs");
  const std::size_t ax = resolve_axis(axis, parts[0].rank());
  Shape shape = parts[0].shape();
  shape[ax] = 0;
  for (const auto& p : parts) {
    require(p.rank() == shape.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i != ax) require(p.dim(i) == shape[i], "concat: shape mismatch on non-concat axis");
    }
    shape[ax] += p.dim(ax);
  }
  const auto s = split_axis(shape, ax);
  std::vector<double> out(numel_of(shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t chunk = p.dim(ax) * s.inner;
    const auto pd = p.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(pd.data() + o * chunk, chunk, out.data() + o * s.n * s.inner + off * s.inner);
    }
    off += p.dim(ax);
  }
  return make_result("concat", std::move(shape), std::move(out), parts,
                     [parts, offsets, s, ax](std::span<const double> g) {
                       for (std::size_t pi = 0; pi < parts.size(); ++pi) {
                         double* gp = grad_sink(parts[pi]);
                         if (!gp) continue;
                         const std::size_t chunk = parts[pi].dim(ax) * s.inner;
                         for (std::size_t o = 0; o < s.outer; ++o) {
                           const double* src = g.data() + o * s.n * s.inner + offsets[pi] * s.inner;
                           double* dst = gp + o * chunk;
                           for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = resolve_axis(axis, x.rank());
  require(length >= 1 && start + length <= x.dim(ax),
          "slice: [" + std::to_string(start) + ", +" + std::to_string(length) +
              ") out of range for " + shape_str(x.shape()));
  const auto s = split_axis(x.shape(), ax);
  Shape shape = x.shape();
  shape[ax] = length;
  const std::size_t chunk = length * s.inner;
  std::vector<double> out(s.outer * chunk);
  const auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xd.data() + o * s.n * s.inner + start * s.inner, chunk, out.data() + o * chunk);
  }
  return make_result("slice", std::move(shape), std::move(out), {x},
                     [x, s, start, chunk](std::span<const double> g) {
                       double* gx = grad_sink(x);
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         double* dst = gx + o * s.n * s.inner + start * s.inner;
                         for (std::size_t i = 0; i < chunk; ++i) dst[i] += g[o * chunk + i];
                       }
                     });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require(table.rank() == 2, "embedding: table must be rank 2");
  require(!ids.empty(), "embedding: no ids");
  const std::size_t n = table.dim(0), d = table.dim(1);
  std::vector<int> idv(ids.begin(), ids.end());
  std::vector<double> out(idv.size() * d);
  for (std::size_t i = 0; i < idv.size(); ++i) {
    if (idv[i] < 0 || static_cast<std::size_t>(idv[i]) >= n) {
      throw std::out_of_range("embedding: token id " + std::to_string(idv[i]) +
                              " outside table of " + std::to_string(n));
    }
    std::copy_n(table.data().data() + idv[i] * d, d, out.data() + i * d);
  }
  return make_result("embedding", {idv.size(), d}, std::move(out), {table},
                     [table, idv, d](std::span<const double> g) {
                       double* gt = grad_sink(table);
                       for (std::size_t i = 0; i < idv.size(); ++i)
                         for (std::size_t j = 0; j < d; ++j) gt[idv[i] * d + j] += g[i * d + j];
                     });
}

Tensor label_smoothed_loss(const Tensor& log_probs, std::span<const int> targets, double eps) {
  if (!(eps >= 0.0 && eps < 1.0)) {
    throw std::invalid_argument("label_smoothed_loss: eps must be in [0, 1)");
  }
  require(log_probs.rank() == 2 && log_probs.dim(0) == targets.size(),
          "label_smoothed_loss: log_probs " + shape_str(log_probs.shape()) + " vs " +
              std::to_string(targets.size()) + " targets");
  const std::size_t U = log_probs.dim(0), V = log_probs.dim(1);
  require(V >= 2 || eps == 0.0, "label_smoothed_loss: smoothing needs at least two classes");
  const double off = V > 1 ? eps / static_cast<double>(V - 1) : 0.0;
  const double on = 1.0 - eps;
  auto weights = std::make_shared<std::vector<double>>(U * V, off);
  for (std::size_t u = 0; u < U; ++u) {
    const int y = targets[u];
    if (y < 0 || static_cast<std::size_t>(y) >= V) {
      throw std::out_of_range("label_smoothed_loss: target id " + std::to_string(y));
    }
    (*weights)[u * V + y] = on;
  }
  const auto lp = log_probs.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < U * V; ++i) loss -= (*weights)[i] * lp[i];
  loss /= static_cast<double>(U);
  return make_result("label_smoothed_loss", {1}, {loss}, {log_probs},
                     [log_probs, weights, U](std::span<const double> g) {
                       double* gl = grad_sink(log_probs);
                       const double f = g[0] / static_cast<double>(U);
                       for (std::size_t i = 0; i < weights->size(); ++i)
                         gl[i] -= f * (*weights)[i];
                     });
}

Tensor gru_recurrence(const Tensor& x_proj, const Tensor& h_prev, const Tensor& w_hzr,
                      const Tensor& w_hn) {
  require(h_prev.rank() == 2 && x_proj.rank() == 2, "gru: inputs must be [B, n]");
  const std::size_t B = h_prev.dim(0), H = h_prev.dim(1);
  require(x_proj.dim(0) == B && x_proj.dim(1) == 3 * H,
          "gru: x_proj " + shape_str(x_proj.shape()) + " vs hidden " + shape_str(h_prev.shape()));
  require(w_hzr.rank() == 2 && w_hzr.dim(0) == H && w_hzr.dim(1) == 2 * H, "gru: w_hzr shape");
  require(w_hn.rank() == 2 && w_hn.dim(0) == H && w_hn.dim(1) == H, "gru: w_hn shape");

  const double* xp = x_proj.data().data();
  const double* h = h_prev.data().data();
  RowMat hzr = MapC(h, B, H) * MapC(w_hzr.data().data(), H, 2 * H);
  auto z = std::make_shared<RowMat>(B, H);
  auto r = std::make_shared<RowMat>(B, H);
  auto n = std::make_shared<RowMat>(B, H);
  auto rh = std::make_shared<RowMat>(B, H);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < H; ++j) {
      (*z)(b, j) = 1.0 / (1.0 + std::exp(-(xp[b * 3 * H + j] + hzr(b, j))));
      (*r)(b, j) = 1.0 / (1.0 + std::exp(-(xp[b * 3 * H + H + j] + hzr(b, H + j))));
      (*rh)(b, j) = (*r)(b, j) * h[b * H + j];
    }
  }
  RowMat hn = (*rh) * MapC(w_hn.data().data(), H, H);
  std::vector<double> out(B * H);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < H; ++j) {
      (*n)(b, j) = std::tanh(xp[b * 3 * H + 2 * H + j] + hn(b, j));
      out[b * H + j] = (1.0 - (*z)(b, j)) * h[b * H + j] + (*z)(b, j) * (*n)(b, j);
    }
  }
  return make_result(
      "gru_recurrence", {B, H}, std::move(out), {x_proj, h_prev, w_hzr, w_hn},
      [=](std::span<const double> g) {
        const double* h = h_prev.data().data();
        RowMat d_zr(B, 2 * H), d_an(B, H), d_h(B, H);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t j = 0; j < H; ++j) {
            const double gh = g[b * H + j];
            const double zz = (*z)(b, j), nn = (*n)(b, j);
            d_zr(b, j) = gh * (nn - h[b * H + j]) * zz * (1.0 - zz);
            d_an(b, j) = gh * zz * (1.0 - nn * nn);
            d_h(b, j) = gh * (1.0 - zz);
          }
        }
        const RowMat d_rh = d_an * MapC(w_hn.data().data(), H, H).transpose();
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t j = 0; j < H; ++j) {
            const double rr = (*r)(b, j);
            d_zr(b, H + j) = d_rh(b, j) * h[b * H + j] * rr * (1.0 - rr);
            d_h(b, j) += d_rh(b, j) * rr;
          }
        }
        if (double* gxp = grad_sink(x_proj)) {
          Map gm(gxp, B, 3 * H);
          gm.leftCols(2 * H) += d_zr;
          gm.rightCols(H) += d_an;
        }
        if (double* gwn = grad_sink(w_hn)) Map(gwn, H, H).noalias() += rh->transpose() * d_an;
        if (double* gwzr = grad_sink(w_hzr))
          Map(gwzr, H, 2 * H).noalias() += MapC(h, B, H).transpose() * d_zr;
        if (double* gh = grad_sink(h_prev)) {
          d_h.noalias() += d_zr * MapC(w_hzr.data().data(), H, 2 * H).transpose();
          Map(gh, B, H) += d_h;
        }
      });
}

Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GruParams& params) {
  const bool single = x.rank() == 1;
  require(x.rank() == h_prev.rank() && (single || x.rank() == 2),
          "gru_cell: x and h_prev must both be vectors or both be batches");
  const Tensor xb = single ? reshape(x, {1, x.dim(0)}) : x;
  const Tensor hb = single ? reshape(h_prev, {1, h_prev.dim(0)}) : h_prev;
  require(hb.dim(1) == params.hidden_size() && xb.dim(1) == params.input_size(),
          "gru_cell: shape mismatch with parameters");
  Tensor h = gru_recurrence(linear(xb, params.w_x, params.b), hb, params.w_hzr, params.w_hn);
  return single ? reshape(h, {h.dim(1)}) : h;
}

}  // namespace tds
