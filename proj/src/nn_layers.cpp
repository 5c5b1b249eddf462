#include "lsm/nn/layers.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>

#include "lsm/error.hpp"

namespace lsm::nn {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw InvalidArgument(msg);
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape == b.shape, std::string(op) + ": shape mismatch " +
                                  shape_string(a.shape) + " vs " + shape_string(b.shape));
}

// Convolution over up to three spatial dims; 2D is the depth-1 case.
struct ConvGeom {
  std::array<int, 3> in{1, 1, 1};
  std::array<int, 3> k{1, 1, 1};
  std::array<int, 3> out{1, 1, 1};
  std::array<int, 3> pad{0, 0, 0};
  int stride = 1;
  int cin = 0;
  int cout = 0;

  std::size_t in_positions() const { return std::size_t(in[0]) * in[1] * in[2]; }
  std::size_t out_positions() const { return std::size_t(out[0]) * out[1] * out[2]; }
  int taps() const { return k[0] * k[1] * k[2]; }
};

ConvGeom conv_geometry(const Tensor& x, const Tensor& w, const Tensor& b, int dims,
                       int stride, Padding pad, const char* op) {
  require(stride >= 1, std::string(op) + ": stride must be >= 1");
  require(x.rank() == dims + 1, std::string(op) + ": input must have rank " +
                                    std::to_string(dims + 1) + ", got " +
                                    shape_string(x.shape));
  require(w.rank() == dims + 2, std::string(op) + ": kernel must have rank " +
                                    std::to_string(dims + 2));
  ConvGeom g;
  g.stride = stride;
  g.cin = x.shape.back();
  g.cout = w.shape.back();
  require(w.shape[dims] == g.cin, std::string(op) + ": kernel expects " +
                                      std::to_string(w.shape[dims]) +
                                      " input channels, input has " + std::to_string(g.cin));
  require(b.rank() == 1 && b.shape[0] == g.cout, std::string(op) + ": bias must be [Cout]");
  const int off = 3 - dims;
  for (int d = 0; d < dims; ++d) {
    g.in[off + d] = x.shape[d];
    g.k[off + d] = w.shape[d];
    require(w.shape[d] == w.shape[0], std::string(op) + ": kernel must be cubic/square");
  }
  for (int d = 0; d < 3; ++d) {
    if (d >= off && pad == Padding::kSame) g.pad[d] = g.k[d] / 2;
    const int span = g.in[d] + 2 * g.pad[d] - g.k[d];
    require(span >= 0, std::string(op) + ": kernel larger than padded input");
    g.out[d] = span / stride + 1;
  }
  return g;
}

void conv_forward(const ConvGeom& g, const double* x, const double* w, const double* b,
                  double* y) {
  const auto n_out = static_cast<std::int64_t>(g.out_positions());
#pragma omp parallel for schedule(static)
  for (std::int64_t o = 0; o < n_out; ++o) {
    const int oz = static_cast<int>(o / (std::int64_t(g.out[1]) * g.out[2]));
    const int oy = static_cast<int>((o / g.out[2]) % g.out[1]);
    const int ox = static_cast<int>(o % g.out[2]);
    double* acc = y + o * g.cout;
    for (int co = 0; co < g.cout; ++co) acc[co] = b[co];
    for (int tz = 0; tz < g.k[0]; ++tz) {
      const int iz = oz * g.stride + tz - g.pad[0];
      if (iz < 0 || iz >= g.in[0]) continue;
      for (int ty = 0; ty < g.k[1]; ++ty) {
        const int iy = oy * g.stride + ty - g.pad[1];
        if (iy < 0 || iy >= g.in[1]) continue;
        for (int tx = 0; tx < g.k[2]; ++tx) {
          const int ix = ox * g.stride + tx - g.pad[2];
          if (ix < 0 || ix >= g.in[2]) continue;
          const double* xin =
              x + ((std::size_t(iz) * g.in[1] + iy) * g.in[2] + ix) * g.cin;
          const double* wt =
              w + std::size_t((tz * g.k[1] + ty) * g.k[2] + tx) * g.cin * g.cout;
          for (int ci = 0; ci < g.cin; ++ci) {
            const double a = xin[ci];
            if (a == 0.0) continue;
            const double* wr = wt + std::size_t(ci) * g.cout;
            for (int co = 0; co < g.cout; ++co) acc[co] += a * wr[co];
          }
        }
      }
    }
  }
}

// Input gradient as a gather over the outputs that read each input position.
void conv_backward_input(const ConvGeom& g, const double* w, const double* gy, double* gx) {
  const int taps = g.taps();
  std::vector<double> wt(std::size_t(taps) * g.cin * g.cout);
  for (int t = 0; t < taps; ++t)
    for (int ci = 0; ci < g.cin; ++ci)
      for (int co = 0; co < g.cout; ++co)
        wt[(std::size_t(t) * g.cout + co) * g.cin + ci] =
            w[(std::size_t(t) * g.cin + ci) * g.cout + co];
  const auto n_in = static_cast<std::int64_t>(g.in_positions());
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < n_in; ++p) {
    const int pz = static_cast<int>(p / (std::int64_t(g.in[1]) * g.in[2]));
    const int py = static_cast<int>((p / g.in[2]) % g.in[1]);
    const int px = static_cast<int>(p % g.in[2]);
    double* acc = gx + p * g.cin;
    for (int tz = 0; tz < g.k[0]; ++tz) {
      const int nz = pz + g.pad[0] - tz;
      if (nz < 0 || nz % g.stride) continue;
      const int oz = nz / g.stride;
      if (oz >= g.out[0]) continue;
      for (int ty = 0; ty < g.k[1]; ++ty) {
        const int ny = py + g.pad[1] - ty;
        if (ny < 0 || ny % g.stride) continue;
        const int oy = ny / g.stride;
        if (oy >= g.out[1]) continue;
        for (int tx = 0; tx < g.k[2]; ++tx) {
          const int nx = px + g.pad[2] - tx;
          if (nx < 0 || nx % g.stride) continue;
          const int ox = nx / g.stride;
          if (ox >= g.out[2]) continue;
          const double* go =
              gy + ((std::size_t(oz) * g.out[1] + oy) * g.out[2] + ox) * g.cout;
          const double* wr =
              wt.data() + std::size_t((tz * g.k[1] + ty) * g.k[2] + tx) * g.cout * g.cin;
          for (int co = 0; co < g.cout; ++co) {
            const double s = go[co];
            if (s == 0.0) continue;
            const double* wc = wr + std::size_t(co) * g.cin;
            for (int ci = 0; ci < g.cin; ++ci) acc[ci] += s * wc[ci];
          }
        }
      }
    }
  }
}

// Kernel gradient; each tap is reduced by one thread in a fixed order.
void conv_backward_kernel(const ConvGeom& g, const double* x, const double* gy, double* gw) {
  const int taps = g.taps();
#pragma omp parallel for schedule(static)
  for (int t = 0; t < taps; ++t) {
    const int tz = t / (g.k[1] * g.k[2]);
    const int ty = (t / g.k[2]) % g.k[1];
    const int tx = t % g.k[2];
    double* gwt = gw + std::size_t(t) * g.cin * g.cout;
    for (int oz = 0; oz < g.out[0]; ++oz) {
      const int iz = oz * g.stride + tz - g.pad[0];
      if (iz < 0 || iz >= g.in[0]) continue;
      for (int oy = 0; oy < g.out[1]; ++oy) {
        const int iy = oy * g.stride + ty - g.pad[1];
        if (iy < 0 || iy >= g.in[1]) continue;
        for (int ox = 0; ox < g.out[2]; ++ox) {
          const int ix = ox * g.stride + tx - g.pad[2];
          if (ix < 0 || ix >= g.in[2]) continue;
          const double* xin =
              x + ((std::size_t(iz) * g.in[1] + iy) * g.in[2] + ix) * g.cin;
          const double* go =
              gy + ((std::size_t(oz) * g.out[1] + oy) * g.out[2] + ox) * g.cout;
          for (int ci = 0; ci < g.cin; ++ci) {
            const double a = xin[ci];
            if (a == 0.0) continue;
            double* row = gwt + std::size_t(ci) * g.cout;
            for (int co = 0; co < g.cout; ++co) row[co] += a * go[co];
          }
        }
      }
    }
  }
}

Var conv_nd(Tape& t, Var x, Var kernel, Var bias, int stride, Padding pad, int dims,
            const char* op) {
  const ConvGeom g = conv_geometry(t.value(x), t.value(kernel), t.value(bias), dims,
                                   stride, pad, op);
  std::vector<int> shape;
  for (int d = 3 - dims; d < 3; ++d) shape.push_back(g.out[d]);
  shape.push_back(g.cout);
  Tensor y(shape);
  conv_forward(g, t.value(x).data.data(), t.value(kernel).data.data(),
               t.value(bias).data.data(), y.data.data());
  return t.record(std::move(y), {x, kernel, bias}, [=](Tape& tp, std::size_t self) {
    const double* gy = tp.grad(self).data.data();
    if (tp.requires_grad(x)) {
      conv_backward_input(g, tp.value(kernel).data.data(), gy, tp.grad(x).data.data());
    }
    if (tp.requires_grad(kernel)) {
      conv_backward_kernel(g, tp.value(x).data.data(), gy, tp.grad(kernel).data.data());
    }
    if (tp.requires_grad(bias)) {
      double* gb = tp.grad(bias).data.data();
      const std::size_t n = g.out_positions();
      for (std::size_t o = 0; o < n; ++o)
        for (int co = 0; co < g.cout; ++co) gb[co] += gy[o * g.cout + co];
    }
  });
}

template <class F, class D>
Var unary(Tape& t, Var x, F f, D dfdx_from_y_x) {
  const Tensor& xv = t.value(x);
  Tensor y(xv.shape);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = f(xv.data[i]);
  return t.record(std::move(y), {x}, [=](Tape& tp, std::size_t self) {
    const Tensor& gy = tp.grad(self);
    const Tensor& yv = tp.value(Var{self});
    const Tensor& xv2 = tp.value(x);
    Tensor& gx = tp.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i)
      gx.data[i] += gy.data[i] * dfdx_from_y_x(yv.data[i], xv2.data[i]);
  });
}

}  // namespace

Var conv2d(Tape& t, Var x, Var kernel, Var bias, int stride, Padding pad) {
  return conv_nd(t, x, kernel, bias, stride, pad, 2, "conv2d");
}

Var conv3d(Tape& t, Var x, Var kernel, Var bias, int stride, Padding pad) {
  return conv_nd(t, x, kernel, bias, stride, pad, 3, "conv3d");
}

Var instance_norm(Tape& t, Var x, Var gain, Var shift, double eps) {
  const Tensor& xv = t.value(x);
  const int c = xv.channels();
  const std::size_t n = xv.positions();
  require(n >= 2, "instance_norm: needs at least two spatial elements");
  require(t.value(gain).size() == std::size_t(c) && t.value(shift).size() == std::size_t(c),
          "instance_norm: gain/shift must be [C]");
  std::vector<double> mean(c, 0.0), inv_std(c, 0.0);
  for (std::size_t p = 0; p < n; ++p)
    for (int ch = 0; ch < c; ++ch) mean[ch] += xv.data[p * c + ch];
  for (int ch = 0; ch < c; ++ch) mean[ch] /= double(n);
  std::vector<double> var(c, 0.0);
  for (std::size_t p = 0; p < n; ++p)
    for (int ch = 0; ch < c; ++ch) {
      const double d = xv.data[p * c + ch] - mean[ch];
      var[ch] += d * d;
    }
  for (int ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] / double(n) + eps);
  Tensor xhat(xv.shape);
  Tensor y(xv.shape);
  const auto& gv = t.value(gain).data;
  const auto& sv = t.value(shift).data;
  for (std::size_t p = 0; p < n; ++p)
    for (int ch = 0; ch < c; ++ch) {
      const double h = (xv.data[p * c + ch] - mean[ch]) * inv_std[ch];
      xhat.data[p * c + ch] = h;
      y.data[p * c + ch] = gv[ch] * h + sv[ch];
    }
  return t.record(std::move(y), {x, gain, shift},
                  [=, xhat = std::move(xhat)](Tape& tp, std::size_t self) {
    const auto& gy = tp.grad(self).data;
    const auto& g = tp.value(gain).data;
    if (tp.requires_grad(gain) || tp.requires_grad(shift)) {
      std::vector<double> dg(c, 0.0), ds(c, 0.0);
      for (std::size_t p = 0; p < n; ++p)
        for (int ch = 0; ch < c; ++ch) {
          dg[ch] += gy[p * c + ch] * xhat.data[p * c + ch];
          ds[ch] += gy[p * c + ch];
        }
      if (tp.requires_grad(gain))
        for (int ch = 0; ch < c; ++ch) tp.grad(gain).data[ch] += dg[ch];
      if (tp.requires_grad(shift))
        for (int ch = 0; ch < c; ++ch) tp.grad(shift).data[ch] += ds[ch];
    }
    if (tp.requires_grad(x)) {
      std::vector<double> m1(c, 0.0), m2(c, 0.0);
      for (std::size_t p = 0; p < n; ++p)
        for (int ch = 0; ch < c; ++ch) {
          const double d = gy[p * c + ch] * g[ch];
          m1[ch] += d;
          m2[ch] += d * xhat.data[p * c + ch];
        }
      auto& gx = tp.grad(x).data;
      for (std::size_t p = 0; p < n; ++p)
        for (int ch = 0; ch < c; ++ch) {
          const double d = gy[p * c + ch] * g[ch];
          gx[p * c + ch] += inv_std[ch] * (d - m1[ch] / double(n) -
                                           xhat.data[p * c + ch] * m2[ch] / double(n));
        }
    }
  });
}

Var layer_norm(Tape& t, Var x, Var gain, Var shift, double eps) {
  const Tensor& xv = t.value(x);
  const int c = xv.channels();
  const std::size_t n = xv.positions();
  require(t.value(gain).size() == std::size_t(c) && t.value(shift).size() == std::size_t(c),
          "layer_norm: gain/shift must be [C]");
  Tensor xhat(xv.shape);
  std::vector<double> inv_std(n);
  Tensor y(xv.shape);
  const auto& gv = t.value(gain).data;
  const auto& sv = t.value(shift).data;
  for (std::size_t p = 0; p < n; ++p) {
    const double* row = xv.data.data() + p * c;
    double mean = 0.0;
    for (int ch = 0; ch < c; ++ch) mean += row[ch];
    mean /= c;
    double var = 0.0;
    for (int ch = 0; ch < c; ++ch) var += (row[ch] - mean) * (row[ch] - mean);
    inv_std[p] = 1.0 / std::sqrt(var / c + eps);
    for (int ch = 0; ch < c; ++ch) {
      const double h = (row[ch] - mean) * inv_std[p];
      xhat.data[p * c + ch] = h;
      y.data[p * c + ch] = gv[ch] * h + sv[ch];
    }
  }
  return t.record(std::move(y), {x, gain, shift},
                  [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      Tape& tp, std::size_t self) {
    const auto& gy = tp.grad(self).data;
    const auto& g = tp.value(gain).data;
    if (tp.requires_grad(gain) || tp.requires_grad(shift)) {
      std::vector<double> dg(c, 0.0), ds(c, 0.0);
      for (std::size_t p = 0; p < n; ++p)
        for (int ch = 0; ch < c; ++ch) {
          dg[ch] += gy[p * c + ch] * xhat.data[p * c + ch];
          ds[ch] += gy[p * c + ch];
        }
      if (tp.requires_grad(gain))
        for (int ch = 0; ch < c; ++ch) tp.grad(gain).data[ch] += dg[ch];
      if (tp.requires_grad(shift))
        for (int ch = 0; ch < c; ++ch) tp.grad(shift).data[ch] += ds[ch];
    }
    if (tp.requires_grad(x)) {
      auto& gx = tp.grad(x).data;
      for (std::size_t p = 0; p < n; ++p) {
        double m1 = 0.0, m2 = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          const double d = gy[p * c + ch] * g[ch];
          m1 += d;
          m2 += d * xhat.data[p * c + ch];
        }
        for (int ch = 0; ch < c; ++ch) {
          const double d = gy[p * c + ch] * g[ch];
          gx[p * c + ch] += inv_std[p] * (d - m1 / c - xhat.data[p * c + ch] * m2 / c);
        }
      }
    }
  });
}

Var relu(Tape& t, Var x) {
  return unary(t, x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double, double xv) { return xv > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Tape& t, Var x) {
  return unary(t, x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
               [](double y, double) { return y * (1.0 - y); });
}

Var tanh(Tape& t, Var x) {
  return unary(t, x, [](double v) { return std::tanh(v); },
               [](double y, double) { return 1.0 - y * y; });
}

Var affine(Tape& t, Var x, double scale, double offset) {
  return unary(t, x, [=](double v) { return scale * v + offset; },
               [=](double, double) { return scale; });
}

Var add(Tape& t, Var a, Var b) {
  require_same(t.value(a), t.value(b), "add");
  Tensor y = t.value(a);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += t.value(b).data[i];
  return t.record(std::move(y), {a, b}, [=](Tape& tp, std::size_t self) {
    const auto& gy = tp.grad(self).data;
    for (Var v : {a, b}) {
      if (!tp.requires_grad(v)) continue;
      auto& g = tp.grad(v).data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
  });
}

Var sub(Tape& t, Var a, Var b) {
  require_same(t.value(a), t.value(b), "sub");
  Tensor y = t.value(a);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] -= t.value(b).data[i];
  return t.record(std::move(y), {a, b}, [=](Tape& tp, std::size_t self) {
    const auto& gy = tp.grad(self).data;
    if (tp.requires_grad(a)) {
      auto& g = tp.grad(a).data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
    if (tp.requires_grad(b)) {
      auto& g = tp.grad(b).data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= gy[i];
    }
  });
}

Var mul(Tape& t, Var a, Var b) {
  require_same(t.value(a), t.value(b), "mul");
  Tensor y = t.value(a);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] *= t.value(b).data[i];
  return t.record(std::move(y), {a, b}, [=](Tape& tp, std::size_t self) {
    const auto& gy = tp.grad(self).data;
    if (tp.requires_grad(a)) {
      auto& g = tp.grad(a).data;
      const auto& bv = tp.value(b).data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * bv[i];
    }
    if (tp.requires_grad(b)) {
      auto& g = tp.grad(b).data;
      const auto& av = tp.value(a).data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * av[i];
    }
  });
}

Var add_channel_bias(Tape& t, Var x, Var bias) {
  const Tensor& xv = t.value(x);
  const int c = xv.channels();
  require(t.value(bias).size() == std::size_t(c), "add_channel_bias: bias must be [C]");
  Tensor y = xv;
  const auto& bv = t.value(bias).data;
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += bv[i % c];
  return t.record(std::move(y), {x, bias}, [=](Tape& tp, std::size_t self) {
    const auto& gy = tp.grad(self).data;
    if (tp.requires_grad(x)) {
      auto& g = tp.grad(x).data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
    if (tp.requires_grad(bias)) {
      auto& g = tp.grad(bias).data;
      for (std::size_t i = 0; i < gy.size(); ++i) g[i % c] += gy[i];
    }
  });
}

Var concat_channels(Tape& t, const std::vector<Var>& xs) {
  require(!xs.empty(), "concat_channels: no inputs");
  const Tensor& first = t.value(xs[0]);
  const std::size_t n = first.positions();
  std::vector<int> widths;
  int total = 0;
  for (Var v : xs) {
    const Tensor& xv = t.value(v);
    require(xv.rank() == first.rank() &&
                std::equal(xv.shape.begin(), xv.shape.end() - 1, first.shape.begin()),
            "concat_channels: spatial shapes differ");
    widths.push_back(xv.channels());
    total += xv.channels();
  }
  std::vector<int> shape = first.shape;
  shape.back() = total;
  Tensor y(shape);
  int off = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto& src = t.value(xs[k]).data;
    for (std::size_t p = 0; p < n; ++p)
      for (int c = 0; c < widths[k]; ++c) y.data[p * total + off + c] = src[p * widths[k] + c];
    off += widths[k];
  }
  return t.record(std::move(y), xs, [=](Tape& tp, std::size_t self) {
    const auto& gy = tp.grad(self).data;
    int o = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      if (tp.requires_grad(xs[k])) {
        auto& g = tp.grad(xs[k]).data;
        for (std::size_t p = 0; p < n; ++p)
          for (int c = 0; c < widths[k]; ++c) g[p * widths[k] + c] += gy[p * total + o + c];
      }
      o += widths[k];
    }
  });
}

Var upsample_nearest2d(Tape& t, Var x, int factor) {
  const Tensor& xv = t.value(x);
  require(xv.rank() == 3 && factor >= 1, "upsample_nearest2d: expects [H, W, C]");
  const int h = xv.shape[0], w = xv.shape[1], c = xv.shape[2];
  const int oh = h * factor, ow = w * factor;
  Tensor y({oh, ow, c});
  for (int v = 0; v < oh; ++v)
    for (int u = 0; u < ow; ++u)
      for (int ch = 0; ch < c; ++ch)
        y.data[(std::size_t(v) * ow + u) * c + ch] =
            xv.data[(std::size_t(v / factor) * w + u / factor) * c + ch];
  return t.record(std::move(y), {x}, [=](Tape& tp, std::size_t self) {
    const auto& gy = tp.grad(self).data;
    auto& g = tp.grad(x).data;
    for (int v = 0; v < oh; ++v)
      for (int u = 0; u < ow; ++u)
        for (int ch = 0; ch < c; ++ch)
          g[(std::size_t(v / factor) * w + u / factor) * c + ch] +=
              gy[(std::size_t(v) * ow + u) * c + ch];
  });
}

Var sum(Tape& t, Var x) {
  double s = 0.0;
  for (double v : t.value(x).data) s += v;
  return t.record(Tensor({1}, s), {x}, [=](Tape& tp, std::size_t self) {
    const double gy = tp.grad(self).data[0];
    for (double& g : tp.grad(x).data) g += gy;
  });
}

Var dot_const(Tape& t, Var x, const Tensor& weights) {
  require(weights.size() == t.value(x).size(), "dot_const: size mismatch");
  double s = 0.0;
  const auto& xv = t.value(x).data;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * weights.data[i];
  return t.record(Tensor({1}, s), {x}, [=](Tape& tp, std::size_t self) {
    const double gy = tp.grad(self).data[0];
    auto& g = tp.grad(x).data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy * weights.data[i];
  });
}

Var mean_of(Tape& t, const std::vector<Var>& xs) {
  require(!xs.empty(), "mean_of: no inputs");
  Tensor y(t.value(xs[0]).shape);
  for (Var v : xs) {
    require_same(y, t.value(v), "mean_of");
    const auto& d = t.value(v).data;
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += d[i];
  }
  const double inv = 1.0 / double(xs.size());
  for (double& v : y.data) v *= inv;
  return t.record(std::move(y), xs, [=](Tape& tp, std::size_t self) {
    const auto& gy = tp.grad(self).data;
    for (Var v : xs) {
      if (!tp.requires_grad(v)) continue;
      auto& g = tp.grad(v).data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * inv;
    }
  });
}

Var max_of(Tape& t, const std::vector<Var>& xs) {
  require(!xs.empty(), "max_of: no inputs");
  Tensor y = t.value(xs[0]);
  std::vector<std::uint16_t> arg(y.size(), 0);
  for (std::size_t k = 1; k < xs.size(); ++k) {
    require_same(y, t.value(xs[k]), "max_of");
    const auto& d = t.value(xs[k]).data;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (d[i] > y.data[i]) {
        y.data[i] = d[i];
        arg[i] = static_cast<std::uint16_t>(k);
      }
    }
  }
  return t.record(std::move(y), xs,
                  [=, arg = std::move(arg)](Tape& tp, std::size_t self) {
    const auto& gy = tp.grad(self).data;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      if (!tp.requires_grad(xs[k])) continue;
      auto& g = tp.grad(xs[k]).data;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (arg[i] == k) g[i] += gy[i];
    }
  });
}

Var softmax2_occupancy(Tape& t, Var logits) {
  const Tensor& lv = t.value(logits);
  require(lv.channels() == 2, "softmax2_occupancy: expects two logit channels");
  std::vector<int> shape(lv.shape.begin(), lv.shape.end() - 1);
  if (shape.empty()) shape.push_back(1);
  const std::size_t n = lv.positions();
  Tensor p(shape);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = lv.data[2 * i + 1] - lv.data[2 * i];
    p.data[i] = d >= 0.0 ? 1.0 / (1.0 + std::exp(-d)) : std::exp(d) / (1.0 + std::exp(d));
  }
  return t.record(std::move(p), {logits}, [=](Tape& tp, std::size_t self) {
    const auto& gy = tp.grad(self).data;
    const auto& pv = tp.value(Var{self}).data;
    auto& g = tp.grad(logits).data;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = gy[i] * pv[i] * (1.0 - pv[i]);
      g[2 * i + 1] += s;
      g[2 * i] -= s;
    }
  });
}

Var bce_loss(Tape& t, Var p, const Tensor& target) {
  const Tensor& pv = t.value(p);
  require(pv.size() == target.size(), "bce_loss: prediction/target size mismatch");
  const std::size_t n = pv.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double q = std::clamp(pv.data[i], kProbClamp, 1.0 - kProbClamp);
    const double y = target.data[i];
    loss -= y * std::log(q) + (1.0 - y) * std::log(1.0 - q);
  }
  loss /= double(n);
  return t.record(Tensor({1}, loss), {p}, [=](Tape& tp, std::size_t self) {
    const double gy = tp.grad(self).data[0] / double(n);
    const auto& pv2 = tp.value(p).data;
    auto& g = tp.grad(p).data;
    for (std::size_t i = 0; i < n; ++i) {
      const double q = pv2[i];
      if (q < kProbClamp || q > 1.0 - kProbClamp) continue;
      const double y = target.data[i];
      g[i] += gy * (-(y / q) + (1.0 - y) / (1.0 - q));
    }
  });
}

Var l1_loss(Tape& t, Var pred, const Tensor& gt, const Tensor& mask) {
  const Tensor& pv = t.value(pred);
  require(pv.size() == gt.size() && pv.size() == mask.size(),
          "l1_loss: prediction/target/mask size mismatch");
  std::size_t count = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (mask.data[i] == 0.0) continue;
    ++count;
    loss += std::abs(pv.data[i] - gt.data[i]);
  }
  require(count > 0, "l1_loss: mask selects no pixels");
  loss /= double(count);
  return t.record(Tensor({1}, loss), {pred}, [=](Tape& tp, std::size_t self) {
    const double gy = tp.grad(self).data[0] / double(count);
    const auto& pv2 = tp.value(pred).data;
    auto& g = tp.grad(pred).data;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (mask.data[i] == 0.0) continue;
      const double d = pv2[i] - gt.data[i];
      if (d > 0.0) g[i] += gy;
      else if (d < 0.0) g[i] -= gy;
    }
  });
}

Var unproject(Tape& t, Var map, std::shared_ptr<const ops::UnprojectPlan> plan) {
  const Tensor& mv = t.value(map);
  require(mv.rank() == 3 && mv.shape[0] == plan->map_height && mv.shape[1] == plan->map_width,
          "unproject: map " + shape_string(mv.shape) + " does not match the camera");
  const int c = mv.shape[2];
  const int extra = plan->geom.extra_channels();
  const int out_c = c + extra;
  const int r = plan->spec.resolution;
  Tensor y({r, r, r, out_c});
  ops::gather(plan->taps, mv.data, c, y.data, out_c);
  const std::size_t nv = plan->spec.voxel_count();
  for (std::size_t v = 0; v < nv; ++v)
    for (int e = 0; e < extra; ++e) y.data[v * out_c + c + e] = plan->geom_values[v * extra + e];
  return t.record(std::move(y), {map}, [=](Tape& tp, std::size_t self) {
    ops::scatter_add(plan->taps, tp.grad(self).data, out_c, c, tp.grad(map).data);
  });
}

Var project(Tape& t, Var grid, std::shared_ptr<const ops::ProjectPlan> plan) {
  const Tensor& gv = t.value(grid);
  const int r = plan->spec.resolution;
  require(gv.rank() == 4 && gv.shape[0] == r && gv.shape[1] == r && gv.shape[2] == r,
          "project: grid " + shape_string(gv.shape) + " does not match the plan");
  const int c = gv.shape[3];
  Tensor y({plan->height, plan->width, plan->n_planes * c});
  ops::gather(plan->taps, gv.data, c, y.data, c);
  return t.record(std::move(y), {grid}, [=](Tape& tp, std::size_t self) {
    ops::scatter_add(plan->taps, tp.grad(self).data, c, c, tp.grad(grid).data);
  });
}

Tensor he_normal(const std::vector<int>& shape, std::uint64_t seed) {
  Tensor w(shape);
  const std::size_t fan_in = w.size() / std::size_t(shape.back());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(fan_in)));
  for (double& v : w.data) v = dist(rng);
  return w;
}

std::vector<int> RayReduceHead::channel_plan(int in_channels) {
  std::vector<int> plan{in_channels};
  int c = in_channels;
  while (c > 8) {
    c /= 2;
    plan.push_back(c);
  }
  plan.push_back(1);
  return plan;
}

void RayReduceHead::init(int in_channels, std::uint64_t seed, const std::string& prefix) {
  const auto plan = channel_plan(in_channels);
  kernels.clear();
  biases.clear();
  kernels.reserve(plan.size());
  biases.reserve(plan.size());
  for (std::size_t l = 0; l + 1 < plan.size(); ++l) {
    const std::string id = prefix + "." + std::to_string(l);
    kernels.emplace_back(id + ".kernel", he_normal({1, 1, plan[l], plan[l + 1]}, seed + 7 * l));
    biases.emplace_back(id + ".bias", Tensor({plan[l + 1]}));
  }
}

Var RayReduceHead::forward(Tape& t, Var x) {
  for (std::size_t l = 0; l < kernels.size(); ++l) {
    x = conv2d(t, x, t.param(kernels[l]), t.param(biases[l]), 1, Padding::kValid);
    if (l + 1 < kernels.size()) x = relu(t, x);
  }
  return x;
}

std::vector<Parameter*> RayReduceHead::parameters() {
  std::vector<Parameter*> out;
  for (std::size_t l = 0; l < kernels.size(); ++l) {
    out.push_back(&kernels[l]);
    out.push_back(&biases[l]);
  }
  return out;
}

void VoxelHead::init(int in_channels, std::uint64_t seed, const std::string& prefix) {
  kernel = Parameter(prefix + ".kernel", he_normal({1, 1, 1, in_channels, 2}, seed));
  bias = Parameter(prefix + ".bias", Tensor({2}));
}

Var VoxelHead::forward(Tape& t, Var grid) {
  Var logits = conv3d(t, grid, t.param(kernel), t.param(bias), 1, Padding::kValid);
  return softmax2_occupancy(t, logits);
}

std::vector<Parameter*> VoxelHead::parameters() { return {&kernel, &bias}; }

}  // namespace lsm::nn
