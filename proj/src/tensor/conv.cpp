#include <algorithm>

#include "dfv/error.hpp"
#include "dfv/ops.hpp"
#include "dfv/parallel.hpp"

namespace dfv::ops {

using detail::grad_of;
using detail::make_result;
using detail::needs_grad;

namespace {

// 2D convolutions run through the same path with a unit depth axis.
struct ConvGeom {
  std::size_t batch, in_ch, out_ch;
  std::size_t in_d, in_h, in_w;
  std::size_t k_d, k_h, k_w;
  std::size_t s_d, s_h, s_w;
  std::size_t p_d, p_h, p_w;
  std::size_t out_d, out_h, out_w;

  std::size_t rows() const { return in_ch * k_d * k_h * k_w; }
  std::size_t cols() const { return out_d * out_h * out_w; }
  std::size_t in_plane() const { return in_d * in_h * in_w; }
};

std::size_t out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                       const char* op, const char* axis) {
  if (in + 2 * pad < k)
    throw ShapeError(std::string(op) + ": kernel " + std::to_string(k) + " larger than padded " +
                     axis + " extent " + std::to_string(in + 2 * pad));
  return (in + 2 * pad - k) / stride + 1;
}

void im2col(const double* x, const ConvGeom& g, double* col) {
  const std::size_t P = g.cols();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_ch; ++c)
    for (std::size_t a = 0; a < g.k_d; ++a)
      for (std::size_t b = 0; b < g.k_h; ++b)
        for (std::size_t e = 0; e < g.k_w; ++e, ++row) {
          double* dst = col + row * P;
          const double* plane = x + c * g.in_plane();
          std::size_t p = 0;
          for (std::size_t od = 0; od < g.out_d; ++od) {
            const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(od * g.s_d + a) - static_cast<std::ptrdiff_t>(g.p_d);
            const bool zin = iz >= 0 && iz < static_cast<std::ptrdiff_t>(g.in_d);
            for (std::size_t oh = 0; oh < g.out_h; ++oh) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oh * g.s_h + b) - static_cast<std::ptrdiff_t>(g.p_h);
              const bool yin = zin && iy >= 0 && iy < static_cast<std::ptrdiff_t>(g.in_h);
              const double* src = yin ? plane + (static_cast<std::size_t>(iz) * g.in_h + static_cast<std::size_t>(iy)) * g.in_w : nullptr;
              for (std::size_t ow = 0; ow < g.out_w; ++ow, ++p) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ow * g.s_w + e) - static_cast<std::ptrdiff_t>(g.p_w);
                dst[p] = (src && ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w)) ? src[ix] : 0.0;
              }
            }
          }
        }
}

void col2im_add(const double* col, const ConvGeom& g, double* dx) {
  const std::size_t P = g.cols();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_ch; ++c)
    for (std::size_t a = 0; a < g.k_d; ++a)
      for (std::size_t b = 0; b < g.k_h; ++b)
        for (std::size_t e = 0; e < g.k_w; ++e, ++row) {
          const double* src = col + row * P;
          double* plane = dx + c * g.in_plane();
          std::size_t p = 0;
          for (std::size_t od = 0; od < g.out_d; ++od) {
            const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(od * g.s_d + a) - static_cast<std::ptrdiff_t>(g.p_d);
            for (std::size_t oh = 0; oh < g.out_h; ++oh) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oh * g.s_h + b) - static_cast<std::ptrdiff_t>(g.p_h);
              const bool inside = iz >= 0 && iz < static_cast<std::ptrdiff_t>(g.in_d) && iy >= 0 &&
                                  iy < static_cast<std::ptrdiff_t>(g.in_h);
              if (!inside) {
                p += g.out_w;
                continue;
              }
              double* dst = plane + (static_cast<std::size_t>(iz) * g.in_h + static_cast<std::size_t>(iy)) * g.in_w;
              for (std::size_t ow = 0; ow < g.out_w; ++ow, ++p) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ow * g.s_w + e) - static_cast<std::ptrdiff_t>(g.p_w);
                if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w)) dst[ix] += src[p];
              }
            }
          }
        }
}

constexpr std::size_t kColBlock = 256;

// out[f, p] = sum_k w[f, k] * col[k, p], accumulated in ascending k for every
// (f, p). That order is what a naive nested loop over (c, kd, kh, kw) does.
void gemm_forward(const double* w, const double* col, std::size_t F, std::size_t K, std::size_t P,
                  double* out) {
  parallel_for(F, [&](std::size_t f0, std::size_t f1) {
    for (std::size_t p0 = 0; p0 < P; p0 += kColBlock) {
      const std::size_t pn = std::min(kColBlock, P - p0);
      for (std::size_t f = f0; f < f1; ++f) {
        double* dst = out + f * P + p0;
        std::fill_n(dst, pn, 0.0);
        const double* wf = w + f * K;
        for (std::size_t k = 0; k < K; ++k) {
          const double wv = wf[k];
          const double* src = col + k * P + p0;
          for (std::size_t p = 0; p < pn; ++p) dst[p] += wv * src[p];
        }
      }
    }
  });
}

Tensor conv_impl(const Tensor& x, const Tensor& weight, const Tensor& bias, ConvGeom g, const char* op,
                 bool planar) {
  const std::size_t K = g.rows(), P = g.cols(), F = g.out_ch;
  const auto xs = x.data(), ws = weight.data();
  std::vector<double> out(g.batch * F * P);
  std::vector<double> col(K * P);
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(xs.data() + b * g.in_ch * g.in_plane(), g, col.data());
    double* ob = out.data() + b * F * P;
    gemm_forward(ws.data(), col.data(), F, K, P, ob);
    if (bias.defined()) {
      const auto bs = bias.data();
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t p = 0; p < P; ++p) ob[f * P + p] += bs[f];
    }
  }
  Shape shape = planar ? Shape{g.batch, F, g.out_h, g.out_w} : Shape{g.batch, F, g.out_d, g.out_h, g.out_w};
  const bool rg = needs_grad({&x, &weight, &bias});
  Tensor y = make_result(std::move(shape), std::move(out), op, rg);
  if (!rg) return y;

  Tape::current().record(op, {x, weight, bias}, y,
                         [xi = x.handle(), wi = weight.handle(), bi = bias.handle(), yi = y.handle(), g] {
    const std::size_t K = g.rows(), P = g.cols(), F = g.out_ch;
    const double* gy = yi->grad.data();
    if (bi && bi->requires_grad) {
      auto& gb = grad_of(*bi);
      for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t f = 0; f < F; ++f) {
          double acc = 0.0;
          const double* row = gy + (b * F + f) * P;
          for (std::size_t p = 0; p < P; ++p) acc += row[p];
          gb[f] += acc;
        }
    }
    const bool need_w = wi->requires_grad, need_x = xi->requires_grad;
    if (!need_w && !need_x) return;
    std::vector<double> col(K * P), dcol;
    if (need_x) dcol.resize(K * P);
    double* gw = need_w ? grad_of(*wi).data() : nullptr;
    double* gx = need_x ? grad_of(*xi).data() : nullptr;
    const double* w = wi->data.data();
    for (std::size_t b = 0; b < g.batch; ++b) {
      const double* gyb = gy + b * F * P;
      if (need_w) {
        im2col(xi->data.data() + b * g.in_ch * g.in_plane(), g, col.data());
        parallel_for(F, [&](std::size_t f0, std::size_t f1) {
          for (std::size_t f = f0; f < f1; ++f) {
            const double* gyr = gyb + f * P;
            for (std::size_t k = 0; k < K; ++k) {
              const double* cr = col.data() + k * P;
              double acc = 0.0;
              for (std::size_t p = 0; p < P; ++p) acc += gyr[p] * cr[p];
              gw[f * K + k] += acc;
            }
          }
        });
      }
      if (need_x) {
        parallel_for(K, [&](std::size_t k0, std::size_t k1) {
          for (std::size_t k = k0; k < k1; ++k) {
            double* dst = dcol.data() + k * P;
            std::fill_n(dst, P, 0.0);
            for (std::size_t f = 0; f < F; ++f) {
              const double wv = w[f * K + k];
              const double* src = gyb + f * P;
              for (std::size_t p = 0; p < P; ++p) dst[p] += wv * src[p];
            }
          }
        });
        col2im_add(dcol.data(), g, gx + b * g.in_ch * g.in_plane());
      }
    }
  });
  return y;
}

void check_bias(const Tensor& bias, std::size_t F, const char* op) {
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != F))
    throw ShapeError(std::string(op) + ": bias shape " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(F) + " filters");
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  if (x.rank() != 4) throw ShapeError("conv2d: input must be [B,C,H,W], got " + shape_str(x.shape()));
  if (weight.rank() != 4) throw ShapeError("conv2d: weight must be [F,C,k,k], got " + shape_str(weight.shape()));
  if (weight.dim(1) != x.dim(1))
    throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, weight expects " +
                     std::to_string(weight.dim(1)));
  if (weight.dim(2) != weight.dim(3) || weight.dim(2) % 2 == 0)
    throw ShapeError("conv2d: kernel must be square with odd size, got " + shape_str(weight.shape()));
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  check_bias(bias, weight.dim(0), "conv2d");
  const std::size_t k = weight.dim(2);
  ConvGeom g{x.dim(0), x.dim(1), weight.dim(0), 1, x.dim(2), x.dim(3), 1, k, k, 1, stride, stride, 0,
             padding, padding, 1, 0, 0};
  g.out_h = out_extent(g.in_h, k, stride, padding, "conv2d", "height");
  g.out_w = out_extent(g.in_w, k, stride, padding, "conv2d", "width");
  return conv_impl(x, weight, bias, g, "conv2d", true);
}

Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  if (x.rank() != 5) throw ShapeError("conv3d: input must be [B,C,D,H,W], got " + shape_str(x.shape()));
  if (weight.rank() != 5) throw ShapeError("conv3d: weight must be [F,C,k,k,k], got " + shape_str(weight.shape()));
  if (weight.dim(1) != x.dim(1))
    throw ShapeError("conv3d: input has " + std::to_string(x.dim(1)) + " channels, weight expects " +
                     std::to_string(weight.dim(1)));
  const std::size_t k = weight.dim(2);
  if (weight.dim(3) != k || weight.dim(4) != k || k % 2 == 0)
    throw ShapeError("conv3d: kernel must be cubic with odd size, got " + shape_str(weight.shape()));
  if (stride == 0) throw ShapeError("conv3d: stride must be positive");
  check_bias(bias, weight.dim(0), "conv3d");
  ConvGeom g{x.dim(0), x.dim(1), weight.dim(0), x.dim(2), x.dim(3), x.dim(4), k, k, k,
             stride, stride, stride, padding, padding, padding, 0, 0, 0};
  g.out_d = out_extent(g.in_d, k, stride, padding, "conv3d", "depth");
  g.out_h = out_extent(g.in_h, k, stride, padding, "conv3d", "height");
  g.out_w = out_extent(g.in_w, k, stride, padding, "conv3d", "width");
  return conv_impl(x, weight, bias, g, "conv3d", false);
}

}  // namespace dfv::ops
