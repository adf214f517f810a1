#include <cmath>

#include "dfv/error.hpp"
#include "dfv/ops.hpp"

namespace dfv::ops {

using detail::grad_of;
using detail::make_result;
using detail::needs_grad;

BatchNormStats::BatchNormStats(std::size_t channels)
    : running_mean(Tensor::zeros({channels})), running_var(Tensor::full({channels}, 1.0)) {}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                  bool training, std::size_t channel_axis) {
  if (channel_axis >= x.rank())
    throw ShapeError("batch_norm: channel axis " + std::to_string(channel_axis) + " invalid for " +
                     shape_str(x.shape()));
  const std::size_t C = x.dim(channel_axis);
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &stats.running_mean, &stats.running_var})
    if (t->rank() != 1 || t->dim(0) != C)
      throw ShapeError("batch_norm: parameter shape " + shape_str(t->shape()) + " does not match " +
                       std::to_string(C) + " channels");

  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < channel_axis; ++i) outer *= x.dim(i);
  for (std::size_t i = channel_axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t M = outer * inner;
  const double eps = stats.epsilon;
  const auto xs = x.data(), gs = gamma.data(), bs = beta.data();

  std::vector<double> mu(C), invstd(C);
  if (training) {
    auto rm = stats.running_mean.mutable_data();
    auto rv = stats.running_var.mutable_data();
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t o = 0; o < outer; ++o) {
        const double* p = xs.data() + (o * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(M);
      double v = 0.0;
      for (std::size_t o = 0; o < outer; ++o) {
        const double* p = xs.data() + (o * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) v += (p[i] - m) * (p[i] - m);
      }
      const double biased = v / static_cast<double>(M);
      const double unbiased = M > 1 ? v / static_cast<double>(M - 1) : biased;
      mu[c] = m;
      invstd[c] = 1.0 / std::sqrt(biased + eps);
      rm[c] = (1.0 - stats.momentum) * rm[c] + stats.momentum * m;
      rv[c] = (1.0 - stats.momentum) * rv[c] + stats.momentum * unbiased;
    }
  } else {
    const auto rm = stats.running_mean.data(), rv = stats.running_var.data();
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = rm[c];
      invstd[c] = 1.0 / std::sqrt(rv[c] + eps);
    }
  }

  std::vector<double> xhat(xs.size()), out(xs.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (o * C + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const double h = (xs[base + i] - mu[c]) * invstd[c];
        xhat[base + i] = h;
        out[base + i] = gs[c] * h + bs[c];
      }
    }

  const bool rg = needs_grad({&x, &gamma, &beta});
  Tensor y = make_result(x.shape(), std::move(out), "batch_norm", rg);
  if (!rg) return y;
  Tape::current().record(
      "batch_norm", {x, gamma, beta}, y,
      [xi = x.handle(), gi = gamma.handle(), bi = beta.handle(), yi = y.handle(), xhat = std::move(xhat),
       invstd = std::move(invstd), outer, inner, C, M, training] {
        const auto& gy = yi->grad;
        std::vector<double> sum_gy(C, 0.0), sum_gy_xhat(C, 0.0);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (o * C + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              sum_gy[c] += gy[base + i];
              sum_gy_xhat[c] += gy[base + i] * xhat[base + i];
            }
          }
        if (gi->requires_grad) {
          auto& g = grad_of(*gi);
          for (std::size_t c = 0; c < C; ++c) g[c] += sum_gy_xhat[c];
        }
        if (bi->requires_grad) {
          auto& g = grad_of(*bi);
          for (std::size_t c = 0; c < C; ++c) g[c] += sum_gy[c];
        }
        if (!xi->requires_grad) return;
        auto& gx = grad_of(*xi);
        const double inv_m = 1.0 / static_cast<double>(M);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (o * C + c) * inner;
            const double k = gi->data[c] * invstd[c];
            for (std::size_t i = 0; i < inner; ++i) {
              if (training)
                gx[base + i] += k * (gy[base + i] - inv_m * sum_gy[c] - xhat[base + i] * inv_m * sum_gy_xhat[c]);
              else
                gx[base + i] += k * gy[base + i];
            }
          }
      });
  return y;
}

namespace {

// Trailing-axes geometry with missing leading spatial axes treated as extent 1.
struct Spatial3 {
  std::size_t planes = 1;
  std::size_t d = 1, h = 1, w = 1;
};

Spatial3 trailing(const Tensor& x, std::size_t count, const char* op) {
  if (count < 1 || count > 3 || x.rank() < count)
    throw ShapeError(std::string(op) + ": cannot act on " + std::to_string(count) + " trailing axes of " +
                     shape_str(x.shape()));
  Spatial3 s;
  const std::size_t r = x.rank();
  std::size_t ext[3] = {1, 1, 1};
  for (std::size_t i = 0; i < count; ++i) ext[3 - count + i] = x.dim(r - count + i);
  s.d = ext[0];
  s.h = ext[1];
  s.w = ext[2];
  s.planes = x.numel() / (s.d * s.h * s.w);
  return s;
}

}  // namespace

Tensor avg_pool(const Tensor& x, const std::vector<std::size_t>& window) {
  const Spatial3 s = trailing(x, window.size(), "avg_pool");
  std::size_t win[3] = {1, 1, 1};
  for (std::size_t i = 0; i < window.size(); ++i) {
    if (window[i] == 0) throw ShapeError("avg_pool: window extents must be positive");
    win[3 - window.size() + i] = window[i];
  }
  const std::size_t od = s.d / win[0], oh = s.h / win[1], ow = s.w / win[2];
  if (od == 0 || oh == 0 || ow == 0)
    throw ShapeError("avg_pool: window larger than input " + shape_str(x.shape()));
  Shape shape = x.shape();
  const std::size_t r = shape.size();
  const std::size_t outs[3] = {od, oh, ow};
  for (std::size_t i = 0; i < window.size(); ++i) shape[r - window.size() + i] = outs[3 - window.size() + i];

  const double inv = 1.0 / static_cast<double>(win[0] * win[1] * win[2]);
  const auto xs = x.data();
  std::vector<double> out(s.planes * od * oh * ow);
  for (std::size_t p = 0; p < s.planes; ++p)
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double acc = 0.0;
          for (std::size_t a = 0; a < win[0]; ++a)
            for (std::size_t b = 0; b < win[1]; ++b)
              for (std::size_t c = 0; c < win[2]; ++c)
                acc += xs[((p * s.d + z * win[0] + a) * s.h + y * win[1] + b) * s.w + xx * win[2] + c];
          out[((p * od + z) * oh + y) * ow + xx] = acc * inv;
        }
  const bool rg = needs_grad({&x});
  Tensor res = make_result(std::move(shape), std::move(out), "avg_pool", rg);
  if (rg) {
    Tape::current().record("avg_pool", {x}, res,
                           [xi = x.handle(), yi = res.handle(), s, od, oh, ow, w0 = win[0], w1 = win[1],
                            w2 = win[2], inv] {
                             auto& g = grad_of(*xi);
                             for (std::size_t p = 0; p < s.planes; ++p)
                               for (std::size_t z = 0; z < od; ++z)
                                 for (std::size_t y = 0; y < oh; ++y)
                                   for (std::size_t xx = 0; xx < ow; ++xx) {
                                     const double gv = yi->grad[((p * od + z) * oh + y) * ow + xx] * inv;
                                     for (std::size_t a = 0; a < w0; ++a)
                                       for (std::size_t b = 0; b < w1; ++b)
                                         for (std::size_t c = 0; c < w2; ++c)
                                           g[((p * s.d + z * w0 + a) * s.h + y * w1 + b) * s.w + xx * w2 + c] += gv;
                                   }
                           });
  }
  return res;
}

namespace {

struct LerpTable {
  std::vector<std::size_t> lo, hi;
  std::vector<double> t;
};

// Source coordinate for output i is (i + 0.5) * in/out - 0.5, clamped at 0.
LerpTable lerp_table(std::size_t in, std::size_t out) {
  LerpTable tab;
  tab.lo.resize(out);
  tab.hi.resize(out);
  tab.t.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t lo = static_cast<std::size_t>(src);
    if (lo > in - 1) lo = in - 1;
    tab.lo[i] = lo;
    tab.hi[i] = lo + 1 < in ? lo + 1 : in - 1;
    tab.t[i] = src - static_cast<double>(lo);
  }
  return tab;
}

// Resamples axis `axis` (0=d,1=h,2=w) of a [planes, d, h, w] block. Values are
// formed as a + t * (b - a), so constant inputs stay exactly constant.
std::vector<double> resample_axis(const std::vector<double>& in, std::size_t planes, std::size_t dims[3],
                                  std::size_t axis, const LerpTable& tab) {
  const std::size_t out_len = tab.t.size();
  std::size_t outer = planes, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= dims[a];
  for (std::size_t a = axis + 1; a < 3; ++a) inner *= dims[a];
  const std::size_t len = dims[axis];
  std::vector<double> out(outer * out_len * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < out_len; ++i) {
      const double* a = in.data() + (o * len + tab.lo[i]) * inner;
      const double* b = in.data() + (o * len + tab.hi[i]) * inner;
      double* dst = out.data() + (o * out_len + i) * inner;
      const double t = tab.t[i];
      for (std::size_t k = 0; k < inner; ++k) dst[k] = a[k] + t * (b[k] - a[k]);
    }
  dims[axis] = out_len;
  return out;
}

std::vector<double> resample_axis_adjoint(const std::vector<double>& gout, std::size_t planes,
                                          std::size_t dims_in[3], std::size_t axis, const LerpTable& tab) {
  const std::size_t out_len = tab.t.size();
  std::size_t outer = planes, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= dims_in[a];
  for (std::size_t a = axis + 1; a < 3; ++a) inner *= dims_in[a];
  const std::size_t len = dims_in[axis];
  std::vector<double> gin(outer * len * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < out_len; ++i) {
      double* a = gin.data() + (o * len + tab.lo[i]) * inner;
      double* b = gin.data() + (o * len + tab.hi[i]) * inner;
      const double* src = gout.data() + (o * out_len + i) * inner;
      const double t = tab.t[i];
      for (std::size_t k = 0; k < inner; ++k) {
        a[k] += (1.0 - t) * src[k];
        b[k] += t * src[k];
      }
    }
  return gin;
}

}  // namespace

Tensor upsample_linear(const Tensor& x, const std::vector<std::size_t>& target) {
  const Spatial3 s = trailing(x, target.size(), "upsample_linear");
  std::size_t tgt[3] = {s.d, s.h, s.w};
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] == 0) throw ShapeError("upsample_linear: target extents must be positive");
    tgt[3 - target.size() + i] = target[i];
  }
  const std::size_t src_dims[3] = {s.d, s.h, s.w};
  std::vector<LerpTable> tabs;
  for (std::size_t a = 0; a < 3; ++a) tabs.push_back(lerp_table(src_dims[a], tgt[a]));

  std::vector<double> buf(x.data().begin(), x.data().end());
  std::size_t dims[3] = {s.d, s.h, s.w};
  for (std::size_t a = 3; a-- > 0;)
    if (src_dims[a] != tgt[a]) buf = resample_axis(buf, s.planes, dims, a, tabs[a]);

  Shape shape = x.shape();
  const std::size_t r = shape.size();
  for (std::size_t i = 0; i < target.size(); ++i) shape[r - target.size() + i] = target[i];
  const bool rg = needs_grad({&x});
  Tensor y = make_result(std::move(shape), std::move(buf), "upsample_linear", rg);
  if (rg) {
    Tape::current().record("upsample_linear", {x}, y,
                           [xi = x.handle(), yi = y.handle(), tabs = std::move(tabs), s, tgt] {
                             const std::size_t src_dims[3] = {s.d, s.h, s.w};
                             std::vector<double> g = yi->grad;
                             // Forward resampled w, then h, then d; undo in reverse.
                             for (std::size_t a = 0; a < 3; ++a) {
                               if (src_dims[a] == tgt[a]) continue;
                               // When axis a was resampled, later axes were already at target size.
                               std::size_t dims_in[3];
                               for (std::size_t k = 0; k < 3; ++k) dims_in[k] = k > a ? tgt[k] : src_dims[k];
                               g = resample_axis_adjoint(g, s.planes, dims_in, a, tabs[a]);
                             }
                             auto& gx = grad_of(*xi);
                             for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                           });
  }
  return y;
}

}  // namespace dfv::ops
