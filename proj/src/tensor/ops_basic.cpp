#include <algorithm>
#include <cmath>
#include <numeric>

#include "dfv/error.hpp"
#include "dfv/ops.hpp"

namespace dfv::ops {

using detail::grad_of;
using detail::make_result;
using detail::needs_grad;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

void require_axis(const Tensor& x, std::size_t axis, const char* op) {
  if (axis >= x.rank())
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                     shape_str(x.shape()));
}

// Splits shape around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <class Fwd, class Bwd>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Bwd dfdx) {
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = fwd(xs[i]);
  const bool rg = needs_grad({&x});
  Tensor y = make_result(x.shape(), std::move(out), op, rg);
  if (rg) {
    Tape::current().record(op, {x}, y, [xi = x.handle(), yi = y.handle(), dfdx] {
      auto& gx = grad_of(*xi);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += yi->grad[i] * dfdx(xi->data[i], yi->data[i]);
    });
  }
  return y;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto as = a.data(), bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] + bs[i];
  const bool rg = needs_grad({&a, &b});
  Tensor y = make_result(a.shape(), std::move(out), "add", rg);
  if (rg) {
    Tape::current().record("add", {a, b}, y, [ai = a.handle(), bi = b.handle(), yi = y.handle()] {
      for (TensorImpl* t : {ai.get(), bi.get()}) {
        if (!t->requires_grad) continue;
        auto& g = grad_of(*t);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yi->grad[i];
      }
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto as = a.data(), bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] - bs[i];
  const bool rg = needs_grad({&a, &b});
  Tensor y = make_result(a.shape(), std::move(out), "sub", rg);
  if (rg) {
    Tape::current().record("sub", {a, b}, y, [ai = a.handle(), bi = b.handle(), yi = y.handle()] {
      if (ai->requires_grad) {
        auto& g = grad_of(*ai);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yi->grad[i];
      }
      if (bi->requires_grad) {
        auto& g = grad_of(*bi);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= yi->grad[i];
      }
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto as = a.data(), bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] * bs[i];
  const bool rg = needs_grad({&a, &b});
  Tensor y = make_result(a.shape(), std::move(out), "mul", rg);
  if (rg) {
    Tape::current().record("mul", {a, b}, y, [ai = a.handle(), bi = b.handle(), yi = y.handle()] {
      if (ai->requires_grad) {
        auto& g = grad_of(*ai);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yi->grad[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        auto& g = grad_of(*bi);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yi->grad[i] * ai->data[i];
      }
    });
  }
  return y;
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, "scale", [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      a, "add_scalar", [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& x) {
  return unary(
      x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sum(const Tensor& x) {
  const auto xs = x.data();
  const double total = std::accumulate(xs.begin(), xs.end(), 0.0);
  const bool rg = needs_grad({&x});
  Tensor y = make_result({1}, {total}, "sum", rg);
  if (rg) {
    Tape::current().record("sum", {x}, y, [xi = x.handle(), yi = y.handle()] {
      auto& g = grad_of(*xi);
      const double gy = yi->grad[0];
      for (double& v : g) v += gy;
    });
  }
  return y;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  const bool rg = needs_grad({&x});
  Tensor y = make_result(std::move(shape), std::move(out), "reshape", rg);
  if (rg) {
    Tape::current().record("reshape", {x}, y, [xi = x.handle(), yi = y.handle()] {
      auto& g = grad_of(*xi);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += yi->grad[i];
    });
  }
  return y;
}

namespace {

// Maps each output flat index to its input flat index under `axes`.
std::vector<std::size_t> permutation_gather(const Shape& in, const std::vector<std::size_t>& axes,
                                            Shape& out_shape) {
  const std::size_t r = in.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * in[i + 1];
  out_shape.resize(r);
  std::vector<std::size_t> stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in[axes[i]];
    stride[i] = in_stride[axes[i]];
  }
  const std::size_t n = shape_numel(in);
  std::vector<std::size_t> gather(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < n; ++o) {
    gather[o] = src;
    for (std::size_t a = r; a-- > 0;) {
      ++idx[a];
      src += stride[a];
      if (idx[a] < out_shape[a]) break;
      src -= stride[a] * out_shape[a];
      idx[a] = 0;
    }
  }
  return gather;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw ShapeError("permute: axis count does not match rank");
  std::vector<bool> seen(r, false);
  for (std::size_t a : axes) {
    if (a >= r || seen[a]) throw ShapeError("permute: axes must be a permutation");
    seen[a] = true;
  }
  Shape out_shape;
  auto gather = permutation_gather(x.shape(), axes, out_shape);
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = xs[gather[o]];
  const bool rg = needs_grad({&x});
  Tensor y = make_result(std::move(out_shape), std::move(out), "permute", rg);
  if (rg) {
    Tape::current().record("permute", {x}, y,
                           [xi = x.handle(), yi = y.handle(), gather = std::move(gather)] {
                             auto& g = grad_of(*xi);
                             for (std::size_t o = 0; o < gather.size(); ++o) g[gather[o]] += yi->grad[o];
                           });
  }
  return y;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require_axis(x, axis, "slice");
  if (begin >= end || end > x.dim(axis))
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for extent " + std::to_string(x.dim(axis)));
  const AxisSplit s = split_at(x.shape(), axis);
  const std::size_t len = end - begin;
  Shape shape = x.shape();
  shape[axis] = len;
  const auto xs = x.data();
  std::vector<double> out(s.outer * len * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xs.begin() + (o * s.extent + begin) * s.inner, len * s.inner,
                out.begin() + o * len * s.inner);
  const bool rg = needs_grad({&x});
  Tensor y = make_result(std::move(shape), std::move(out), "slice", rg);
  if (rg) {
    Tape::current().record("slice", {x}, y, [xi = x.handle(), yi = y.handle(), s, begin, len] {
      auto& g = grad_of(*xi);
      for (std::size_t o = 0; o < s.outer; ++o) {
        double* dst = g.data() + (o * s.extent + begin) * s.inner;
        const double* src = yi->grad.data() + o * len * s.inner;
        for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
      }
    });
  }
  return y;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  require_axis(parts[0], axis, "concat");
  Shape shape = parts[0].shape();
  std::size_t total = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Shape& ps = parts[p].shape();
    if (ps.size() != shape.size())
      throw ShapeError("concat: rank mismatch at input " + std::to_string(p));
    for (std::size_t a = 0; a < ps.size(); ++a)
      if (a != axis && ps[a] != shape[a])
        throw ShapeError("concat: input " + std::to_string(p) + " has shape " + shape_str(ps) +
                         ", expected " + shape_str(shape) + " off axis " + std::to_string(axis));
    total += ps[axis];
  }
  shape[axis] = total;
  const AxisSplit s = split_at(shape, axis);
  std::vector<double> out(shape_numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  bool rg = false;
  for (const Tensor& t : parts) {
    offsets.push_back(off);
    const std::size_t len = t.dim(axis);
    const auto ts = t.data();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(ts.begin() + o * len * s.inner, len * s.inner,
                  out.begin() + (o * total + off) * s.inner);
    off += len;
    rg = rg || needs_grad({&t});
  }
  Tensor y = make_result(std::move(shape), std::move(out), "concat", rg);
  if (rg) {
    std::vector<std::shared_ptr<TensorImpl>> ins;
    for (const Tensor& t : parts) ins.push_back(t.handle());
    Tape::current().record(
        "concat", std::vector<Tensor>(parts.begin(), parts.end()), y,
        [ins, offsets, yi = y.handle(), s, total, axis] {
          for (std::size_t p = 0; p < ins.size(); ++p) {
            if (!ins[p]->requires_grad) continue;
            auto& g = grad_of(*ins[p]);
            const std::size_t len = ins[p]->shape[axis];
            for (std::size_t o = 0; o < s.outer; ++o) {
              const double* src = yi->grad.data() + (o * total + offsets[p]) * s.inner;
              double* dst = g.data() + o * len * s.inner;
              for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
            }
          }
        });
  }
  return y;
}

Tensor stack(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  if (axis > parts[0].rank()) throw ShapeError("stack: axis out of range");
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const Tensor& t : parts) {
    Shape s = t.shape();
    s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
    expanded.push_back(reshape(t, std::move(s)));
  }
  return concat(expanded, axis);
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_axis(x, axis, "softmax");
  const AxisSplit s = split_at(x.shape(), axis);
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double mx = xs[base];
      for (std::size_t k = 1; k < s.extent; ++k) mx = std::max(mx, xs[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const double e = std::exp(xs[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= z;
    }
  }
  const bool rg = needs_grad({&x});
  Tensor y = make_result(x.shape(), std::move(out), "softmax", rg);
  if (rg) {
    Tape::current().record("softmax", {x}, y, [xi = x.handle(), yi = y.handle(), s] {
      auto& g = grad_of(*xi);
      const auto& p = yi->data;
      const auto& gy = yi->grad;
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.extent * s.inner + in;
          double dot = 0.0;
          for (std::size_t k = 0; k < s.extent; ++k) dot += gy[base + k * s.inner] * p[base + k * s.inner];
          for (std::size_t k = 0; k < s.extent; ++k) {
            const std::size_t i = base + k * s.inner;
            g[i] += p[i] * (gy[i] - dot);
          }
        }
      }
    });
  }
  return y;
}

Tensor pad2d(const Tensor& x, std::size_t pad_bottom, std::size_t pad_right) {
  if (x.rank() < 2) throw ShapeError("pad2d: need at least 2 axes");
  if (pad_bottom == 0 && pad_right == 0) return x;
  const Shape& in = x.shape();
  const std::size_t h = in[in.size() - 2], w = in[in.size() - 1];
  const std::size_t oh = h + pad_bottom, ow = w + pad_right;
  const std::size_t planes = x.numel() / (h * w);
  Shape shape = in;
  shape[shape.size() - 2] = oh;
  shape[shape.size() - 1] = ow;
  const auto xs = x.data();
  std::vector<double> out(planes * oh * ow, 0.0);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t r = 0; r < h; ++r)
      std::copy_n(xs.begin() + (p * h + r) * w, w, out.begin() + (p * oh + r) * ow);
  const bool rg = needs_grad({&x});
  Tensor y = make_result(std::move(shape), std::move(out), "pad2d", rg);
  if (rg) {
    Tape::current().record("pad2d", {x}, y, [xi = x.handle(), yi = y.handle(), planes, h, w, oh, ow] {
      auto& g = grad_of(*xi);
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t r = 0; r < h; ++r)
          for (std::size_t c = 0; c < w; ++c) g[(p * h + r) * w + c] += yi->grad[(p * oh + r) * ow + c];
    });
  }
  return y;
}

Tensor crop2d(const Tensor& x, std::size_t height, std::size_t width) {
  if (x.rank() < 2) throw ShapeError("crop2d: need at least 2 axes");
  const Shape& in = x.shape();
  const std::size_t h = in[in.size() - 2], w = in[in.size() - 1];
  if (height == 0 || width == 0 || height > h || width > w)
    throw ShapeError("crop2d: window " + std::to_string(height) + "x" + std::to_string(width) +
                     " does not fit " + shape_str(in));
  if (height == h && width == w) return x;
  const std::size_t planes = x.numel() / (h * w);
  Shape shape = in;
  shape[shape.size() - 2] = height;
  shape[shape.size() - 1] = width;
  const auto xs = x.data();
  std::vector<double> out(planes * height * width);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t r = 0; r < height; ++r)
      std::copy_n(xs.begin() + (p * h + r) * w, width, out.begin() + (p * height + r) * width);
  const bool rg = needs_grad({&x});
  Tensor y = make_result(std::move(shape), std::move(out), "crop2d", rg);
  if (rg) {
    Tape::current().record("crop2d", {x}, y,
                           [xi = x.handle(), yi = y.handle(), planes, h, w, height, width] {
                             auto& g = grad_of(*xi);
                             for (std::size_t p = 0; p < planes; ++p)
                               for (std::size_t r = 0; r < height; ++r)
                                 for (std::size_t c = 0; c < width; ++c)
                                   g[(p * h + r) * w + c] += yi->grad[(p * height + r) * width + c];
                           });
  }
  return y;
}

Tensor smooth_l1(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  require_same_shape(pred, target, "smooth_l1");
  const auto ps = pred.data(), ts = target.data();
  std::vector<double> weight(ps.size(), 1.0);
  if (mask.defined()) {
    require_same_shape(pred, mask, "smooth_l1 mask");
    const auto ms = mask.data();
    for (std::size_t i = 0; i < ms.size(); ++i) {
      if (ms[i] != 0.0 && ms[i] != 1.0) throw NumericError("smooth_l1: mask must be {0,1}-valued");
      weight[i] = ms[i];
    }
  }
  const double count = std::accumulate(weight.begin(), weight.end(), 0.0);
  if (count == 0.0) throw EmptyMaskError("smooth_l1: every element is masked out");
  double total = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (weight[i] == 0.0) continue;
    const double d = ps[i] - ts[i];
    const double ad = std::abs(d);
    total += ad < 1.0 ? 0.5 * d * d : ad - 0.5;
  }
  const bool rg = needs_grad({&pred, &target});
  Tensor y = make_result({1}, {total / count}, "smooth_l1", rg);
  if (rg) {
    Tape::current().record(
        "smooth_l1", {pred, target}, y,
        [pi = pred.handle(), ti = target.handle(), yi = y.handle(), weight = std::move(weight), count] {
          const double gy = yi->grad[0] / count;
          const std::size_t n = weight.size();
          std::vector<double> gd(n, 0.0);
          for (std::size_t i = 0; i < n; ++i) {
            if (weight[i] == 0.0) continue;
            const double d = pi->data[i] - ti->data[i];
            gd[i] = gy * (std::abs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0));
          }
          if (pi->requires_grad) {
            auto& g = grad_of(*pi);
            for (std::size_t i = 0; i < n; ++i) g[i] += gd[i];
          }
          if (ti->requires_grad) {
            auto& g = grad_of(*ti);
            for (std::size_t i = 0; i < n; ++i) g[i] -= gd[i];
          }
        });
  }
  return y;
}

Tensor expectation(const Tensor& p, const Tensor& values) {
  if (p.rank() < 2 || values.rank() != 2 || values.dim(0) != p.dim(0) || values.dim(1) != p.dim(1))
    throw ShapeError("expectation: p " + shape_str(p.shape()) + " incompatible with values " +
                     shape_str(values.shape()));
  const std::size_t B = p.dim(0), N = p.dim(1);
  const std::size_t S = p.numel() / (B * N);
  Shape shape = p.shape();
  shape.erase(shape.begin() + 1);
  if (shape.size() == 1) shape.push_back(1);
  const auto ps = p.data(), vs = values.data();
  std::vector<double> out(B * S, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < N; ++i) {
      const double v = vs[b * N + i];
      const double* src = ps.data() + (b * N + i) * S;
      double* dst = out.data() + b * S;
      for (std::size_t s = 0; s < S; ++s) dst[s] += src[s] * v;
    }
  const bool rg = needs_grad({&p, &values});
  Tensor y = make_result(std::move(shape), std::move(out), "expectation", rg);
  if (rg) {
    Tape::current().record("expectation", {p, values}, y,
                           [pi = p.handle(), vi = values.handle(), yi = y.handle(), B, N, S] {
                             for (std::size_t b = 0; b < B; ++b)
                               for (std::size_t i = 0; i < N; ++i) {
                                 const double* gy = yi->grad.data() + b * S;
                                 if (pi->requires_grad) {
                                   double* gp = grad_of(*pi).data() + (b * N + i) * S;
                                   const double v = vi->data[b * N + i];
                                   for (std::size_t s = 0; s < S; ++s) gp[s] += gy[s] * v;
                                 }
                                 if (vi->requires_grad) {
                                   const double* pv = pi->data.data() + (b * N + i) * S;
                                   double acc = 0.0;
                                   for (std::size_t s = 0; s < S; ++s) acc += gy[s] * pv[s];
                                   grad_of(*vi)[b * N + i] += acc;
                                 }
                               }
                           });
  }
  return y;
}

}  // namespace dfv::ops
