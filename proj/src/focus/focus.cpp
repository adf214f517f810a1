#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include "dfv/error.hpp"
#include "dfv/focus.hpp"
#include "dfv/ops.hpp"

namespace dfv::focus {

namespace {

std::atomic<std::size_t> g_differentiate_calls{0};

struct Split {
  std::size_t outer, extent, inner;
};

Split split_axis(const Tensor& v, std::size_t axis, const char* op) {
  if (axis >= v.rank()) throw ShapeError(std::string(op) + ": frame axis out of range for shape " + shape_str(v.shape()));
  Split s{1, v.dim(axis), 1};
  for (std::size_t k = 0; k < axis; ++k) s.outer *= v.dim(k);
  for (std::size_t k = axis + 1; k < v.rank(); ++k) s.inner *= v.dim(k);
  if (s.extent < 2) throw ShapeError(std::string(op) + ": need at least 2 frames, got " + std::to_string(s.extent));
  return s;
}

}  // namespace

Image laplacian_focus_measure(const Image& frame, std::size_t window) {
  if (window == 0 || window % 2 == 0) throw ConfigError("laplacian_focus_measure: window must be odd and >= 1");
  const Image g = to_gray(frame);
  const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  auto px = [&](long y, long x) {
    return g.at(0, static_cast<std::size_t>(std::clamp(y, 0L, H - 1)), static_cast<std::size_t>(std::clamp(x, 0L, W - 1)));
  };
  Image lap(1, g.height, g.width);
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      // Summed as differences so flat regions give exactly zero.
      const double c = px(y, x);
      lap.at(0, y, x) = std::abs((c - px(y - 1, x)) + (c - px(y + 1, x)) + (c - px(y, x - 1)) + (c - px(y, x + 1)));
    }
  if (window == 1) return lap;

  const long r = static_cast<long>(window / 2);
  auto lp = [&](long y, long x) {
    return lap.at(0, static_cast<std::size_t>(std::clamp(y, 0L, H - 1)), static_cast<std::size_t>(std::clamp(x, 0L, W - 1)));
  };
  Image rows(1, g.height, g.width), out(1, g.height, g.width);
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      double s = 0.0;
      for (long d = -r; d <= r; ++d) s += lp(y, x + d);
      rows.at(0, y, x) = s;
    }
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      double s = 0.0;
      for (long d = -r; d <= r; ++d)
        s += rows.at(0, static_cast<std::size_t>(std::clamp(y + d, 0L, H - 1)), static_cast<std::size_t>(x));
      out.at(0, y, x) = s;
    }
  return out;
}

Tensor build_focus_volume(std::span<const Tensor> frames) {
  if (frames.size() < 2) throw ShapeError("build_focus_volume: need at least 2 frames, got " + std::to_string(frames.size()));
  if (frames[0].rank() != 4) throw ShapeError("build_focus_volume: frames must be [B,F,H,W], got " + shape_str(frames[0].shape()));
  for (std::size_t i = 1; i < frames.size(); ++i)
    if (frames[i].shape() != frames[0].shape())
      throw ShapeError("build_focus_volume: frame " + std::to_string(i) + " has shape " + shape_str(frames[i].shape()) +
                       ", expected " + shape_str(frames[0].shape()));
  return ops::stack(frames, 2);
}

Tensor volume_from_folded(const Tensor& features, std::size_t batch, std::size_t frames) {
  if (features.rank() != 4 || features.dim(0) != batch * frames)
    throw ShapeError("volume_from_folded: expected [" + std::to_string(batch * frames) + ",F,H,W], got " +
                     shape_str(features.shape()));
  const Shape& s = features.shape();
  const Tensor r = ops::reshape(features, {batch, frames, s[1], s[2], s[3]});
  return ops::permute(r, {0, 2, 1, 3, 4});
}

Tensor differentiate_volume(const Tensor& volume, std::size_t frame_axis) {
  const Split s = split_axis(volume, frame_axis, "differentiate_volume");
  ++g_differentiate_calls;
  const auto q = volume.data();
  std::vector<double> v(q.size());
  const std::size_t stride = s.extent * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    const std::size_t base = o * stride;
    for (std::size_t i = 0; i + 1 < s.extent; ++i)
      for (std::size_t k = 0; k < s.inner; ++k)
        v[base + i * s.inner + k] = q[base + i * s.inner + k] - q[base + (i + 1) * s.inner + k];
    const std::size_t last = base + (s.extent - 1) * s.inner;
    std::copy(q.begin() + static_cast<std::ptrdiff_t>(last), q.begin() + static_cast<std::ptrdiff_t>(last + s.inner),
              v.begin() + static_cast<std::ptrdiff_t>(last));
  }
  const bool rg = detail::needs_grad({&volume});
  Tensor out = detail::make_result(volume.shape(), std::move(v), "differentiate_volume", rg);
  if (rg) {
    Tape::current().record("differentiate_volume", {volume}, out, [qi = volume.handle(), vi = out.handle(), s, stride] {
      auto& g = detail::grad_of(*qi);
      const auto& gv = vi->grad;
      for (std::size_t o = 0; o < s.outer; ++o) {
        const std::size_t base = o * stride;
        for (std::size_t i = 0; i + 1 < s.extent; ++i)
          for (std::size_t k = 0; k < s.inner; ++k) {
            const double gi = gv[base + i * s.inner + k];
            g[base + i * s.inner + k] += gi;
            g[base + (i + 1) * s.inner + k] -= gi;
          }
        const std::size_t last = base + (s.extent - 1) * s.inner;
        for (std::size_t k = 0; k < s.inner; ++k) g[last + k] += gv[last + k];
      }
    });
  }
  return out;
}

std::size_t differentiate_calls() { return g_differentiate_calls.load(); }

Tensor normalize_volume(const Tensor& volume, std::size_t frame_axis) {
  const Split s = split_axis(volume, frame_axis, "normalize_volume");
  const auto q = volume.data();
  std::vector<double> out(q.size(), 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.inner; ++k) {
      const std::size_t base = o * s.extent * s.inner + k;
      double lo = q[base], hi = q[base];
      for (std::size_t i = 1; i < s.extent; ++i) {
        lo = std::min(lo, q[base + i * s.inner]);
        hi = std::max(hi, q[base + i * s.inner]);
      }
      if (hi == lo) continue;
      for (std::size_t i = 0; i < s.extent; ++i) out[base + i * s.inner] = (q[base + i * s.inner] - lo) / (hi - lo);
    }
  return Tensor::from(volume.shape(), std::move(out));
}

ArgmaxResult argmax_depth(const Tensor& scores, std::span<const double> focal_distances) {
  if (scores.rank() != 4) throw ShapeError("argmax_depth: scores must be [B,N,H,W], got " + shape_str(scores.shape()));
  const std::size_t B = scores.dim(0), N = scores.dim(1), P = scores.dim(2) * scores.dim(3);
  if (focal_distances.size() != N)
    throw ShapeError("argmax_depth: " + std::to_string(N) + " frames but " + std::to_string(focal_distances.size()) +
                     " focal distances");
  const auto s = scores.data();
  std::vector<double> depth(B * P), index(B * P);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t p = 0; p < P; ++p) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < N; ++i)
        if (s[(b * N + i) * P + p] > s[(b * N + best) * P + p]) best = i;
      depth[b * P + p] = focal_distances[best];
      index[b * P + p] = static_cast<double>(best + 1);
    }
  const Shape out{B, scores.dim(2), scores.dim(3)};
  return {Tensor::from(out, std::move(depth)), Tensor::from(out, std::move(index))};
}

Tensor measure_volume(const FocalStack& stack, std::size_t window) {
  stack.validate();
  const std::size_t H = stack.frames[0].height, W = stack.frames[0].width;
  std::vector<double> v;
  v.reserve(stack.size() * H * W);
  for (const Image& f : stack.frames) {
    const Image m = laplacian_focus_measure(f, window);
    v.insert(v.end(), m.pixels.begin(), m.pixels.end());
  }
  return Tensor::from({1, stack.size(), H, W}, std::move(v));
}

std::vector<TraceRow> trace_table(std::span<const double> raw) {
  if (raw.size() < 2) throw ShapeError("trace_table: need at least 2 frames");
  const std::size_t n = raw.size();
  const Tensor q = Tensor::from({1, n}, std::vector<double>(raw.begin(), raw.end()));
  const Tensor d = differentiate_volume(q, 1);
  const Tensor z = normalize_volume(q, 1);
  std::vector<TraceRow> rows;
  for (std::size_t i = 0; i < n; ++i) rows.push_back({i + 1, raw[i], d.data()[i], z.data()[i]});
  return rows;
}

std::vector<TraceRow> trace_demo(const FocalStack& stack, std::size_t y, std::size_t x, std::size_t window) {
  stack.validate();
  if (y >= stack.frames[0].height || x >= stack.frames[0].width)
    throw ConfigError("trace_demo: pixel (" + std::to_string(y) + "," + std::to_string(x) + ") outside the frame");
  std::vector<double> raw;
  for (const Image& f : stack.frames) raw.push_back(laplacian_focus_measure(f, window).at(0, y, x));
  return trace_table(raw);
}

void write_trace_csv(const std::filesystem::path& path, std::span<const TraceRow> rows) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << "frame_index,raw,differential,normalized\n" << std::setprecision(17);
  for (const TraceRow& r : rows) os << r.frame_index << ',' << r.raw << ',' << r.differential << ',' << r.normalized << '\n';
  if (!os) throw IoError("write failed: " + path.string());
}

std::vector<std::size_t> sign_changes(std::span<const double> d) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j + 1 < d.size(); ++j)
    if ((d[j] < 0.0 && d[j + 1] > 0.0) || (d[j] > 0.0 && d[j + 1] < 0.0)) out.push_back(j + 1);
  return out;
}

}  // namespace dfv::focus
