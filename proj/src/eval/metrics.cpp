#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "dfv/error.hpp"
#include "dfv/metrics.hpp"
#include "dfv/ops.hpp"

namespace dfv {

namespace {

void check_prob(const Tensor& p, const Tensor& l, const char* op) {
  if (p.rank() != 4) throw ShapeError(std::string(op) + ": p must be [B,N,H,W], got " + shape_str(p.shape()));
  if (l.rank() != 2 || l.dim(0) != p.dim(0) || l.dim(1) != p.dim(1))
    throw ShapeError(std::string(op) + ": focal distances " + shape_str(l.shape()) + " do not match p " +
                     shape_str(p.shape()));
}

std::pair<double, double> range_of(std::span<const double> row) {
  const auto [mn, mx] = std::minmax_element(row.begin(), row.end());
  return {*mn, *mx};
}

}  // namespace

Tensor focal_tensor(std::span<const double> l, std::size_t batch) {
  std::vector<double> v;
  for (std::size_t b = 0; b < batch; ++b) v.insert(v.end(), l.begin(), l.end());
  return Tensor::from({batch, l.size()}, std::move(v));
}

Tensor regress_depth(const Tensor& p, const Tensor& l) {
  check_prob(p, l, "regress_depth");
  Tensor d = ops::expectation(p, l);
  const std::size_t B = p.dim(0), N = p.dim(1), P = p.dim(2) * p.dim(3);
  // The sum of p can miss 1 by an ulp; keep the convex-combination bound exact.
  auto v = d.mutable_data();
  for (std::size_t b = 0; b < B; ++b) {
    const auto [lo, hi] = range_of(l.data().subspan(b * N, N));
    for (std::size_t i = 0; i < P; ++i) v[b * P + i] = std::clamp(v[b * P + i], lo, hi);
  }
  return d;
}

Tensor regress_depth(const Tensor& p, std::span<const double> l) {
  if (p.rank() != 4 || p.dim(1) != l.size())
    throw ShapeError("regress_depth: " + std::to_string(l.size()) + " focal distances for p " + shape_str(p.shape()));
  return regress_depth(p, focal_tensor(l, p.dim(0)));
}

Tensor regress_frame_id(const Tensor& p) {
  if (p.rank() != 4) throw ShapeError("regress_frame_id: p must be [B,N,H,W], got " + shape_str(p.shape()));
  std::vector<double> idx(p.dim(1));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<double>(i + 1);
  return regress_depth(p, idx);
}

Tensor regress_uncertainty(const Tensor& p, const Tensor& l, const Tensor& depth) {
  check_prob(p, l, "regress_uncertainty");
  const std::size_t B = p.dim(0), N = p.dim(1), H = p.dim(2), W = p.dim(3), P = H * W;
  if (depth.shape() != Shape{B, H, W})
    throw ShapeError("regress_uncertainty: depth " + shape_str(depth.shape()) + " does not match p " +
                     shape_str(p.shape()));
  const auto ps = p.data(), ls = l.data(), ds = depth.data();
  std::vector<double> out(B * P);
  for (std::size_t b = 0; b < B; ++b) {
    const auto [lo, hi] = range_of(ls.subspan(b * N, N));
    const double bound = (hi - lo) / 2.0;
    for (std::size_t j = 0; j < P; ++j) {
      double var = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        const double e = ls[b * N + i] - ds[b * P + j];
        var += ps[(b * N + i) * P + j] * e * e;
      }
      out[b * P + j] = std::min(std::sqrt(var), bound);
    }
  }
  return Tensor::from({B, H, W}, std::move(out));
}

Tensor regress_uncertainty(const Tensor& p, std::span<const double> l, const Tensor& depth) {
  if (p.rank() != 4 || p.dim(1) != l.size())
    throw ShapeError("regress_uncertainty: " + std::to_string(l.size()) + " focal distances for p " +
                     shape_str(p.shape()));
  return regress_uncertainty(p, focal_tensor(l, p.dim(0)), depth);
}

DepthResult depth_result(const Tensor& p, std::span<const double> l, std::size_t b) {
  NoGradGuard guard;
  if (p.rank() != 4 || b >= p.dim(0)) throw ShapeError("depth_result: bad batch index or shape");
  const Tensor pb = ops::slice(p, 0, b, b + 1);
  const Tensor d = regress_depth(pb, l);
  const Tensor u = regress_uncertainty(pb, l, d);
  const Tensor f = regress_frame_id(pb);
  const std::size_t H = p.dim(2), W = p.dim(3);
  auto to_image = [&](const Tensor& t) {
    Image img(1, H, W);
    std::copy(t.data().begin(), t.data().end(), img.pixels.begin());
    return img;
  };
  return {to_image(d), to_image(u), to_image(f)};
}

Json MetricRecord::to_json() const {
  auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  return {{"mse", num(mse)},
          {"rms", num(rms)},
          {"log_rms", num(log_rms)},
          {"abs_rel", num(abs_rel)},
          {"sqr_rel", num(sqr_rel)},
          {"delta1", num(delta1)},
          {"delta2", num(delta2)},
          {"delta3", num(delta3)},
          {"bumpiness", num(bumpiness)},
          {"avg_unc", num(avg_unc)},
          {"valid_pixels", valid_pixels},
          {"excluded_nonpositive", excluded_nonpositive}};
}

MetricRecord MetricRecord::from_json(const Json& j) {
  auto num = [&](const char* k) {
    const Json& v = j.at(k);
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  MetricRecord r;
  r.mse = num("mse");
  r.rms = num("rms");
  r.log_rms = num("log_rms");
  r.abs_rel = num("abs_rel");
  r.sqr_rel = num("sqr_rel");
  r.delta1 = num("delta1");
  r.delta2 = num("delta2");
  r.delta3 = num("delta3");
  r.bumpiness = num("bumpiness");
  r.avg_unc = num("avg_unc");
  r.valid_pixels = j.value("valid_pixels", std::size_t{0});
  r.excluded_nonpositive = j.value("excluded_nonpositive", std::size_t{0});
  return r;
}

MetricRecord evaluate(const Image& pred, const Image& gt, const Image& mask, const std::optional<Image>& uncertainty) {
  if (pred.channels != 1 || gt.channels != 1 || mask.channels != 1 || !pred.same_extent(gt) || !pred.same_extent(mask))
    throw ShapeError("evaluate: pred, gt and mask must be single-channel maps of equal extent");
  if (uncertainty && (uncertainty->channels != 1 || !uncertainty->same_extent(pred)))
    throw ShapeError("evaluate: uncertainty map extent mismatch");
  const std::size_t H = pred.height, W = pred.width;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  MetricRecord r;
  double se = 0, unc = 0, abs_rel = 0, sqr_rel = 0, log_se = 0;
  std::size_t n_ratio = 0, n_log = 0, d1 = 0, d2 = 0, d3 = 0;
  for (std::size_t i = 0; i < H * W; ++i) {
    if (mask.pixels[i] == 0.0) continue;
    ++r.valid_pixels;
    const double p = pred.pixels[i], g = gt.pixels[i], e = p - g;
    se += e * e;
    if (uncertainty) unc += uncertainty->pixels[i];
    if (!(g > 0.0)) {
      ++r.excluded_nonpositive;
      continue;
    }
    ++n_ratio;
    abs_rel += std::abs(e) / g;
    sqr_rel += e * e / g;
    if (p > 0.0) {
      const double le = std::log(p) - std::log(g);
      log_se += le * le;
      ++n_log;
      const double ratio = std::max(p / g, g / p);
      d1 += ratio < 1.25;
      d2 += ratio < 1.25 * 1.25;
      d3 += ratio < 1.25 * 1.25 * 1.25;
    } else {
      ++r.excluded_nonpositive;
    }
  }
  if (r.valid_pixels == 0) throw EmptyMaskError("evaluate: the valid mask selects no pixel");

  const double n = static_cast<double>(r.valid_pixels);
  r.mse = se / n;
  r.rms = std::sqrt(r.mse);
  r.avg_unc = uncertainty ? unc / n : 0.0;
  r.abs_rel = n_ratio ? abs_rel / n_ratio : nan;
  r.sqr_rel = n_ratio ? sqr_rel / n_ratio : nan;
  r.log_rms = n_log ? std::sqrt(log_se / n_log) : nan;
  r.delta1 = n_ratio ? 100.0 * d1 / n_ratio : nan;
  r.delta2 = n_ratio ? 100.0 * d2 / n_ratio : nan;
  r.delta3 = n_ratio ? 100.0 * d3 / n_ratio : nan;

  double bump = 0.0;
  std::size_t n_bump = 0;
  for (std::size_t y = 1; y + 1 < H; ++y)
    for (std::size_t x = 1; x + 1 < W; ++x) {
      bool ok = true;
      for (std::size_t yy = y - 1; yy <= y + 1 && ok; ++yy)
        for (std::size_t xx = x - 1; xx <= x + 1 && ok; ++xx) ok = mask.at(0, yy, xx) != 0.0;
      if (!ok) continue;
      const double c = pred.at(0, y, x);
      const double dxx = pred.at(0, y, x + 1) - 2.0 * c + pred.at(0, y, x - 1);
      const double dyy = pred.at(0, y + 1, x) - 2.0 * c + pred.at(0, y - 1, x);
      const double dxy = (pred.at(0, y + 1, x + 1) - pred.at(0, y + 1, x - 1) - pred.at(0, y - 1, x + 1) +
                          pred.at(0, y - 1, x - 1)) / 4.0;
      bump += std::sqrt(dxx * dxx + 2.0 * dxy * dxy + dyy * dyy);
      ++n_bump;
    }
  r.bumpiness = n_bump ? 100.0 * bump / n_bump : 0.0;
  return r;
}

MetricRecord aggregate(std::span<const MetricRecord> records) {
  if (records.empty()) throw ShapeError("aggregate: no records");
  MetricRecord a;
  const double n = static_cast<double>(records.size());
  for (const MetricRecord& r : records) {
    a.mse += r.mse / n;
    a.rms += r.rms / n;
    a.log_rms += r.log_rms / n;
    a.abs_rel += r.abs_rel / n;
    a.sqr_rel += r.sqr_rel / n;
    a.delta1 += r.delta1 / n;
    a.delta2 += r.delta2 / n;
    a.delta3 += r.delta3 / n;
    a.bumpiness += r.bumpiness / n;
    a.avg_unc += r.avg_unc / n;
    a.valid_pixels += r.valid_pixels;
    a.excluded_nonpositive += r.excluded_nonpositive;
  }
  return a;
}

void write_metrics_jsonl(const std::string& path, std::span<const std::string> ids,
                         std::span<const MetricRecord> records) {
  if (ids.size() != records.size()) throw ShapeError("write_metrics_jsonl: ids and records differ in length");
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  for (std::size_t i = 0; i < records.size(); ++i) {
    Json j = records[i].to_json();
    j["id"] = ids[i];
    os << j.dump() << '\n';
  }
  Json agg = aggregate(records).to_json();
  agg["id"] = "aggregate";
  os << agg.dump() << '\n';
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace dfv
