#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "dfv/image.hpp"
#include "dfv/metrics.hpp"
#include "dfv/tensor.hpp"

// Independent reference implementations shared by unit and acceptance tests.
namespace dfv::testing {

inline std::vector<double> random_simplex(std::size_t n, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(n);
  double s = 0;
  for (double& v : p) s += (v = e(rng));
  for (double& v : p) v /= s;
  return p;
}

// Straight per-pixel loops over the stated definitions.
inline MetricRecord naive_metrics(const Image& pred, const Image& gt, const Image& mask, const Image& unc) {
  MetricRecord r;
  double n = 0, se = 0, u = 0, ar = 0, sr = 0, ls = 0, d1 = 0, d2 = 0, d3 = 0, nr = 0;
  for (std::size_t y = 0; y < pred.height; ++y)
    for (std::size_t x = 0; x < pred.width; ++x) {
      if (mask.at(0, y, x) == 0) continue;
      const double p = pred.at(0, y, x), g = gt.at(0, y, x);
      n += 1;
      se += (p - g) * (p - g);
      u += unc.at(0, y, x);
      nr += 1;
      ar += std::abs(p - g) / g;
      sr += (p - g) * (p - g) / g;
      ls += (std::log(p) - std::log(g)) * (std::log(p) - std::log(g));
      const double t = std::max(p / g, g / p);
      if (t < 1.25) d1 += 1;
      if (t < std::pow(1.25, 2)) d2 += 1;
      if (t < std::pow(1.25, 3)) d3 += 1;
    }
  r.mse = se / n;
  r.rms = std::sqrt(se / n);
  r.avg_unc = u / n;
  r.abs_rel = ar / nr;
  r.sqr_rel = sr / nr;
  r.log_rms = std::sqrt(ls / nr);
  r.delta1 = 100 * d1 / nr;
  r.delta2 = 100 * d2 / nr;
  r.delta3 = 100 * d3 / nr;
  double b = 0, nb = 0;
  for (std::size_t y = 1; y + 1 < pred.height; ++y)
    for (std::size_t x = 1; x + 1 < pred.width; ++x) {
      bool ok = true;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) ok = ok && mask.at(0, y + dy, x + dx) != 0;
      if (!ok) continue;
      auto P = [&](int dy, int dx) { return pred.at(0, y + dy, x + dx); };
      const double hxx = P(0, 1) - 2 * P(0, 0) + P(0, -1);
      const double hyy = P(1, 0) - 2 * P(0, 0) + P(-1, 0);
      const double hxy = (P(1, 1) - P(1, -1) - P(-1, 1) + P(-1, -1)) / 4;
      b += std::sqrt(hxx * hxx + hyy * hyy + 2 * hxy * hxy);
      nb += 1;
    }
  r.bumpiness = nb > 0 ? 100 * b / nb : 0;
  return r;
}

inline Image random_map(std::size_t h, std::size_t w, double lo, double hi, std::mt19937_64& rng) {
  Image m(1, h, w);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : m.pixels) v = u(rng);
  return m;
}

/// V_i = Q_i - Q_{i+1}, V_N = Q_N along axis 2 of [B,F,N,H,W], one element at a time.
inline std::vector<double> brute_force_difference(const Tensor& q) {
  const auto& s = q.shape();
  std::vector<double> out(q.numel());
  auto idx = [&](std::size_t b, std::size_t f, std::size_t n, std::size_t y, std::size_t x) {
    return (((b * s[1] + f) * s[2] + n) * s[3] + y) * s[4] + x;
  };
  for (std::size_t b = 0; b < s[0]; ++b)
    for (std::size_t f = 0; f < s[1]; ++f)
      for (std::size_t n = 0; n < s[2]; ++n)
        for (std::size_t y = 0; y < s[3]; ++y)
          for (std::size_t x = 0; x < s[4]; ++x)
            out[idx(b, f, n, y, x)] = n + 1 < s[2] ? q.data()[idx(b, f, n, y, x)] - q.data()[idx(b, f, n + 1, y, x)]
                                                   : q.data()[idx(b, f, n, y, x)];
  return out;
}

}  // namespace dfv::testing
