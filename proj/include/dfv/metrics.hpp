#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dfv/config_json.hpp"
#include "dfv/image.hpp"
#include "dfv/tensor.hpp"

namespace dfv {

/// Expected focal distance under p. p: [B,N,H,W], l: [B,N] -> [B,H,W].
/// Differentiable in p; values are clamped into [min l, max l] to absorb rounding.
Tensor regress_depth(const Tensor& p, const Tensor& l);
/// Same focal distances for every batch element.
Tensor regress_depth(const Tensor& p, std::span<const double> l);

/// Expected 1-based frame index, [B,H,W].
Tensor regress_frame_id(const Tensor& p);

/// Weighted standard deviation sqrt(sum p (l - d)^2), [B,H,W]; not differentiable.
/// Clamped to (max l - min l) / 2.
Tensor regress_uncertainty(const Tensor& p, const Tensor& l, const Tensor& depth);
Tensor regress_uncertainty(const Tensor& p, std::span<const double> l, const Tensor& depth);

/// Broadcasts one focal-distance list to a [B,N] tensor.
Tensor focal_tensor(std::span<const double> l, std::size_t batch);

struct DepthResult {
  Image depth;
  Image uncertainty;
  Image frame_id;
};

/// Regression outputs for batch element b of a [B,N,H,W] probability volume.
DepthResult depth_result(const Tensor& p, std::span<const double> l, std::size_t b = 0);

struct MetricRecord {
  double mse = 0, rms = 0, log_rms = 0, abs_rel = 0, sqr_rel = 0;
  double delta1 = 0, delta2 = 0, delta3 = 0;  // percent
  double bumpiness = 0, avg_unc = 0;
  std::size_t valid_pixels = 0;        // mask on
  std::size_t excluded_nonpositive = 0;  // valid but gt <= 0 (or pred <= 0 for the log metric)

  Json to_json() const;
  static MetricRecord from_json(const Json& j);
};

/// Metrics over pixels with mask != 0. Ratio and log metrics skip gt <= 0; the
/// log metric also skips pred <= 0, and delta counts pred <= 0 as a miss.
/// Bumpiness is 100 x the mean Frobenius norm of the central-difference
/// Hessian of pred over pixels whose 3x3 neighborhood is fully valid.
/// Throws EmptyMaskError when no pixel is valid.
MetricRecord evaluate(const Image& pred, const Image& gt, const Image& mask,
                      const std::optional<Image>& uncertainty = std::nullopt);

/// Field-wise mean over records; pixel tallies are summed.
MetricRecord aggregate(std::span<const MetricRecord> records);

/// JSON-lines: one {"id", ...metrics} line per record and a final
/// {"id": "aggregate", ...} line.
void write_metrics_jsonl(const std::string& path, std::span<const std::string> ids,
                         std::span<const MetricRecord> records);

}  // namespace dfv
