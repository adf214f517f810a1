#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "dfv/image.hpp"
#include "dfv/optics.hpp"
#include "dfv/tensor.hpp"

namespace dfv::focus {

/// Window sum of |4p - (up + down + left + right)| with replicated borders.
/// Multi-channel input is reduced to its channel mean first.
Image laplacian_focus_measure(const Image& frame, std::size_t window = 9);

/// Stacks N same-shape [B,F,H,W] tensors into a [B,F,N,H,W] volume.
Tensor build_focus_volume(std::span<const Tensor> frames);

/// Unfolds [B*N,F,H,W] encoder output (frame-major inside each batch element)
/// into a [B,F,N,H,W] volume.
Tensor volume_from_folded(const Tensor& features, std::size_t batch, std::size_t frames);

/// V_i = Q_i - Q_{i+1} for i < N, V_N = Q_N, along frame_axis.
Tensor differentiate_volume(const Tensor& volume, std::size_t frame_axis = 2);
/// How many times differentiate_volume has run in this process.
std::size_t differentiate_calls();

/// Per-pixel, per-feature min-max map onto [0,1] along frame_axis; constant
/// traces map to 0. Not differentiable.
Tensor normalize_volume(const Tensor& volume, std::size_t frame_axis = 2);

struct ArgmaxResult {
  Tensor depth;        // [B,H,W] focal distance of the winning frame
  Tensor frame_index;  // [B,H,W] 1-based winning frame
};

/// Per-pixel argmax over frames of a [B,N,H,W] score volume; ties go to the
/// smaller frame index.
ArgmaxResult argmax_depth(const Tensor& scores, std::span<const double> focal_distances);

/// Laplacian measure of every frame as a [1,N,H,W] tensor.
Tensor measure_volume(const FocalStack& stack, std::size_t window = 9);

struct TraceRow {
  std::size_t frame_index;  // 1-based
  double raw;
  double differential;
  double normalized;
};

/// Differential and min-max normalized companions of a raw per-frame trace.
std::vector<TraceRow> trace_table(std::span<const double> raw);
/// Laplacian trace of one pixel through the stack.
std::vector<TraceRow> trace_demo(const FocalStack& stack, std::size_t y, std::size_t x, std::size_t window = 9);
/// CSV with header frame_index,raw,differential,normalized.
void write_trace_csv(const std::filesystem::path& path, std::span<const TraceRow> rows);

/// Positions j (1-based) where d_j and d_{j+1} have strictly opposite signs.
std::vector<std::size_t> sign_changes(std::span<const double> d);

}  // namespace dfv::focus
