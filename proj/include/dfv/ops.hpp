#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dfv/tensor.hpp"

namespace dfv::ops {

// Elementwise. Binary ops require identical shapes (no broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor relu(const Tensor& x);
Tensor square(const Tensor& x);

// Reductions to a shape-[1] scalar.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Layout.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
/// Inserts a new axis at `axis` and places parts[i] at index i along it.
Tensor stack(std::span<const Tensor> parts, std::size_t axis);

/// Numerically stable softmax (max-subtracted) along one axis.
Tensor softmax(const Tensor& x, std::size_t axis);

/// x: [B,C,H,W], weight: [F,C,k,k], optional bias [F] (pass an undefined Tensor for none).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);
/// x: [B,C,D,H,W], weight: [F,C,k,k,k].
Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

/// Running statistics owned by a batch-norm layer.
struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;

  explicit BatchNormStats(std::size_t channels = 1);
};

/// Training mode normalizes with batch statistics (biased variance) and folds
/// them into the running stats (unbiased variance); eval mode uses the running stats.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                  bool training, std::size_t channel_axis = 1);

/// Non-overlapping average pooling over the trailing window.size() axes
/// (stride equals window, output extent is floor(in / window)).
Tensor avg_pool(const Tensor& x, const std::vector<std::size_t>& window);

/// Linear resampling of the trailing target.size() axes with the
/// align-corners-false convention: bilinear for 2 axes, trilinear for 3.
Tensor upsample_linear(const Tensor& x, const std::vector<std::size_t>& target);

/// Zero-pads the last two axes at the bottom/right.
Tensor pad2d(const Tensor& x, std::size_t pad_bottom, std::size_t pad_right);
/// Keeps the top-left height x width window of the last two axes.
Tensor crop2d(const Tensor& x, std::size_t height, std::size_t width);

/// Mean Huber loss with transition at 1: 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise.
/// The optional {0,1} mask selects elements; an all-zero mask throws EmptyMaskError.
Tensor smooth_l1(const Tensor& pred, const Tensor& target, const Tensor& mask = Tensor());

/// p: [B,N,...], values: [B,N] -> [B,...]; out[b,...] = sum_i p[b,i,...] * values[b,i].
Tensor expectation(const Tensor& p, const Tensor& values);

}  // namespace dfv::ops
