#pragma once

#include <cstdint>
#include <vector>

#include "dfv/tensor.hpp"

namespace dfv {

/// Adam moments for an ordered parameter list. m[i]/v[i] mirror params[i].
struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m, v;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update over params using their accumulated grads.
/// Parameters without a gradient are left untouched. Moment buffers are sized
/// lazily on the first call; a later size mismatch throws ShapeError.
void adam_step(std::vector<Tensor>& params, AdamState& state);

void zero_grads(std::vector<Tensor>& params);

}  // namespace dfv
