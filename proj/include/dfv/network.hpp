#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dfv/ops.hpp"
#include "dfv/tensor.hpp"

namespace dfv {

struct NetworkConfig {
  std::size_t base_width = 8;     // channels at the finest scale
  std::size_t num_scales = 4;     // how many of the finest scales get a volume and a head
  bool use_dfv = true;            // false: plain focus volume
  bool use_spp_2d = true;
  std::size_t spp3d_levels = 2;   // finest scales that get 3D SPP
  std::size_t input_channels = 3;

  void validate() const;
  bool operator==(const NetworkConfig&) const = default;
};

/// Pooling scales m_a: four values spaced linearly over [1, floor(min(extents)/2)],
/// truncated to integers and deduplicated.
std::vector<std::size_t> spp_scales(const std::vector<std::size_t>& extents);
/// Pooling window floor(extent / m) per axis.
std::vector<std::size_t> spp_kernel(const std::vector<std::size_t>& extents, std::size_t m);

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Multi-scale focus network. Parameters and batch-norm running statistics
/// are registered by name in construction order.
class Network {
 public:
  Network(const NetworkConfig& cfg, std::uint64_t seed);
  ~Network();
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;

  const NetworkConfig& config() const;

  /// frames [B*N,C,H,W] with H, W multiples of 32 -> four FPN maps [B*N,w,H/s,W/s]
  /// for s = 4, 8, 16, 32 (finest first).
  std::vector<Tensor> encode(const Tensor& frames, bool training);

  /// Volumes [B,w,N,h_s,w_s], finest first, one per used scale -> probability
  /// volumes [B,N,h_s,w_s], finest first.
  std::vector<Tensor> aggregate(const std::vector<Tensor>& volumes, bool training);

  /// stack [B,N,C,H,W] with values in [0,1] -> num_scales probability volumes
  /// (finest first) at the padded resolution divided by 4, 8, 16, 32.
  std::vector<Tensor> forward(const Tensor& stack, bool training);

  /// Trainable tensors.
  const std::vector<NamedTensor>& parameters() const;
  /// Batch-norm running statistics.
  const std::vector<NamedTensor>& buffers() const;
  std::size_t parameter_count() const;

  /// Volumes and heads instantiated by the last forward / at construction.
  std::size_t last_volume_count() const;
  std::size_t head_count() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Upsamples a probability volume [B,N,h,w] to [B,N,H,W] given the padded
/// extents the network saw, cropping the padding away.
Tensor upsample_to_input(const Tensor& prob, std::size_t padded_h, std::size_t padded_w, std::size_t height,
                         std::size_t width);

/// Next multiple of 32.
std::size_t padded_extent(std::size_t n);

}  // namespace dfv
