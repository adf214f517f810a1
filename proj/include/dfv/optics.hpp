#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "dfv/image.hpp"

namespace dfv {

/// Thin-lens camera. Lengths in meters; sensor extents in pixels.
struct CameraModel {
  double focal_length = 0.025;
  double aperture = 0.0125;
  double pixel_pitch = 2e-5;
  std::size_t width = 64;
  std::size_t height = 64;

  /// Throws ConfigError unless every physical quantity is positive.
  void validate() const;
};

/// Circle-of-confusion radius in pixels for a point at `depth` when the lens
/// is focused at `focus`: (A/2) * |d - s| / d * f / (s - f) / pitch.
/// Throws ConfigError when focus <= focal length or depth <= 0.
double coc_radius_pixels(double depth, double focus, const CameraModel& cam);

/// Area-normalized pillbox with rim weights from 8x8 subpixel coverage.
/// Radii too small to cover any subsample give the 1x1 identity kernel.
Image disc_kernel(double radius);

/// Disc blur with replicated borders. Constant images are returned unchanged.
Image blur_disc(const Image& img, double radius);

struct SceneLayer {
  double depth = 1.0;
  Image texture;  // C x H x W in [0,1]
  Image alpha;    // 1 x H x W, {0,1}
};

/// Fronto-parallel layers ordered far to near. Pixels no layer covers keep
/// background_depth and render black.
struct SceneSpec {
  std::vector<SceneLayer> layers;
  double background_depth = 1.0;

  void validate(const CameraModel& cam) const;
};

struct FocalStack {
  std::vector<Image> frames;
  std::vector<double> focal_distances;
  std::optional<Image> gt_depth;
  std::optional<Image> valid_mask;

  std::size_t size() const { return frames.size(); }
  /// N >= 2, strictly ascending focal distances, consistent extents.
  void validate() const;
  /// Uncalibrated form: focal distances mapped affinely onto [0,1]; the
  /// ground truth goes through the same map.
  FocalStack normalized() const;
};

/// 1 where depth lies inside [min l, max l] (and is positive), else 0.
Image focal_range_mask(const Image& depth, std::span<const double> focal_distances);

struct RenderOptions {
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
};

/// Composites each frame far-to-near with every layer blurred by its own CoC.
/// gt_depth is the depth of the front-most opaque layer.
FocalStack render_focal_stack(const SceneSpec& scene, std::span<const double> focus_distances,
                              const CameraModel& cam, const RenderOptions& options = {});

enum class FocusSpacing { Linear, Inverse };

/// Parameters for random scene synthesis.
struct SynthConfig {
  CameraModel camera;
  std::size_t num_samples = 10;
  std::size_t num_frames = 5;
  double focus_min = 0.5;
  double focus_max = 2.0;
  FocusSpacing focus_spacing = FocusSpacing::Inverse;
  std::optional<double> depth_min;  // defaults to focus_min
  std::optional<double> depth_max;  // defaults to focus_max
  std::size_t max_layers = 3;       // foreground shapes per scene, 0..max_layers
  double texture_contrast = 1.0;
  double textureless_prob = 0.0;    // chance that a layer is flat
  double noise_sigma = 0.0;
  bool color = true;

  void validate() const;
};

/// Ascending focus distances covering [focus_min, focus_max].
std::vector<double> focus_schedule(const SynthConfig& cfg);

/// Band-limited value noise or a checkerboard, tinted per channel.
Image procedural_texture(std::size_t channels, std::size_t height, std::size_t width, double contrast,
                         std::mt19937_64& rng);

SceneSpec random_scene(const SynthConfig& cfg, std::mt19937_64& rng);

/// Deterministic in (cfg, sample_seed).
FocalStack synthesize_sample(const SynthConfig& cfg, std::uint64_t sample_seed);

}  // namespace dfv
