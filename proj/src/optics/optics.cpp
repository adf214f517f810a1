#include <algorithm>
#include <cmath>

#include "dfv/error.hpp"
#include "dfv/optics.hpp"

namespace dfv {

void CameraModel::validate() const {
  if (!(focal_length > 0.0) || !(aperture > 0.0) || !(pixel_pitch > 0.0) || width == 0 || height == 0)
    throw ConfigError("camera: focal_length, aperture, pixel_pitch and sensor extents must be positive");
}

double coc_radius_pixels(double depth, double focus, const CameraModel& cam) {
  if (!(depth > 0.0)) throw ConfigError("coc_radius_pixels: object depth must be positive");
  if (!(focus > cam.focal_length))
    throw ConfigError("coc_radius_pixels: focus distance " + std::to_string(focus) +
                      " must exceed the focal length " + std::to_string(cam.focal_length));
  return (cam.aperture / 2.0) * std::abs(depth - focus) / depth * cam.focal_length / (focus - cam.focal_length) /
         cam.pixel_pitch;
}

Image disc_kernel(double radius) {
  constexpr int kSub = 8;
  if (!(radius >= 0.0) || !std::isfinite(radius)) throw ConfigError("disc_kernel: radius must be finite and >= 0");
  const int R = static_cast<int>(std::ceil(radius));
  const std::size_t size = static_cast<std::size_t>(2 * R + 1);
  Image k(1, size, size);
  const double r2 = radius * radius;
  double total = 0.0;
  for (int dy = -R; dy <= R; ++dy)
    for (int dx = -R; dx <= R; ++dx) {
      int hits = 0;
      for (int sy = 0; sy < kSub; ++sy)
        for (int sx = 0; sx < kSub; ++sx) {
          const double py = dy + (sy + 0.5) / kSub - 0.5;
          const double px = dx + (sx + 0.5) / kSub - 0.5;
          if (px * px + py * py <= r2) ++hits;
        }
      k.at(0, static_cast<std::size_t>(dy + R), static_cast<std::size_t>(dx + R)) = hits;
      total += hits;
    }
  if (total == 0.0) return Image(1, 1, 1, 1.0);
  for (double& v : k.pixels) v /= total;
  return k;
}

Image blur_disc(const Image& img, double radius) {
  bool constant = true;
  for (std::size_t c = 0; c < img.channels && constant; ++c) {
    const double* p = img.pixels.data() + c * img.plane();
    constant = std::all_of(p, p + img.plane(), [&](double v) { return v == p[0]; });
  }
  const Image kernel = disc_kernel(radius);
  if (constant || kernel.width == 1) return img;

  const std::size_t R = kernel.width / 2;
  struct Tap {
    std::size_t dy, dx;
    double w;
  };
  std::vector<Tap> taps;
  for (std::size_t y = 0; y < kernel.height; ++y)
    for (std::size_t x = 0; x < kernel.width; ++x)
      if (kernel.at(0, y, x) > 0.0) taps.push_back({y, x, kernel.at(0, y, x)});

  const std::size_t H = img.height, W = img.width, PW = W + 2 * R, PH = H + 2 * R;
  Image out(img.channels, H, W);
  std::vector<double> padded(PH * PW);
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < PH; ++y) {
      const std::size_t sy = static_cast<std::size_t>(
          std::clamp<long>(static_cast<long>(y) - static_cast<long>(R), 0, static_cast<long>(H) - 1));
      for (std::size_t x = 0; x < PW; ++x) {
        const std::size_t sx = static_cast<std::size_t>(
            std::clamp<long>(static_cast<long>(x) - static_cast<long>(R), 0, static_cast<long>(W) - 1));
        padded[y * PW + x] = img.at(c, sy, sx);
      }
    }
    double* dst = out.pixels.data() + c * img.plane();
    for (std::size_t y = 0; y < H; ++y)
      for (const Tap& t : taps) {
        const double* src = padded.data() + (y + t.dy) * PW + t.dx;
        double* row = dst + y * W;
        for (std::size_t x = 0; x < W; ++x) row[x] += t.w * src[x];
      }
  }
  return out;
}

void SceneSpec::validate(const CameraModel& cam) const {
  if (layers.empty()) throw ConfigError("scene: at least one layer is required");
  if (!(background_depth > 0.0)) throw ConfigError("scene: background depth must be positive");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const SceneLayer& l = layers[i];
    if (!(l.depth > 0.0)) throw ConfigError("scene: layer " + std::to_string(i) + " depth must be positive");
    if (l.texture.height != cam.height || l.texture.width != cam.width || l.alpha.height != cam.height ||
        l.alpha.width != cam.width || l.alpha.channels != 1)
      throw ConfigError("scene: layer " + std::to_string(i) + " does not match the sensor extents");
    if (l.texture.channels != layers[0].texture.channels)
      throw ConfigError("scene: layer " + std::to_string(i) + " channel count differs");
    for (std::size_t j = 0; j < i; ++j)
      if (layers[j].depth == l.depth) throw ConfigError("scene: layer depths must be distinct");
  }
}

void FocalStack::validate() const {
  if (frames.size() < 2) throw ConfigError("focal stack needs at least 2 frames");
  if (focal_distances.size() != frames.size())
    throw ConfigError("focal stack has " + std::to_string(frames.size()) + " frames but " +
                      std::to_string(focal_distances.size()) + " focal distances");
  for (std::size_t i = 1; i < focal_distances.size(); ++i)
    if (!(focal_distances[i] > focal_distances[i - 1]))
      throw ConfigError("focal distances must be strictly ascending (index " + std::to_string(i) + ")");
  for (const Image& f : frames)
    if (!f.same_extent(frames[0]) || f.channels != frames[0].channels)
      throw ConfigError("focal stack frames differ in extent");
  if (gt_depth && !gt_depth->same_extent(frames[0])) throw ConfigError("ground-truth depth extent mismatch");
  if (valid_mask && !valid_mask->same_extent(frames[0])) throw ConfigError("valid mask extent mismatch");
}

FocalStack FocalStack::normalized() const {
  validate();
  FocalStack out = *this;
  const double lo = focal_distances.front(), span = focal_distances.back() - lo;
  for (double& l : out.focal_distances) l = (l - lo) / span;
  out.focal_distances.front() = 0.0;
  out.focal_distances.back() = 1.0;
  if (out.gt_depth)
    for (double& d : out.gt_depth->pixels) d = (d - lo) / span;
  return out;
}

Image focal_range_mask(const Image& depth, std::span<const double> focal_distances) {
  if (focal_distances.empty()) throw ConfigError("focal_range_mask: no focal distances");
  const auto [mn, mx] = std::minmax_element(focal_distances.begin(), focal_distances.end());
  Image mask(1, depth.height, depth.width);
  for (std::size_t i = 0; i < depth.plane(); ++i) {
    const double d = depth.pixels[i];
    mask.pixels[i] = (d > 0.0 && d >= *mn && d <= *mx) ? 1.0 : 0.0;
  }
  return mask;
}

FocalStack render_focal_stack(const SceneSpec& scene, std::span<const double> focus_distances,
                              const CameraModel& cam, const RenderOptions& options) {
  cam.validate();
  scene.validate(cam);
  if (focus_distances.size() < 2) throw ConfigError("render_focal_stack: need at least 2 focus distances");
  for (std::size_t i = 0; i < focus_distances.size(); ++i) {
    if (!(focus_distances[i] > cam.focal_length))
      throw ConfigError("render_focal_stack: focus distance must exceed the focal length");
    if (i > 0 && !(focus_distances[i] > focus_distances[i - 1]))
      throw ConfigError("render_focal_stack: focus distances must be strictly ascending");
  }

  const std::size_t C = scene.layers[0].texture.channels, H = cam.height, W = cam.width;
  std::vector<Image> premultiplied;
  for (const SceneLayer& l : scene.layers) {
    Image p = l.texture;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < H * W; ++i) p.pixels[c * H * W + i] *= l.alpha.pixels[i];
    premultiplied.push_back(std::move(p));
  }

  FocalStack stack;
  stack.focal_distances.assign(focus_distances.begin(), focus_distances.end());
  std::mt19937_64 noise_rng(options.noise_seed);
  std::normal_distribution<double> noise(0.0, options.noise_sigma > 0.0 ? options.noise_sigma : 1.0);
  for (double s : focus_distances) {
    Image frame(C, H, W, 0.0);
    for (std::size_t li = 0; li < scene.layers.size(); ++li) {
      const double r = coc_radius_pixels(scene.layers[li].depth, s, cam);
      const Image color = blur_disc(premultiplied[li], r);
      const Image cover = blur_disc(scene.layers[li].alpha, r);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < H * W; ++i) {
          double& v = frame.pixels[c * H * W + i];
          v = color.pixels[c * H * W + i] + (1.0 - cover.pixels[i]) * v;
        }
    }
    for (double& v : frame.pixels) {
      if (options.noise_sigma > 0.0) v += noise(noise_rng);
      v = std::clamp(v, 0.0, 1.0);
    }
    stack.frames.push_back(std::move(frame));
  }

  Image depth(1, H, W, scene.background_depth);
  for (const SceneLayer& l : scene.layers)
    for (std::size_t i = 0; i < H * W; ++i)
      if (l.alpha.pixels[i] >= 0.5) depth.pixels[i] = l.depth;
  stack.valid_mask = focal_range_mask(depth, stack.focal_distances);
  stack.gt_depth = std::move(depth);
  return stack;
}

}  // namespace dfv
