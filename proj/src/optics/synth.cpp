#include <algorithm>
#include <cmath>

#include "dfv/error.hpp"
#include "dfv/optics.hpp"

namespace dfv {

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::size_t uniform_int(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Bilinear interpolation of a random lattice with the given cell size.
std::vector<double> value_noise(std::size_t h, std::size_t w, double cell, std::mt19937_64& rng) {
  const std::size_t gh = static_cast<std::size_t>(std::ceil(h / cell)) + 2;
  const std::size_t gw = static_cast<std::size_t>(std::ceil(w / cell)) + 2;
  std::vector<double> lattice(gh * gw);
  for (double& v : lattice) v = uniform(rng, 0.0, 1.0);
  std::vector<double> out(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = y / cell;
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const double ty = fy - y0;
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = x / cell;
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const double tx = fx - x0;
      const double a = lattice[y0 * gw + x0], b = lattice[y0 * gw + x0 + 1];
      const double c = lattice[(y0 + 1) * gw + x0], d = lattice[(y0 + 1) * gw + x0 + 1];
      const double top = a + tx * (b - a), bottom = c + tx * (d - c);
      out[y * w + x] = top + ty * (bottom - top);
    }
  }
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  camera.validate();
  if (num_samples == 0) throw ConfigError("synth: num_samples must be positive");
  if (num_frames < 2) throw ConfigError("synth: num_frames must be at least 2");
  if (!(focus_min > camera.focal_length))
    throw ConfigError("synth: focus_min must exceed the camera focal length");
  if (!(focus_max > focus_min)) throw ConfigError("synth: focus_max must exceed focus_min");
  const double dmin = depth_min.value_or(focus_min), dmax = depth_max.value_or(focus_max);
  if (!(dmin > 0.0) || !(dmax > dmin)) throw ConfigError("synth: depth range must be positive and non-empty");
  if (!(texture_contrast >= 0.0) || texture_contrast > 1.0) throw ConfigError("synth: texture_contrast must be in [0,1]");
  if (!(textureless_prob >= 0.0) || textureless_prob > 1.0)
    throw ConfigError("synth: textureless_prob must be in [0,1]");
  if (!(noise_sigma >= 0.0)) throw ConfigError("synth: noise_sigma must be >= 0");
}

std::vector<double> focus_schedule(const SynthConfig& cfg) {
  const std::size_t n = cfg.num_frames;
  std::vector<double> l(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n - 1);
    if (cfg.focus_spacing == FocusSpacing::Linear) {
      l[i] = cfg.focus_min + t * (cfg.focus_max - cfg.focus_min);
    } else {
      const double inv_near = 1.0 / cfg.focus_min, inv_far = 1.0 / cfg.focus_max;
      l[i] = 1.0 / (inv_near + t * (inv_far - inv_near));
    }
  }
  l.front() = cfg.focus_min;
  l.back() = cfg.focus_max;
  return l;
}

Image procedural_texture(std::size_t channels, std::size_t height, std::size_t width, double contrast,
                         std::mt19937_64& rng) {
  std::vector<double> g(height * width, 0.0);
  if (uniform(rng, 0.0, 1.0) < 0.7) {
    double cell = uniform(rng, 3.0, 8.0), amp = 1.0, total = 0.0;
    for (int octave = 0; octave < 3; ++octave) {
      const std::vector<double> n = value_noise(height, width, cell, rng);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += amp * n[i];
      total += amp;
      amp *= 0.5;
      cell = std::max(1.5, cell * 0.5);
    }
    const auto [mn, mx] = std::minmax_element(g.begin(), g.end());
    const double lo = *mn, span = std::max(*mx - *mn, 1e-12);
    for (double& v : g) v = (v - lo) / span;
  } else {
    const std::size_t period = uniform_int(rng, 2, 8);
    const std::size_t oy = uniform_int(rng, 0, 2 * period - 1), ox = uniform_int(rng, 0, 2 * period - 1);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        g[y * width + x] = (((y + oy) / period + (x + ox) / period) % 2 == 0) ? 1.0 : 0.0;
  }

  Image tex(channels, height, width);
  for (std::size_t c = 0; c < channels; ++c) {
    const double base = uniform(rng, 0.3, 0.7);
    const double amp = uniform(rng, 0.6, 1.0) * contrast;
    for (std::size_t i = 0; i < g.size(); ++i)
      tex.pixels[c * g.size() + i] = std::clamp(base + amp * (g[i] - 0.5), 0.0, 1.0);
  }
  return tex;
}

SceneSpec random_scene(const SynthConfig& cfg, std::mt19937_64& rng) {
  const std::size_t H = cfg.camera.height, W = cfg.camera.width, C = cfg.color ? 3 : 1;
  const double dmin = cfg.depth_min.value_or(cfg.focus_min), dmax = cfg.depth_max.value_or(cfg.focus_max);
  const std::size_t shapes = uniform_int(rng, 0, cfg.max_layers);

  // Uniform in inverse depth, so near and far planes get comparable defocus spread.
  std::vector<double> depths;
  while (depths.size() < shapes + 1) {
    const double d = 1.0 / uniform(rng, 1.0 / dmax, 1.0 / dmin);
    if (std::find(depths.begin(), depths.end(), d) == depths.end()) depths.push_back(d);
  }
  std::sort(depths.begin(), depths.end(), std::greater<>());

  auto texture = [&] {
    if (uniform(rng, 0.0, 1.0) < cfg.textureless_prob) {
      Image flat(C, H, W);
      for (std::size_t c = 0; c < C; ++c) {
        const double v = uniform(rng, 0.2, 0.8);
        std::fill_n(flat.pixels.begin() + static_cast<std::ptrdiff_t>(c * H * W), H * W, v);
      }
      return flat;
    }
    return procedural_texture(C, H, W, cfg.texture_contrast, rng);
  };

  SceneSpec scene;
  scene.background_depth = depths.front();
  scene.layers.push_back({depths.front(), texture(), Image(1, H, W, 1.0)});
  for (std::size_t s = 1; s < depths.size(); ++s) {
    Image alpha(1, H, W, 0.0);
    const double cy = uniform(rng, 0.0, H), cx = uniform(rng, 0.0, W);
    const double ry = uniform(rng, 0.15, 0.4) * H, rx = uniform(rng, 0.15, 0.4) * W;
    const bool ellipse = uniform(rng, 0.0, 1.0) < 0.5;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double u = (y + 0.5 - cy) / ry, v = (x + 0.5 - cx) / rx;
        const bool inside = ellipse ? u * u + v * v <= 1.0 : std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
        alpha.at(0, y, x) = inside ? 1.0 : 0.0;
      }
    scene.layers.push_back({depths[s], texture(), std::move(alpha)});
  }
  return scene;
}

FocalStack synthesize_sample(const SynthConfig& cfg, std::uint64_t sample_seed) {
  cfg.validate();
  std::mt19937_64 rng(sample_seed);
  const SceneSpec scene = random_scene(cfg, rng);
  RenderOptions opts;
  opts.noise_sigma = cfg.noise_sigma;
  opts.noise_seed = sample_seed ^ 0x9e3779b97f4a7c15ULL;
  const std::vector<double> l = focus_schedule(cfg);
  return render_focal_stack(scene, l, cfg.camera, opts);
}

}  // namespace dfv
