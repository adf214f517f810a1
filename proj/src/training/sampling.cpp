#include <algorithm>
#include <numeric>

#include "dfv/error.hpp"
#include "dfv/ops.hpp"
#include "dfv/training.hpp"

namespace dfv {

SamplingPolicy parse_policy(std::string_view name) {
  if (name == "random") return SamplingPolicy::Random;
  if (name == "equidistant") return SamplingPolicy::Equidistant;
  throw ConfigError("unknown sampling policy '" + std::string(name) + "' (expected random or equidistant)");
}

const char* policy_name(SamplingPolicy p) { return p == SamplingPolicy::Random ? "random" : "equidistant"; }

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, SamplingPolicy policy, std::mt19937_64& rng) {
  if (k < 2 || k > n)
    throw ConfigError("cannot sample " + std::to_string(k) + " frames from a stack of " + std::to_string(n));
  std::vector<std::size_t> idx;
  if (policy == SamplingPolicy::Random) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = std::uniform_int_distribution<std::size_t>(i, n - 1)(rng);
      std::swap(all[i], all[j]);
    }
    idx.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(idx.begin(), idx.end());
    return idx;
  }
  // 1-based position 1 + j (n-1)/(k-1), rounded half up in integer arithmetic.
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t one_based = 1 + (2 * j * (n - 1) + (k - 1)) / (2 * (k - 1));
    if (idx.empty() || idx.back() != one_based - 1) idx.push_back(one_based - 1);
  }
  // Backfill duplicates with the nearest unused index (never triggers for k <= n, kept for safety).
  while (idx.size() < k) {
    std::vector<bool> used(n, false);
    for (std::size_t i : idx) used[i] = true;
    std::size_t best = n;
    for (std::size_t d = 1; d < n && best == n; ++d)
      for (std::size_t i : idx) {
        if (i >= d && !used[i - d]) { best = i - d; break; }
        if (i + d < n && !used[i + d]) { best = i + d; break; }
      }
    idx.push_back(best);
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

FocalStack sample_frames(const FocalStack& stack, std::size_t k, SamplingPolicy policy, std::mt19937_64& rng) {
  stack.validate();
  const auto idx = sample_indices(stack.size(), k, policy, rng);
  FocalStack out;
  for (std::size_t i : idx) {
    out.frames.push_back(stack.frames[i]);
    out.focal_distances.push_back(stack.focal_distances[i]);
  }
  out.gt_depth = stack.gt_depth;
  out.valid_mask = stack.valid_mask;
  return out;
}

LossWeights loss_weights(std::span<const std::uint64_t> alpha, std::size_t num_scales) {
  if (num_scales == 0 || num_scales > alpha.size())
    throw ConfigError("need " + std::to_string(num_scales) + " loss weights, have " + std::to_string(alpha.size()));
  LossWeights w;
  w.numerators.assign(alpha.begin(), alpha.begin() + static_cast<std::ptrdiff_t>(num_scales));
  w.denominator = std::accumulate(w.numerators.begin(), w.numerators.end(), std::uint64_t{0});
  if (w.denominator == 0 || std::count(w.numerators.begin(), w.numerators.end(), 0u) > 0)
    throw ConfigError("loss weights must be positive");
  return w;
}

Tensor multi_scale_loss(const std::vector<Tensor>& probs, std::size_t padded_h, std::size_t padded_w, const Tensor& l,
                        const Tensor& gt, const Tensor& mask, const LossWeights& weights) {
  if (probs.size() != weights.numerators.size())
    throw ShapeError("multi_scale_loss: " + std::to_string(probs.size()) + " scales but " +
                     std::to_string(weights.numerators.size()) + " weights");
  if (gt.rank() != 3) throw ShapeError("multi_scale_loss: gt must be [B,H,W], got " + shape_str(gt.shape()));
  Tensor total;
  for (std::size_t s = 0; s < probs.size(); ++s) {
    const Tensor full = upsample_to_input(probs[s], padded_h, padded_w, gt.dim(1), gt.dim(2));
    const Tensor term = ops::scale(ops::smooth_l1(regress_depth(full, l), gt, mask), weights.weight(s));
    total = total.defined() ? ops::add(total, term) : term;
  }
  return total;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
    throw ConfigError("train: beta1 and beta2 must lie in (0,1)");
  if (crop < 8) throw ConfigError("train: crop must be at least 8");
  if (frames_per_stack < 2) throw ConfigError("train: frames_per_stack must be at least 2");
  if (alpha.empty()) throw ConfigError("train: alpha must list at least one weight");
  for (std::uint64_t a : alpha)
    if (a == 0) throw ConfigError("train: alpha weights must be positive");
}

bool set_network_field(NetworkConfig& cfg, std::string_view key, const Json& v) {
  if (key == "base_width") cfg.base_width = json_value<std::size_t>(v, key);
  else if (key == "num_scales") cfg.num_scales = json_value<std::size_t>(v, key);
  else if (key == "use_dfv") cfg.use_dfv = json_value<bool>(v, key);
  else if (key == "use_spp_2d") cfg.use_spp_2d = json_value<bool>(v, key);
  else if (key == "spp3d_levels") cfg.spp3d_levels = json_value<std::size_t>(v, key);
  else if (key == "input_channels") cfg.input_channels = json_value<std::size_t>(v, key);
  else return false;
  return true;
}

Json network_config_to_json(const NetworkConfig& c) {
  return {{"base_width", c.base_width},     {"num_scales", c.num_scales},     {"use_dfv", c.use_dfv},
          {"use_spp_2d", c.use_spp_2d},     {"spp3d_levels", c.spp3d_levels}, {"input_channels", c.input_channels}};
}

bool set_train_field(TrainConfig& cfg, std::string_view key, const Json& v) {
  if (key == "epochs") cfg.epochs = json_value<std::size_t>(v, key);
  else if (key == "batch_size") cfg.batch_size = json_value<std::size_t>(v, key);
  else if (key == "lr") cfg.lr = json_value<double>(v, key);
  else if (key == "beta1") cfg.beta1 = json_value<double>(v, key);
  else if (key == "beta2") cfg.beta2 = json_value<double>(v, key);
  else if (key == "crop") cfg.crop = json_value<std::size_t>(v, key);
  else if (key == "frames_per_stack") cfg.frames_per_stack = json_value<std::size_t>(v, key);
  else if (key == "flip_augment") cfg.flip_augment = json_value<bool>(v, key);
  else if (key == "seed") cfg.seed = json_value<std::uint64_t>(v, key);
  else if (key == "alpha") cfg.alpha = json_value<std::vector<std::uint64_t>>(v, key);
  else if (key == "mask_out_of_range") cfg.mask_out_of_range = json_value<bool>(v, key);
  else if (key == "calibrated") cfg.calibrated = json_value<bool>(v, key);
  else if (key == "max_steps") cfg.max_steps = json_value<std::size_t>(v, key);
  else if (key == "val_every") cfg.val_every = json_value<std::size_t>(v, key);
  else return false;
  return true;
}

Json train_config_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"crop", c.crop},
          {"frames_per_stack", c.frames_per_stack},
          {"flip_augment", c.flip_augment},
          {"seed", c.seed},
          {"alpha", c.alpha},
          {"mask_out_of_range", c.mask_out_of_range},
          {"calibrated", c.calibrated},
          {"max_steps", c.max_steps},
          {"val_every", c.val_every}};
}

Image evaluation_mask(const FocalStack& stack, bool mask_out_of_range) {
  if (!stack.gt_depth) throw ConfigError("stack has no ground-truth depth");
  const Image& gt = *stack.gt_depth;
  Image m(1, gt.height, gt.width);
  const auto [lo, hi] = std::minmax_element(stack.focal_distances.begin(), stack.focal_distances.end());
  for (std::size_t i = 0; i < m.pixels.size(); ++i) {
    const double d = gt.pixels[i];
    bool ok = stack.valid_mask ? stack.valid_mask->pixels[i] != 0.0 : d > 0.0;
    if (mask_out_of_range) ok = ok && d >= *lo && d <= *hi;
    m.pixels[i] = ok ? 1.0 : 0.0;
  }
  return m;
}

namespace {

Image crop_flip(const Image& img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w, bool flip_h,
                bool flip_v) {
  Image out(img.channels, h, w);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sy = y0 + (flip_v ? h - 1 - y : y), sx = x0 + (flip_h ? w - 1 - x : x);
        out.at(c, y, x) = img.at(c, sy, sx);
      }
  return out;
}

}  // namespace

TrainingSample make_training_sample(const FocalStack& stack, const TrainConfig& cfg, std::size_t epoch,
                                    std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  FocalStack sub = sample_frames(stack, cfg.frames_per_stack, SamplingPolicy::Random, rng);
  if (!cfg.calibrated) sub = sub.normalized();
  const Image mask = evaluation_mask(sub, cfg.mask_out_of_range);

  const std::size_t H = sub.frames[0].height, W = sub.frames[0].width;
  const std::size_t h = std::min(cfg.crop, H), w = std::min(cfg.crop, W);
  const std::size_t y0 = std::uniform_int_distribution<std::size_t>(0, H - h)(rng);
  const std::size_t x0 = std::uniform_int_distribution<std::size_t>(0, W - w)(rng);
  bool flip_h = false, flip_v = false;
  if (cfg.flip_augment) {
    flip_h = std::bernoulli_distribution(0.5)(rng);
    flip_v = std::bernoulli_distribution(0.5)(rng);
  }
  TrainingSample s;
  for (const Image& f : sub.frames) s.frames.push_back(crop_flip(f, y0, x0, h, w, flip_h, flip_v));
  s.l = sub.focal_distances;
  s.gt = crop_flip(*sub.gt_depth, y0, x0, h, w, flip_h, flip_v);
  s.mask = crop_flip(mask, y0, x0, h, w, flip_h, flip_v);
  return s;
}

Batch collate(std::span<const TrainingSample> samples) {
  if (samples.empty()) throw ShapeError("collate: empty batch");
  const TrainingSample& f = samples[0];
  const std::size_t B = samples.size(), N = f.frames.size(), C = f.frames[0].channels, H = f.frames[0].height,
                    W = f.frames[0].width;
  std::vector<double> stack, l, gt, mask;
  stack.reserve(B * N * C * H * W);
  for (const TrainingSample& s : samples) {
    if (s.frames.size() != N || s.frames[0].channels != C || s.frames[0].height != H || s.frames[0].width != W)
      throw ShapeError("collate: samples differ in frame count or extent");
    for (const Image& img : s.frames) stack.insert(stack.end(), img.pixels.begin(), img.pixels.end());
    l.insert(l.end(), s.l.begin(), s.l.end());
    gt.insert(gt.end(), s.gt.pixels.begin(), s.gt.pixels.end());
    mask.insert(mask.end(), s.mask.pixels.begin(), s.mask.pixels.end());
  }
  return {Tensor::from({B, N, C, H, W}, std::move(stack)), Tensor::from({B, N}, std::move(l)),
          Tensor::from({B, H, W}, std::move(gt)), Tensor::from({B, H, W}, std::move(mask))};
}

}  // namespace dfv
