#include <cmath>
#include <random>
#include <utility>

#include "dfv/error.hpp"
#include "dfv/focus.hpp"
#include "dfv/network.hpp"

namespace dfv {

void NetworkConfig::validate() const {
  if (base_width < 4) throw ConfigError("network: base_width must be >= 4");
  if (num_scales < 1 || num_scales > 4) throw ConfigError("network: num_scales must be in 1..4");
  if (spp3d_levels > num_scales) throw ConfigError("network: spp3d_levels must not exceed num_scales");
  if (input_channels == 0) throw ConfigError("network: input_channels must be positive");
}

std::vector<std::size_t> spp_scales(const std::vector<std::size_t>& extents) {
  std::size_t mn = extents.at(0);
  for (std::size_t e : extents) mn = std::min(mn, e);
  const double top = std::max<double>(1.0, static_cast<double>(mn / 2));
  std::vector<std::size_t> out;
  for (int a = 0; a < 4; ++a) {
    const std::size_t m = static_cast<std::size_t>(1.0 + (top - 1.0) * a / 3.0);
    if (out.empty() || out.back() != m) out.push_back(m);
  }
  return out;
}

std::vector<std::size_t> spp_kernel(const std::vector<std::size_t>& extents, std::size_t m) {
  std::vector<std::size_t> k;
  for (std::size_t e : extents) k.push_back(std::max<std::size_t>(1, e / m));
  return k;
}

std::size_t padded_extent(std::size_t n) { return (n + 31) / 32 * 32; }

Tensor upsample_to_input(const Tensor& prob, std::size_t padded_h, std::size_t padded_w, std::size_t height,
                         std::size_t width) {
  const Tensor full = ops::upsample_linear(prob, {padded_h, padded_w});
  return ops::crop2d(full, height, width);
}

namespace {

class Registry {
 public:
  explicit Registry(std::uint64_t seed) : rng_(seed) {}

  // Kaiming fan-in normal init; gain 2 ahead of ReLU, 1 otherwise.
  Tensor conv_weight(const std::string& name, Shape shape, bool relu_follows) {
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    std::normal_distribution<double> n(0.0, std::sqrt((relu_follows ? 2.0 : 1.0) / static_cast<double>(fan_in)));
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = n(rng_);
    return param(name, Tensor::from(std::move(shape), std::move(v), true));
  }
  Tensor param(const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    params.push_back({name, t});
    return t;
  }
  void buffer(const std::string& name, const Tensor& t) { buffers.push_back({name, t}); }

  std::vector<NamedTensor> params;
  std::vector<NamedTensor> buffers;

 private:
  std::mt19937_64 rng_;
};

// Convolution (no bias) with optional batch norm and ReLU; 2D or 3D by `dims`.
struct ConvUnit {
  Tensor weight;
  Tensor gamma, beta;
  ops::BatchNormStats stats;
  std::size_t stride = 1, padding = 0;
  bool norm = true, relu = true, three_d = false;

  ConvUnit() = default;
  ConvUnit(Registry& r, const std::string& name, std::size_t in, std::size_t out, std::size_t k, std::size_t stride_,
           bool three_d_, bool norm_, bool relu_)
      : stats(out), stride(stride_), padding(k / 2), norm(norm_), relu(relu_), three_d(three_d_) {
    Shape shape = three_d ? Shape{out, in, k, k, k} : Shape{out, in, k, k};
    weight = r.conv_weight(name + ".weight", std::move(shape), relu);
    if (norm) {
      gamma = r.param(name + ".bn.gamma", Tensor::full({out}, 1.0));
      beta = r.param(name + ".bn.beta", Tensor::zeros({out}));
      r.buffer(name + ".bn.running_mean", stats.running_mean);
      r.buffer(name + ".bn.running_var", stats.running_var);
    }
  }

  Tensor operator()(const Tensor& x, bool training) {
    Tensor y = three_d ? ops::conv3d(x, weight, Tensor(), stride, padding)
                       : ops::conv2d(x, weight, Tensor(), stride, padding);
    if (norm) y = ops::batch_norm(y, gamma, beta, stats, training);
    return relu ? ops::relu(y) : y;
  }
};

struct ResBlock {
  ConvUnit a, b, shortcut;
  bool project = false;

  ResBlock() = default;
  ResBlock(Registry& r, const std::string& name, std::size_t in, std::size_t out, std::size_t stride, bool three_d)
      : a(r, name + ".conv1", in, out, 3, stride, three_d, true, true),
        b(r, name + ".conv2", out, out, 3, 1, three_d, true, false),
        project(in != out || stride != 1) {
    if (project) shortcut = ConvUnit(r, name + ".shortcut", in, out, 1, stride, three_d, true, false);
  }

  Tensor operator()(const Tensor& x, bool training) {
    const Tensor y = b(a(x, training), training);
    return ops::relu(ops::add(y, project ? shortcut(x, training) : x));
  }
};

// Average-pool at each pyramid scale, shared 1x1 conv (with bias) + ReLU,
// upsample back, and add the branch mean to the input.
struct Spp {
  Tensor weight, bias;
  bool three_d = false;

  Spp() = default;
  Spp(Registry& r, const std::string& name, std::size_t channels, bool three_d_) : three_d(three_d_) {
    Shape shape = three_d ? Shape{channels, channels, 1, 1, 1} : Shape{channels, channels, 1, 1};
    weight = r.conv_weight(name + ".weight", std::move(shape), true);
    bias = r.param(name + ".bias", Tensor::zeros({channels}));
  }

  Tensor operator()(const Tensor& x) {
    const std::size_t spatial = three_d ? 3 : 2;
    std::vector<std::size_t> extents(x.shape().end() - static_cast<std::ptrdiff_t>(spatial), x.shape().end());
    const auto scales = spp_scales(extents);
    Tensor acc;
    for (std::size_t m : scales) {
      Tensor p = ops::avg_pool(x, spp_kernel(extents, m));
      p = three_d ? ops::conv3d(p, weight, bias, 1, 0) : ops::conv2d(p, weight, bias, 1, 0);
      p = ops::upsample_linear(ops::relu(p), extents);
      acc = acc.defined() ? ops::add(acc, p) : p;
    }
    return ops::add(x, ops::scale(acc, 1.0 / static_cast<double>(scales.size())));
  }
};

struct Head {
  ConvUnit hidden;
  Tensor out_weight;

  Head() = default;
  Head(Registry& r, const std::string& name, std::size_t c)
      : hidden(r, name + ".conv1", c, c, 3, 1, true, true, true),
        out_weight(r.conv_weight(name + ".conv2.weight", {1, c, 1, 1, 1}, false)) {}

  Tensor operator()(const Tensor& x, bool training) {
    const Tensor logits = ops::conv3d(hidden(x, training), out_weight, Tensor(), 1, 0);
    const Shape& s = logits.shape();
    return ops::softmax(ops::reshape(logits, {s[0], s[2], s[3], s[4]}), 1);
  }
};

}  // namespace

struct Network::Impl {
  NetworkConfig cfg;
  Registry reg;

  ConvUnit stem, down;
  ResBlock layer1, layer2, layer3, layer4;
  Spp spp2d;
  ConvUnit lateral[4];
  ConvUnit smooth[4], proj[4];
  ConvUnit up_conv[4], up_proj[4];
  ResBlock res3d_a[4], res3d_b[4];
  Spp spp3d[4];
  Head heads[4];
  std::size_t volumes = 0;

  Impl(const NetworkConfig& c, std::uint64_t seed) : cfg(c), reg(seed) {
    cfg.validate();
    const std::size_t w = cfg.base_width, k = cfg.num_scales;
    const std::size_t width[4] = {w, 2 * w, 4 * w, 8 * w};
    stem = ConvUnit(reg, "encoder.stem", cfg.input_channels, w, 7, 2, false, true, true);
    down = ConvUnit(reg, "encoder.down", w, w, 3, 2, false, true, true);
    layer1 = ResBlock(reg, "encoder.layer1", w, width[0], 1, false);
    layer2 = ResBlock(reg, "encoder.layer2", width[0], width[1], 2, false);
    layer3 = ResBlock(reg, "encoder.layer3", width[1], width[2], 2, false);
    layer4 = ResBlock(reg, "encoder.layer4", width[2], width[3], 2, false);
    if (cfg.use_spp_2d) spp2d = Spp(reg, "encoder.spp", width[3], false);
    for (std::size_t s = 0; s < 4; ++s)
      lateral[s] = ConvUnit(reg, "fpn.lateral" + std::to_string(s + 1), width[s], w, 1, 1, false, true, true);
    for (std::size_t s = 0; s < k; ++s) {
      const std::string lv = std::to_string(s + 1);
      smooth[s] = ConvUnit(reg, "fpn.smooth" + lv, w, w, 3, 1, false, true, true);
      proj[s] = ConvUnit(reg, "fpn.proj" + lv, w, w, 1, 1, false, true, false);
    }
    for (std::size_t s = k; s-- > 0;) {
      const std::string lv = "decoder.level" + std::to_string(s + 1);
      if (s + 1 < k) {
        up_conv[s] = ConvUnit(reg, lv + ".up.conv1", w, w, 3, 1, true, true, true);
        up_proj[s] = ConvUnit(reg, lv + ".up.conv2", w, w, 1, 1, true, true, false);
      }
      res3d_a[s] = ResBlock(reg, lv + ".res1", w, w, 1, true);
      res3d_b[s] = ResBlock(reg, lv + ".res2", w, w, 1, true);
      if (s < cfg.spp3d_levels) spp3d[s] = Spp(reg, lv + ".spp", w, true);
      heads[s] = Head(reg, lv + ".head", w);
    }
  }
};

Network::Network(const NetworkConfig& cfg, std::uint64_t seed) : impl_(std::make_unique<Impl>(cfg, seed)) {}
Network::~Network() = default;
Network::Network(Network&&) noexcept = default;
Network& Network::operator=(Network&&) noexcept = default;

const NetworkConfig& Network::config() const { return impl_->cfg; }
const std::vector<NamedTensor>& Network::parameters() const { return impl_->reg.params; }
const std::vector<NamedTensor>& Network::buffers() const { return impl_->reg.buffers; }
std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : impl_->reg.params) n += p.value.numel();
  return n;
}
std::size_t Network::last_volume_count() const { return impl_->volumes; }
std::size_t Network::head_count() const { return impl_->cfg.num_scales; }

std::vector<Tensor> Network::encode(const Tensor& frames, bool training) {
  Impl& m = *impl_;
  if (frames.rank() != 4) throw ShapeError("encode: frames must be [B*N,C,H,W], got " + shape_str(frames.shape()));
  if (frames.dim(1) != m.cfg.input_channels)
    throw ShapeError("encode: expected " + std::to_string(m.cfg.input_channels) + " input channels, got " +
                     std::to_string(frames.dim(1)));
  if (frames.dim(2) % 32 != 0 || frames.dim(3) % 32 != 0)
    throw ShapeError("encode: spatial extents must be multiples of 32, got " + shape_str(frames.shape()));

  Tensor x = m.down(m.stem(frames, training), training);
  Tensor c[4];
  c[0] = m.layer1(x, training);
  c[1] = m.layer2(c[0], training);
  c[2] = m.layer3(c[1], training);
  c[3] = m.layer4(c[2], training);
  if (m.cfg.use_spp_2d) c[3] = m.spp2d(c[3]);

  std::vector<Tensor> p(4);
  p[3] = m.lateral[3](c[3], training);
  for (std::size_t s = 3; s-- > 0;) {
    const Tensor up = ops::upsample_linear(p[s + 1], {c[s].dim(2), c[s].dim(3)});
    p[s] = ops::add(m.lateral[s](c[s], training), up);
  }
  return p;
}

std::vector<Tensor> Network::aggregate(const std::vector<Tensor>& volumes, bool training) {
  Impl& m = *impl_;
  const std::size_t k = m.cfg.num_scales;
  if (volumes.size() != k)
    throw ShapeError("aggregate: expected " + std::to_string(k) + " volumes, got " + std::to_string(volumes.size()));
  for (std::size_t s = 0; s < k; ++s) {
    if (volumes[s].rank() != 5 || volumes[s].dim(1) != m.cfg.base_width)
      throw ShapeError("aggregate: volume " + std::to_string(s) + " must be [B," + std::to_string(m.cfg.base_width) +
                       ",N,h,w], got " + shape_str(volumes[s].shape()));
    if (volumes[s].dim(2) != volumes[0].dim(2) || volumes[s].dim(0) != volumes[0].dim(0))
      throw ShapeError("aggregate: frame count mismatch at scale " + std::to_string(s + 1));
  }
  std::vector<Tensor> probs(k);
  Tensor coarser;
  for (std::size_t s = k; s-- > 0;) {
    Tensor v = volumes[s];
    if (coarser.defined()) {
      const Tensor up = ops::upsample_linear(coarser, {v.dim(2), v.dim(3), v.dim(4)});
      v = ops::add(v, m.up_proj[s](m.up_conv[s](up, training), training));
    }
    Tensor agg = m.res3d_b[s](m.res3d_a[s](v, training), training);
    if (s < m.cfg.spp3d_levels) agg = m.spp3d[s](agg);
    probs[s] = m.heads[s](agg, training);
    coarser = agg;
  }
  return probs;
}

std::vector<Tensor> Network::forward(const Tensor& stack, bool training) {
  Impl& m = *impl_;
  if (stack.rank() != 5) throw ShapeError("forward: stack must be [B,N,C,H,W], got " + shape_str(stack.shape()));
  const std::size_t B = stack.dim(0), N = stack.dim(1), C = stack.dim(2), H = stack.dim(3), W = stack.dim(4);
  if (N < 2) throw ShapeError("forward: need at least 2 frames, got " + std::to_string(N));
  Tensor x = ops::add_scalar(ops::reshape(stack, {B * N, C, H, W}), -0.5);
  x = ops::pad2d(x, padded_extent(H) - H, padded_extent(W) - W);

  const std::vector<Tensor> feats = encode(x, training);
  std::vector<Tensor> volumes;
  for (std::size_t s = 0; s < m.cfg.num_scales; ++s) {
    const Tensor f = m.proj[s](m.smooth[s](feats[s], training), training);
    Tensor v = focus::volume_from_folded(f, B, N);
    if (m.cfg.use_dfv) v = focus::differentiate_volume(v);
    volumes.push_back(std::move(v));
  }
  m.volumes = volumes.size();
  return aggregate(volumes, training);
}

}  // namespace dfv
