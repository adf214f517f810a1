// Acceptance harness: one pass/fail line per criterion.
// Usage: dfv_acceptance [criterion numbers...]   (default: all)

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <sstream>
#include <string>

#include "dfv/cli.hpp"
#include "dfv/dataset.hpp"
#include "dfv/error.hpp"
#include "dfv/focus.hpp"
#include "dfv/metrics.hpp"
#include "dfv/ops.hpp"
#include "dfv/parallel.hpp"
#include "dfv/training.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace dfv;
using namespace dfv::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------- 1

Outcome gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  std::map<std::string, double> worst;
  std::map<std::string, int> instances;
  auto check = [&](const std::string& op, const std::function<Tensor(const std::vector<Tensor>&)>& f,
                   std::vector<Tensor> in) {
    const GradCheck r = grad_check(f, std::move(in));
    worst[op] = std::max(worst[op], r.max_rel_error);
    ++instances[op];
  };

  std::mt19937_64 rng(2024);
  for (int t = 0; t < 10; ++t) {
    const std::size_t stride = 1 + t % 2, pad = t % 3 == 0 ? 0 : 1;
    check("conv2d",
          [&](const auto& v) { return random_projection(ops::conv2d(v[0], v[1], v[2], stride, pad), 10 + t); },
          {random_tensor({2, 3, 7, 7}, rng, true), random_tensor({4, 3, 3, 3}, rng, true),
           random_tensor({4}, rng, true)});

    const std::size_t k = t % 3 == 0 ? 1 : 3;
    check("conv3d",
          [&](const auto& v) { return random_projection(ops::conv3d(v[0], v[1], Tensor(), stride, k / 2), 20 + t); },
          {random_tensor({1, 2, 4, 5, 5}, rng, true), random_tensor({3, 2, k, k, k}, rng, true)});

    ops::BatchNormStats st(3);
    const bool training = t % 4 != 3;
    check("batch_norm",
          [&](const auto& v) { return random_projection(ops::batch_norm(v[0], v[1], v[2], st, training), 30 + t); },
          {random_tensor({2, 3, 4, 4}, rng, true), random_tensor({3}, rng, true, 0.5, 1.5),
           random_tensor({3}, rng, true)});

    check("relu composite",
          [&](const auto& v) {
            return random_projection(ops::relu(ops::add(ops::mul(v[0], v[1]), ops::scale(v[0], 0.5))), 40 + t);
          },
          {random_tensor({2, 4, 3}, rng, true), random_tensor({2, 4, 3}, rng, true)});

    check("softmax", [&](const auto& v) { return random_projection(ops::softmax(v[0], 1), 50 + t); },
          {random_tensor({2, 5, 3, 2}, rng, true, -3, 3)});

    check("avg_pool",
          [&](const auto& v) {
            return ops::add(random_projection(ops::avg_pool(v[0], {2, 2}), 60 + t),
                            random_projection(ops::avg_pool(ops::reshape(v[0], {1, 2, 2, 6, 6}), {2, 3, 3}), 61 + t));
          },
          {random_tensor({1, 4, 6, 6}, rng, true)});

    check("bilinear upsample",
          [&](const auto& v) {
            return random_projection(ops::upsample_linear(v[0], {std::size_t(5 + t % 4), std::size_t(7 - t % 3)}), 70 + t);
          },
          {random_tensor({1, 2, 3, 4}, rng, true)});

    check("trilinear upsample",
          [&](const auto& v) { return random_projection(ops::upsample_linear(v[0], {std::size_t(3 + t % 3), 5, 6}), 80 + t); },
          {random_tensor({1, 2, 2, 3, 3}, rng, true)});

    std::vector<double> m(18, 1.0);
    m[t] = 0.0;
    const Tensor mask = Tensor::from({2, 3, 3}, m), target = random_tensor({2, 3, 3}, rng, false, -2, 2);
    check("smooth_l1", [&](const auto& v) { return ops::smooth_l1(v[0], target, mask); },
          {random_tensor({2, 3, 3}, rng, true, -2, 2)});

    check("differentiate_volume",
          [&](const auto& v) { return random_projection(focus::differentiate_volume(v[0]), 90 + t); },
          {random_tensor({1, 2, std::size_t(2 + t % 5), 3, 3}, rng, true)});

    // The training chain: logits, softmax over frames, expected depth, smooth L1.
    const std::size_t n = 2 + t % 6;
    std::vector<double> l(n);
    double acc = 0.3;
    for (double& v : l) v = (acc += 0.1 + 0.05 * (t % 3));
    const Tensor depth_target = random_tensor({1, 3, 3}, rng, false, 0.3, acc);
    check("regress_depth chain",
          [&](const auto& v) {
            return ops::smooth_l1(regress_depth(ops::softmax(v[0], 1), l), depth_target);
          },
          {random_tensor({1, n, 3, 3}, rng, true, -2, 2)});
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  double max_err = 0.0;
  std::string worst_op;
  bool enough = true;
  for (const auto& [op, e] : worst) {
    if (e >= max_err) max_err = e, worst_op = op;
    enough = enough && instances[op] >= 10;
  }
  return {enough && max_err < 1e-4 && secs < 60.0,
          fmt("%zu ops x 10 instances, max rel error %.2e (%s), %.1f s", worst.size(), max_err, worst_op.c_str(), secs)};
}

// ---------------------------------------------------------------- 2

Outcome dfv_exactness() {
  std::mt19937_64 rng(7);
  std::size_t mismatched = 0, last_slice_bad = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + t % 9;
    const Tensor q = random_tensor({1 + std::size_t(t % 2), 3, n, 4, 5}, rng, false, -5, 5);
    const Tensor d = focus::differentiate_volume(q);
    const auto oracle = brute_force_difference(q);
    if (!std::equal(d.data().begin(), d.data().end(), oracle.begin())) ++mismatched;
    const auto& s = q.shape();
    const std::size_t plane = s[3] * s[4];
    for (std::size_t bf = 0; bf < s[0] * s[1]; ++bf)
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t at = (bf * n + n - 1) * plane + i;
        if (d.data()[at] != q.data()[at]) ++last_slice_bad;
      }
  }
  return {mismatched == 0 && last_slice_bad == 0,
          fmt("100 volumes, N in 2..10: %zu bitwise mismatches, %zu last-slice differences", mismatched,
              last_slice_bad)};
}

// ---------------------------------------------------------------- 3

Outcome simplex_invariant() {
  std::mt19937_64 rng(3);
  double worst_sum = 0.0;
  std::size_t out_of_range = 0, volumes = 0;
  const NetworkConfig variants[] = {
      {8, 2, true, true, 2, 3}, {8, 4, true, true, 2, 3}, {8, 3, false, false, 1, 3}, {4, 1, true, true, 1, 3}};
  std::vector<Network> nets;
  for (std::size_t i = 0; i < 4; ++i) nets.emplace_back(variants[i], 100 + i);
  NoGradGuard guard;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + t % 9, extent = 16 + 8 * (t % 3);
    const Tensor x = random_tensor({1, n, 3, extent, extent + 4}, rng, false, 0, 1);
    for (const Tensor& p : nets[t % 4].forward(x, t % 5 == 0)) {
      ++volumes;
      const std::size_t N = p.dim(1), P = p.dim(2) * p.dim(3);
      for (std::size_t i = 0; i < P; ++i) {
        double s = 0.0;
        for (std::size_t f = 0; f < N; ++f) {
          const double v = p.data()[f * P + i];
          if (!(v >= 0.0 && v <= 1.0)) ++out_of_range;
          s += v;
        }
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      }
    }
  }
  Tape::current().clear();
  return {worst_sum <= 1e-5 && out_of_range == 0,
          fmt("100 inputs (%zu volumes): max |sum - 1| = %.2e, %zu entries outside [0,1]", volumes, worst_sum,
              out_of_range)};
}

// ---------------------------------------------------------------- 4

Outcome regression_bounds() {
  std::mt19937_64 rng(4);
  std::size_t violations = 0;
  double worst_identity = 0.0;
  for (int t = 0; t < 10000; ++t) {
    const std::size_t n = 2 + t % 9;
    std::vector<double> l(n);
    double acc = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
    for (double& v : l) v = (acc += std::uniform_real_distribution<double>(0.01, 0.5)(rng));
    std::vector<double> pv = random_simplex(n, rng);
    if (t % 10 == 0) {  // one-hot and two-point edge cases
      std::fill(pv.begin(), pv.end(), 0.0);
      pv[t % n] = t % 20 == 0 ? 1.0 : 0.5;
      if (t % 20 != 0) pv[(t / 10) % n == t % n ? (t + 1) % n : (t / 10) % n] += 0.5;
    }
    const Tensor p = Tensor::from({1, n, 1, 1}, pv);
    const Tensor d = regress_depth(p, l);
    const double phi = regress_uncertainty(p, l, d).item();
    const double lo = l.front(), hi = l.back();
    if (!(d.item() >= lo && d.item() <= hi)) ++violations;
    if (!(phi >= 0 && phi <= (hi - lo) / 2)) ++violations;
    double m2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) m2 += pv[i] * l[i] * l[i];
    worst_identity = std::max(worst_identity, std::abs((m2 - d.item() * d.item()) - phi * phi));
  }
  return {violations == 0 && worst_identity < 1e-10,
          fmt("10000 draws: %zu bound violations, max variance-identity gap %.2e", violations, worst_identity)};
}

// ---------------------------------------------------------------- 5

Outcome classical_oracle() {
  CameraModel cam;
  cam.width = cam.height = 96;
  SynthConfig sc;
  const auto l = focus_schedule(sc);
  std::mt19937_64 rng(5);
  std::size_t total = 0, correct = 0, exact_frames = 0;
  for (std::size_t k = 0; k < l.size(); ++k) {
    const Image tex = procedural_texture(1, 96, 96, 1.0, rng);
    SceneSpec scene;
    scene.background_depth = l[k];
    scene.layers.push_back({l[k], tex, Image(1, 96, 96, 1.0)});
    const FocalStack st = render_focal_stack(scene, l, cam);
    if (st.frames[k] == tex) ++exact_frames;

    const Tensor raw = focus::measure_volume(st);
    const auto am = focus::argmax_depth(raw, l);
    const std::size_t P = 96 * 96;
    const std::size_t margin = 4 + 1;  // half window plus the Laplacian stencil
    for (std::size_t y = margin; y < 96 - margin; ++y)
      for (std::size_t x = margin; x < 96 - margin; ++x) {
        // Textured: the in-focus frame carries measurable contrast here.
        if (raw.data()[k * P + y * 96 + x] < 1e-3) continue;
        ++total;
        if (am.frame_index.data()[y * 96 + x] == static_cast<double>(k + 1)) ++correct;
      }
  }
  const double frac = total ? static_cast<double>(correct) / total : 0.0;
  return {frac >= 0.99 && exact_frames == l.size(),
          fmt("%.2f%% of %zu interior textured pixels pick the in-focus frame; zero-CoC frame exact in %zu/%zu stacks",
              100 * frac, total, exact_frames, l.size())};
}

// ---------------------------------------------------------------- 6

Outcome metric_oracle() {
  std::mt19937_64 rng(6);
  double worst = 0.0;
  std::size_t nesting = 0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t h = 5 + t % 7, w = 6 + t % 5;
    const Image pred = random_map(h, w, 0.3, 2.5, rng), gt = random_map(h, w, 0.3, 2.5, rng);
    const Image unc = random_map(h, w, 0.0, 0.4, rng);
    Image mask = random_map(h, w, 0, 1, rng);
    for (double& m : mask.pixels) m = m < 0.85 ? 1.0 : 0.0;
    mask.pixels[0] = 1.0;
    const MetricRecord a = evaluate(pred, gt, mask, unc), b = naive_metrics(pred, gt, mask, unc);
    for (auto [x, y] : {std::pair{a.mse, b.mse}, {a.rms, b.rms}, {a.log_rms, b.log_rms}, {a.abs_rel, b.abs_rel},
                        {a.sqr_rel, b.sqr_rel}, {a.delta1, b.delta1}, {a.delta2, b.delta2}, {a.delta3, b.delta3},
                        {a.bumpiness, b.bumpiness}, {a.avg_unc, b.avg_unc}})
      worst = std::max(worst, std::abs(x - y));
    if (!(a.delta1 <= a.delta2 && a.delta2 <= a.delta3)) ++nesting;
  }
  const Image gt = random_map(9, 9, 0.5, 2.0, rng), mask(1, 9, 9, 1.0);
  const MetricRecord p = evaluate(gt, gt, mask);
  const bool perfect = p.mse == 0 && p.rms == 0 && p.log_rms == 0 && p.abs_rel == 0 && p.sqr_rel == 0 &&
                       p.delta1 == 100 && p.delta2 == 100 && p.delta3 == 100;
  return {worst <= 1e-12 && nesting == 0 && perfect,
          fmt("50 pairs: max deviation from naive loop %.2e, %zu nesting violations, perfect prediction %s", worst,
              nesting, perfect ? "exact" : "NOT exact")};
}

// ---------------------------------------------------------------- 7

Outcome overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  SynthConfig sc;
  sc.num_frames = 5;
  std::vector<FocalStack> data;
  for (int i = 0; i < 4; ++i) data.push_back(synthesize_sample(sc, 700 + i));
  NetworkConfig nc;
  nc.base_width = 8;
  nc.num_scales = 2;
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 4;
  tc.epochs = 300;
  tc.seed = 7;
  tc.val_every = 0;
  Network net(nc, tc.seed);
  AdamState opt = make_optimizer(tc);
  const TrainReport r = train(net, opt, data, {}, tc);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double first = r.epochs.front().mean_loss;
  const std::size_t tail = std::min<std::size_t>(10, r.step_losses.size());
  const double last = std::accumulate(r.step_losses.end() - tail, r.step_losses.end(), 0.0) / tail;
  const double drop = 1.0 - last / first;
  return {r.step_losses.size() <= 300 && drop >= 0.90 && secs < 600.0,
          fmt("%zu steps: epoch-1 loss %.4f, mean of last %zu steps %.4f, drop %.1f%%, %.0f s", r.step_losses.size(),
              first, tail, last, 100 * drop, secs)};
}

// ---------------------------------------------------------------- 8

// Calibrated against an initial run of this recipe: the trained network lands
// near 0.08 while the classical Laplacian argmax scores about 0.135.
constexpr double kGeneralizationThreshold = 0.15;

Outcome generalization() {
  const auto t0 = std::chrono::steady_clock::now();
  SynthConfig sc;
  sc.num_frames = 5;
  std::vector<FocalStack> train_set(200), test_set(40);
  parallel_for(240, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i)
      if (i < 200) train_set[i] = synthesize_sample(sc, 1000 + i);
      else test_set[i - 200] = synthesize_sample(sc, 5000 + (i - 200));
  });
  std::vector<MetricRecord> baseline;
  for (const FocalStack& s : test_set) {
    const auto am = focus::argmax_depth(focus::measure_volume(s), s.focal_distances);
    Image d(1, s.frames[0].height, s.frames[0].width);
    std::copy(am.depth.data().begin(), am.depth.data().end(), d.pixels.begin());
    baseline.push_back(evaluate(d, *s.gt_depth, evaluation_mask(s, true)));
  }
  NetworkConfig nc;
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.epochs = 20;
  tc.seed = 1;
  tc.val_every = 0;
  Network net(nc, tc.seed);
  AdamState opt = make_optimizer(tc);
  train(net, opt, train_set, {}, tc);
  const MetricRecord m = aggregate(evaluate_stacks(net, test_set, EvalOptions{}));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  // Single textured plane at each interior focal distance: the mean
  // prediction should land within the spacing to the neighboring frames.
  const auto l = focus_schedule(sc);
  std::mt19937_64 rng(8);
  std::size_t planes_ok = 0;
  for (std::size_t k = 1; k + 1 < l.size(); ++k) {
    SceneSpec scene;
    scene.background_depth = l[k];
    scene.layers.push_back({l[k], procedural_texture(3, 64, 64, 1.0, rng), Image(1, 64, 64, 1.0)});
    const DepthResult r = predict(net, render_focal_stack(scene, l, sc.camera));
    const double mean = std::accumulate(r.depth.pixels.begin(), r.depth.pixels.end(), 0.0) / r.depth.pixels.size();
    if (std::abs(mean - l[k]) < std::min(l[k] - l[k - 1], l[k + 1] - l[k])) ++planes_ok;
  }
  return {m.abs_rel < kGeneralizationThreshold && secs < 1800.0,
          fmt("held-out abs rel %.4f (threshold %.2f; Laplacian baseline %.4f), delta1 %.1f%%, %.0f s; "
              "single-plane predictions within frame spacing: %zu/%zu",
              m.abs_rel, kGeneralizationThreshold, aggregate(baseline).abs_rel, m.delta1, secs, planes_ok,
              l.size() - 2)};
}

// ---------------------------------------------------------------- 9

bool complete(const MetricRecord& m) {
  const Json j = m.to_json();
  for (const char* k : {"mse", "rms", "log_rms", "abs_rel", "sqr_rel", "delta1", "delta2", "delta3", "bumpiness",
                        "avg_unc"})
    if (!j.contains(k) || !j[k].is_number() || !std::isfinite(j[k].get<double>())) return false;
  return true;
}

// Spearman correlation without ties handling beyond average ranks.
double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (double w : v) less += w < v[i], equal += w == v[i];
      r[i] = less + (equal + 1) / 2.0;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = a.size(), ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n,
               mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

Outcome variants_and_ablation() {
  const auto t0 = std::chrono::steady_clock::now();
  SynthConfig smoke;
  smoke.num_frames = 5;
  smoke.camera.width = smoke.camera.height = 32;
  std::vector<FocalStack> smoke_set;
  for (int i = 0; i < 8; ++i) smoke_set.push_back(synthesize_sample(smoke, 300 + i));
  TrainConfig quick;
  quick.lr = 1e-3;
  quick.epochs = 2;
  quick.crop = 32;
  quick.val_every = 0;

  std::string variants;
  bool ok = true;
  const std::pair<const char*, NetworkConfig> configs[] = {{"FV", {8, 4, false, true, 2, 3}},
                                                           {"DFV", {8, 4, true, true, 2, 3}},
                                                           {"DFV-L1", {8, 1, true, true, 1, 3}},
                                                           {"DFV-L2", {8, 2, true, true, 2, 3}},
                                                           {"DFV-L3", {8, 3, true, true, 2, 3}}};
  for (const auto& [name, nc] : configs) {
    bool good = false;
    try {
      Network net(nc, 1);
      AdamState opt = make_optimizer(quick);
      train(net, opt, smoke_set, {}, quick);
      good = complete(aggregate(evaluate_stacks(net, smoke_set, EvalOptions{})));
    } catch (const std::exception& e) {
      std::fprintf(stderr, "%s: %s\n", name, e.what());
    }
    ok = ok && good;
    variants += std::string(variants.empty() ? "" : ", ") + name + (good ? " ok" : " FAILED");
  }

  SynthConfig sc;
  sc.num_frames = 10;
  std::vector<FocalStack> train_set(60), test_set(20);
  parallel_for(80, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i)
      if (i < 60) train_set[i] = synthesize_sample(sc, 2000 + i);
      else test_set[i - 60] = synthesize_sample(sc, 6000 + (i - 60));
  });
  NetworkConfig nc;
  nc.num_scales = 2;
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.epochs = 5;
  tc.seed = 1;
  tc.val_every = 0;
  const std::vector<std::size_t> ks{2, 4, 6};
  const auto rows = ablate_stack_size(train_set, test_set, nc, tc, ks);
  std::vector<double> k, unc;
  std::string table;
  for (const AblationRow& r : rows) {
    ok = ok && complete(r.metrics);
    k.push_back(static_cast<double>(r.k));
    unc.push_back(r.metrics.avg_unc);
    table += fmt(" k=%zu:%.4f", r.k, r.metrics.avg_unc);
  }
  const double rho = spearman(k, unc);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {ok && rho < 0.0,
          variants + fmt("; avgUnc%s; Spearman(k, avgUnc) = %.2f; %.0f s", table.c_str(), rho, secs)};
}

// ---------------------------------------------------------------- 10

Outcome contracts() {
  const std::vector<std::uint64_t> alpha{8, 4, 2, 1};
  const LossWeights w = loss_weights(alpha, 4);
  const bool exact = std::accumulate(w.numerators.begin(), w.numerators.end(), std::uint64_t{0}) == w.denominator &&
                     w.denominator == 15 && w.weight(0) == 8.0 / 15.0 && w.weight(3) == 1.0 / 15.0;

  std::mt19937_64 rng(0);
  const auto idx = sample_indices(10, 5, SamplingPolicy::Equidistant, rng);
  std::vector<std::size_t> one_based;
  for (std::size_t i : idx) one_based.push_back(i + 1);
  const bool eq = one_based == std::vector<std::size_t>{1, 3, 6, 8, 10};
  bool ends = true;
  for (std::size_t n = 2; n <= 20; ++n)
    for (std::size_t k = 2; k <= n; ++k) {
      const auto s = sample_indices(n, k, SamplingPolicy::Equidistant, rng);
      ends = ends && s.size() == k && s.front() == 0 && s.back() == n - 1;
    }

  const std::vector<double> l{0.5, 0.8, 1.3, 2.0};
  std::vector<Tensor> probs;
  for (std::size_t e : {8u, 4u, 2u, 1u}) {
    std::vector<double> v;
    for (double p : {0.1, 0.2, 0.3, 0.4}) v.insert(v.end(), e * e, p);
    probs.push_back(Tensor::from({1, 4, e, e}, v));
  }
  const Tensor gt = Tensor::full({1, 32, 32}, 0.9), mask = Tensor::full({1, 32, 32}, 1.0);
  const Tensor lt = focal_tensor(l, 1);
  const double single =
      multi_scale_loss({probs[0]}, 32, 32, lt, gt, mask, loss_weights(alpha, 1)).item();
  const double total = multi_scale_loss(probs, 32, 32, lt, gt, mask, w).item();
  const bool same = std::abs(total - single) <= 1e-15 * std::abs(single);
  Tape::current().clear();
  return {exact && eq && ends && same,
          fmt("alpha sums to %llu/%llu exactly: %s; equidistant 5 of 10 = {%zu,%zu,%zu,%zu,%zu}; endpoints kept for all "
              "2<=k<=N<=20: %s; identical scales total %.12g vs per-scale %.12g",
              (unsigned long long)std::accumulate(w.numerators.begin(), w.numerators.end(), std::uint64_t{0}),
              (unsigned long long)w.denominator, exact ? "yes" : "no", one_based[0], one_based[1], one_based[2],
              one_based[3], one_based[4], ends ? "yes" : "no", total, single)};
}

// ---------------------------------------------------------------- 11

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

Outcome reproducibility() {
  TempDir tmp("acceptance_repro");
  const fs::path cfg = tmp.path() / "cfg.json";
  write_json_file(cfg.string(), Json{{"width", 32},  {"height", 32},     {"num_samples", 8}, {"epochs", 2},
                                     {"crop", 32},   {"batch_size", 4},  {"num_scales", 2},  {"lr", 1e-3}});
  std::string failures;
  auto run_once = [&](const std::string& tag) {
    const std::string root = (tmp.path() / tag).string();
    std::ostringstream out, err;
    for (const std::vector<std::string>& args :
         {std::vector<std::string>{"synth", "--config", cfg.string(), "--out", root + "/data", "--seed", "11"},
          {"train", "--config", cfg.string(), "--data", root + "/data", "--out", root + "/run", "--seed", "5"},
          {"eval", "--checkpoint", root + "/run/checkpoint.bin", "--data", root + "/data", "--out", root + "/eval"}})
      if (cli::run(args, out, err) != 0) failures += args[0] + " failed: " + err.str();
    return root;
  };
  const std::string a = run_once("a"), b = run_once("b");
  std::size_t compared = 0, differing = 0;
  for (const char* f : {"run/checkpoint.bin", "eval/metrics.json", "eval/metrics.jsonl"}) {
    const std::string x = slurp(fs::path(a) / f), y = slurp(fs::path(b) / f);
    ++compared;
    if (x.empty() || x != y) ++differing;
  }
  for (const auto& e : fs::directory_iterator(fs::path(a) / "data" / "sample_0000")) {
    ++compared;
    if (slurp(e.path()) != slurp(fs::path(b) / "data" / "sample_0000" / e.path().filename())) ++differing;
  }
  if (!failures.empty()) return {false, failures};
  return {differing == 0,
          fmt("%zu artifacts compared across two seeded runs (checkpoint, metric files, dataset), %zu differ", compared,
              differing)};
}

struct Criterion {
  int id;
  const char* name;
  Outcome (*fn)();
};

const Criterion kCriteria[] = {
    {1, "gradient fidelity", gradient_fidelity},
    {2, "differential volume exactness", dfv_exactness},
    {3, "simplex invariant", simplex_invariant},
    {4, "regression bounds", regression_bounds},
    {5, "classical oracle on synthetic optics", classical_oracle},
    {6, "metric suite oracle", metric_oracle},
    {7, "overfit convergence", overfit},
    {8, "generalization smoke", generalization},
    {9, "variant and ablation harness", variants_and_ablation},
    {10, "loss-weight and sampling contracts", contracts},
    {11, "reproducibility", reproducibility},
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));
  int failed = 0;
  for (const Criterion& c : kCriteria) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    Outcome o{false, ""};
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %2d %s  %s: %s\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
