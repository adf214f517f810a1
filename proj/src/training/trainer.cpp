#include <chrono>
#include <cmath>
#include <numeric>

#include "dfv/error.hpp"
#include "dfv/ops.hpp"
#include "dfv/parallel.hpp"
#include "dfv/training.hpp"

namespace dfv {

namespace {

Tensor stack_tensor(const FocalStack& s) {
  const std::size_t N = s.size(), C = s.frames[0].channels, H = s.frames[0].height, W = s.frames[0].width;
  std::vector<double> v;
  v.reserve(N * C * H * W);
  for (const Image& f : s.frames) v.insert(v.end(), f.pixels.begin(), f.pixels.end());
  return Tensor::from({1, N, C, H, W}, std::move(v));
}

FocalStack eval_substack(const FocalStack& stack, const EvalOptions& opts, std::size_t index) {
  stack.validate();
  FocalStack sub = stack;
  const std::size_t k = opts.frames == 0 ? stack.size() : opts.frames;
  if (k != stack.size() || opts.policy == SamplingPolicy::Random) {
    std::seed_seq seq{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(opts.seed >> 32),
                      static_cast<std::uint32_t>(index)};
    std::mt19937_64 rng(seq);
    sub = sample_frames(stack, k, opts.policy, rng);
  }
  return opts.calibrated ? sub : sub.normalized();
}

DepthResult predict_substack(Network& net, const FocalStack& sub) {
  NoGradGuard guard;
  const std::size_t H = sub.frames[0].height, W = sub.frames[0].width;
  const auto probs = net.forward(stack_tensor(sub), false);
  const Tensor full = upsample_to_input(probs[0], padded_extent(H), padded_extent(W), H, W);
  return depth_result(full, sub.focal_distances);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

AdamState make_optimizer(const TrainConfig& cfg) {
  AdamState s;
  s.lr = cfg.lr;
  s.beta1 = cfg.beta1;
  s.beta2 = cfg.beta2;
  return s;
}

DepthResult predict(Network& net, const FocalStack& stack, const EvalOptions& opts) {
  return predict_substack(net, eval_substack(stack, opts, 0));
}

std::vector<MetricRecord> evaluate_stacks(Network& net, std::span<const FocalStack> stacks, const EvalOptions& opts) {
  std::vector<MetricRecord> out;
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    const FocalStack sub = eval_substack(stacks[i], opts, i);
    if (!sub.gt_depth) throw ConfigError("evaluation stack " + std::to_string(i) + " has no ground-truth depth");
    const DepthResult r = predict_substack(net, sub);
    out.push_back(evaluate(r.depth, *sub.gt_depth, evaluation_mask(sub, opts.mask_out_of_range), r.uncertainty));
  }
  return out;
}

TrainReport train(Network& net, AdamState& opt, std::span<const FocalStack> train_set,
                  std::span<const FocalStack> val_set, const TrainConfig& cfg, std::ostream* log,
                  std::size_t start_epoch) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("train: empty training set");
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    if (!train_set[i].gt_depth) throw ConfigError("train: stack " + std::to_string(i) + " has no ground-truth depth");
    if (train_set[i].size() < cfg.frames_per_stack)
      throw ConfigError("train: stack " + std::to_string(i) + " has " + std::to_string(train_set[i].size()) +
                        " frames, fewer than frames_per_stack=" + std::to_string(cfg.frames_per_stack));
  }
  const LossWeights weights = loss_weights(cfg.alpha, net.config().num_scales);
  std::vector<Tensor> params;
  for (const auto& p : net.parameters()) params.push_back(p.value);

  Tape& tape = Tape::current();
  tape.clear();
  TrainReport report;
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t steps = 0;
  for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    if (cfg.max_steps && steps >= cfg.max_steps) break;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(epoch), 0xffffffffu};
    std::mt19937_64 shuffle_rng(seq);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochSummary summary;
    summary.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      if (cfg.max_steps && steps >= cfg.max_steps) break;
      const std::size_t bn = std::min(cfg.batch_size, order.size() - b0);
      std::vector<TrainingSample> samples(bn);
      parallel_for(bn, [&](std::size_t s, std::size_t e) {
        for (std::size_t i = s; i < e; ++i)
          samples[i] = make_training_sample(train_set[order[b0 + i]], cfg, epoch, order[b0 + i]);
      });
      const Batch batch = collate(samples);
      const std::size_t H = batch.gt.dim(1), W = batch.gt.dim(2);

      Tensor loss;
      try {
        const auto probs = net.forward(batch.stack, true);
        loss = multi_scale_loss(probs, padded_extent(H), padded_extent(W), batch.l, batch.gt, batch.mask, weights);
      } catch (const EmptyMaskError&) {
        tape.clear();
        ++report.skipped_batches;
        continue;
      } catch (const NumericError& e) {
        tape.clear();
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(steps) + ": " + e.what());
      }
      const double value = loss.item();
      if (!std::isfinite(value))
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(steps) +
                           ": loss is not finite");
      backward(loss);
      tape.clear();
      adam_step(params, opt);
      zero_grads(params);

      ++steps;
      ++summary.steps;
      loss_sum += value;
      report.step_losses.push_back(value);
      if (log)
        *log << Json{{"epoch", epoch}, {"step", opt.step}, {"loss", value}, {"lr", opt.lr},
                     {"wall_time", seconds_since(t0)}}.dump()
             << '\n';
    }
    summary.mean_loss = summary.steps ? loss_sum / summary.steps : 0.0;
    if (!val_set.empty() && cfg.val_every && (epoch + 1) % cfg.val_every == 0) {
      EvalOptions eo;
      eo.frames = std::min(cfg.frames_per_stack, val_set[0].size());
      eo.mask_out_of_range = cfg.mask_out_of_range;
      eo.calibrated = cfg.calibrated;
      eo.seed = cfg.seed;
      const auto records = evaluate_stacks(net, val_set, eo);
      summary.validation = aggregate(records);
    }
    if (log) {
      Json j{{"epoch", epoch}, {"mean_loss", summary.mean_loss}, {"steps", summary.steps},
             {"wall_time", seconds_since(t0)}};
      if (summary.validation) j["val"] = summary.validation->to_json();
      *log << j.dump() << '\n';
      log->flush();
    }
    report.epochs.push_back(summary);
  }
  return report;
}

std::vector<AblationRow> ablate_stack_size(std::span<const FocalStack> train_set, std::span<const FocalStack> test_set,
                                           const NetworkConfig& net_cfg, const TrainConfig& train_cfg,
                                           std::span<const std::size_t> k_list, std::ostream* log) {
  if (test_set.empty()) throw ConfigError("ablate: empty test set");
  std::vector<AblationRow> rows;
  for (std::size_t k : k_list) {
    TrainConfig cfg = train_cfg;
    cfg.frames_per_stack = k;
    Network net(net_cfg, cfg.seed);
    AdamState opt = make_optimizer(cfg);
    train(net, opt, train_set, {}, cfg, log);
    EvalOptions eo;
    eo.frames = k;
    eo.mask_out_of_range = cfg.mask_out_of_range;
    eo.calibrated = cfg.calibrated;
    eo.seed = cfg.seed;
    const auto records = evaluate_stacks(net, test_set, eo);
    rows.push_back({k, aggregate(records)});
    if (log) *log << Json{{"ablation_k", k}, {"metrics", rows.back().metrics.to_json()}}.dump() << '\n';
  }
  return rows;
}

}  // namespace dfv
