#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dfv/config_json.hpp"
#include "dfv/metrics.hpp"
#include "dfv/network.hpp"
#include "dfv/optics.hpp"
#include "dfv/optim.hpp"

namespace dfv {

enum class SamplingPolicy { Random, Equidistant };

SamplingPolicy parse_policy(std::string_view name);
const char* policy_name(SamplingPolicy p);

/// Sorted 0-based frame indices. Random draws k distinct indices uniformly;
/// equidistant rounds 1 + j (N-1)/(k-1) half-up (1-based), so the first and
/// last frames are always kept. Throws ConfigError unless 2 <= k <= N.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, SamplingPolicy policy, std::mt19937_64& rng);
FocalStack sample_frames(const FocalStack& stack, std::size_t k, SamplingPolicy policy, std::mt19937_64& rng);

/// Deep-supervision weights as integer numerators over their sum, so the
/// weights add up to exactly 1 in this representation.
struct LossWeights {
  std::vector<std::uint64_t> numerators;
  std::uint64_t denominator = 1;

  double weight(std::size_t scale) const {
    return static_cast<double>(numerators.at(scale)) / static_cast<double>(denominator);
  }
};

/// Keeps the first num_scales numerators (finest first) and renormalizes.
LossWeights loss_weights(std::span<const std::uint64_t> alpha, std::size_t num_scales);

/// Sum over scales of w_s * masked smooth-L1 between the regressed depth of the
/// upsampled probability volume and gt. probs finest first, each [B,N,h,w];
/// l [B,N]; gt and mask [B,H,W]. Throws EmptyMaskError on an all-zero mask.
Tensor multi_scale_loss(const std::vector<Tensor>& probs, std::size_t padded_h, std::size_t padded_w,
                        const Tensor& l, const Tensor& gt, const Tensor& mask, const LossWeights& weights);

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 4;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t crop = 64;
  std::size_t frames_per_stack = 5;
  bool flip_augment = true;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> alpha{8, 4, 2, 1};
  bool mask_out_of_range = true;
  bool calibrated = true;       // false: focal distances normalized to [0,1]
  std::size_t max_steps = 0;    // 0: no cap
  std::size_t val_every = 1;    // epochs between validation passes (0: never)

  void validate() const;
};

bool set_network_field(NetworkConfig& cfg, std::string_view key, const Json& value);
Json network_config_to_json(const NetworkConfig& cfg);
bool set_train_field(TrainConfig& cfg, std::string_view key, const Json& value);
Json train_config_to_json(const TrainConfig& cfg);

/// One training example after frame sampling and augmentation.
struct TrainingSample {
  std::vector<Image> frames;
  std::vector<double> l;
  Image gt;
  Image mask;
};

/// Valid pixels of a (sub-)stack: the stored mask (or gt > 0), restricted to
/// [min l, max l] when mask_out_of_range is set.
Image evaluation_mask(const FocalStack& stack, bool mask_out_of_range);

/// Frame sampling, random crop and flips for sample `index` in `epoch`; the
/// random stream is derived from (seed, epoch, index) only.
TrainingSample make_training_sample(const FocalStack& stack, const TrainConfig& cfg, std::size_t epoch,
                                    std::size_t index);

struct Batch {
  Tensor stack;  // [B,N,C,H,W]
  Tensor l;      // [B,N]
  Tensor gt;     // [B,H,W]
  Tensor mask;   // [B,H,W]
};
Batch collate(std::span<const TrainingSample> samples);

struct EvalOptions {
  std::size_t frames = 0;  // 0: whole stack
  SamplingPolicy policy = SamplingPolicy::Equidistant;
  bool mask_out_of_range = true;
  bool calibrated = true;
  std::uint64_t seed = 0;
  std::size_t batch_size = 4;
};

/// Eval-mode level-1 prediction at full resolution.
DepthResult predict(Network& net, const FocalStack& stack, const EvalOptions& opts = {});
/// One MetricRecord per stack.
std::vector<MetricRecord> evaluate_stacks(Network& net, std::span<const FocalStack> stacks, const EvalOptions& opts);

struct EpochSummary {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::size_t steps = 0;
  std::optional<MetricRecord> validation;
};

struct TrainReport {
  std::vector<double> step_losses;
  std::vector<EpochSummary> epochs;
  std::size_t skipped_batches = 0;
};

/// Trains net in place for cfg.epochs starting at start_epoch (0-based).
/// Writes JSON lines (epoch, step, loss, lr, wall_time) to log when given.
/// Non-finite losses abort with NumericError.
TrainReport train(Network& net, AdamState& opt, std::span<const FocalStack> train_set,
                  std::span<const FocalStack> val_set, const TrainConfig& cfg, std::ostream* log = nullptr,
                  std::size_t start_epoch = 0);

AdamState make_optimizer(const TrainConfig& cfg);

struct AblationRow {
  std::size_t k = 0;
  MetricRecord metrics;
};

/// Independent train + equidistant evaluation for each k with shared seed.
std::vector<AblationRow> ablate_stack_size(std::span<const FocalStack> train_set, std::span<const FocalStack> test_set,
                                           const NetworkConfig& net_cfg, const TrainConfig& train_cfg,
                                           std::span<const std::size_t> k_list, std::ostream* log = nullptr);

/// Binary checkpoint: parameters, batch-norm statistics, Adam moments,
/// config echo, epoch and trainer RNG state.
struct Checkpoint {
  Json config;
  std::uint64_t epoch = 0;
  std::string rng_state;
  std::vector<NamedTensor> parameters;
  std::vector<NamedTensor> buffers;
  AdamState optimizer;
};

Checkpoint make_checkpoint(const Network& net, const AdamState& opt, const Json& config, std::uint64_t epoch,
                           const std::string& rng_state = "");
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);
/// Copies checkpoint values into net; throws CompatibilityError naming the
/// first parameter or buffer that is missing or differs in shape.
void load_weights(Network& net, const Checkpoint& ckpt);
/// Network config stored in the checkpoint's config echo.
NetworkConfig checkpoint_network_config(const Checkpoint& ckpt);

}  // namespace dfv
