#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "dfv/cli.hpp"
#include "dfv/dataset.hpp"
#include "dfv/error.hpp"
#include "dfv/focus.hpp"
#include "dfv/metrics.hpp"

namespace dfv::cli {

namespace fs = std::filesystem;

RunConfig RunConfig::from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig rc;
  for (const auto& [key, value] : j.items()) {
    if (set_synth_field(rc.synth, key, value)) continue;
    if (set_network_field(rc.network, key, value)) continue;
    if (set_train_field(rc.train, key, value)) continue;
    throw ConfigError("unknown config key '" + key + "'");
  }
  rc.validate();
  return rc;
}

Json RunConfig::to_json() const {
  Json j = synth_config_to_json(synth);
  j.update(network_config_to_json(network));
  j.update(train_config_to_json(train));
  return j;
}

void RunConfig::validate() const {
  synth.validate();
  network.validate();
  train.validate();
}

RunConfig load_run_config(const std::optional<fs::path>& path) {
  if (!path) return RunConfig{};
  return RunConfig::from_json(read_json_file(path->string()));
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const IoError*>(&e)) return 3;
  if (dynamic_cast<const CompatibilityError*>(&e)) return 4;
  return 1;
}

namespace {

struct Options {
  std::optional<fs::path> config, checkpoint, val;
  fs::path out, data, test;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> frames, scales;
  std::optional<std::string> policy, variant;
  std::size_t resolution = 64, repeats = 10, warmup = 2, window = 9;
  std::optional<std::size_t> x, y;
  std::vector<std::size_t> ks{2, 4, 6};
  bool no_mask_protocol = false;
};

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

// Flags that override config keys.
void apply_overrides(RunConfig& rc, const Options& o) {
  if (o.seed) rc.train.seed = *o.seed;
  if (o.frames) rc.train.frames_per_stack = *o.frames;
  if (o.variant) {
    if (*o.variant != "fv" && *o.variant != "dfv") throw ConfigError("--variant must be fv or dfv");
    rc.network.use_dfv = *o.variant == "dfv";
  }
  if (o.scales) {
    rc.network.num_scales = *o.scales;
    rc.network.spp3d_levels = std::min(rc.network.spp3d_levels, *o.scales);
  }
  rc.validate();
}

Json checkpoint_config(const RunConfig& rc) {
  return Json{{"network", network_config_to_json(rc.network)}, {"train", train_config_to_json(rc.train)}};
}

// Training config echoed in a checkpoint, with run-config defaults for anything absent.
TrainConfig checkpoint_train_config(const Checkpoint& ck) {
  TrainConfig tc;
  if (ck.config.contains("train"))
    for (const auto& [key, value] : ck.config["train"].items())
      if (!set_train_field(tc, key, value)) throw CompatibilityError("checkpoint train config key '" + key + "'");
  return tc;
}

std::vector<FocalStack> load_stacks(const fs::path& root) {
  if (fs::exists(root / "manifest.json")) return open_dataset(root).load_all();
  return {read_stack(root)};
}

std::vector<std::string> stack_ids(const fs::path& root) {
  if (fs::exists(root / "manifest.json")) return open_dataset(root).ids;
  return {root.filename().string()};
}

void check_channels(const NetworkConfig& net, std::span<const FocalStack> stacks, const std::string& what) {
  for (std::size_t i = 0; i < stacks.size(); ++i)
    if (stacks[i].frames.at(0).channels != net.input_channels)
      throw ConfigError(what + " stack " + std::to_string(i) + " has " +
                        std::to_string(stacks[i].frames[0].channels) + " channels but input_channels is " +
                        std::to_string(net.input_channels));
}

EvalOptions eval_options(const TrainConfig& tc, const Options& o) {
  EvalOptions eo;
  eo.frames = o.frames.value_or(0);
  if (o.policy) eo.policy = parse_policy(*o.policy);
  eo.mask_out_of_range = tc.mask_out_of_range;
  eo.calibrated = tc.calibrated;
  eo.seed = o.seed.value_or(tc.seed);
  return eo;
}

void cmd_synth(const Options& o, std::ostream& out) {
  const RunConfig rc = load_run_config(o.config);
  const std::uint64_t seed = o.seed.value_or(0);
  const Json manifest = generate_dataset(rc.synth, seed, o.out, !o.no_mask_protocol);
  write_json_file((o.out / "config.json").string(), rc.to_json());
  double lo = INFINITY, hi = -INFINITY;
  for (const Json& s : manifest["samples"])
    for (const Json& l : s["focal_distances"]) {
      lo = std::min(lo, l.get<double>());
      hi = std::max(hi, l.get<double>());
    }
  out << "wrote " << manifest["samples"].size() << " samples to " << o.out.string() << "; focal distances ["
      << lo << ", " << hi << "] m\n";
}

void cmd_train(const Options& o, std::ostream& out) {
  RunConfig rc = load_run_config(o.config);
  apply_overrides(rc, o);
  const auto train_set = load_stacks(o.data);
  std::vector<FocalStack> val_set;
  if (o.val) val_set = load_stacks(*o.val);
  check_channels(rc.network, train_set, "training");
  check_channels(rc.network, val_set, "validation");
  make_dir(o.out);
  write_json_file((o.out / "config.json").string(), rc.to_json());

  Network net(rc.network, rc.train.seed);
  AdamState opt = make_optimizer(rc.train);
  std::size_t start_epoch = 0;
  if (o.checkpoint) {
    const Checkpoint ck = read_checkpoint(*o.checkpoint);
    if (!(checkpoint_network_config(ck) == rc.network))
      throw CompatibilityError("checkpoint " + o.checkpoint->string() + " was written for a different network config");
    load_weights(net, ck);
    opt = ck.optimizer;
    opt.lr = rc.train.lr;
    start_epoch = ck.epoch;
  }

  const fs::path log_path = o.out / "train_log.jsonl";
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("cannot open " + log_path.string());
  const TrainReport report = train(net, opt, train_set, val_set, rc.train, &log, start_epoch);
  const std::size_t epoch = std::max<std::size_t>(start_epoch, rc.train.epochs);
  write_checkpoint(o.out / "checkpoint.bin",
                   make_checkpoint(net, opt, checkpoint_config(rc), epoch,
                                   Json{{"seed", rc.train.seed}, {"next_epoch", epoch}}.dump()));
  if (!report.epochs.empty() && report.epochs.back().validation)
    write_json_file((o.out / "val_metrics.json").string(), report.epochs.back().validation->to_json());

  out << "trained " << report.step_losses.size() << " steps";
  if (!report.step_losses.empty()) out << ", final loss " << report.step_losses.back();
  if (report.skipped_batches) out << ", skipped " << report.skipped_batches << " batches with no valid pixels";
  out << "\ncheckpoint: " << (o.out / "checkpoint.bin").string() << '\n';
}

std::pair<Network, TrainConfig> load_model(const fs::path& path) {
  const Checkpoint ck = read_checkpoint(path);
  Network net(checkpoint_network_config(ck), 0);
  load_weights(net, ck);
  return {std::move(net), checkpoint_train_config(ck)};
}

void cmd_eval(const Options& o, std::ostream& out) {
  auto [net, tc] = load_model(*o.checkpoint);
  const EvalOptions eo = eval_options(tc, o);
  const auto stacks = load_stacks(o.data);
  check_channels(net.config(), stacks, "evaluation");
  const auto records = evaluate_stacks(net, stacks, eo);
  const MetricRecord agg = aggregate(records);
  make_dir(o.out);
  Json echo{{"checkpoint", o.checkpoint->string()}, {"data", o.data.string()}, {"frames", eo.frames},
            {"policy", policy_name(eo.policy)}, {"seed", eo.seed}, {"mask_out_of_range", eo.mask_out_of_range},
            {"calibrated", eo.calibrated}};
  write_json_file((o.out / "config.json").string(), echo);
  write_json_file((o.out / "metrics.json").string(), agg.to_json());
  const auto ids = stack_ids(o.data);
  write_metrics_jsonl((o.out / "metrics.jsonl").string(), ids, records);
  out << agg.to_json().dump(2) << '\n';
}

void cmd_predict(const Options& o, std::ostream& out) {
  auto [net, tc] = load_model(*o.checkpoint);
  const EvalOptions eo = eval_options(tc, o);
  const FocalStack stack = read_stack(o.data);
  check_channels(net.config(), std::span(&stack, 1), "input");
  const DepthResult r = predict(net, stack, eo);

  // Range of the distances the prediction was made against.
  std::vector<double> l = stack.focal_distances;
  if (!eo.calibrated) l = stack.normalized().focal_distances;
  const double lo = l.front(), hi = l.back();

  make_dir(o.out);
  write_pfm(o.out / "depth.pfm", r.depth);
  write_pfm(o.out / "uncertainty.pfm", r.uncertainty);
  write_ppm8(o.out / "depth_preview.ppm", colorize(r.depth, lo, hi));
  write_ppm8(o.out / "uncertainty_preview.ppm", colorize(r.uncertainty, 0.0, (hi - lo) / 2.0));

  double sum = 0.0;
  std::size_t count = 0;
  const std::optional<Image> mask = stack.gt_depth ? std::optional(evaluation_mask(stack, eo.mask_out_of_range))
                                                   : std::nullopt;
  for (std::size_t i = 0; i < r.uncertainty.pixels.size(); ++i)
    if (!mask || mask->pixels[i] != 0.0) {
      sum += r.uncertainty.pixels[i];
      ++count;
    }
  const double avg_unc = count ? sum / count : NAN;
  Json summary{{"avg_unc", std::isfinite(avg_unc) ? Json(avg_unc) : Json(nullptr)}, {"pixels", count}};
  if (stack.gt_depth && count) {
    FocalStack sub = stack;
    if (!eo.calibrated) sub = stack.normalized();
    summary["metrics"] = evaluate(r.depth, *sub.gt_depth, *mask, r.uncertainty).to_json();
  }
  write_json_file((o.out / "prediction.json").string(), summary);
  out << "avgUnc " << std::setprecision(6) << avg_unc << '\n';
}

void cmd_bench(const Options& o, std::ostream& out) {
  NetworkConfig ncfg;
  if (o.checkpoint) {
    ncfg = checkpoint_network_config(read_checkpoint(*o.checkpoint));
  } else {
    RunConfig rc = load_run_config(o.config);
    apply_overrides(rc, o);
    ncfg = rc.network;
  }
  Network net(ncfg, 0);
  if (o.checkpoint) load_weights(net, read_checkpoint(*o.checkpoint));
  const std::size_t N = o.frames.value_or(5), R = o.resolution;
  if (N < 2 || R == 0 || o.repeats == 0) throw ConfigError("bench needs frames >= 2, resolution > 0, repeats > 0");

  std::mt19937_64 rng(o.seed.value_or(0));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(N * ncfg.input_channels * R * R);
  for (double& x : v) x = u(rng);
  const Tensor input = Tensor::from({1, N, ncfg.input_channels, R, R}, std::move(v));

  NoGradGuard guard;
  std::vector<double> ms;
  for (std::size_t i = 0; i < o.warmup + o.repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto probs = net.forward(input, false);
    const double t = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (i >= o.warmup) ms.push_back(t);
  }
  std::vector<double> sorted = ms;
  std::sort(sorted.begin(), sorted.end());
  auto pct = [&](double p) {
    const auto idx = static_cast<std::size_t>(std::ceil(p * sorted.size())) - 1;
    return sorted[std::min(idx, sorted.size() - 1)];
  };
  double mean = 0.0;
  for (double t : ms) mean += t;
  mean /= ms.size();
  const Json j{{"resolution", R}, {"frames", N},        {"repeats", ms.size()}, {"warmup", o.warmup},
               {"mean_ms", mean}, {"p50_ms", pct(0.5)}, {"p95_ms", pct(0.95)},  {"runs_ms", ms}};
  if (!o.out.empty()) {
    if (o.out.has_parent_path()) make_dir(o.out.parent_path());
    write_json_file(o.out.string(), j);
  }
  out << std::fixed << std::setprecision(3) << R << "x" << R << "x" << N << ": mean " << mean << " ms, p50 "
      << pct(0.5) << " ms, p95 " << pct(0.95) << " ms over " << ms.size() << " runs\n";
}

void cmd_trace(const Options& o, std::ostream& out) {
  const FocalStack stack = read_stack(o.data);
  const std::size_t H = stack.frames.at(0).height, W = stack.frames[0].width;
  const std::size_t y = o.y.value_or(H / 2), x = o.x.value_or(W / 2);
  if (y >= H || x >= W) throw ConfigError("trace pixel lies outside the " + std::to_string(H) + "x" + std::to_string(W) + " frame");
  const auto rows = focus::trace_demo(stack, y, x, o.window);
  const fs::path csv = o.out.empty() ? fs::path("trace.csv") : o.out;
  if (csv.has_parent_path()) make_dir(csv.parent_path());
  focus::write_trace_csv(csv, rows);
  std::vector<double> d;
  for (const auto& r : rows) d.push_back(r.differential);
  const auto changes = focus::sign_changes(d);
  out << "pixel (" << y << ", " << x << "): " << rows.size() << " frames, " << changes.size()
      << " sign changes in the differential trace; wrote " << csv.string() << '\n';
}

void cmd_ablate(const Options& o, std::ostream& out) {
  RunConfig rc = load_run_config(o.config);
  apply_overrides(rc, o);
  const auto train_set = load_stacks(o.data), test_set = load_stacks(o.test);
  check_channels(rc.network, train_set, "training");
  check_channels(rc.network, test_set, "test");
  make_dir(o.out);
  write_json_file((o.out / "config.json").string(), rc.to_json());
  std::ofstream log(o.out / "ablation_log.jsonl");
  const auto rows = ablate_stack_size(train_set, test_set, rc.network, rc.train, o.ks, &log);

  Json table = Json::array();
  std::ofstream csv(o.out / "ablation.csv");
  if (!csv) throw IoError("cannot write " + (o.out / "ablation.csv").string());
  csv << "k,mse,rms,log_rms,abs_rel,sqr_rel,delta1,delta2,delta3,bumpiness,avg_unc\n";
  out << "   k        mse    abs_rel   bump   avgUnc\n";
  for (const AblationRow& r : rows) {
    const MetricRecord& m = r.metrics;
    table.push_back(Json{{"k", r.k}, {"metrics", m.to_json()}});
    csv << std::setprecision(10) << r.k << ',' << m.mse << ',' << m.rms << ',' << m.log_rms << ',' << m.abs_rel
        << ',' << m.sqr_rel << ',' << m.delta1 << ',' << m.delta2 << ',' << m.delta3 << ',' << m.bumpiness << ','
        << m.avg_unc << '\n';
    out << std::setw(4) << r.k << std::setw(11) << std::setprecision(4) << m.mse << std::setw(11) << m.abs_rel
        << std::setw(7) << m.bumpiness << std::setw(9) << m.avg_unc << '\n';
  }
  write_json_file((o.out / "ablation.json").string(), table);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Depth from focal stacks: synthesis, training, evaluation and prediction"};
  app.require_subcommand(1);
  Options o;

  auto config = [&](CLI::App* c) { c->add_option("--config", o.config, "flat JSON run config")->check(CLI::ExistingFile); };
  auto seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "random seed"); };
  auto net_flags = [&](CLI::App* c) {
    c->add_option("--variant", o.variant, "fv or dfv")->check(CLI::IsMember({"fv", "dfv"}));
    c->add_option("--scales", o.scales, "number of supervised scales")->check(CLI::Range(1, 4));
  };
  auto eval_flags = [&](CLI::App* c) {
    c->add_option("--frames", o.frames, "frames sampled per stack (default: all)");
    c->add_option("--policy", o.policy, "frame sampling policy")->check(CLI::IsMember({"random", "equidistant"}));
  };

  auto* synth = app.add_subcommand("synth", "render a synthetic focal-stack dataset");
  config(synth);
  seed(synth);
  synth->add_option("--out", o.out, "output dataset directory")->required();
  synth->add_flag("--no-mask-protocol", o.no_mask_protocol, "keep out-of-range depths in the valid mask");

  auto* trn = app.add_subcommand("train", "train a network on a dataset");
  config(trn);
  seed(trn);
  net_flags(trn);
  trn->add_option("--data", o.data, "training dataset")->required();
  trn->add_option("--val", o.val, "validation dataset");
  trn->add_option("--out", o.out, "run directory")->required();
  trn->add_option("--checkpoint", o.checkpoint, "resume from this checkpoint");
  trn->add_option("--frames", o.frames, "frames sampled per training stack");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  seed(ev);
  eval_flags(ev);
  ev->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required();
  ev->add_option("--data", o.data, "dataset or single stack directory")->required();
  ev->add_option("--out", o.out, "output directory for metrics")->required();

  auto* pred = app.add_subcommand("predict", "predict depth and uncertainty for one stack");
  seed(pred);
  eval_flags(pred);
  pred->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required();
  pred->add_option("--data", o.data, "stack directory")->required();
  pred->add_option("--out", o.out, "output directory")->required();

  auto* bench = app.add_subcommand("bench", "time eval-mode forward passes");
  config(bench);
  seed(bench);
  net_flags(bench);
  bench->add_option("--checkpoint", o.checkpoint, "network to time (default: fresh from config)");
  bench->add_option("--resolution", o.resolution, "square input extent");
  bench->add_option("--frames", o.frames, "frames per stack");
  bench->add_option("--repeats", o.repeats, "timed runs");
  bench->add_option("--warmup", o.warmup, "untimed runs first");
  bench->add_option("--out", o.out, "optional JSON report path");

  auto* trace = app.add_subcommand("trace", "per-frame focus trace of one pixel");
  trace->add_option("--data", o.data, "stack directory")->required();
  trace->add_option("--out", o.out, "CSV path (default trace.csv)");
  trace->add_option("--y", o.y, "row (default: center)");
  trace->add_option("--x", o.x, "column (default: center)");
  trace->add_option("--window", o.window, "focus-measure window");

  auto* abl = app.add_subcommand("ablate", "train and evaluate once per stack size");
  config(abl);
  seed(abl);
  net_flags(abl);
  abl->add_option("--data", o.data, "training dataset")->required();
  abl->add_option("--test", o.test, "test dataset")->required();
  abl->add_option("--out", o.out, "output directory")->required();
  abl->add_option("--ks", o.ks, "stack sizes")->delimiter(',');

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) cmd_synth(o, out);
    else if (*trn) cmd_train(o, out);
    else if (*ev) cmd_eval(o, out);
    else if (*pred) cmd_predict(o, out);
    else if (*bench) cmd_bench(o, out);
    else if (*trace) cmd_trace(o, out);
    else if (*abl) cmd_ablate(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e);
  }
  return 0;
}

}  // namespace dfv::cli
