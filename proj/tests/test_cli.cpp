#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "doctest.h"
#include "dfv/cli.hpp"
#include "dfv/config_json.hpp"
#include "dfv/error.hpp"
#include "support.hpp"

using namespace dfv;
using dfv::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) {
      std::ifstream f(e.path(), std::ios::binary);
      files[fs::relative(e.path(), root).string()] = std::string(std::istreambuf_iterator<char>(f), {});
    }
  return files;
}

fs::path write_config(const fs::path& dir, const Json& j) {
  const fs::path p = dir / "cfg.json";
  write_json_file(p.string(), j);
  return p;
}

const Json kSmall{{"width", 32}, {"height", 32}, {"num_samples", 4}, {"num_frames", 5},
                  {"epochs", 1},  {"batch_size", 2}, {"crop", 32},       {"num_scales", 1},
                  {"spp3d_levels", 1}, {"lr", 1e-3}};

}  // namespace

TEST_CASE("run config is strict and round-trips") {
  const cli::RunConfig rc = cli::RunConfig::from_json(kSmall);
  CHECK(rc.synth.camera.width == 32);
  CHECK(rc.network.num_scales == 1);
  CHECK(rc.train.lr == 1e-3);
  const cli::RunConfig back = cli::RunConfig::from_json(rc.to_json());
  CHECK(back.to_json() == rc.to_json());
  try {
    cli::RunConfig::from_json(Json{{"widht", 32}});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("widht") != std::string::npos);
  }
  CHECK_THROWS_AS(cli::RunConfig::from_json(Json{{"lr", "fast"}}), ConfigError);
}

TEST_CASE("exit codes follow the error class") {
  CHECK(cli::exit_code(ConfigError("x")) == 2);
  CHECK(cli::exit_code(IoError("x")) == 3);
  CHECK(cli::exit_code(CompatibilityError("x")) == 4);
  CHECK(cli::exit_code(NumericError("x")) == 1);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("synth is deterministic and reports config errors") {
  TempDir tmp("cli_synth");
  const fs::path cfg = write_config(tmp.path(), kSmall);
  const Result a = run({"synth", "--config", cfg.string(), "--out", (tmp.path() / "a").string(), "--seed", "7"});
  const Result b = run({"synth", "--config", cfg.string(), "--out", (tmp.path() / "b").string(), "--seed", "7"});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(a.out.find("wrote 4 samples") != std::string::npos);
  CHECK(tree(tmp.path() / "a") == tree(tmp.path() / "b"));
  CHECK(tree(tmp.path() / "a").count("config.json") == 1);

  const Result missing = run({"synth", "--config", (tmp.path() / "nope.json").string(), "--out", "x"});
  CHECK(missing.code == 2);
  CHECK(missing.err.find("nope.json") != std::string::npos);

  const fs::path bad = write_config(tmp.path(), Json{{"apperture", 0.01}});
  const Result unknown = run({"synth", "--config", bad.string(), "--out", (tmp.path() / "c").string()});
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("apperture") != std::string::npos);

  Json fifty = kSmall;
  fifty["num_samples"] = 50;
  fifty["width"] = fifty["height"] = 16;
  const fs::path cfg50 = write_config(tmp.path(), fifty);
  REQUIRE(run({"synth", "--config", cfg50.string(), "--out", (tmp.path() / "d").string()}).code == 0);
  CHECK(read_json_file((tmp.path() / "d" / "manifest.json").string())["samples"].size() == 50);
}

TEST_CASE("train, eval, predict, trace and bench pipeline") {
  TempDir tmp("cli_pipe");
  Json twenty = kSmall;
  twenty["num_samples"] = 20;
  const fs::path cfg = write_config(tmp.path(), twenty);
  const std::string data = (tmp.path() / "data").string(), run_dir = (tmp.path() / "run").string();
  REQUIRE(run({"synth", "--config", cfg.string(), "--out", data, "--seed", "3"}).code == 0);

  const Result t = run({"train", "--config", cfg.string(), "--data", data, "--val", data, "--out", run_dir});
  REQUIRE_MESSAGE(t.code == 0, t.err);
  const fs::path ckpt = fs::path(run_dir) / "checkpoint.bin";
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(fs::path(run_dir) / "train_log.jsonl"));
  CHECK(read_json_file((fs::path(run_dir) / "config.json").string())["num_scales"] == 1);

  const std::string e3 = (tmp.path() / "e3").string(), e5 = (tmp.path() / "e5").string();
  REQUIRE(run({"eval", "--checkpoint", ckpt.string(), "--data", data, "--out", e3, "--frames", "3"}).code == 0);
  REQUIRE(run({"eval", "--checkpoint", ckpt.string(), "--data", data, "--out", e5, "--frames", "5"}).code == 0);
  const Json m3 = read_json_file(e3 + "/metrics.json"), m5 = read_json_file(e5 + "/metrics.json");
  for (const char* key : {"mse", "rms", "log_rms", "abs_rel", "sqr_rel", "delta1", "delta2", "delta3", "bumpiness",
                          "avg_unc"}) {
    CHECK_MESSAGE(m5[key].is_number(), key);
    CHECK_MESSAGE(m3[key].is_number(), key);
  }
  CHECK(m3 != m5);
  std::ifstream jl(e5 + "/metrics.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(jl, line);) ++lines;
  CHECK(lines == 21);

  const std::string pdir = (tmp.path() / "pred").string();
  const Result p = run({"predict", "--checkpoint", ckpt.string(), "--data", data + "/sample_0000", "--out", pdir});
  REQUIRE_MESSAGE(p.code == 0, p.err);
  CHECK(p.out.find("avgUnc") != std::string::npos);
  for (const char* f : {"depth.pfm", "uncertainty.pfm", "depth_preview.ppm", "uncertainty_preview.ppm"})
    CHECK_MESSAGE(fs::exists(fs::path(pdir) / f), f);

  const std::string csv = (tmp.path() / "trace.csv").string();
  CHECK(run({"trace", "--data", data + "/sample_0001", "--out", csv}).code == 0);
  CHECK(fs::exists(csv));

  const Result bench = run({"bench", "--checkpoint", ckpt.string(), "--resolution", "32", "--repeats", "3",
                            "--warmup", "1"});
  CHECK(bench.code == 0);
  CHECK(bench.out.find("mean") != std::string::npos);

  // Resuming with a different network is a compatibility failure.
  const Result mismatch = run({"train", "--config", cfg.string(), "--data", data, "--out",
                               (tmp.path() / "run2").string(), "--checkpoint", ckpt.string(), "--scales", "2"});
  CHECK(mismatch.code == 4);

  std::ofstream(tmp.path() / "junk.bin") << "junk";
  CHECK(run({"eval", "--checkpoint", (tmp.path() / "junk.bin").string(), "--data", data, "--out", e3}).code == 3);
  CHECK(run({"eval", "--checkpoint", ckpt.string(), "--data", (tmp.path() / "none").string(), "--out", e3}).code ==
        3);
}
