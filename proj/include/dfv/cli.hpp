#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dfv/config_json.hpp"
#include "dfv/network.hpp"
#include "dfv/optics.hpp"
#include "dfv/training.hpp"

namespace dfv::cli {

/// Flat run configuration: synthesis, network and training keys side by side.
/// Every key is optional; unknown keys raise ConfigError naming the key.
struct RunConfig {
  SynthConfig synth;
  NetworkConfig network;
  TrainConfig train;

  static RunConfig from_json(const Json& j);
  Json to_json() const;
  void validate() const;
};

/// Defaults when path is empty; otherwise the parsed file.
RunConfig load_run_config(const std::optional<std::filesystem::path>& path);

/// Exit code for an exception escaping a command:
/// 2 config, 3 I/O, 4 checkpoint compatibility, 1 anything else.
int exit_code(const std::exception& e);

/// Parses argv-style arguments (without the program name), runs the
/// subcommand and returns the process exit code. Messages go to out/err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dfv::cli
