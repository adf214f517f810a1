#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dfv/config_json.hpp"
#include "dfv/optics.hpp"

namespace dfv {

/// Applies one flat config key; returns false for keys that belong elsewhere.
bool set_synth_field(SynthConfig& cfg, std::string_view key, const Json& value);
Json synth_config_to_json(const SynthConfig& cfg);
/// Strict parse: unknown keys raise ConfigError naming the key.
SynthConfig synth_config_from_json(const Json& j);

/// Writes one stack as frame_<i>.pgm/.ppm (16-bit), depth.pfm and meta.json.
void write_stack(const std::filesystem::path& dir, const FocalStack& stack, const Json& extra_meta = Json::object());

/// Reads a stack directory. meta.json must list focal_distances; frames come
/// from meta "frames" or, failing that, the sorted frame_* files. When a depth
/// map is present the valid mask follows meta "mask_protocol" (default on):
/// focal-range masking, or just positive depth when off.
FocalStack read_stack(const std::filesystem::path& dir);

/// Renders cfg.num_samples stacks into out_dir/sample_XXXX with per-sample
/// seed = seed + index and writes manifest.json. Returns the manifest.
Json generate_dataset(const SynthConfig& cfg, std::uint64_t seed, const std::filesystem::path& out_dir,
                      bool mask_protocol = true);

struct Dataset {
  std::filesystem::path root;
  std::vector<std::string> ids;

  std::size_t size() const { return ids.size(); }
  FocalStack load(std::size_t i) const { return read_stack(root / ids.at(i)); }
  std::vector<FocalStack> load_all() const;
};

/// Opens a dataset through its manifest.json.
Dataset open_dataset(const std::filesystem::path& root);

}  // namespace dfv
