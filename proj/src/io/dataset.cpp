#include <algorithm>
#include <exception>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dfv/dataset.hpp"
#include "dfv/parallel.hpp"

namespace fs = std::filesystem;

namespace dfv {

namespace {

Json read_data_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  try {
    return Json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

std::string sample_id(std::size_t i) {
  std::ostringstream os;
  os << "sample_" << std::setw(4) << std::setfill('0') << i;
  return os.str();
}

Json camera_json(const CameraModel& c) {
  return {{"focal_length", c.focal_length},
          {"aperture", c.aperture},
          {"pixel_pitch", c.pixel_pitch},
          {"width", c.width},
          {"height", c.height}};
}

}  // namespace

bool set_synth_field(SynthConfig& cfg, std::string_view key, const Json& v) {
  if (key == "focal_length") cfg.camera.focal_length = json_value<double>(v, key);
  else if (key == "aperture") cfg.camera.aperture = json_value<double>(v, key);
  else if (key == "pixel_pitch") cfg.camera.pixel_pitch = json_value<double>(v, key);
  else if (key == "width") cfg.camera.width = json_value<std::size_t>(v, key);
  else if (key == "height") cfg.camera.height = json_value<std::size_t>(v, key);
  else if (key == "num_samples") cfg.num_samples = json_value<std::size_t>(v, key);
  else if (key == "num_frames") cfg.num_frames = json_value<std::size_t>(v, key);
  else if (key == "focus_min") cfg.focus_min = json_value<double>(v, key);
  else if (key == "focus_max") cfg.focus_max = json_value<double>(v, key);
  else if (key == "focus_spacing") {
    const std::string s = json_value<std::string>(v, key);
    if (s == "linear") cfg.focus_spacing = FocusSpacing::Linear;
    else if (s == "inverse") cfg.focus_spacing = FocusSpacing::Inverse;
    else throw ConfigError("config key 'focus_spacing' must be \"linear\" or \"inverse\", got \"" + s + "\"");
  } else if (key == "depth_min") {
    cfg.depth_min = v.is_null() ? std::optional<double>() : json_value<double>(v, key);
  } else if (key == "depth_max") {
    cfg.depth_max = v.is_null() ? std::optional<double>() : json_value<double>(v, key);
  } else if (key == "max_layers") cfg.max_layers = json_value<std::size_t>(v, key);
  else if (key == "texture_contrast") cfg.texture_contrast = json_value<double>(v, key);
  else if (key == "textureless_prob") cfg.textureless_prob = json_value<double>(v, key);
  else if (key == "noise_sigma") cfg.noise_sigma = json_value<double>(v, key);
  else if (key == "color") cfg.color = json_value<bool>(v, key);
  else return false;
  return true;
}

Json synth_config_to_json(const SynthConfig& cfg) {
  Json j = camera_json(cfg.camera);
  j["num_samples"] = cfg.num_samples;
  j["num_frames"] = cfg.num_frames;
  j["focus_min"] = cfg.focus_min;
  j["focus_max"] = cfg.focus_max;
  j["focus_spacing"] = cfg.focus_spacing == FocusSpacing::Linear ? "linear" : "inverse";
  j["depth_min"] = cfg.depth_min ? Json(*cfg.depth_min) : Json(nullptr);
  j["depth_max"] = cfg.depth_max ? Json(*cfg.depth_max) : Json(nullptr);
  j["max_layers"] = cfg.max_layers;
  j["texture_contrast"] = cfg.texture_contrast;
  j["textureless_prob"] = cfg.textureless_prob;
  j["noise_sigma"] = cfg.noise_sigma;
  j["color"] = cfg.color;
  return j;
}

SynthConfig synth_config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("synth config must be a JSON object");
  SynthConfig cfg;
  for (const auto& [key, value] : j.items())
    if (!set_synth_field(cfg, key, value)) throw ConfigError("unknown config key '" + key + "'");
  cfg.validate();
  return cfg;
}

void write_stack(const fs::path& dir, const FocalStack& stack, const Json& extra_meta) {
  stack.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  const char* ext = stack.frames[0].channels == 1 ? ".pgm" : ".ppm";
  Json meta = extra_meta;
  meta["focal_distances"] = stack.focal_distances;
  Json frames = Json::array();
  for (std::size_t i = 0; i < stack.size(); ++i) {
    const std::string name = "frame_" + std::to_string(i) + ext;
    write_pnm16(dir / name, stack.frames[i]);
    frames.push_back(name);
  }
  meta["frames"] = frames;
  if (stack.gt_depth) {
    write_pfm(dir / "depth.pfm", *stack.gt_depth);
    meta["depth"] = "depth.pfm";
  }
  write_json_file((dir / "meta.json").string(), meta);
}

FocalStack read_stack(const fs::path& dir) {
  const Json meta = read_data_json(dir / "meta.json");
  FocalStack stack;
  try {
    stack.focal_distances = meta.at("focal_distances").get<std::vector<double>>();
  } catch (const nlohmann::json::exception&) {
    throw IoError("meta.json in " + dir.string() + " lacks a numeric focal_distances list");
  }
  std::vector<std::string> names;
  if (meta.contains("frames")) {
    names = meta["frames"].get<std::vector<std::string>>();
  } else {
    std::error_code ec;
    for (const auto& e : fs::directory_iterator(dir, ec))
      if (e.path().filename().string().starts_with("frame_")) names.push_back(e.path().filename().string());
    if (ec) throw IoError("cannot list " + dir.string() + ": " + ec.message());
    // Numeric order, so frame_10 follows frame_9.
    std::sort(names.begin(), names.end(), [](const std::string& a, const std::string& b) {
      return std::make_pair(a.size(), a) < std::make_pair(b.size(), b);
    });
  }
  for (const std::string& n : names) stack.frames.push_back(read_pnm(dir / n));
  const std::string depth_name = meta.value("depth", std::string("depth.pfm"));
  if (fs::exists(dir / depth_name)) {
    stack.gt_depth = read_pfm(dir / depth_name);
    if (meta.value("mask_protocol", true)) {
      stack.valid_mask = focal_range_mask(*stack.gt_depth, stack.focal_distances);
    } else {
      Image m(1, stack.gt_depth->height, stack.gt_depth->width);
      for (std::size_t i = 0; i < m.pixels.size(); ++i) m.pixels[i] = stack.gt_depth->pixels[i] > 0.0 ? 1.0 : 0.0;
      stack.valid_mask = std::move(m);
    }
  }
  try {
    stack.validate();
  } catch (const ConfigError& e) {
    throw IoError("invalid stack in " + dir.string() + ": " + e.what());
  }
  return stack;
}

Json generate_dataset(const SynthConfig& cfg, std::uint64_t seed, const fs::path& out_dir, bool mask_protocol) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory " + out_dir.string() + ": " + ec.message());

  const std::size_t n = cfg.num_samples;
  std::vector<std::vector<double>> distances(n);
  std::vector<std::exception_ptr> errors(n);
  parallel_for(n, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      try {
        const std::uint64_t s = seed + i;
        const FocalStack stack = synthesize_sample(cfg, s);
        Json meta = {{"id", sample_id(i)},
                     {"seed", s},
                     {"camera", camera_json(cfg.camera)},
                     {"mask_protocol", mask_protocol},
                     {"calibrated", true}};
        write_stack(out_dir / sample_id(i), stack, meta);
        distances[i] = stack.focal_distances;
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  });
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  Json samples = Json::array();
  for (std::size_t i = 0; i < n; ++i) samples.push_back({{"id", sample_id(i)}, {"focal_distances", distances[i]}});
  Json manifest = {{"seed", seed},
                   {"num_samples", n},
                   {"mask_protocol", mask_protocol},
                   {"config", synth_config_to_json(cfg)},
                   {"samples", samples}};
  write_json_file((out_dir / "manifest.json").string(), manifest);
  return manifest;
}

std::vector<FocalStack> Dataset::load_all() const {
  std::vector<FocalStack> out(size());
  std::vector<std::exception_ptr> errors(size());
  parallel_for(size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      try {
        out[i] = load(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  });
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

Dataset open_dataset(const fs::path& root) {
  const Json manifest = read_data_json(root / "manifest.json");
  Dataset ds{root, {}};
  try {
    for (const Json& s : manifest.at("samples")) ds.ids.push_back(s.at("id").get<std::string>());
  } catch (const nlohmann::json::exception&) {
    throw IoError("manifest in " + root.string() + " lacks a samples list with ids");
  }
  if (ds.ids.empty()) throw IoError("dataset " + root.string() + " has no samples");
  return ds;
}

}  // namespace dfv
