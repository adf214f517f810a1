#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace dfv {

/// Planar C x H x W image of reals. Depth maps and masks use one channel.
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

  std::size_t plane() const { return height * width; }
  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
  bool same_extent(const Image& o) const { return height == o.height && width == o.width; }
  bool operator==(const Image&) const = default;
};

/// Channel mean; a 1-channel image is returned unchanged.
Image to_gray(const Image& img);

/// Portable float map, little-endian ("Pf" for 1 channel, "PF" for 3).
/// Rows are stored bottom-to-top as the format requires.
void write_pfm(const std::filesystem::path& path, const Image& img);
Image read_pfm(const std::filesystem::path& path);

/// 16-bit binary PGM (1 channel) or PPM (3 channels); values clamped to [0,1].
void write_pnm16(const std::filesystem::path& path, const Image& img);
/// 8-bit binary PPM preview of a 3-channel image in [0,1].
void write_ppm8(const std::filesystem::path& path, const Image& rgb);
/// Reads binary P5/P6 with maxval up to 65535, scaled to [0,1].
Image read_pnm(const std::filesystem::path& path);

/// Maps a 1-channel image onto the viridis colormap; lo/hi bound the range.
Image colorize(const Image& map, double lo, double hi);

}  // namespace dfv
