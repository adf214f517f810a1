#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "dfv/error.hpp"
#include "dfv/image.hpp"

namespace dfv {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path.string());
  return is;
}

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& is, const std::filesystem::path& path) {
  std::string tok;
  char c;
  while (is.get(c)) {
    if (c == '#') {
      std::string line;
      std::getline(is, line);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(c);
  }
  if (tok.empty()) throw IoError("truncated header in " + path.string());
  return tok;
}

std::size_t header_size(std::istream& is, const std::filesystem::path& path) {
  const std::string t = header_token(is, path);
  try {
    const long v = std::stol(t);
    if (v <= 0) throw IoError("non-positive extent in " + path.string());
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    throw IoError("malformed header field '" + t + "' in " + path.string());
  }
}

void put_f32_le(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
  os.write(bytes, 4);
}

float get_f32(const unsigned char* b, bool little) {
  const std::uint32_t bits =
      little ? (std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24)
             : (std::uint32_t(b[3]) | std::uint32_t(b[2]) << 8 | std::uint32_t(b[1]) << 16 | std::uint32_t(b[0]) << 24);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

Image to_gray(const Image& img) {
  if (img.channels == 1) return img;
  Image g(1, img.height, img.width);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t i = 0; i < img.plane(); ++i) g.pixels[i] += img.pixels[c * img.plane() + i];
  for (double& v : g.pixels) v /= static_cast<double>(img.channels);
  return g;
}

void write_pfm(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw ShapeError("write_pfm: need 1 or 3 channels, got " + std::to_string(img.channels));
  auto os = open_out(path);
  os << (img.channels == 1 ? "Pf" : "PF") << '\n' << img.width << ' ' << img.height << '\n' << "-1.0\n";
  for (std::size_t row = img.height; row-- > 0;)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) put_f32_le(os, static_cast<float>(img.at(c, row, x)));
  if (!os) throw IoError("write failed: " + path.string());
}

Image read_pfm(const std::filesystem::path& path) {
  auto is = open_in(path);
  const std::string magic = header_token(is, path);
  if (magic != "Pf" && magic != "PF") throw IoError("not a PFM file: " + path.string());
  const std::size_t w = header_size(is, path), h = header_size(is, path);
  const std::string scale_tok = header_token(is, path);
  double scale;
  try {
    scale = std::stod(scale_tok);
  } catch (const std::logic_error&) {
    throw IoError("malformed PFM scale in " + path.string());
  }
  const bool little = scale < 0.0;
  Image img(magic == "Pf" ? 1 : 3, h, w);
  std::vector<unsigned char> buf(4 * img.channels * w);
  for (std::size_t row = h; row-- > 0;) {
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
      throw IoError("truncated PFM data in " + path.string());
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < img.channels; ++c)
        img.at(c, row, x) = get_f32(buf.data() + 4 * (x * img.channels + c), little);
  }
  return img;
}

void write_pnm16(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw ShapeError("write_pnm16: need 1 or 3 channels, got " + std::to_string(img.channels));
  auto os = open_out(path);
  os << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n65535\n";
  std::vector<char> row(2 * img.channels * img.width);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
        row[2 * (x * img.channels + c)] = static_cast<char>(q >> 8);
        row[2 * (x * img.channels + c) + 1] = static_cast<char>(q & 0xff);
      }
    os.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw IoError("write failed: " + path.string());
}

void write_ppm8(const std::filesystem::path& path, const Image& rgb) {
  if (rgb.channels != 3) throw ShapeError("write_ppm8: need 3 channels");
  auto os = open_out(path);
  os << "P6\n" << rgb.width << ' ' << rgb.height << "\n255\n";
  for (std::size_t y = 0; y < rgb.height; ++y)
    for (std::size_t x = 0; x < rgb.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        os.put(static_cast<char>(std::lround(std::clamp(rgb.at(c, y, x), 0.0, 1.0) * 255.0)));
  if (!os) throw IoError("write failed: " + path.string());
}

Image read_pnm(const std::filesystem::path& path) {
  auto is = open_in(path);
  const std::string magic = header_token(is, path);
  if (magic != "P5" && magic != "P6") throw IoError("unsupported PNM variant '" + magic + "' in " + path.string());
  const std::size_t w = header_size(is, path), h = header_size(is, path), maxval = header_size(is, path);
  if (maxval > 65535) throw IoError("PNM maxval too large in " + path.string());
  const std::size_t bytes = maxval > 255 ? 2 : 1;
  Image img(magic == "P5" ? 1 : 3, h, w);
  std::vector<unsigned char> row(bytes * img.channels * w);
  for (std::size_t y = 0; y < h; ++y) {
    if (!is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size())))
      throw IoError("truncated PNM data in " + path.string());
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) {
        const std::size_t i = bytes * (x * img.channels + c);
        const unsigned v = bytes == 2 ? (unsigned(row[i]) << 8 | row[i + 1]) : row[i];
        img.at(c, y, x) = static_cast<double>(v) / static_cast<double>(maxval);
      }
  }
  return img;
}

Image colorize(const Image& map, double lo, double hi) {
  // viridis sampled at 17 evenly spaced stops
  static constexpr std::array<std::array<int, 3>, 17> kStops{{{68, 1, 84},    {72, 24, 106},  {71, 45, 123},
                                                              {66, 64, 134},  {59, 82, 139},  {51, 99, 141},
                                                              {44, 114, 142}, {38, 130, 142}, {33, 145, 140},
                                                              {31, 160, 136}, {40, 174, 128}, {63, 188, 115},
                                                              {94, 201, 98},  {132, 212, 75}, {173, 220, 48},
                                                              {216, 226, 25}, {253, 231, 37}}};
  if (map.channels != 1) throw ShapeError("colorize: need a 1-channel map");
  Image out(3, map.height, map.width);
  const double span = hi > lo ? hi - lo : 1.0;
  for (std::size_t i = 0; i < map.plane(); ++i) {
    const double t = std::clamp((map.pixels[i] - lo) / span, 0.0, 1.0) * 16.0;
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(t), 15);
    const double f = t - static_cast<double>(k);
    for (std::size_t c = 0; c < 3; ++c)
      out.pixels[c * map.plane() + i] = ((1.0 - f) * kStops[k][c] + f * kStops[k + 1][c]) / 255.0;
  }
  return out;
}

}  // namespace dfv
