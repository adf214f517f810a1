#include <bit>
#include <cstring>
#include <fstream>

#include "dfv/error.hpp"
#include "dfv/training.hpp"

namespace fs = std::filesystem;

namespace dfv {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'F', 'V', 'C', 'K', 'P', 'T', '\n'};
constexpr std::uint32_t kVersion = 1;

enum class Kind : std::uint8_t { Parameter = 0, Buffer = 1, AdamM = 2, AdamV = 3 };

class Writer {
 public:
  explicit Writer(const fs::path& p) : path_(p), os_(p, std::ios::binary) {
    if (!os_) throw IoError("cannot open for writing: " + p.string());
  }
  template <class T>
  void pod(T v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const std::string& s) {
    pod<std::uint64_t>(s.size());
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void tensor(Kind kind, const std::string& name, const Shape& shape, std::span<const double> data) {
    pod(static_cast<std::uint8_t>(kind));
    bytes(name);
    pod<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) pod<std::uint64_t>(d);
    os_.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  void finish() {
    os_.flush();
    if (!os_) throw IoError("write failed: " + path_.string());
  }
  std::ofstream& raw() { return os_; }

 private:
  fs::path path_;
  std::ofstream os_;
};

class Reader {
 public:
  explicit Reader(const fs::path& p) : path_(p), is_(p, std::ios::binary) {
    if (!is_) throw IoError("cannot open checkpoint: " + p.string());
  }
  template <class T>
  T pod() {
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is_) throw IoError("truncated checkpoint: " + path_.string());
    return v;
  }
  std::string bytes() {
    const auto n = pod<std::uint64_t>();
    if (n > (1ull << 32)) throw IoError("corrupt checkpoint string length in " + path_.string());
    std::string s(n, '\0');
    is_.read(s.data(), static_cast<std::streamsize>(n));
    if (!is_) throw IoError("truncated checkpoint: " + path_.string());
    return s;
  }
  std::vector<double> doubles(std::size_t n) {
    std::vector<double> v(n);
    is_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is_) throw IoError("truncated checkpoint: " + path_.string());
    return v;
  }
  std::istream& raw() { return is_; }

 private:
  fs::path path_;
  std::ifstream is_;
};

}  // namespace

Checkpoint make_checkpoint(const Network& net, const AdamState& opt, const Json& config, std::uint64_t epoch,
                           const std::string& rng_state) {
  Checkpoint c;
  c.config = config;
  c.epoch = epoch;
  c.rng_state = rng_state;
  for (const auto& p : net.parameters()) c.parameters.push_back({p.name, p.value.detach()});
  for (const auto& b : net.buffers()) c.buffers.push_back({b.name, b.value.detach()});
  c.optimizer = opt;
  return c;
}

void write_checkpoint(const fs::path& path, const Checkpoint& c) {
  Writer w(path);
  w.raw().write(kMagic, sizeof(kMagic));
  w.pod(kVersion);
  w.bytes(c.config.dump());
  w.pod<std::uint64_t>(c.epoch);
  w.bytes(c.rng_state);
  const bool has_moments = c.optimizer.m.size() == c.parameters.size();
  const std::size_t count = c.parameters.size() * (has_moments ? 3 : 1) + c.buffers.size();
  w.pod<std::uint64_t>(count);
  for (const auto& p : c.parameters) w.tensor(Kind::Parameter, p.name, p.value.shape(), p.value.data());
  for (const auto& b : c.buffers) w.tensor(Kind::Buffer, b.name, b.value.shape(), b.value.data());
  if (has_moments)
    for (std::size_t i = 0; i < c.parameters.size(); ++i) {
      w.tensor(Kind::AdamM, c.parameters[i].name, c.parameters[i].value.shape(), c.optimizer.m[i]);
      w.tensor(Kind::AdamV, c.parameters[i].name, c.parameters[i].value.shape(), c.optimizer.v[i]);
    }
  w.pod<std::uint64_t>(c.optimizer.step);
  w.pod(c.optimizer.lr);
  w.pod(c.optimizer.beta1);
  w.pod(c.optimizer.beta2);
  w.pod(c.optimizer.epsilon);
  w.finish();
}

Checkpoint read_checkpoint(const fs::path& path) {
  Reader r(path);
  char magic[8];
  r.raw().read(magic, sizeof(magic));
  if (!r.raw() || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("not a checkpoint file: " + path.string());
  const auto version = r.pod<std::uint32_t>();
  if (version != kVersion)
    throw CompatibilityError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                             std::to_string(kVersion) + ")");
  Checkpoint c;
  try {
    c.config = Json::parse(r.bytes());
  } catch (const nlohmann::json::parse_error&) {
    throw IoError("corrupt config echo in checkpoint " + path.string());
  }
  c.epoch = r.pod<std::uint64_t>();
  c.rng_state = r.bytes();
  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto kind = static_cast<Kind>(r.pod<std::uint8_t>());
    const std::string name = r.bytes();
    const auto rank = r.pod<std::uint32_t>();
    if (rank > 8) throw IoError("corrupt tensor rank in checkpoint " + path.string());
    Shape shape(rank);
    for (auto& d : shape) d = r.pod<std::uint64_t>();
    std::vector<double> values = r.doubles(shape_numel(shape));
    switch (kind) {
      case Kind::Parameter: c.parameters.push_back({name, Tensor::from(shape, std::move(values))}); break;
      case Kind::Buffer: c.buffers.push_back({name, Tensor::from(shape, std::move(values))}); break;
      case Kind::AdamM: c.optimizer.m.push_back(std::move(values)); break;
      case Kind::AdamV: c.optimizer.v.push_back(std::move(values)); break;
      default: throw IoError("unknown entry kind in checkpoint " + path.string());
    }
  }
  c.optimizer.step = r.pod<std::uint64_t>();
  c.optimizer.lr = r.pod<double>();
  c.optimizer.beta1 = r.pod<double>();
  c.optimizer.beta2 = r.pod<double>();
  c.optimizer.epsilon = r.pod<double>();
  return c;
}

void load_weights(Network& net, const Checkpoint& c) {
  auto copy_all = [](const std::vector<NamedTensor>& dst, const std::vector<NamedTensor>& src, const char* what) {
    for (std::size_t i = 0; i < dst.size(); ++i) {
      const NamedTensor* found = nullptr;
      if (i < src.size() && src[i].name == dst[i].name) found = &src[i];
      for (std::size_t j = 0; j < src.size() && !found; ++j)
        if (src[j].name == dst[i].name) found = &src[j];
      if (!found) throw CompatibilityError(std::string("checkpoint lacks ") + what + " '" + dst[i].name + "'");
      if (found->value.shape() != dst[i].value.shape())
        throw CompatibilityError(std::string(what) + " '" + dst[i].name + "' has shape " +
                                 shape_str(found->value.shape()) + " in the checkpoint but " +
                                 shape_str(dst[i].value.shape()) + " in the model");
    }
    if (src.size() != dst.size())
      for (const auto& s : src) {
        bool used = false;
        for (const auto& d : dst) used = used || d.name == s.name;
        if (!used) throw CompatibilityError(std::string("checkpoint ") + what + " '" + s.name + "' is not in the model");
      }
  };
  copy_all(net.parameters(), c.parameters, "parameter");
  copy_all(net.buffers(), c.buffers, "buffer");
  auto assign = [](const std::vector<NamedTensor>& dst, const std::vector<NamedTensor>& src) {
    for (const auto& d : dst)
      for (const auto& s : src)
        if (s.name == d.name) {
          auto out = Tensor(d.value).mutable_data();
          std::copy(s.value.data().begin(), s.value.data().end(), out.begin());
        }
  };
  assign(net.parameters(), c.parameters);
  assign(net.buffers(), c.buffers);
}

NetworkConfig checkpoint_network_config(const Checkpoint& c) {
  NetworkConfig cfg;
  const Json& j = c.config.contains("network") ? c.config["network"] : c.config;
  if (!j.is_object()) throw CompatibilityError("checkpoint config echo is not an object");
  for (const auto& [k, v] : j.items()) set_network_field(cfg, k, v);
  cfg.validate();
  return cfg;
}

}  // namespace dfv
