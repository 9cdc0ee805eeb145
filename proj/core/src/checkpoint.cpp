#include "outfit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "outfit/errors.hpp"

namespace outfit {
namespace {

constexpr char kMagic[8] = {'O', 'T', 'F', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little endian");

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), n); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void tensor(const nn::Tensor& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) u64(e);
    bytes(t.storage().data(), t.size() * sizeof(double));
  }
  void params(const ParameterMap& map) {
    u64(map.size());
    for (const auto& [name, t] : map) {
      str(name);
      tensor(t);
    }
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw FormatError("checkpoint '" + path_ + "' is truncated");
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  double f64() {
    double v;
    bytes(&v, 8);
    return v;
  }
  std::string str() {
    const std::uint64_t n = bounded(u64(), "string");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  nn::Tensor tensor() {
    const std::uint32_t rank = u32();
    if (rank > 4) throw FormatError("checkpoint '" + path_ + "' has a tensor of rank " + std::to_string(rank));
    std::vector<std::size_t> shape(rank);
    std::uint64_t count = 1;
    for (auto& e : shape) {
      e = bounded(u64(), "extent");
      count *= e;
    }
    std::vector<double> data(bounded(count, "tensor"));
    bytes(data.data(), data.size() * sizeof(double));
    return nn::Tensor(std::move(shape), std::move(data));
  }
  ParameterMap params() {
    ParameterMap map;
    const std::uint64_t n = bounded(u64(), "parameter count");
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string name = str();
      map.emplace(std::move(name), tensor());
    }
    return map;
  }

 private:
  std::uint64_t bounded(std::uint64_t v, const char* what) {
    if (v > (std::uint64_t{1} << 32)) {
      throw FormatError("checkpoint '" + path_ + "' has an implausible " + what + " size");
    }
    return v;
  }
  std::istream& in_;
  std::string path_;
};

struct Fnv {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void feed(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  }
  void feed(const std::string& s) {
    const std::uint64_t n = s.size();
    feed(&n, 8);
    feed(s.data(), s.size());
  }
  void feed(const nn::Tensor& t) {
    for (auto e : t.shape()) {
      const std::uint64_t v = e;
      feed(&v, 8);
    }
    feed(t.storage().data(), t.size() * sizeof(double));
  }
};

}  // namespace

Checkpoint snapshot(const OutfitModel& model) {
  Checkpoint c;
  c.config = model.config();
  for (const auto& [name, var] : model.params().all()) c.params.emplace(name, var.value());
  return c;
}

void load_params(OutfitModel& model, const ParameterMap& params, bool allow_extra) {
  auto& store = model.params();
  for (const auto& [name, var] : store.all()) {
    auto it = params.find(name);
    if (it == params.end()) throw FormatError("checkpoint is missing parameter '" + name + "'");
    if (it->second.shape() != var.shape()) {
      throw FormatError("parameter '" + name + "' has shape " + nn::shape_string(it->second.shape()) +
                        ", model expects " + nn::shape_string(var.shape()));
    }
  }
  if (!allow_extra) {
    for (const auto& [name, t] : params) {
      if (!store.contains(name)) throw FormatError("checkpoint has unexpected parameter '" + name + "'");
    }
  }
  for (const auto& [name, var] : store.all()) {
    nn::Var v = var;
    v.mutable_value() = params.at(name);
  }
}

std::unique_ptr<OutfitModel> instantiate(const Checkpoint& checkpoint) {
  auto model = std::make_unique<OutfitModel>(checkpoint.config);
  load_params(*model, checkpoint.params);
  return model;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::ostringstream buffer;
  Writer w(buffer);
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kVersion);
  w.str(nlohmann::json(checkpoint.config).dump());
  w.params(checkpoint.params);
  w.u8(checkpoint.train ? 1 : 0);
  if (checkpoint.train) {
    const TrainState& s = *checkpoint.train;
    w.str(s.phase);
    w.u64(s.epochs_done);
    w.params(s.last_params);
    w.params(s.adam.m);
    w.params(s.adam.v);
    w.u64(s.adam.step);
    w.f64(s.best_metric);
    w.u64(s.best_epoch);
    w.str(s.train_config.dump());
  }
  const std::string bytes = buffer.str();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write checkpoint '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("failed writing checkpoint '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("checkpoint not found: " + path.string());
  Reader r(in, path.string());
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw FormatError("'" + path.string() + "' is not a checkpoint file");
  }
  if (const auto version = r.u32(); version != kVersion) {
    throw FormatError("checkpoint '" + path.string() + "' has unsupported version " +
                      std::to_string(version));
  }
  Checkpoint c;
  try {
    c.config = nlohmann::json::parse(r.str()).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint '" + path.string() + "': bad config header: " + e.what());
  }
  c.config.validate();
  c.params = r.params();
  if (r.u8() != 0) {
    TrainState s;
    s.phase = r.str();
    s.epochs_done = r.u64();
    s.last_params = r.params();
    s.adam.m = r.params();
    s.adam.v = r.params();
    s.adam.step = r.u64();
    s.best_metric = r.f64();
    s.best_epoch = r.u64();
    try {
      s.train_config = nlohmann::json::parse(r.str());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("checkpoint '" + path.string() + "': bad train config: " + e.what());
    }
    c.train = std::move(s);
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("checkpoint '" + path.string() + "' has trailing bytes");
  }
  return c;
}

std::uint64_t fingerprint(const ModelConfig& config, const ParameterMap& params) {
  Fnv f;
  f.feed(nlohmann::json(config).dump());
  for (const auto& [name, t] : params) {
    f.feed(name);
    f.feed(t);
  }
  return f.h;
}

std::uint64_t fingerprint(const OutfitModel& model) {
  return fingerprint(model.config(), snapshot(model).params);
}

std::uint64_t parameter_hash(const ParameterMap& params, const std::string& prefix) {
  Fnv f;
  for (const auto& [name, t] : params) {
    if (name.compare(0, prefix.size(), prefix) != 0) continue;
    f.feed(name);
    f.feed(t);
  }
  return f.h;
}

std::uint64_t parameter_hash(const nn::ParameterStore& store, const std::string& prefix) {
  ParameterMap map;
  for (const auto& [name, var] : store.all()) {
    if (name.compare(0, prefix.size(), prefix) == 0) map.emplace(name, var.value());
  }
  return parameter_hash(map, prefix);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace outfit
