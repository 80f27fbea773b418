#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "cmudrn/errors.hpp"
#include "cmudrn/train.hpp"

namespace cmudrn::train {

namespace {

constexpr char kMagic[8] = {'C', 'M', 'U', 'D', 'R', 'N', 'C', 'K'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::string_view s) { bytes.insert(bytes.end(), s.begin(), s.end()); }
  void string(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }
  void record(std::string_view name, const Shape& shape, std::span<const double> values) {
    string(name);
    u64(shape.n);
    u64(shape.c);
    u64(shape.h);
    u64(shape.w);
    for (double v : values) f64(v);
  }

  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string string() {
    const std::uint32_t len = u32();
    need(len, "string");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    return s;
  }
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw ParseError(std::string("checkpoint truncated while reading ") + what, pos_);
  }
  std::size_t pos() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

struct Record {
  Shape shape;
  std::vector<double> values;
  std::size_t offset;
};

}  // namespace

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  Writer w;
  w.raw(std::string_view(kMagic, sizeof kMagic));
  w.u32(kCheckpointVersion);
  w.string(ckpt.config.to_text());
  w.u64(ckpt.optimizer.step);

  const auto params = nets::named_parameters(ckpt.model.params);
  std::uint32_t count = static_cast<std::uint32_t>(params.size());
  for (const auto& [name, mom] : ckpt.optimizer.moments) count += mom.m.empty() ? 0 : 2;
  w.u32(count);
  for (const auto& p : params) w.record("param/" + p.name, p.tensor.shape(), p.tensor.values());
  for (const auto& [name, mom] : ckpt.optimizer.moments) {
    if (mom.m.empty()) continue;
    const Shape flat{mom.m.size(), 1, 1, 1};
    w.record("adam.m/" + name, flat, mom.m);
    w.record("adam.v/" + name, flat, mom.v);
  }
  return std::move(w.bytes);
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kMagic) throw ParseError("checkpoint truncated while reading magic", 0);
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw ParseError("not a checkpoint (bad magic)", 0);
  Reader body(bytes.subspan(sizeof kMagic));
  const std::uint32_t version = body.u32();
  if (version != kCheckpointVersion) throw VersionError(kCheckpointVersion, version);

  Checkpoint ckpt;
  const std::size_t config_at = sizeof kMagic + body.pos();
  try {
    ckpt.config = TrainConfig::from_text(body.string());
    ckpt.config.validate();
  } catch (const ConfigError& e) {
    throw ParseError(std::string("checkpoint config: ") + e.what(), config_at);
  }
  ckpt.optimizer.step = body.u64();
  const std::uint32_t count = body.u32();

  std::map<std::string, Record> records;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = sizeof kMagic + body.pos();
    std::string name = body.string();
    Record rec;
    rec.offset = at;
    rec.shape = {body.u64(), body.u64(), body.u64(), body.u64()};
    const std::size_t numel = rec.shape.numel();
    if (numel > bytes.size() / 8) throw ParseError("checkpoint record '" + name + "' is larger than the file", at);
    body.need(numel * 8, "tensor payload");
    rec.values.resize(numel);
    for (double& v : rec.values) v = body.f64();
    if (!records.emplace(std::move(name), std::move(rec)).second)
      throw ParseError("duplicate checkpoint record", at);
  }
  if (!body.at_end()) throw ParseError("trailing bytes after checkpoint records", sizeof kMagic + body.pos());

  ckpt.model = make_model(ckpt.config);
  for (const auto& p : nets::named_parameters(ckpt.model.params)) {
    auto it = records.find("param/" + p.name);
    if (it == records.end()) throw ParseError("checkpoint lacks parameter '" + p.name + "'", bytes.size());
    if (it->second.shape != p.tensor.shape())
      throw ParseError("checkpoint parameter '" + p.name + "' has shape " + it->second.shape.str() + ", expected " +
                           p.tensor.shape().str(),
                       it->second.offset);
    Tensor t = p.tensor;
    std::copy(it->second.values.begin(), it->second.values.end(), t.mutable_values().begin());
    records.erase(it);
  }
  for (auto& [name, rec] : records) {
    std::string param;
    bool first = false;
    if (name.rfind("adam.m/", 0) == 0) {
      param = name.substr(7);
      first = true;
    } else if (name.rfind("adam.v/", 0) == 0) {
      param = name.substr(7);
    } else {
      throw ParseError("unknown checkpoint record '" + name + "'", rec.offset);
    }
    auto& mom = ckpt.optimizer.moments[param];
    (first ? mom.m : mom.v) = std::move(rec.values);
  }
  for (const auto& [name, mom] : ckpt.optimizer.moments) {
    if (mom.m.size() != mom.v.size()) throw ParseError("Adam moments for '" + name + "' are incomplete", bytes.size());
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return deserialize(bytes);
}

}  // namespace cmudrn::train
