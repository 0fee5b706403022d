#include "fedefm/harness/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "fedefm/common/errors.hpp"

namespace fedefm::harness {

namespace {

constexpr char kMagic[4] = {'F', 'E', 'F', 'M'};
constexpr const char* kArchRecord = "meta.arch";
constexpr const char* kDigestRecord = "meta.config_digest";
constexpr std::uint32_t kMaxName = 4096;
constexpr std::uint32_t kMaxRank = 8;

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int b = 0; b < 4; ++b) bytes_.push_back(static_cast<unsigned char>(v >> (8 * b)));
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void record(const std::string& name, const nn::Tensor& t) {
    u32(static_cast<std::uint32_t>(name.size()));
    raw(name.data(), name.size());
    u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) u32(static_cast<std::uint32_t>(d));
    for (double v : t.values()) f32(static_cast<float>(v));
  }
  std::vector<unsigned char> take() { return std::move(bytes_); }

 private:
  std::vector<unsigned char> bytes_;
};

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}
  bool done() const { return pos_ == bytes_.size(); }
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint: truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * b);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

nn::Tensor arch_record(const nn::Architecture& a) {
  std::vector<double> v{double(a.image_side), double(a.patch_size), double(a.embed_dim), double(a.num_classes)};
  for (auto h : a.hidden_dims) v.push_back(double(h));
  return nn::Tensor({v.size()}, v);
}

nn::Architecture parse_arch(const nn::Tensor& t) {
  if (t.rank() != 1 || t.size() < 4) throw FormatError("checkpoint: malformed meta.arch record");
  auto whole = [&](std::size_t i) {
    const double v = t[i];
    if (!(v >= 1.0) || v != std::floor(v)) throw FormatError("checkpoint: malformed meta.arch record");
    return static_cast<std::size_t>(v);
  };
  nn::Architecture a;
  a.image_side = whole(0);
  a.patch_size = whole(1);
  a.embed_dim = whole(2);
  a.num_classes = whole(3);
  a.hidden_dims.clear();
  for (std::size_t i = 4; i < t.size(); ++i) a.hidden_dims.push_back(whole(i));
  try {
    a.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint: invalid architecture: ") + e.what());
  }
  return a;
}

}  // namespace

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.record(kArchRecord, arch_record(ckpt.weights.arch));
  nn::Tensor digest({8});
  for (int b = 0; b < 8; ++b) digest[b] = double((ckpt.config_digest >> (8 * b)) & 0xff);
  w.record(kDigestRecord, digest);
  for (const auto& [name, t] : ckpt.weights.params) w.record(name, t);
  for (const auto& [name, t] : ckpt.extras) w.record(name, t);
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string(kMagic, 4)) throw FormatError("checkpoint: bad magic (expected FEFM)");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));

  std::vector<std::pair<std::string, nn::Tensor>> records;
  while (!r.done()) {
    const auto len = r.u32();
    if (len == 0 || len > kMaxName) throw FormatError("checkpoint: bad record name length");
    auto name = r.str(len);
    const auto rank = r.u32();
    if (rank > kMaxRank) throw FormatError("checkpoint: record '" + name + "' has rank " + std::to_string(rank));
    nn::Shape shape;
    std::size_t count = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(r.u32());
      if (shape.back() != 0 && count > (std::size_t(1) << 40) / shape.back())
        throw FormatError("checkpoint: record '" + name + "' is too large");
      count *= shape.back();
    }
    r.need(4 * count);
    std::vector<double> values(count);
    for (auto& v : values) v = r.f32();
    for (const auto& [existing, t] : records)
      if (existing == name) throw FormatError("checkpoint: duplicate record '" + name + "'");
    records.emplace_back(std::move(name), nn::Tensor(std::move(shape), std::move(values)));
  }

  std::map<std::string, const nn::Tensor*> by_name;
  for (const auto& [name, t] : records) by_name[name] = &t;
  if (!by_name.count(kArchRecord)) throw FormatError("checkpoint: missing meta.arch record");
  if (!by_name.count(kDigestRecord)) throw FormatError("checkpoint: missing meta.config_digest record");

  Checkpoint ckpt;
  ckpt.weights.arch = parse_arch(*by_name[kArchRecord]);
  const auto& digest = *by_name[kDigestRecord];
  if (digest.rank() != 1 || digest.size() != 8) throw FormatError("checkpoint: malformed meta.config_digest");
  for (int b = 0; b < 8; ++b) {
    const double v = digest[b];
    if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v)) throw FormatError("checkpoint: malformed meta.config_digest");
    ckpt.config_digest |= static_cast<std::uint64_t>(v) << (8 * b);
  }
  const auto layers = nn::layer_names(ckpt.weights.arch);
  for (const auto& name : layers) {
    if (!by_name.count(name)) throw FormatError("checkpoint: missing layer '" + name + "'");
    ckpt.weights.params.add(name, *by_name[name]);
  }
  try {
    nn::check_weights(ckpt.weights);
  } catch (const ShapeError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  for (const auto& [name, t] : records) {
    if (name == kArchRecord || name == kDigestRecord || ckpt.weights.params.contains(name)) continue;
    ckpt.extras.emplace_back(name, t);
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("checkpoint: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

nn::ModelWeights quantize_f32(const nn::ModelWeights& weights) {
  auto out = weights;
  for (auto& [name, t] : out.params)
    for (auto& v : t.values()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

}  // namespace fedefm::harness
