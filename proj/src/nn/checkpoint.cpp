#include "skdnet/nn/checkpoint.hpp"

#include <cstring>
#include <map>

#include <fmt/format.h>

#include "skdnet/errors.hpp"
#include "skdnet/io.hpp"

namespace skd::nn {

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, 4); }
  void f64(double v) { raw(&v, 8); }
  void bytes(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& in, std::string origin) : in_(in), origin_(std::move(origin)) {}

  void raw(void* p, std::size_t n, const char* what) {
    if (pos_ + n > in_.size())
      throw FormatError(fmt::format("{}: truncated while reading {} at byte {} (need {} bytes, {} left)", origin_, what,
                                    pos_, n, in_.size() - pos_));
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    raw(&v, 4, what);
    return v;
  }
  double f64(const char* what) {
    double v;
    raw(&v, 8, what);
    return v;
  }
  std::string bytes(const char* what) {
    const std::uint32_t n = u32(what);
    std::string s(n, '\0');
    raw(s.data(), n, what);
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }
  const std::string& origin() const { return origin_; }

 private:
  const std::string& in_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw("SKD1", 4);
  w.u32(kCheckpointVersion);
  nlohmann::json meta = ckpt.meta;
  meta["model"] = ckpt.model.config().to_json();
  w.bytes(meta.dump());
  w.u32(static_cast<std::uint32_t>(ckpt.stats.channels()));
  for (double m : ckpt.stats.mean) w.f64(m);
  for (double s : ckpt.stats.stddev) w.f64(s);
  const auto tensors = ckpt.model.named_tensors();
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t->ndim()));
    for (int d : t->shape) w.u32(static_cast<std::uint32_t>(d));
    w.raw(t->data.data(), t->size() * sizeof(float));
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  char magic[4];
  r.raw(magic, 4, "magic");
  if (std::memcmp(magic, "SKD1", 4) != 0) throw FormatError(fmt::format("{}: bad magic at byte 0 (expected \"SKD1\")", origin));
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw FormatError(fmt::format("{}: unsupported checkpoint version {} at byte 4", origin, version));
  Checkpoint ckpt;
  try {
    ckpt.meta = nlohmann::json::parse(r.bytes("metadata"));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(fmt::format("{}: invalid metadata JSON: {}", origin, e.what()));
  }
  if (!ckpt.meta.contains("model")) throw FormatError(fmt::format("{}: metadata lacks the model config", origin));
  const ModelConfig config = ModelConfig::from_json(ckpt.meta.at("model"));
  ckpt.model = Model<float>(config, 0);

  const std::uint32_t channels = r.u32("channel count");
  ckpt.stats.mean.resize(channels);
  ckpt.stats.stddev.resize(channels);
  for (auto& m : ckpt.stats.mean) m = r.f64("channel mean");
  for (auto& s : ckpt.stats.stddev) s = r.f64("channel std");

  std::map<std::string, Tensor<float>*> slots;
  for (auto& [name, t] : ckpt.model.named_tensors()) slots[name] = t;
  const std::uint32_t count = r.u32("tensor count");
  if (count != slots.size())
    throw FormatError(fmt::format("{}: checkpoint holds {} tensors, model expects {}", origin, count, slots.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.pos();
    const std::string name = r.bytes("tensor name");
    auto it = slots.find(name);
    if (it == slots.end()) throw FormatError(fmt::format("{}: unknown tensor '{}' at byte {}", origin, name, at));
    const std::uint32_t ndim = r.u32("tensor rank");
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(r.u32("tensor dims"));
    Tensor<float>& dst = *it->second;
    if (shape != dst.shape)
      throw FormatError(fmt::format("{}: tensor '{}' has shape {} but the model expects {}", origin, name,
                                    Tensor<float>(shape).shape_string(), dst.shape_string()));
    r.raw(dst.data.data(), dst.size() * sizeof(float), "tensor data");
    slots.erase(it);
  }
  if (!r.done()) throw FormatError(fmt::format("{}: {} trailing bytes after byte {}", origin, bytes.size() - r.pos(), r.pos()));
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  io::write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path), path.string());
}

}  // namespace skd::nn
