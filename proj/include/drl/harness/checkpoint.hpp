#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include "drl/error.hpp"
#include "drl/params.hpp"
#include "drl/tensor.hpp"
#include "drl/text.hpp"

namespace drl {

inline constexpr char checkpoint_magic[4] = {'A', '3', 'C', 'F'};
inline constexpr std::uint16_t checkpoint_version = 1;

/// Metadata strings plus ordered named float tensors.
struct Checkpoint {
  std::uint16_t version = checkpoint_version;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  void set(const std::string& key, std::string value) {
    for (auto& [k, v] : meta) {
      if (k == key) {
        v = std::move(value);
        return;
      }
    }
    meta.emplace_back(key, std::move(value));
  }

  bool has(const std::string& key) const {
    for (const auto& [k, _] : meta)
      if (k == key) return true;
    return false;
  }

  const std::string& get(const std::string& key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return v;
    throw UsageError("checkpoint has no '" + key + "' entry");
  }

  void add_tensor(const std::string& name, Tensor t) { tensors.emplace_back(name, std::move(t)); }

  const Tensor* find_tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }

  const Tensor& tensor(const std::string& name) const {
    if (const Tensor* t = find_tensor(name)) return *t;
    throw UsageError("checkpoint has no tensor '" + name + "'");
  }
};

namespace detail {

class ByteWriter {
 public:
  template <typename U>
  void put(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void put_f32(float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    put(u);
  }
  void put_bytes(const std::string& s) { bytes.insert(bytes.end(), s.begin(), s.end()); }

  std::vector<char> bytes;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<char>& b) : b_(b) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  float get_f32(const char* what) {
    const auto u = get<std::uint32_t>(what);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
  }

  std::string get_bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(b_.begin() + pos_, b_.begin() + pos_ + n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n) throw CorruptCheckpointError(std::string("truncated ") + what, pos_);
  }

  const std::vector<char>& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.bytes.insert(w.bytes.end(), checkpoint_magic, checkpoint_magic + 4);
  w.put(ck.version);
  w.put(static_cast<std::uint32_t>(ck.meta.size()));
  for (const auto& [k, v] : ck.meta) {
    w.put(static_cast<std::uint32_t>(k.size()));
    w.put_bytes(k);
    w.put(static_cast<std::uint32_t>(v.size()));
    w.put_bytes(v);
  }
  w.put(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    if (name.size() > 0xffff) throw UsageError("tensor name too long");
    if (t.ndim() > 0xff || t.ndim() == 0) throw UsageError("tensor '" + name + "' has unsupported rank");
    w.put(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name);
    w.put(static_cast<std::uint8_t>(t.ndim()));
    for (auto d : t.shape()) w.put(static_cast<std::uint32_t>(d));
    for (float f : t.data()) w.put_f32(f);
  }
  return w.bytes;
}

inline Checkpoint decode_checkpoint(const std::vector<char>& bytes) {
  detail::ByteReader r(bytes);
  if (r.get_bytes(4, "magic") != std::string(checkpoint_magic, 4)) {
    throw CorruptCheckpointError("bad magic (not a checkpoint)", 0);
  }
  Checkpoint ck;
  ck.version = r.get<std::uint16_t>("version");
  if (ck.version != checkpoint_version) {
    throw UnsupportedVersionError("checkpoint format version " + std::to_string(ck.version) +
                                  " is not supported (this build reads version " +
                                  std::to_string(checkpoint_version) + ")");
  }
  const auto n_meta = r.get<std::uint32_t>("metadata count");
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    const auto kl = r.get<std::uint32_t>("metadata key length");
    std::string k = r.get_bytes(kl, "metadata key");
    const auto vl = r.get<std::uint32_t>("metadata value length");
    ck.meta.emplace_back(std::move(k), r.get_bytes(vl, "metadata value"));
  }
  const auto n_tensors = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const auto nl = r.get<std::uint16_t>("tensor name length");
    std::string name = r.get_bytes(nl, "tensor name");
    const std::size_t at = r.pos();
    const auto ndim = r.get<std::uint8_t>("tensor rank");
    if (ndim == 0) throw CorruptCheckpointError("tensor '" + name + "' has rank 0", at);
    Shape shape;
    std::uint64_t count = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      const std::size_t dim_at = r.pos();
      const auto dim = r.get<std::uint32_t>("tensor dims");
      if (dim == 0) throw CorruptCheckpointError("tensor '" + name + "' has a zero dimension", dim_at);
      count *= dim;
      if (count > bytes.size()) throw CorruptCheckpointError("tensor '" + name + "' larger than the file", dim_at);
      shape.push_back(dim);
    }
    std::vector<float> data(count);
    for (auto& f : data) f = r.get_f32("tensor payload");
    ck.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw CorruptCheckpointError("trailing bytes after last tensor", r.pos());
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const auto bytes = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("cannot write checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open checkpoint " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

/// Parameters under "param/<name>", Adam moments under "adam.m/" and "adam.v/".
inline void add_params(Checkpoint& ck, const ParamStore<float>& store) {
  for (const auto& [name, t] : store.entries()) ck.add_tensor("param/" + name, t);
  ck.set("param.version", std::to_string(store.version()));
}

inline void add_optimizer(Checkpoint& ck, const AdamState<float>& opt) {
  ck.set("adam.step", std::to_string(opt.step));
  ck.set("adam.lr", exact_str(opt.learning_rate));
  for (const auto& [name, t] : opt.first_moment) ck.add_tensor("adam.m/" + name, t);
  for (const auto& [name, t] : opt.second_moment) ck.add_tensor("adam.v/" + name, t);
}

/// Overwrites every parameter in `store` from the checkpoint; names and
/// shapes must match exactly.
inline void load_params(const Checkpoint& ck, ParamStore<float>& store) {
  std::size_t seen = 0;
  for (const auto& [name, t] : ck.tensors) {
    if (name.rfind("param/", 0) != 0) continue;
    const std::string pname = name.substr(6);
    if (!store.contains(pname)) throw ConfigError("checkpoint parameter '" + pname + "' does not fit this network");
    store.set(pname, t);
    ++seen;
  }
  if (seen != store.entries().size()) throw ConfigError("checkpoint is missing network parameters");
  if (ck.has("param.version")) store.set_version(std::stoull(ck.get("param.version")));
}

inline void load_optimizer(const Checkpoint& ck, AdamState<float>& opt) {
  opt.step = std::stoull(ck.get("adam.step"));
  opt.learning_rate = static_cast<float>(parse_exact(ck.get("adam.lr")));
  opt.first_moment.clear();
  opt.second_moment.clear();
  for (const auto& [name, t] : ck.tensors) {
    if (name.rfind("adam.m/", 0) == 0) opt.first_moment.emplace(name.substr(7), t);
    if (name.rfind("adam.v/", 0) == 0) opt.second_moment.emplace(name.substr(7), t);
  }
}

}  // namespace drl
