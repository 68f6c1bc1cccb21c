#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "bdce/params.hpp"

namespace bdce {

// Layout, all integers little-endian:
//   "BDCE" | u32 version | u32 count |
//   count x ( u16 name_len | name bytes | u8 ndim | ndim x u32 | prod(dims) x f32 )
inline constexpr std::array<char, 4> kCheckpointMagic{'B', 'D', 'C', 'E'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

namespace detail {

template <typename U>
void put_le(std::string& buf, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string path) : bytes_(bytes), path_(std::move(path)) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint '" + path_ + "' is truncated");
  }
  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const std::vector<NamedTensor>& entries) {
  std::string buf(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_le<std::uint32_t>(buf, kCheckpointVersion);
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xffff) throw CheckpointError("parameter name too long: " + e.name);
    if (e.value.rank() > 0xff) throw CheckpointError("tensor rank too large: " + e.name);
    detail::put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(e.name.size()));
    buf += e.name;
    buf.push_back(static_cast<char>(e.value.rank()));
    for (auto d : e.value.dims()) detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
    for (float f : e.value.data()) detail::put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(f));
  }
  return buf;
}

inline std::vector<NamedTensor> decode_checkpoint(const std::string& bytes, const std::string& path = "<memory>") {
  detail::ByteReader in(bytes, path);
  const std::string magic = in.take(4);
  if (std::memcmp(magic.data(), kCheckpointMagic.data(), 4) != 0)
    throw CheckpointError("'" + path + "' is not a BDCE checkpoint (bad magic)");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("'" + path + "' has unsupported checkpoint version " + std::to_string(version));
  const auto count = in.get<std::uint32_t>();
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t n = 0; n < count; ++n) {
    NamedTensor e;
    e.name = in.take(in.get<std::uint16_t>());
    const auto ndim = in.get<std::uint8_t>();
    Shape dims(ndim);
    for (auto& d : dims) {
      d = in.get<std::uint32_t>();
      if (d == 0) throw CheckpointError("'" + path + "': zero dimension in entry " + e.name);
    }
    std::vector<float> data(shape_size(dims));
    for (auto& f : data) f = std::bit_cast<float>(in.get<std::uint32_t>());
    e.value = Tensor<float>(std::move(dims), std::move(data));
    out.push_back(std::move(e));
  }
  if (!in.done()) throw CheckpointError("'" + path + "' has trailing bytes after the last entry");
  return out;
}

inline void write_checkpoint(const std::string& path, const std::vector<NamedTensor>& entries) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  const std::string buf = encode_checkpoint(entries);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("failed writing '" + path + "'");
}

inline std::vector<NamedTensor> read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path);
}

/// Appends every entry of `store` under "<prefix>.<name>".
inline void append_store(std::vector<NamedTensor>& out, const std::string& prefix, const ParamStore<float>& store) {
  for (const auto& e : store) out.push_back({prefix + "." + e.name, e.value});
}

/// Fills `store` from the entries carrying `prefix`; names and shapes must match exactly.
inline void load_store(const std::vector<NamedTensor>& entries, const std::string& prefix, ParamStore<float>& store) {
  const std::string pre = prefix + ".";
  std::size_t matched = 0;
  for (const auto& e : entries) {
    if (e.name.rfind(pre, 0) != 0) continue;
    const auto local = e.name.substr(pre.size());
    const auto i = store.find(local);
    if (i == ParamStore<float>::npos) throw CheckpointError("checkpoint entry '" + e.name + "' is not part of the model");
    if (store[i].value.dims() != e.value.dims())
      throw CheckpointError("checkpoint entry '" + e.name + "' has dims " + shape_str(e.value.dims()) +
                            ", model expects " + shape_str(store[i].value.dims()));
    store[i].value = e.value;
    ++matched;
  }
  if (matched != store.size())
    throw CheckpointError("checkpoint provides " + std::to_string(matched) + " of " + std::to_string(store.size()) +
                          " '" + prefix + "' parameters");
}

}  // namespace bdce
