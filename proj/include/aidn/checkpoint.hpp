#pragma once

// Checkpoint container, version 1. Little-endian throughout:
//
//   magic "AIDN" | u32 version | u32 tensor_count
//   per tensor: u16 name_len | name (UTF-8) | u8 rank | u32 dims[rank] | f32 payload
//   u32 CRC-32 of every preceding byte
//
// Model hyperparameters ride along as the "hyper" tensor; optimizer moments,
// when saved, as "opt.*" tensors. Bad magic, unknown version, checksum
// mismatch and truncation are distinct errors.

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "aidn/model.hpp"
#include "aidn/tensor.hpp"

namespace aidn {

class CheckpointError : public Error {
 public:
  using Error::Error;
};
class BadMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class VersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class ChecksumError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class TruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// Adam moment buffers, aligned with the visit_params order.
struct OptimState {
  std::vector<TensorF> m, v;
  std::int64_t step = 0;
};

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v & 0xff));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::vector<std::uint8_t>& b, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(b, u);
}

struct Reader {
  const std::uint8_t* p;
  std::size_t n, pos = 0;

  void need(std::size_t k) const {
    if (pos + k > n) throw TruncatedError("checkpoint: truncated at byte " + std::to_string(pos));
  }
  std::uint8_t u8() {
    need(1);
    return p[pos++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(p[pos] | (p[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() {
    const std::uint32_t u = u32();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
  std::string str(std::size_t k) {
    need(k);
    std::string s(reinterpret_cast<const char*>(p + pos), k);
    pos += k;
    return s;
  }
};

inline void put_tensor(std::vector<std::uint8_t>& out, const std::string& name, const TensorF& t) {
  put_u16(out, static_cast<std::uint16_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  out.push_back(static_cast<std::uint8_t>(t.shape.rank));
  for (int i = 0; i < t.shape.rank; ++i) put_u32(out, static_cast<std::uint32_t>(t.shape[i]));
  for (float v : t.data) put_f32(out, v);
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const ModelState<float>& model,
                                                      const OptimState* opt = nullptr) {
  std::vector<std::pair<std::string, const TensorF*>> entries;
  visit_params(model, [&entries](const std::string& n, const TensorF& t) {
    entries.emplace_back(n, &t);
  });

  TensorF hyper({5}, {static_cast<float>(model.hyper.channels), static_cast<float>(model.hyper.blocks),
                      static_cast<float>(model.hyper.experts), static_cast<float>(model.hyper.kernel),
                      static_cast<float>(model.hyper.hidden)});

  std::uint32_t count = static_cast<std::uint32_t>(entries.size()) + 1;
  std::vector<std::pair<std::string, TensorF>> opt_entries;
  if (opt) {
    opt_entries.emplace_back("opt.step", TensorF({1}, {static_cast<float>(opt->step)}));
    for (std::size_t i = 0; i < entries.size(); ++i) {
      opt_entries.emplace_back("opt.m." + entries[i].first, opt->m[i]);
      opt_entries.emplace_back("opt.v." + entries[i].first, opt->v[i]);
    }
    count += static_cast<std::uint32_t>(opt_entries.size());
  }

  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'A', 'I', 'D', 'N'});
  detail::put_u32(out, 1);
  detail::put_u32(out, count);
  detail::put_tensor(out, "hyper", hyper);
  for (const auto& [name, t] : entries) detail::put_tensor(out, name, *t);
  for (const auto& [name, t] : opt_entries) detail::put_tensor(out, name, t);

  const std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size())));
  detail::put_u32(out, crc);
  return out;
}

inline void save_checkpoint(const std::string& path, const ModelState<float>& model,
                            const OptimState* opt = nullptr) {
  const auto bytes = serialize_checkpoint(model, opt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("checkpoint: write failed for " + path);
}

struct LoadedCheckpoint {
  ModelState<float> model;
  std::optional<OptimState> opt;
};

inline LoadedCheckpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "AIDN", 4) != 0)
    throw BadMagicError("checkpoint: bad magic");
  if (bytes.size() < 16) throw TruncatedError("checkpoint: file shorter than header");

  const std::uint32_t stored_crc = static_cast<std::uint32_t>(bytes[bytes.size() - 4]) |
                                   (static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8) |
                                   (static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16) |
                                   (static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24);
  const std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size() - 4)));

  detail::Reader r{bytes.data(), bytes.size() - 4, 4};
  const std::uint32_t version = r.u32();
  if (version != 1) throw VersionError("checkpoint: unsupported version " + std::to_string(version));
  if (crc != stored_crc) throw ChecksumError("checkpoint: CRC mismatch");

  const std::uint32_t count = r.u32();
  std::vector<std::pair<std::string, TensorF>> tensors;
  tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16();
    std::string name = r.str(name_len);
    const std::uint8_t rank = r.u8();
    if (rank > 4) throw CheckpointError("checkpoint: tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape;
    shape.rank = rank;
    std::size_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      shape.dim[static_cast<std::size_t>(d)] = static_cast<int>(r.u32());
      numel *= static_cast<std::size_t>(shape.dim[static_cast<std::size_t>(d)]);
    }
    TensorF t(shape);
    for (std::size_t j = 0; j < numel; ++j) t[j] = r.f32();
    tensors.emplace_back(std::move(name), std::move(t));
  }
  if (r.pos != r.n) throw CheckpointError("checkpoint: trailing bytes after last tensor");

  auto find = [&tensors](const std::string& name) -> TensorF* {
    for (auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  };

  const TensorF* hyper = find("hyper");
  if (!hyper || hyper->size() != 5) throw CheckpointError("checkpoint: missing hyper record");
  Hyper h;
  h.channels = static_cast<int>((*hyper)[0]);
  h.blocks = static_cast<int>((*hyper)[1]);
  h.experts = static_cast<int>((*hyper)[2]);
  h.kernel = static_cast<int>((*hyper)[3]);
  h.hidden = static_cast<int>((*hyper)[4]);

  LoadedCheckpoint out;
  out.model = ModelState<float>::zeros(h);
  bool has_opt = find("opt.step") != nullptr;
  OptimState opt;
  visit_params(out.model, [&](const std::string& name, TensorF& t) {
    TensorF* src = find(name);
    if (!src) throw CheckpointError("checkpoint: missing tensor '" + name + "'");
    if (src->shape != t.shape)
      throw CheckpointError("checkpoint: tensor '" + name + "' is " + src->shape.str() +
                            ", expected " + t.shape.str());
    t = std::move(*src);
    if (has_opt) {
      TensorF* m = find("opt.m." + name);
      TensorF* v = find("opt.v." + name);
      if (!m || !v || m->shape != t.shape || v->shape != t.shape)
        throw CheckpointError("checkpoint: incomplete optimizer state for '" + name + "'");
      opt.m.push_back(std::move(*m));
      opt.v.push_back(std::move(*v));
    }
  });
  if (has_opt) {
    opt.step = static_cast<std::int64_t>((*find("opt.step"))[0]);
    out.opt = std::move(opt);
  }
  return out;
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

/// CRC-32 of the serialized parameters, as an 8-digit hex id for reports.
inline std::string model_hash(const ModelState<float>& model) {
  const auto bytes = serialize_checkpoint(model);
  const std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", crc);
  return std::string(buf);
}

}  // namespace aidn
