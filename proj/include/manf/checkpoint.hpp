#pragma once

// Parameter checkpoint container (all integers little-endian):
//
//   "MANFCKPT"                      8 bytes magic
//   version                         u32 (= 1)
//   metadata count                  u32
//     key, value                    u32 length + UTF-8 bytes each
//   parameter count                 u32
//     name                          u32 length + bytes
//     extents                       4 x u32 (n, c, h, w)
//     values                        n*c*h*w x IEEE-754 binary32

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "manf/byte_io.hpp"
#include "manf/layers.hpp"

namespace manf {

inline constexpr char kCheckpointMagic[] = "MANFCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<float> values;
  };
  std::map<std::string, std::string> meta;
  std::vector<Entry> entries;

  const Entry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

inline Bytes encode_checkpoint(const Checkpoint& ck) {
  ByteWriter w;
  w.raw(std::string_view(kCheckpointMagic, 8));
  w.u32_le(kCheckpointVersion);
  w.u32_le(static_cast<std::uint32_t>(ck.meta.size()));
  for (const auto& [k, v] : ck.meta) {
    w.str(k);
    w.str(v);
  }
  w.u32_le(static_cast<std::uint32_t>(ck.entries.size()));
  for (const auto& e : ck.entries) {
    w.str(e.name);
    for (std::size_t d : e.shape.dims) w.u32_le(static_cast<std::uint32_t>(d));
    for (float v : e.values) w.f32_le(v);
  }
  return w.take();
}

inline Checkpoint decode_checkpoint(const Bytes& bytes) {
  ByteReader r(bytes);
  Bytes magic = r.bytes(8, "checkpoint magic");
  if (std::string(magic.begin(), magic.end()) != std::string(kCheckpointMagic, 8))
    throw FormatError("not a checkpoint file (bad magic)");
  std::uint32_t version = r.u32_le("checkpoint version");
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  std::uint32_t nmeta = r.u32_le("metadata count");
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    std::string k = r.str("metadata key");
    ck.meta[k] = r.str("metadata value");
  }
  std::uint32_t nparams = r.u32_le("parameter count");
  for (std::uint32_t i = 0; i < nparams; ++i) {
    Checkpoint::Entry e;
    e.name = r.str("parameter name");
    for (auto& d : e.shape.dims) d = r.u32_le("parameter extent");
    const std::size_t n = e.shape.size();
    r.need(n * 4, "parameter values");
    e.values.resize(n);
    for (auto& v : e.values) v = r.f32_le();
    ck.entries.push_back(std::move(e));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint");
  return ck;
}

template <std::floating_point T>
void store_to_checkpoint(const ParamStore<T>& store, Checkpoint& ck) {
  ck.entries.clear();
  for (const auto& p : store.all()) {
    Checkpoint::Entry e{p.name, p.value.shape(), {}};
    e.values.assign(p.value.data().begin(), p.value.data().end());
    ck.entries.push_back(std::move(e));
  }
}

/// Copies checkpoint values into a store with the same parameter layout.
template <std::floating_point T>
void checkpoint_to_store(const Checkpoint& ck, ParamStore<T>& store) {
  if (ck.entries.size() != store.all().size())
    throw FormatError("checkpoint has " + std::to_string(ck.entries.size()) + " parameters, model expects " +
                      std::to_string(store.all().size()));
  for (auto& p : store.all()) {
    const Checkpoint::Entry* e = ck.find(p.name);
    if (e == nullptr) throw FormatError("checkpoint is missing parameter " + p.name);
    if (!(e->shape == p.value.shape()))
      throw FormatError("parameter " + p.name + " has shape " + e->shape.str() + ", model expects " +
                        p.value.shape().str());
    for (std::size_t i = 0; i < e->values.size(); ++i) p.value[i] = static_cast<T>(e->values[i]);
  }
}

}  // namespace manf
