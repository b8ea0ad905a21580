#pragma once

#include <cstring>
#include <fstream>
#include <map>

#include "stmbr/model.hpp"

namespace stmbr {

/// Binary checkpoint layout (all integers little-endian):
///   magic "SBRS" | version u32 | tensor count u32 | entries...
/// Entry: name length u16 | UTF-8 name | dtype u8 (0=f32, 1=f64) |
///        ndim u8 | dims u32[ndim] | raw little-endian values.
/// Optimizer velocities and RNG cursors live in the same table under the
/// reserved prefixes "opt/" and "rng/"; run metadata under "meta/".
constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  uint8_t dtype = 0;
  std::vector<uint32_t> dims;
  std::vector<uint8_t> raw;

  int64_t value_count() const {
    int64_t n = 1;
    for (uint32_t d : dims) n *= d;
    return n;
  }
};

void write_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::string& path);

template <typename T>
constexpr uint8_t dtype_code() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? 0 : 1;
}

template <typename T>
CheckpointEntry entry_from_tensor(const std::string& name, const Tensor<T>& t) {
  CheckpointEntry e;
  e.name = name;
  e.dtype = dtype_code<T>();
  e.dims.assign(t.shape.begin(), t.shape.end());
  e.raw.resize(t.data.size() * sizeof(T));
  std::memcpy(e.raw.data(), t.data.data(), e.raw.size());
  return e;
}

template <typename T>
Tensor<T> tensor_from_entry(const CheckpointEntry& e) {
  if (e.dtype != dtype_code<T>())
    throw std::runtime_error("checkpoint: dtype mismatch for tensor " + e.name);
  std::vector<int> shape(e.dims.begin(), e.dims.end());
  Tensor<T> t(shape);
  if (e.raw.size() != t.data.size() * sizeof(T))
    throw std::runtime_error("checkpoint: truncated tensor " + e.name);
  std::memcpy(t.data.data(), e.raw.data(), e.raw.size());
  return t;
}

inline CheckpointEntry entry_from_scalar(const std::string& name, double v) {
  return entry_from_tensor(name, Tensor<double>::scalar(v));
}

inline CheckpointEntry entry_from_rng(const std::string& name, const Rng& rng) {
  // Four u64 state words, stored bit-cast as f64 raw bytes; the byte stream
  // never passes through floating-point registers.
  CheckpointEntry e;
  e.name = name;
  e.dtype = 1;
  e.dims = {4};
  const auto st = rng.state();
  e.raw.resize(sizeof(st));
  std::memcpy(e.raw.data(), st.data(), sizeof(st));
  return e;
}

inline Rng rng_from_entry(const CheckpointEntry& e) {
  if (e.dtype != 1 || e.value_count() != 4 || e.raw.size() != 32)
    throw std::runtime_error("checkpoint: malformed RNG entry " + e.name);
  std::array<uint64_t, 4> st;
  std::memcpy(st.data(), e.raw.data(), sizeof(st));
  Rng r;
  r.set_state(st);
  return r;
}

/// Convenience view over a loaded entry list.
class CheckpointMap {
 public:
  explicit CheckpointMap(std::vector<CheckpointEntry> entries) {
    for (auto& e : entries) map_.emplace(e.name, std::move(e));
  }

  bool has(const std::string& name) const { return map_.count(name) > 0; }

  const CheckpointEntry& at(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw std::runtime_error("checkpoint: missing entry " + name);
    return it->second;
  }

  double scalar(const std::string& name) const {
    return tensor_from_entry<double>(at(name)).data[0];
  }

  double scalar_or(const std::string& name, double fallback) const {
    return has(name) ? scalar(name) : fallback;
  }

  const std::map<std::string, CheckpointEntry>& entries() const { return map_; }

 private:
  std::map<std::string, CheckpointEntry> map_;
};

template <typename T>
void append_registry(std::vector<CheckpointEntry>& out, const ParamRegistry<T>& reg,
                     const std::string& prefix) {
  for (const auto& [name, var] : reg.items)
    out.push_back(entry_from_tensor(prefix + name, var->value));
}

template <typename T>
void load_registry(const CheckpointMap& map, ParamRegistry<T>& reg, const std::string& prefix) {
  for (auto& [name, var] : reg.items) {
    Tensor<T> t = tensor_from_entry<T>(map.at(prefix + name));
    if (t.shape != var->value.shape)
      throw std::runtime_error("checkpoint: shape mismatch for " + prefix + name + ": " +
                               shape_str(t.shape) + " vs " + shape_str(var->value.shape));
    var->value = std::move(t);
  }
}

}  // namespace stmbr
