#include "stmbr/checkpoint.hpp"

namespace stmbr {

namespace {

constexpr char kMagic[4] = {'S', 'B', 'R', 'S'};

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::vector<uint8_t>& bytes;
  size_t pos = 0;

  void need(size_t n, const char* what) const {
    if (pos + n > bytes.size())
      throw std::runtime_error(std::string("checkpoint: truncated file while reading ") + what);
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return bytes[pos++];
  }
  uint16_t u16(const char* what) {
    need(2, what);
    const uint16_t v = static_cast<uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
    pos += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
};

}  // namespace

void write_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries) {
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xffff) throw std::invalid_argument("checkpoint: tensor name too long");
    if (e.dims.size() > 0xff) throw std::invalid_argument("checkpoint: too many dimensions");
    if (e.dtype > 1) throw std::invalid_argument("checkpoint: unknown dtype");
    const size_t elem = e.dtype == 0 ? 4 : 8;
    if (e.raw.size() != static_cast<size_t>(e.value_count()) * elem)
      throw std::invalid_argument("checkpoint: raw size does not match dims for " + e.name);
    put_u16(out, static_cast<uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(e.dtype);
    out.push_back(static_cast<uint8_t>(e.dims.size()));
    for (uint32_t d : e.dims) put_u32(out, d);
    out.insert(out.end(), e.raw.begin(), e.raw.end());
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failure: " + path);
}

std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{bytes};
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  r.pos = 4;
  const uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const uint32_t count = r.u32("tensor count");
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const uint16_t name_len = r.u16("name length");
    r.need(name_len, "name");
    e.name.assign(reinterpret_cast<const char*>(bytes.data() + r.pos), name_len);
    r.pos += name_len;
    e.dtype = r.u8("dtype");
    if (e.dtype > 1) throw std::runtime_error("checkpoint: unknown dtype for " + e.name);
    const uint8_t ndim = r.u8("ndim");
    e.dims.resize(ndim);
    for (auto& d : e.dims) d = r.u32("dims");
    const size_t elem = e.dtype == 0 ? 4 : 8;
    const size_t bytes_needed = static_cast<size_t>(e.value_count()) * elem;
    r.need(bytes_needed, ("tensor " + e.name).c_str());
    e.raw.assign(bytes.begin() + static_cast<ptrdiff_t>(r.pos),
                 bytes.begin() + static_cast<ptrdiff_t>(r.pos + bytes_needed));
    r.pos += bytes_needed;
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace stmbr
