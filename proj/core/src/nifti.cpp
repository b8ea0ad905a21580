#include "stmbr/nifti.hpp"

#include <cstring>
#include <fstream>
#include <limits>

#if defined(STMBR_HAS_ZLIB)
#include <zlib.h>
#endif

namespace stmbr {

namespace {

constexpr int kHeaderSize = 348;

// Header field offsets (NIfTI-1 / ANALYZE layout).
constexpr int kOffDim = 40;        // int16[8]
constexpr int kOffDatatype = 70;   // int16
constexpr int kOffPixdim = 76;     // float[8]
constexpr int kOffVoxOffset = 108; // float
constexpr int kOffSclSlope = 112;  // float
constexpr int kOffSclInter = 116;  // float
constexpr int kOffMagic = 344;     // char[4]

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
  if (ends_with(path, ".gz")) {
#if defined(STMBR_HAS_ZLIB)
    gzFile gz = gzopen(path.c_str(), "rb");
    if (!gz) throw std::runtime_error("cannot open: " + path);
    std::vector<uint8_t> out;
    uint8_t buf[1 << 16];
    int n;
    while ((n = gzread(gz, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
    const bool bad = n < 0;
    gzclose(gz);
    if (bad) throw std::runtime_error("gzip decode failed: " + path);
    return out;
#else
    throw std::runtime_error("gzip support not built; decompress " + path + " to plain .nii");
#endif
  }
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

template <typename T>
T load_le(const uint8_t* p, bool swap) {
  T v;
  uint8_t tmp[sizeof(T)];
  if (swap) {
    for (size_t i = 0; i < sizeof(T); ++i) tmp[i] = p[sizeof(T) - 1 - i];
    std::memcpy(&v, tmp, sizeof(T));
  } else {
    std::memcpy(&v, p, sizeof(T));
  }
  return v;
}

}  // namespace

std::pair<VolumeMeta, Tensor<float>> read_nifti(const std::string& path) {
  std::vector<uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() < kHeaderSize)
    throw std::runtime_error("nifti: truncated header in " + path);
  const uint8_t* hdr = bytes.data();

  const int32_t raw_size = load_le<int32_t>(hdr, false);
  bool swap = false;
  if (raw_size != kHeaderSize) {
    if (load_le<int32_t>(hdr, true) == kHeaderSize)
      swap = true;
    else
      throw std::runtime_error("nifti: sizeof_hdr is not 348, not a NIfTI-1 file: " + path);
  }

  char magic[4];
  std::memcpy(magic, hdr + kOffMagic, 4);
  const bool single_file = std::memcmp(magic, "n+1", 4) == 0;
  const bool pair_file = std::memcmp(magic, "ni1", 4) == 0;
  if (!single_file && !pair_file)
    throw std::runtime_error("nifti: bad magic in " + path);

  VolumeMeta meta;
  meta.big_endian = swap;  // assuming a little-endian host
  int16_t dim[8];
  for (int i = 0; i < 8; ++i) dim[i] = load_le<int16_t>(hdr + kOffDim + 2 * i, swap);
  if (dim[0] < 2 || dim[0] > 7)
    throw std::runtime_error("nifti: unsupported dim[0]=" + std::to_string(dim[0]) + " in " + path);
  meta.nx = dim[1];
  meta.ny = dim[2];
  meta.nz = dim[0] >= 3 ? std::max<int>(1, dim[3]) : 1;
  if (meta.nx < 1 || meta.ny < 1)
    throw std::runtime_error("nifti: non-positive dimensions in " + path);
  for (int i = 4; i <= dim[0]; ++i)
    if (dim[i] > 1) throw std::runtime_error("nifti: >3-D volumes are not supported: " + path);

  meta.datatype = load_le<int16_t>(hdr + kOffDatatype, swap);
  for (int i = 0; i < 3; ++i) meta.spacing[i] = load_le<float>(hdr + kOffPixdim + 4 * (i + 1), swap);
  meta.scl_slope = load_le<float>(hdr + kOffSclSlope, swap);
  meta.scl_inter = load_le<float>(hdr + kOffSclInter, swap);

  int elem_size;
  switch (meta.datatype) {
    case 2: elem_size = 1; break;    // uint8
    case 4: elem_size = 2; break;    // int16
    case 16: elem_size = 4; break;   // float32
    default:
      throw std::runtime_error("nifti: unsupported datatype code " + std::to_string(meta.datatype) +
                               " in " + path);
  }

  const uint8_t* body;
  std::vector<uint8_t> img_bytes;
  int64_t offset;
  int64_t avail;
  if (single_file) {
    const double vox = load_le<float>(hdr + kOffVoxOffset, swap);
    offset = vox > 0 ? static_cast<int64_t>(vox) : kHeaderSize + 4;
    if (offset < kHeaderSize) throw std::runtime_error("nifti: invalid vox_offset in " + path);
    body = bytes.data();
    avail = static_cast<int64_t>(bytes.size());
  } else {
    std::string img = path;
    const std::string suffix = ends_with(img, ".hdr.gz") ? ".hdr.gz" : ".hdr";
    const auto pos = img.rfind(suffix);
    if (pos == std::string::npos)
      throw std::runtime_error("nifti: 'ni1' header must be a .hdr file: " + path);
    img.replace(pos, suffix.size(), suffix == ".hdr.gz" ? ".img.gz" : ".img");
    img_bytes = read_file_bytes(img);
    body = img_bytes.data();
    avail = static_cast<int64_t>(img_bytes.size());
    offset = 0;
  }

  const int64_t count = static_cast<int64_t>(meta.nx) * meta.ny * meta.nz;
  if (offset + count * elem_size > avail)
    throw std::runtime_error("nifti: truncated body in " + path);

  std::vector<float> vals(static_cast<size_t>(count));
  const uint8_t* p = body + offset;
  for (int64_t i = 0; i < count; ++i, p += elem_size) {
    double v;
    switch (meta.datatype) {
      case 2: v = *p; break;
      case 4: v = load_le<int16_t>(p, swap); break;
      default: v = load_le<float>(p, swap); break;
    }
    if (meta.scl_slope != 0) v = v * meta.scl_slope + meta.scl_inter;
    vals[static_cast<size_t>(i)] = static_cast<float>(v);
  }

  float lo = std::numeric_limits<float>::infinity(), hi = -lo;
  for (float v : vals) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float range = hi - lo;
  Tensor<float> vol({meta.nz, 1, meta.ny, meta.nx});
  for (size_t i = 0; i < vals.size(); ++i)
    vol.data[i] = range > 0 ? (vals[i] - lo) / range : 0.f;
  ensure_finite(vol, "read_nifti");
  return {meta, std::move(vol)};
}

}  // namespace stmbr
