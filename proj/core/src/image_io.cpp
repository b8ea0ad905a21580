#include "stmbr/image_io.hpp"

#include <cmath>
#include <fstream>

namespace stmbr {

namespace {

void require_hw(const std::vector<int>& shape, const char* what) {
  if (shape.size() != 2 || shape[0] < 1 || shape[1] < 1)
    throw std::invalid_argument(std::string(what) + ": expected (H,W) shape, got " + shape_str(shape));
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  return f;
}

uint8_t quantize(float v) {
  const float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
  return static_cast<uint8_t>(std::lround(c * 255.f));
}

// Skips PNM whitespace and '#' comment lines, then parses one integer.
int read_pnm_int(std::istream& in) {
  int c = in.get();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#')
      while (c != EOF && c != '\n') c = in.get();
    c = in.get();
  }
  int v = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    any = true;
    c = in.get();
  }
  if (!any) throw std::runtime_error("pgm: malformed header");
  return v;
}

}  // namespace

void write_mask_pgm(const Tensor<uint8_t>& mask, const std::string& path) {
  require_hw(mask.shape, "write_mask_pgm");
  for (uint8_t v : mask.data)
    if (v > 1) throw std::invalid_argument("write_mask_pgm: mask must be binary");
  auto f = open_out(path);
  f << "P5\n" << mask.shape[1] << " " << mask.shape[0] << "\n255\n";
  for (uint8_t v : mask.data) f.put(v ? static_cast<char>(0xFF) : 0);
  if (!f) throw std::runtime_error("write failure: " + path);
}

void write_image_pgm(const Tensor<float>& image, const std::string& path) {
  std::vector<int> hw = image.shape;
  if (hw.size() == 3 && hw[0] == 1) hw = {hw[1], hw[2]};
  require_hw(hw, "write_image_pgm");
  auto f = open_out(path);
  f << "P5\n" << hw[1] << " " << hw[0] << "\n255\n";
  for (float v : image.data) f.put(static_cast<char>(quantize(v)));
  if (!f) throw std::runtime_error("write failure: " + path);
}

Tensor<float> read_pgm(const std::string& path, Tensor<uint8_t>* raw) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  char m0 = 0, m1 = 0;
  f.get(m0).get(m1);
  if (m0 != 'P' || m1 != '5') throw std::runtime_error("pgm: not a P5 file: " + path);
  const int w = read_pnm_int(f);
  const int h = read_pnm_int(f);
  const int maxval = read_pnm_int(f);
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255)
    throw std::runtime_error("pgm: unsupported header in " + path);
  std::vector<uint8_t> bytes(static_cast<size_t>(w) * h);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (f.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw std::runtime_error("pgm: truncated body in " + path);
  Tensor<float> out({1, h, w});
  for (size_t i = 0; i < bytes.size(); ++i) out.data[i] = static_cast<float>(bytes[i]) / maxval;
  if (raw) *raw = Tensor<uint8_t>({h, w}, std::move(bytes));
  return out;
}

void write_overlay_ppm(const Tensor<float>& image, const Tensor<uint8_t>& mask,
                       const std::string& path) {
  std::vector<int> hw = image.shape;
  if (hw.size() == 3 && hw[0] == 1) hw = {hw[1], hw[2]};
  require_hw(hw, "write_overlay_ppm");
  if (mask.shape != hw) throw std::invalid_argument("write_overlay_ppm: mask/image shape mismatch");
  auto f = open_out(path);
  f << "P6\n" << hw[1] << " " << hw[0] << "\n255\n";
  for (size_t i = 0; i < image.data.size(); ++i) {
    const float g = image.data[i];
    if (mask.data[i]) {
      f.put(static_cast<char>(quantize(0.5f * g + 0.5f)));
      f.put(static_cast<char>(quantize(0.5f * g)));
      f.put(static_cast<char>(quantize(0.5f * g)));
    } else {
      const char c = static_cast<char>(quantize(g));
      f.put(c).put(c).put(c);
    }
  }
  if (!f) throw std::runtime_error("write failure: " + path);
}

}  // namespace stmbr
