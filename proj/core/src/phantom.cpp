#include "stmbr/phantom.hpp"

#include <cmath>
#include <stdexcept>

#include "stmbr/rng.hpp"

namespace stmbr {

namespace {

struct Ellipse {
  double cy, cx, ry, rx, theta;  // center, semi-axes, rotation

  // Squared normalized radius; <= 1 means inside.
  double r2(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = (dx * c + dy * s) / rx;
    const double v = (-dx * s + dy * c) / ry;
    return u * u + v * v;
  }
};

constexpr double kMinMaskFraction = 0.01;
constexpr double kMaxMaskFraction = 0.40;

}  // namespace

SampleSet gen_phantoms(const PhantomSpec& spec) {
  if (spec.size < 32) throw std::invalid_argument("gen_phantoms: size too small for two lungs (< 32)");
  if (spec.count < 0 || spec.infected_fraction < 0 || spec.infected_fraction > 1 ||
      spec.min_lesions < 1 || spec.max_lesions < spec.min_lesions)
    throw std::invalid_argument("gen_phantoms: invalid spec");

  Rng rng = Rng::stream(spec.seed, "synth");
  const int s = spec.size;
  const int n_infected = static_cast<int>(std::llround(spec.count * spec.infected_fraction));

  SampleSet set;
  set.height = s;
  set.width = s;
  set.samples.reserve(static_cast<size_t>(spec.count));

  for (int i = 0; i < spec.count; ++i) {
    const bool infected = i < n_infected;

    Ellipse lungs[2];
    double lung_intensity[2];
    for (int l = 0; l < 2; ++l) {
      lungs[l].cy = s * (0.50 + rng.uniform(-0.04, 0.04));
      lungs[l].cx = s * ((l == 0 ? 0.30 : 0.70) + rng.uniform(-0.03, 0.03));
      lungs[l].ry = s * rng.uniform(0.26, 0.34);
      lungs[l].rx = s * rng.uniform(0.14, 0.19);
      lungs[l].theta = rng.uniform(-0.12, 0.12);
      lung_intensity[l] = rng.uniform(spec.lung_lo, spec.lung_hi);
    }

    Tensor<float> img({1, s, s});
    Tensor<uint8_t> mask = Tensor<uint8_t>::zeros({s, s});

    std::vector<Ellipse> lesions;
    std::vector<double> lesion_intensity;
    if (infected) {
      // Redraw lesion sets until the mask fraction audit passes.
      for (int attempt = 0;; ++attempt) {
        if (attempt >= 200)
          throw std::runtime_error("gen_phantoms: could not satisfy mask fraction bounds");
        lesions.clear();
        lesion_intensity.clear();
        const int n_les =
            spec.min_lesions + static_cast<int>(rng.uniform_int(spec.max_lesions - spec.min_lesions + 1));
        for (int k = 0; k < n_les; ++k) {
          const int l = static_cast<int>(rng.uniform_int(2));
          Ellipse e;
          // Center well inside the chosen lung.
          const double ang = rng.uniform(0.0, 2 * 3.14159265358979323846);
          const double rad = std::sqrt(rng.uniform()) * 0.55;
          const double c = std::cos(lungs[l].theta), sn = std::sin(lungs[l].theta);
          const double u = rad * std::cos(ang) * lungs[l].rx;
          const double v = rad * std::sin(ang) * lungs[l].ry;
          e.cx = lungs[l].cx + u * c - v * sn;
          e.cy = lungs[l].cy + u * sn + v * c;
          e.ry = s * rng.uniform(0.06, 0.14);
          e.rx = s * rng.uniform(0.06, 0.14);
          e.theta = rng.uniform(0.0, 3.14159265358979323846);
          lesions.push_back(e);
          lesion_intensity.push_back(rng.uniform(spec.lesion_lo, spec.lesion_hi));
        }

        int64_t fg = 0;
        for (int y = 0; y < s; ++y)
          for (int x = 0; x < s; ++x) {
            const bool in_lung = lungs[0].r2(y, x) <= 1.0 || lungs[1].r2(y, x) <= 1.0;
            if (!in_lung) continue;
            for (const auto& e : lesions)
              if (e.r2(y, x) <= 1.0) {
                ++fg;
                break;
              }
          }
        const double frac = static_cast<double>(fg) / (static_cast<double>(s) * s);
        if (frac >= kMinMaskFraction && frac <= kMaxMaskFraction) break;
      }
    }

    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        double v = 0.01;
        bool in_lung = false;
        for (int l = 0; l < 2; ++l)
          if (lungs[l].r2(y, x) <= 1.0) {
            v = lung_intensity[l];
            in_lung = true;
          }
        if (in_lung) {
          for (size_t k = 0; k < lesions.size(); ++k) {
            const double r = std::sqrt(lesions[k].r2(y, x));
            if (r <= 1.0) mask.data[static_cast<size_t>(y) * s + x] = 1;
            // Soft edge: full intensity inside r=0.9, linear fade to r=1.1.
            double fall = 0.0;
            if (r <= 0.9)
              fall = 1.0;
            else if (r <= 1.1)
              fall = (1.1 - r) / 0.2;
            if (fall > 0) v = std::max(v, lesion_intensity[k] * fall);
          }
        }
        v += rng.normal() * spec.noise_sigma;
        img.data[static_cast<size_t>(y) * s + x] =
            static_cast<float>(std::min(1.0, std::max(0.0, v)));
      }
    }

    Sample sample;
    char id[16];
    std::snprintf(id, sizeof(id), "s%05d", i);
    sample.id = id;
    sample.image = std::move(img);
    sample.mask = std::move(mask);
    sample.label = infected ? 1 : 0;
    set.samples.push_back(std::move(sample));
  }
  return set;
}

}  // namespace stmbr
