#include "acetone/lut.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "acetone/error.hpp"
#include "acetone/random.hpp"

namespace acetone {

namespace {

constexpr double kKnotSnap = 1e-5;

void require_resolution(int n) {
  if (n < 2) {
    throw Error(Errc::invalid_resolution,
                "LUT resolution must be at least 2, got " + std::to_string(n));
  }
}

float clamp01(double v) noexcept {
  if (!(v > 0.0)) return 0.0f;  // also maps NaN to 0
  if (v >= 1.0) return 1.0f;
  return static_cast<float>(v);
}

struct Axis {
  int i0;
  double frac;
};

Axis locate(double index, int n) {
  if (index <= 0.0) return {0, 0.0};
  if (index >= n - 1) return {n - 2, 1.0};
  auto i0 = static_cast<int>(std::floor(index));
  if (i0 > n - 2) i0 = n - 2;
  return {i0, index - i0};
}

// Trilinear blend of a 3-channel lattice at continuous indices, unclamped.
std::array<double, 3> trilinear(std::span<const float> data, int n, double x, double y,
                                double z) {
  const Axis ax = locate(x, n);
  const Axis ay = locate(y, n);
  const Axis az = locate(z, n);
  const auto idx = [n](int r, int g, int b) {
    return 3 * ((static_cast<std::size_t>(b) * n + g) * n + r);
  };
  std::array<double, 3> out{};
  for (int c = 0; c < 3; ++c) {
    const auto v = [&](int dr, int dg, int db) {
      return static_cast<double>(data[idx(ax.i0 + dr, ay.i0 + dg, az.i0 + db) + c]);
    };
    const double c00 = v(0, 0, 0) * (1.0 - ax.frac) + v(1, 0, 0) * ax.frac;
    const double c10 = v(0, 1, 0) * (1.0 - ax.frac) + v(1, 1, 0) * ax.frac;
    const double c01 = v(0, 0, 1) * (1.0 - ax.frac) + v(1, 0, 1) * ax.frac;
    const double c11 = v(0, 1, 1) * (1.0 - ax.frac) + v(1, 1, 1) * ax.frac;
    const double c0 = c00 * (1.0 - ay.frac) + c10 * ay.frac;
    const double c1 = c01 * (1.0 - ay.frac) + c11 * ay.frac;
    out[c] = c0 * (1.0 - az.frac) + c1 * az.frac;
  }
  return out;
}

// Color component to continuous lattice index, snapped onto knots that are
// within float rounding of the exact vertex coordinate.
double color_to_index(float c, int n) {
  double v = static_cast<double>(c);
  if (!(v > 0.0)) v = 0.0;
  if (v > 1.0) v = 1.0;
  const double x = v * (n - 1);
  const double knot = std::round(x);
  return std::abs(x - knot) < kKnotSnap ? knot : x;
}

Rgb clamp_rgb(const std::array<double, 3>& v) {
  return {clamp01(v[0]), clamp01(v[1]), clamp01(v[2])};
}

Rgb sample_index(const Lut3d& lut, double x, double y, double z) {
  return clamp_rgb(trilinear(lut.data(), lut.resolution(), x, y, z));
}

double pre_noise(const Perturbation& p, float v) {
  double out = std::clamp(static_cast<double>(v), 0.0, 1.0);
  if (p.gamma != 1.0) out = std::pow(out, p.gamma);
  if (p.contrast != 1.0) out = (out - 0.5) * p.contrast + 0.5;
  if (p.exposure_stops != 0.0) out *= std::exp2(p.exposure_stops);
  return out;
}

NoiseField smoothed_noise(Rng& rng, int n, double sigma, double bound) {
  std::vector<float> raw(3 * static_cast<std::size_t>(n) * n * n);
  for (auto& v : raw) v = static_cast<float>(sigma * rng.normal());
  NoiseField field{n, std::vector<float>(raw.size())};
  const auto idx = [n](int r, int g, int b) {
    return 3 * ((static_cast<std::size_t>(b) * n + g) * n + r);
  };
  for (int b = 0; b < n; ++b) {
    for (int g = 0; g < n; ++g) {
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < 3; ++c) {
          double acc = 0.0;
          for (int db = -1; db <= 1; ++db) {
            for (int dg = -1; dg <= 1; ++dg) {
              for (int dr = -1; dr <= 1; ++dr) {
                const int rr = std::clamp(r + dr, 0, n - 1);
                const int gg = std::clamp(g + dg, 0, n - 1);
                const int bb = std::clamp(b + db, 0, n - 1);
                acc += raw[idx(rr, gg, bb) + c];
              }
            }
          }
          field.offsets[idx(r, g, b) + c] =
              static_cast<float>(std::clamp(acc / 27.0, -bound, bound));
        }
      }
    }
  }
  return field;
}

}  // namespace

Lut3d::Lut3d(int resolution) : n_(resolution) {
  require_resolution(resolution);
  data_.assign(3 * vertex_count(), 0.0f);
}

Lut3d::Lut3d(int resolution, std::vector<float> data) : n_(resolution), data_(std::move(data)) {
  require_resolution(resolution);
  if (data_.size() != 3 * vertex_count()) {
    throw Error(Errc::dimension_mismatch,
                "LUT data length " + std::to_string(data_.size()) + " does not match 3*" +
                    std::to_string(n_) + "^3");
  }
}

Rgb Lut3d::at(int r, int g, int b) const noexcept {
  const std::size_t i = 3 * vertex_index(r, g, b);
  return {data_[i], data_[i + 1], data_[i + 2]};
}

void Lut3d::set(int r, int g, int b, const Rgb& value) noexcept {
  const std::size_t i = 3 * vertex_index(r, g, b);
  data_[i] = value[0];
  data_[i + 1] = value[1];
  data_[i + 2] = value[2];
}

std::size_t Lut3d::clamp_values() noexcept {
  std::size_t changed = 0;
  for (auto& v : data_) {
    const float c = clamp01(v);
    if (c != v) ++changed;
    v = c;
  }
  return changed;
}

ImageBuf::ImageBuf(int width, int height) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) {
    throw Error(Errc::dimension_mismatch, "image dimensions must be positive");
  }
  pixels_.assign(3 * pixel_count(), 0.0f);
}

ImageBuf::ImageBuf(int width, int height, std::vector<float> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (width <= 0 || height <= 0) {
    throw Error(Errc::dimension_mismatch, "image dimensions must be positive");
  }
  if (pixels_.size() != 3 * pixel_count()) {
    throw Error(Errc::dimension_mismatch, "pixel buffer length does not match width*height*3");
  }
}

bool Perturbation::is_neutral() const noexcept {
  if (gamma != 1.0 || contrast != 1.0 || exposure_stops != 0.0) return false;
  if (!noise_field) return true;
  return std::all_of(noise_field->offsets.begin(), noise_field->offsets.end(),
                     [](float v) { return v == 0.0f; });
}

PerturbationRanges perturbation_ranges(Intensity intensity) {
  switch (intensity) {
    case Intensity::low:
      return {0.9, 1.1, 0.9, 1.1, -0.25, 0.25, 0.02, 0.05, 32};
    case Intensity::high:
      return {0.7, 1.4, 0.8, 1.25, -0.5, 0.5, 0.1, 0.05, 32};
  }
  return perturbation_ranges(Intensity::low);
}

Lut3d identity_lut(int n) {
  Lut3d lut(n);
  const double denom = n - 1;
  for (int b = 0; b < n; ++b) {
    for (int g = 0; g < n; ++g) {
      for (int r = 0; r < n; ++r) {
        lut.set(r, g, b,
                {static_cast<float>(r / denom), static_cast<float>(g / denom),
                 static_cast<float>(b / denom)});
      }
    }
  }
  return lut;
}

Rgb sample_lut(const Lut3d& lut, const Rgb& color) {
  const int n = lut.resolution();
  return sample_index(lut, color_to_index(color[0], n), color_to_index(color[1], n),
                      color_to_index(color[2], n));
}

ImageBuf apply_lut(const Lut3d& lut, const ImageBuf& img) {
  ImageBuf out(img.width(), img.height());
  const std::size_t count = img.pixel_count();
  for (std::size_t i = 0; i < count; ++i) out.set_pixel(i, sample_lut(lut, img.pixel(i)));
  return out;
}

Lut3d resample_lut(const Lut3d& lut, int target_n) {
  require_resolution(target_n);
  Lut3d out(target_n);
  const int n = lut.resolution();
  const double step = static_cast<double>(n - 1) / (target_n - 1);
  for (int b = 0; b < target_n; ++b) {
    for (int g = 0; g < target_n; ++g) {
      for (int r = 0; r < target_n; ++r) {
        // Integer products keep same-resolution coordinates exact.
        const double x = target_n == n ? r : r * step;
        const double y = target_n == n ? g : g * step;
        const double z = target_n == n ? b : b * step;
        out.set(r, g, b, sample_index(lut, x, y, z));
      }
    }
  }
  return out;
}

Lut3d compose_lut(const Lut3d& first, const Lut3d& second, int out_n) {
  require_resolution(out_n);
  const Lut3d inner = resample_lut(first, out_n);
  Lut3d out(out_n);
  const std::size_t count = out.vertex_count();
  for (std::size_t v = 0; v < count; ++v) {
    const auto d = inner.data();
    const Rgb mid{d[3 * v], d[3 * v + 1], d[3 * v + 2]};
    const Rgb val = sample_lut(second, mid);
    auto o = out.data();
    o[3 * v] = val[0];
    o[3 * v + 1] = val[1];
    o[3 * v + 2] = val[2];
  }
  return out;
}

float perturb_component(const Perturbation& p, float v) noexcept {
  return clamp01(pre_noise(p, v));
}

Lut3d apply_perturbation(const Perturbation& p, const Lut3d& lut) {
  validate(p);
  if (p.is_neutral()) return lut;
  const int n = lut.resolution();
  Lut3d out = lut;
  auto d = out.data();
  for (int b = 0; b < n; ++b) {
    for (int g = 0; g < n; ++g) {
      for (int r = 0; r < n; ++r) {
        std::array<double, 3> noise{};
        if (p.noise_field) {
          const int nn = p.noise_field->resolution;
          const double step = static_cast<double>(nn - 1) / (n - 1);
          noise = nn == n ? trilinear(p.noise_field->offsets, nn, r, g, b)
                          : trilinear(p.noise_field->offsets, nn, r * step, g * step, b * step);
        }
        const std::size_t i = 3 * lut.vertex_index(r, g, b);
        for (int c = 0; c < 3; ++c) d[i + c] = clamp01(pre_noise(p, d[i + c]) + noise[c]);
      }
    }
  }
  return out;
}

ImageBuf apply_perturbation(const Perturbation& p, const ImageBuf& img) {
  validate(p);
  if (p.is_neutral()) return img;
  ImageBuf out = img;
  auto d = out.data();
  const std::size_t count = img.pixel_count();
  for (std::size_t i = 0; i < count; ++i) {
    std::array<double, 3> noise{};
    if (p.noise_field) {
      const int nn = p.noise_field->resolution;
      noise = trilinear(p.noise_field->offsets, nn, color_to_index(d[3 * i], nn),
                        color_to_index(d[3 * i + 1], nn), color_to_index(d[3 * i + 2], nn));
    }
    for (int c = 0; c < 3; ++c) d[3 * i + c] = clamp01(pre_noise(p, d[3 * i + c]) + noise[c]);
  }
  return out;
}

Lut3d perturbation_as_lut(const Perturbation& p, int n) {
  return apply_perturbation(p, identity_lut(n));
}

Perturbation sample_random_perturbation(std::uint64_t seed, Intensity intensity) {
  const PerturbationRanges ranges = perturbation_ranges(intensity);
  Rng rng(seed);
  Perturbation p;
  p.gamma = rng.uniform(ranges.gamma_lo, ranges.gamma_hi);
  p.contrast = rng.uniform(ranges.contrast_lo, ranges.contrast_hi);
  p.exposure_stops = rng.uniform(ranges.exposure_lo, ranges.exposure_hi);
  p.noise_field =
      smoothed_noise(rng, ranges.noise_resolution, ranges.noise_sigma, ranges.noise_bound);
  return p;
}

void validate(const Lut3d& lut) {
  require_resolution(lut.resolution());
  if (lut.data().size() != 3 * lut.vertex_count()) {
    throw Error(Errc::dimension_mismatch, "LUT data length mismatch");
  }
  for (float v : lut.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw Error(Errc::out_of_range, "LUT component outside [0,1]: " + std::to_string(v));
    }
  }
}

void validate(const ImageBuf& img) {
  if (img.width() <= 0 || img.height() <= 0 || img.data().size() != 3 * img.pixel_count()) {
    throw Error(Errc::dimension_mismatch, "malformed image buffer");
  }
  for (float v : img.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw Error(Errc::out_of_range, "pixel component outside [0,1]: " + std::to_string(v));
    }
  }
}

void validate(const Perturbation& p) {
  if (!(p.gamma > 0.0) || !std::isfinite(p.gamma)) {
    throw Error(Errc::invalid_parameter, "gamma must be positive");
  }
  if (!(p.contrast > 0.0) || !std::isfinite(p.contrast)) {
    throw Error(Errc::invalid_parameter, "contrast must be positive");
  }
  if (!std::isfinite(p.exposure_stops)) {
    throw Error(Errc::invalid_parameter, "exposure must be finite");
  }
  if (p.noise_field) {
    const int n = p.noise_field->resolution;
    if (n < 2 || p.noise_field->offsets.size() != 3 * static_cast<std::size_t>(n) * n * n) {
      throw Error(Errc::invalid_parameter, "malformed noise field");
    }
  }
}

}  // namespace acetone
