#pragma once

// 3D lookup tables, RGB rasters and the deterministic operations on them.
//
// Lattice convention: an input component c in [0,1] maps to the continuous
// lattice index c*(N-1), clamped to the edge. Data are stored [b][g][r] with
// red varying fastest, the same order as the rows of a .cube file.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace acetone {

using Rgb = std::array<float, 3>;

class Lut3d {
 public:
  Lut3d() = default;
  // All vertices set to zero.
  explicit Lut3d(int resolution);
  // Takes ownership of 3*N^3 values in [b][g][r] red-fastest order.
  Lut3d(int resolution, std::vector<float> data);

  int resolution() const noexcept { return n_; }
  std::size_t vertex_count() const noexcept {
    return static_cast<std::size_t>(n_) * n_ * n_;
  }

  std::size_t vertex_index(int r, int g, int b) const noexcept {
    return (static_cast<std::size_t>(b) * n_ + g) * n_ + r;
  }

  Rgb at(int r, int g, int b) const noexcept;
  void set(int r, int g, int b, const Rgb& value) noexcept;

  std::span<const float> data() const noexcept { return data_; }
  std::span<float> data() noexcept { return data_; }

  // Clamps every component into [0,1]; returns how many were changed.
  std::size_t clamp_values() noexcept;

  friend bool operator==(const Lut3d&, const Lut3d&) = default;

 private:
  int n_ = 0;
  std::vector<float> data_;
};

class ImageBuf {
 public:
  ImageBuf() = default;
  ImageBuf(int width, int height);
  ImageBuf(int width, int height, std::vector<float> pixels);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * height_;
  }

  Rgb pixel(std::size_t i) const noexcept {
    return {pixels_[3 * i], pixels_[3 * i + 1], pixels_[3 * i + 2]};
  }
  Rgb pixel(int x, int y) const noexcept {
    return pixel(static_cast<std::size_t>(y) * width_ + x);
  }
  void set_pixel(std::size_t i, const Rgb& v) noexcept {
    pixels_[3 * i] = v[0];
    pixels_[3 * i + 1] = v[1];
    pixels_[3 * i + 2] = v[2];
  }
  void set_pixel(int x, int y, const Rgb& v) noexcept {
    set_pixel(static_cast<std::size_t>(y) * width_ + x, v);
  }

  std::span<const float> data() const noexcept { return pixels_; }
  std::span<float> data() noexcept { return pixels_; }

  friend bool operator==(const ImageBuf&, const ImageBuf&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> pixels_;
};

// Additive per-component offsets on an n^3 lattice, same axis order as Lut3d.
struct NoiseField {
  int resolution = 0;
  std::vector<float> offsets;

  friend bool operator==(const NoiseField&, const NoiseField&) = default;
};

// Color perturbation phi. Applied per component in the fixed order
// gamma -> contrast -> exposure -> additive noise.
struct Perturbation {
  double gamma = 1.0;
  double contrast = 1.0;
  double exposure_stops = 0.0;
  // Offset lattice sampled trilinearly; indexed by vertex position for LUT
  // targets and by the input color for image targets.
  std::optional<NoiseField> noise_field;

  bool is_neutral() const noexcept;

  friend bool operator==(const Perturbation&, const Perturbation&) = default;
};

enum class Intensity { low, high };

struct PerturbationRanges {
  double gamma_lo, gamma_hi;
  double contrast_lo, contrast_hi;
  double exposure_lo, exposure_hi;
  double noise_sigma;
  double noise_bound;
  int noise_resolution;
};

PerturbationRanges perturbation_ranges(Intensity intensity);

Lut3d identity_lut(int n);

Rgb sample_lut(const Lut3d& lut, const Rgb& color);

ImageBuf apply_lut(const Lut3d& lut, const ImageBuf& img);

Lut3d resample_lut(const Lut3d& lut, int target_n);

// Vertex value = second(first(vertex)).
Lut3d compose_lut(const Lut3d& first, const Lut3d& second, int out_n);

// The closed-form part of phi (no noise) on one component.
float perturb_component(const Perturbation& p, float v) noexcept;

Lut3d apply_perturbation(const Perturbation& p, const Lut3d& lut);
ImageBuf apply_perturbation(const Perturbation& p, const ImageBuf& img);

// phi expressed as a LUT at resolution n (noise indexed by vertex).
Lut3d perturbation_as_lut(const Perturbation& p, int n);

Perturbation sample_random_perturbation(std::uint64_t seed, Intensity intensity);

// Checks the structural invariants; throws Error otherwise.
void validate(const Lut3d& lut);
void validate(const ImageBuf& img);
void validate(const Perturbation& p);

}  // namespace acetone
