#include "acetone/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "acetone/random.hpp"

namespace acetone {

namespace {

struct Grade {
  std::array<std::array<double, 3>, 3> mix;
  double saturation;
  std::array<double, 3> gamma, lift, gain;
  std::array<double, 3> shadow_tint, highlight_tint;
};

Grade random_grade(Rng& rng) {
  Grade g{};
  for (int r = 0; r < 3; ++r) {
    double off_sum = 0.0;
    for (int c = 0; c < 3; ++c) {
      if (c == r) continue;
      g.mix[r][c] = rng.uniform(-0.12, 0.18);
      off_sum += g.mix[r][c];
    }
    g.mix[r][r] = 1.0 - off_sum;
  }
  g.saturation = rng.uniform(0.6, 1.4);
  for (int c = 0; c < 3; ++c) {
    g.gamma[c] = rng.uniform(0.75, 1.35);
    g.lift[c] = rng.uniform(0.0, 0.08);
    g.gain[c] = rng.uniform(0.88, 1.0);
    g.shadow_tint[c] = rng.uniform(-0.06, 0.06);
    g.highlight_tint[c] = rng.uniform(-0.06, 0.06);
  }
  return g;
}

Rgb apply_grade(const Grade& g, double r, double gr, double b) {
  const std::array<double, 3> in{r, gr, b};
  std::array<double, 3> v{};
  for (int row = 0; row < 3; ++row) {
    for (int c = 0; c < 3; ++c) v[row] += g.mix[row][c] * in[c];
  }
  const double y = 0.2126 * v[0] + 0.7152 * v[1] + 0.0722 * v[2];
  for (int c = 0; c < 3; ++c) v[c] = std::clamp(y + g.saturation * (v[c] - y), 0.0, 1.0);
  const double luma = std::clamp(0.2126 * v[0] + 0.7152 * v[1] + 0.0722 * v[2], 0.0, 1.0);
  Rgb out{};
  for (int c = 0; c < 3; ++c) {
    double t = std::pow(v[c], g.gamma[c]);
    t = g.lift[c] + (g.gain[c] - g.lift[c]) * t;
    t += g.shadow_tint[c] * (1.0 - luma) * (1.0 - luma) + g.highlight_tint[c] * luma * luma;
    out[c] = static_cast<float>(std::clamp(t, 0.0, 1.0));
  }
  return out;
}

}  // namespace

Lut3d synthetic_grade_lut(std::uint64_t seed, int n) {
  Rng rng(seed);
  const Grade g = random_grade(rng);
  Lut3d lut(n);
  const double denom = n - 1;
  for (int b = 0; b < n; ++b) {
    for (int gr = 0; gr < n; ++gr) {
      for (int r = 0; r < n; ++r) lut.set(r, gr, b, apply_grade(g, r / denom, gr / denom, b / denom));
    }
  }
  return lut;
}

ImageBuf synthetic_image(std::uint64_t seed, int width, int height) {
  Rng rng(seed);
  std::array<double, 3> c0{}, c1{};
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.uniform(0.05, 0.95);
    c1[c] = rng.uniform(0.05, 0.95);
  }
  const double angle = rng.uniform(0.0, 2.0 * M_PI);
  const double dx = std::cos(angle), dy = std::sin(angle);

  struct Blob {
    double x, y, radius;
    std::array<double, 3> color;
    double weight;
  };
  std::vector<Blob> blobs(4 + rng.below(4));
  for (auto& blob : blobs) {
    blob.x = rng.uniform(0.0, 1.0);
    blob.y = rng.uniform(0.0, 1.0);
    blob.radius = rng.uniform(0.08, 0.3);
    for (auto& v : blob.color) v = rng.uniform(0.0, 1.0);
    blob.weight = rng.uniform(0.5, 1.0);
  }

  ImageBuf img(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5) / width;
      const double v = (y + 0.5) / height;
      const double t = std::clamp(0.5 + (u - 0.5) * dx + (v - 0.5) * dy, 0.0, 1.0);
      std::array<double, 3> px{};
      for (int c = 0; c < 3; ++c) px[c] = c0[c] + (c1[c] - c0[c]) * t;
      for (const auto& blob : blobs) {
        const double d2 = (u - blob.x) * (u - blob.x) + (v - blob.y) * (v - blob.y);
        const double w = blob.weight * std::exp(-d2 / (2.0 * blob.radius * blob.radius));
        for (int c = 0; c < 3; ++c) px[c] += w * (blob.color[c] - px[c]);
      }
      Rgb out{};
      for (int c = 0; c < 3; ++c) out[c] = static_cast<float>(std::clamp(px[c] + rng.normal() * 0.01, 0.0, 1.0));
      img.set_pixel(x, y, out);
    }
  }
  return img;
}

}  // namespace acetone
