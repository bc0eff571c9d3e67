#include <algorithm>
#include <cmath>
#include <vector>

#include "acetone/color.hpp"
#include "acetone/error.hpp"
#include "acetone/lut.hpp"
#include "acetone/random.hpp"
#include "acetone/synth.hpp"
#include "doctest.h"

using namespace acetone;

namespace {

ImageBuf random_image(std::uint64_t seed, int w, int h) {
  Rng rng(seed);
  ImageBuf img(w, h);
  for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
  return img;
}

Lut3d random_lut(std::uint64_t seed, int n) {
  Rng rng(seed);
  Lut3d lut(n);
  for (auto& v : lut.data()) v = static_cast<float>(rng.uniform());
  return lut;
}

float max_abs_diff(std::span<const float> a, std::span<const float> b) {
  REQUIRE(a.size() == b.size());
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Per-component power curve as a LUT.
Lut3d gamma_lut(double g, int n) {
  Lut3d lut(n);
  for (int b = 0; b < n; ++b)
    for (int gg = 0; gg < n; ++gg)
      for (int r = 0; r < n; ++r) {
        auto f = [&](int i) { return static_cast<float>(std::pow(static_cast<double>(i) / (n - 1), g)); };
        lut.set(r, gg, b, {f(r), f(gg), f(b)});
      }
  return lut;
}

template <typename Fn>
Errc error_code(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::io;
}

}  // namespace

TEST_CASE("identity LUT vertices hold their normalized coordinates") {
  const Lut3d id2 = identity_lut(2);
  for (int b = 0; b < 2; ++b)
    for (int g = 0; g < 2; ++g)
      for (int r = 0; r < 2; ++r) CHECK(id2.at(r, g, b) == Rgb{float(r), float(g), float(b)});
  const Lut3d id32 = identity_lut(32);
  CHECK(id32.at(31, 0, 0) == Rgb{1.0f, 0.0f, 0.0f});
  CHECK(id32.data().size() == 3u * 32 * 32 * 32);
  CHECK(error_code([] { identity_lut(1); }) == Errc::invalid_resolution);
}

TEST_CASE("identity application is a no-op") {
  const Lut3d id = identity_lut(32);
  float worst = 0.0f;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const ImageBuf img = random_image(s, 7, 5);
    worst = std::max(worst, max_abs_diff(apply_lut(id, img).data(), img.data()));
  }
  CHECK(worst < 1e-6f);
}

TEST_CASE("constant LUT maps every pixel to its value") {
  Lut3d c(5);
  std::fill(c.data().begin(), c.data().end(), 0.5f);
  const ImageBuf out = apply_lut(c, random_image(1, 9, 9));
  for (float v : out.data()) CHECK(v == 0.5f);
}

TEST_CASE("N=2 red/green swap sends pure red to pure green") {
  Lut3d swap(2);
  for (int b = 0; b < 2; ++b)
    for (int g = 0; g < 2; ++g)
      for (int r = 0; r < 2; ++r) swap.set(r, g, b, {float(g), float(r), float(b)});
  ImageBuf px(1, 1, {1.0f, 0.0f, 0.0f});
  CHECK(apply_lut(swap, px).pixel(0) == Rgb{0.0f, 1.0f, 0.0f});
}

TEST_CASE("trilinear weight at the cube center is 1/8 per corner") {
  Lut3d lut(2);
  lut.set(1, 1, 1, {1.0f, 1.0f, 1.0f});
  const Rgb v = sample_lut(lut, {0.5f, 0.5f, 0.5f});
  for (float c : v) CHECK(c == doctest::Approx(0.125f));
  CHECK(sample_lut(identity_lut(17), {0.3f, 0.7f, 0.1f})[0] == doctest::Approx(0.3f).epsilon(1e-6));
}

TEST_CASE("sampling at a vertex returns the stored value exactly") {
  const Lut3d lut = random_lut(3, 9);
  const int n = lut.resolution();
  for (int b = 0; b < n; ++b)
    for (int g = 0; g < n; ++g)
      for (int r = 0; r < n; ++r) {
        const Rgb c{float(r) / (n - 1), float(g) / (n - 1), float(b) / (n - 1)};
        CHECK(sample_lut(lut, c) == lut.at(r, g, b));
      }
}

TEST_CASE("interpolated values stay within the surrounding vertices") {
  const Lut3d lut = random_lut(4, 6);
  const int n = lut.resolution();
  Rng rng(5);
  for (int i = 0; i < 2000; ++i) {
    const Rgb c{float(rng.uniform()), float(rng.uniform()), float(rng.uniform())};
    const Rgb v = sample_lut(lut, c);
    int i0[3];
    for (int k = 0; k < 3; ++k) i0[k] = std::min(n - 2, static_cast<int>(c[k] * (n - 1)));
    for (int ch = 0; ch < 3; ++ch) {
      float lo = 1.0f, hi = 0.0f;
      for (int corner = 0; corner < 8; ++corner) {
        const float x = lut.at(i0[0] + (corner & 1), i0[1] + ((corner >> 1) & 1), i0[2] + ((corner >> 2) & 1))[ch];
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
      CHECK(v[ch] >= lo - 1e-6f);
      CHECK(v[ch] <= hi + 1e-6f);
    }
  }
}

TEST_CASE("out-of-range inputs are clamped") {
  const Lut3d lut = random_lut(6, 4);
  CHECK(sample_lut(lut, {-3.0f, 0.0f, 2.0f}) == lut.at(0, 0, 3));
  const ImageBuf out = apply_lut(lut, random_image(7, 5, 5));
  for (float v : out.data()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("resampling") {
  CHECK(max_abs_diff(resample_lut(identity_lut(17), 32).data(), identity_lut(32).data()) < 1e-6f);

  const Lut3d l = random_lut(8, 7);
  CHECK(resample_lut(l, 7) == l);

  const Lut3d r32 = resample_lut(random_lut(9, 11), 32);
  CHECK(resample_lut(r32, 32) == r32);

  // N=2 to N=3: the center vertex is the mean of the 8 corners, edge midpoints the mean of 2.
  const Lut3d g2 = gamma_lut(2.2, 2);
  const Lut3d g3 = resample_lut(g2, 3);
  Rgb center{0, 0, 0};
  for (int corner = 0; corner < 8; ++corner) {
    const Rgb v = g2.at(corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
    for (int k = 0; k < 3; ++k) center[k] += v[k] / 8.0f;
  }
  for (int k = 0; k < 3; ++k) CHECK(g3.at(1, 1, 1)[k] == doctest::Approx(center[k]));
  for (int k = 0; k < 3; ++k) {
    CHECK(g3.at(1, 0, 0)[k] == doctest::Approx(0.5f * (g2.at(0, 0, 0)[k] + g2.at(1, 0, 0)[k])));
  }
  CHECK(error_code([&] { resample_lut(l, 1); }) == Errc::invalid_resolution);
}

TEST_CASE("composition") {
  const Lut3d l = synthetic_grade_lut(10, 17);
  const Lut3d id = identity_lut(9);
  CHECK(max_abs_diff(compose_lut(id, l, 17).data(), resample_lut(l, 17).data()) < 1e-6f);
  CHECK(max_abs_diff(compose_lut(l, identity_lut(33), 17).data(), resample_lut(l, 17).data()) < 1e-6f);

  const Lut3d roundtrip = compose_lut(gamma_lut(2.0, 32), gamma_lut(0.5, 32), 32);
  const ImageBuf img = synthetic_image(11, 48, 48);
  CHECK(mean_delta_e(apply_lut(roundtrip, img), img) < 0.5);
}

TEST_CASE("perturbation arithmetic") {
  Perturbation neutral;
  CHECK(neutral.is_neutral());
  const ImageBuf img = random_image(12, 6, 6);
  CHECK(apply_perturbation(neutral, img) == img);
  const Lut3d l = random_lut(13, 5);
  CHECK(apply_perturbation(neutral, l) == l);

  Perturbation g;
  g.gamma = 2.0;
  CHECK(perturb_component(g, 0.5f) == doctest::Approx(0.25f));
  Perturbation e;
  e.exposure_stops = 1.0;
  CHECK(perturb_component(e, 0.4f) == doctest::Approx(0.8f));
  Perturbation c;
  c.contrast = 2.0;
  CHECK(perturb_component(c, 0.75f) == doctest::Approx(1.0f));

  Perturbation bad;
  bad.gamma = 0.0;
  CHECK(error_code([&] { apply_perturbation(bad, img); }) == Errc::invalid_parameter);
  bad.gamma = 1.0;
  bad.contrast = -1.0;
  CHECK(error_code([&] { apply_perturbation(bad, l); }) == Errc::invalid_parameter);
}

TEST_CASE("perturbation expressed as a LUT matches direct application on the lattice") {
  const Perturbation p = sample_random_perturbation(14, Intensity::high);
  const Lut3d as_lut = perturbation_as_lut(p, 9);
  CHECK(apply_perturbation(p, identity_lut(9)) == as_lut);
}

TEST_CASE("random perturbations respect the configured ranges") {
  CHECK(sample_random_perturbation(15, Intensity::low) == sample_random_perturbation(15, Intensity::low));
  for (Intensity in : {Intensity::low, Intensity::high}) {
    const PerturbationRanges r = perturbation_ranges(in);
    for (std::uint64_t s = 0; s < 500; ++s) {
      const Perturbation p = sample_random_perturbation(s, in);
      CHECK(p.gamma >= r.gamma_lo);
      CHECK(p.gamma <= r.gamma_hi);
      CHECK(p.contrast >= r.contrast_lo);
      CHECK(p.contrast <= r.contrast_hi);
      CHECK(p.exposure_stops >= r.exposure_lo);
      CHECK(p.exposure_stops <= r.exposure_hi);
    }
  }
  const PerturbationRanges low = perturbation_ranges(Intensity::low);
  CHECK(low.gamma_lo == 0.9);
  CHECK(low.gamma_hi == 1.1);

  const PerturbationRanges high = perturbation_ranges(Intensity::high);
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Perturbation p = sample_random_perturbation(s, Intensity::high);
    REQUIRE(p.noise_field.has_value());
    float worst = 0.0f;
    for (float o : p.noise_field->offsets) worst = std::max(worst, std::abs(o));
    CHECK(worst <= static_cast<float>(high.noise_bound));
  }
  CHECK(high.noise_bound == 0.05);
}

TEST_CASE("low-intensity perturbations stay perceptually small") {
  const ImageBuf img = synthetic_image(16, 64, 64);
  double acc = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    acc += mean_delta_e(apply_perturbation(sample_random_perturbation(s, Intensity::low), img), img);
  }
  // The configured ranges average about 4.2 on this fixture.
  CHECK(acc / 20.0 < 5.0);
}

TEST_CASE("invariant validation") {
  std::vector<float> bad(3 * 8, 0.5f);
  bad[4] = 1.5f;
  CHECK(error_code([&] { validate(Lut3d(2, bad)); }) == Errc::out_of_range);
  CHECK(error_code([] { Lut3d(2, std::vector<float>(5, 0.0f)); }) == Errc::dimension_mismatch);
  CHECK(error_code([] { ImageBuf(2, 2, std::vector<float>(3, 0.0f)); }) == Errc::dimension_mismatch);
}
