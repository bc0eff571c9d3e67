#include <cmath>
#include <stdexcept>
#include <vector>

#include "acetone/color.hpp"
#include "acetone/error.hpp"
#include "acetone/random.hpp"
#include "acetone/synth.hpp"
#include "doctest.h"

using namespace acetone;

namespace {

struct ConformancePair {
  LabColor x, y;
  double expected;
};

// The 34 published CIEDE2000 conformance pairs (kL = kC = kH = 1).
const std::vector<ConformancePair>& conformance_pairs() {
  static const std::vector<ConformancePair> pairs{
      {{50.0000, 2.6772, -79.7751}, {50.0000, 0.0000, -82.7485}, 2.0425},
      {{50.0000, 3.1571, -77.2803}, {50.0000, 0.0000, -82.7485}, 2.8615},
      {{50.0000, 2.8361, -74.0200}, {50.0000, 0.0000, -82.7485}, 3.4412},
      {{50.0000, -1.3802, -84.2814}, {50.0000, 0.0000, -82.7485}, 1.0000},
      {{50.0000, -1.1848, -84.8006}, {50.0000, 0.0000, -82.7485}, 1.0000},
      {{50.0000, -0.9009, -85.5211}, {50.0000, 0.0000, -82.7485}, 1.0000},
      {{50.0000, 0.0000, 0.0000}, {50.0000, -1.0000, 2.0000}, 2.3669},
      {{50.0000, -1.0000, 2.0000}, {50.0000, 0.0000, 0.0000}, 2.3669},
      {{50.0000, 2.4900, -0.0010}, {50.0000, -2.4900, 0.0009}, 7.1792},
      {{50.0000, 2.4900, -0.0010}, {50.0000, -2.4900, 0.0010}, 7.1792},
      {{50.0000, 2.4900, -0.0010}, {50.0000, -2.4900, 0.0011}, 7.2195},
      {{50.0000, 2.4900, -0.0010}, {50.0000, -2.4900, 0.0012}, 7.2195},
      {{50.0000, -0.0010, 2.4900}, {50.0000, 0.0009, -2.4900}, 4.8045},
      {{50.0000, -0.0010, 2.4900}, {50.0000, 0.0010, -2.4900}, 4.8045},
      {{50.0000, -0.0010, 2.4900}, {50.0000, 0.0011, -2.4900}, 4.7461},
      {{50.0000, 2.5000, 0.0000}, {50.0000, 0.0000, -2.5000}, 4.3065},
      {{50.0000, 2.5000, 0.0000}, {73.0000, 25.0000, -18.0000}, 27.1492},
      {{50.0000, 2.5000, 0.0000}, {61.0000, -5.0000, 29.0000}, 22.8977},
      {{50.0000, 2.5000, 0.0000}, {56.0000, -27.0000, -3.0000}, 31.9030},
      {{50.0000, 2.5000, 0.0000}, {58.0000, 24.0000, 15.0000}, 19.4535},
      {{50.0000, 2.5000, 0.0000}, {50.0000, 3.1736, 0.5854}, 1.0000},
      {{50.0000, 2.5000, 0.0000}, {50.0000, 3.2972, 0.0000}, 1.0000},
      {{50.0000, 2.5000, 0.0000}, {50.0000, 1.8634, 0.5757}, 1.0000},
      {{50.0000, 2.5000, 0.0000}, {50.0000, 3.2592, 0.3350}, 1.0000},
      {{60.2574, -34.0099, 36.2677}, {60.4626, -34.1751, 39.4387}, 1.2644},
      {{63.0109, -31.0961, -5.8663}, {62.8187, -29.7946, -4.0864}, 1.2630},
      {{61.2901, 3.7196, -5.3901}, {61.4292, 2.2480, -4.9620}, 1.8731},
      {{35.0831, -44.1164, 3.7933}, {35.0232, -40.0716, 1.5901}, 1.8645},
      {{22.7233, 20.0904, -46.6940}, {23.0331, 14.9730, -42.5619}, 2.0373},
      {{36.4612, 47.8580, 18.3852}, {36.2715, 50.5065, 21.2231}, 1.4146},
      {{90.8027, -2.0831, 1.4410}, {91.1528, -1.6435, 0.0447}, 1.4441},
      {{90.9257, -0.5406, -0.9208}, {88.6381, -0.8985, -0.7239}, 1.5381},
      {{6.7747, -0.2908, -2.4247}, {5.8714, -0.0985, -2.2286}, 0.6377},
      {{2.0776, 0.0795, -1.1350}, {0.9033, -0.0636, -0.5514}, 0.9082},
  };
  return pairs;
}

ImageBuf uniform_image(int w, int h, float v) {
  return ImageBuf(w, h, std::vector<float>(static_cast<std::size_t>(w) * h * 3, v));
}

class FixedScorer final : public AestheticScorer {
 public:
  explicit FixedScorer(double s) : s_(s) {}
  double score(const ImageBuf&) const override { return s_; }

 private:
  double s_;
};

class FailingScorer final : public AestheticScorer {
 public:
  double score(const ImageBuf&) const override { throw std::runtime_error("model offline"); }
};

}  // namespace

TEST_CASE("CIEDE2000 matches all published conformance pairs") {
  REQUIRE(conformance_pairs().size() == 34);
  for (const auto& p : conformance_pairs()) {
    CAPTURE(p.expected);
    CHECK(std::abs(delta_e_2000(p.x, p.y) - p.expected) <= 1e-4);
    CHECK(std::abs(delta_e_2000(p.y, p.x) - p.expected) <= 1e-4);
  }
}

TEST_CASE("CIEDE2000 is symmetric and zero only on identical colors") {
  Rng rng(11);
  for (int i = 0; i < 10000; ++i) {
    const LabColor x{rng.uniform(0, 100), rng.uniform(-128, 128), rng.uniform(-128, 128)};
    const LabColor y{rng.uniform(0, 100), rng.uniform(-128, 128), rng.uniform(-128, 128)};
    CHECK(delta_e_2000(x, y) == delta_e_2000(y, x));
    CHECK(delta_e_2000(x, x) == 0.0);
    CHECK(delta_e_2000(x, y) > 0.0);
  }
}

TEST_CASE("sRGB to Lab reference points") {
  const LabColor black = srgb_to_lab({0.0f, 0.0f, 0.0f});
  CHECK(black.L == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(black.a) < 1e-9);
  CHECK(std::abs(black.b) < 1e-9);

  const LabColor white = srgb_to_lab({1.0f, 1.0f, 1.0f});
  CHECK(std::abs(white.L - 100.0) < 0.01);
  CHECK(std::abs(white.a) < 0.01);
  CHECK(std::abs(white.b) < 0.01);

  // Reference conversion of mid gray computed with an independent colorimetry library.
  const LabColor gray = srgb_to_lab({0.5f, 0.5f, 0.5f});
  CHECK(gray.L == doctest::Approx(53.38896).epsilon(1e-6));
}

TEST_CASE("mean delta E equals a per-pixel loop") {
  const ImageBuf a = synthetic_image(1, 40, 30);
  const ImageBuf b = synthetic_image(2, 40, 30);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.pixel_count(); ++i) {
    acc += delta_e_2000(srgb_to_lab(a.pixel(i)), srgb_to_lab(b.pixel(i)));
  }
  CHECK(mean_delta_e(a, b) == doctest::Approx(acc / static_cast<double>(a.pixel_count())).epsilon(1e-12));
  CHECK(mean_delta_e(a, a) == 0.0);
}

TEST_CASE("mean delta E detects an exposure shift") {
  const ImageBuf a = synthetic_image(3, 32, 32);
  ImageBuf b = a;
  for (auto& v : b.data()) v = std::min(1.0f, 2.0f * v);
  CHECK(mean_delta_e(a, b) > 0.0);
}

TEST_CASE("mean delta E rejects mismatched sizes") {
  try {
    mean_delta_e(uniform_image(4, 4, 0.5f), uniform_image(4, 5, 0.5f));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::dimension_mismatch);
  }
}

TEST_CASE("PSNR") {
  const ImageBuf zero = uniform_image(8, 8, 0.0f);
  const ImageBuf tenth = uniform_image(8, 8, 0.1f);
  // MSE = 0.01, so 10 log10(100) = 20.
  CHECK(psnr(zero, tenth) == doctest::Approx(20.0).epsilon(1e-6));
  CHECK(psnr(zero, zero) == kPsnrCap);
  CHECK(psnr(zero, tenth) == psnr_from_mse(mse(zero, tenth)));
  const Lut3d id = identity_lut(4);
  CHECK(psnr(id, id) == kPsnrCap);
}

TEST_CASE("color reward formula") {
  CHECK(color_reward_from_delta_e(1.5) == 1.0);
  CHECK(color_reward_from_delta_e(3.0) == 0.5);
  CHECK(color_reward_from_delta_e(11.0) == 0.1);
  CHECK(color_reward_from_delta_e(0.0) == 1.0);
  double prev = 2.0;
  for (double de = 0.0; de < 50.0; de += 0.25) {
    const double r = color_reward_from_delta_e(de);
    CHECK(r <= prev);
    CHECK(r > 0.0);
    CHECK(r <= 1.0);
    prev = r;
  }
  const ImageBuf img = synthetic_image(5, 16, 16);
  CHECK(color_reward(img, img) == 1.0);
}

TEST_CASE("aesthetic reward scales the score to [0,1]") {
  const ImageBuf img = synthetic_image(6, 16, 16);
  CHECK(aesthetic_reward(img, FixedScorer(5.0)) == 1.0);
  CHECK(aesthetic_reward(img, FixedScorer(0.0)) == 0.0);
  CHECK(aesthetic_reward(img, FixedScorer(3.29)) == doctest::Approx(0.658).epsilon(1e-12));
  CHECK(aesthetic_reward(img, FixedScorer(7.0)) == 1.0);
  try {
    aesthetic_reward(img, FailingScorer{});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::reward_unavailable);
  }
}

TEST_CASE("heuristic aesthetic scorer stays on [0,5] and is deterministic") {
  const HeuristicAestheticScorer scorer;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const ImageBuf img = synthetic_image(s, 24, 24);
    const double v = scorer.score(img);
    CHECK(v >= 0.0);
    CHECK(v <= 5.0);
    CHECK(v == scorer.score(img));
  }
  // A flat gray frame has no colorfulness and no contrast.
  CHECK(scorer.score(uniform_image(8, 8, 0.5f)) == doctest::Approx(5.0 * 0.2));
}

TEST_CASE("composite reward is the weighted sum of its parts") {
  const ImageBuf a = synthetic_image(7, 20, 20);
  const ImageBuf b = synthetic_image(8, 20, 20);
  const HeuristicAestheticScorer scorer;
  const RewardValue r = composite_reward(a, b, scorer);
  CHECK(r.total == r.color + r.aesthetic);
  CHECK(r.color == color_reward_from_delta_e(r.mean_delta_e));
  const RewardValue w = composite_reward(a, b, scorer, {2.0, 0.5});
  CHECK(w.total == 2.0 * w.color + 0.5 * w.aesthetic);
}

TEST_CASE("metric report JSON carries the four fields") {
  const ImageBuf a = synthetic_image(9, 8, 8);
  const std::string j = metric_report_json(evaluate_metrics(a, a, HeuristicAestheticScorer{}));
  for (const char* key : {"psnr_db", "mean_delta_e", "color_reward", "aesthetic_reward"}) {
    CHECK(j.find(key) != std::string::npos);
  }
}

TEST_CASE("area downsample caps the long edge") {
  const ImageBuf big = synthetic_image(10, 600, 300);
  const ImageBuf small = downsample_area(big, kDeltaEMaxEdge);
  CHECK(std::max(small.width(), small.height()) <= kDeltaEMaxEdge);
  const ImageBuf flat = downsample_area(uniform_image(512, 512, 0.25f), 256);
  for (float v : flat.data()) CHECK(v == doctest::Approx(0.25f));
}
