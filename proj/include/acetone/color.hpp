#pragma once

#include <memory>
#include <string>

#include "acetone/lut.hpp"

namespace acetone {

struct LabColor {
  double L = 0.0;
  double a = 0.0;
  double b = 0.0;
};

// sRGB (display-referred, D65, 2 degree observer) to CIELAB.
LabColor srgb_to_lab(const Rgb& c);

// Full CIEDE2000 including the hue rotation term, kL = kC = kH = 1.
double delta_e_2000(const LabColor& x, const LabColor& y);

// Area-average downsample so the long edge is at most max_edge pixels.
ImageBuf downsample_area(const ImageBuf& img, int max_edge);

inline constexpr int kDeltaEMaxEdge = 256;

// Mean per-pixel CIEDE2000 after downsampling both images to kDeltaEMaxEdge.
// Summation uses a fixed pairwise tree.
double mean_delta_e(const ImageBuf& a, const ImageBuf& b);

inline constexpr double kPsnrCap = 99.0;

double mse(const ImageBuf& a, const ImageBuf& b);
double mse(const Lut3d& a, const Lut3d& b);
double psnr_from_mse(double mse);
double psnr(const ImageBuf& a, const ImageBuf& b);
double psnr(const Lut3d& a, const Lut3d& b);

// 1 / (max(2, dE) - 1).
double color_reward_from_delta_e(double mean_delta_e);
double color_reward(const ImageBuf& pred, const ImageBuf& gt);

// Scores an image on [0,5].
class AestheticScorer {
 public:
  virtual ~AestheticScorer() = default;
  virtual double score(const ImageBuf& img) const = 0;
};

// Deterministic stand-in for a learned aesthetic model. The score is
// 5 * (w_color * colorfulness + w_contrast * contrast + w_clip * (1 - clipped)),
// each term normalized to [0,1]:
//   colorfulness  Hasler-Suesstrunk opponent statistic / 0.5, capped at 1
//   contrast      standard deviation of luma / 0.25, capped at 1
//   clipped       fraction of pixels with a channel at 0 or 255 (8-bit)
class HeuristicAestheticScorer final : public AestheticScorer {
 public:
  struct Weights {
    double colorfulness = 0.4;
    double contrast = 0.4;
    double clipping = 0.2;
  };

  HeuristicAestheticScorer() = default;
  explicit HeuristicAestheticScorer(Weights w) : weights_(w) {}

  double score(const ImageBuf& img) const override;

 private:
  Weights weights_;
};

// score / 5 clamped to [0,1]. Scorer exceptions and non-finite scores
// surface as Errc::reward_unavailable.
double aesthetic_reward(const ImageBuf& img, const AestheticScorer& scorer);

struct RewardValue {
  double color = 0.0;
  double aesthetic = 0.0;
  double total = 0.0;
  double mean_delta_e = 0.0;
};

struct RewardWeights {
  double color = 1.0;
  double aesthetic = 1.0;
};

RewardValue composite_reward(const ImageBuf& pred, const ImageBuf& gt,
                             const AestheticScorer& scorer, const RewardWeights& weights = {});

struct MetricReport {
  double psnr_db = 0.0;
  double mean_delta_e = 0.0;
  double color_reward = 0.0;
  double aesthetic_reward = 0.0;
};

MetricReport evaluate_metrics(const ImageBuf& pred, const ImageBuf& gt,
                              const AestheticScorer& scorer);

// {"psnr_db":..,"mean_delta_e":..,"color_reward":..,"aesthetic_reward":..}
std::string metric_report_json(const MetricReport& report);

}  // namespace acetone
