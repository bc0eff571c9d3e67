#include "acetone/color.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "acetone/error.hpp"

namespace acetone {

namespace {

constexpr double kPi = 3.14159265358979323846;

double srgb_eotf(double v) {
  return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

// IEC 61966-2-1 RGB -> XYZ; the white reference is taken from the row sums
// so that (1,1,1) lands on a = b = 0.
constexpr double kM[3][3] = {{0.4124, 0.3576, 0.1805},
                             {0.2126, 0.7152, 0.0722},
                             {0.0193, 0.1192, 0.9505}};

double lab_f(double t) {
  constexpr double delta = 6.0 / 29.0;
  return t > delta * delta * delta ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

double deg(double rad) { return rad * 180.0 / kPi; }
double rad(double deg) { return deg * kPi / 180.0; }

// Pairwise sum with a fixed split, independent of any parallel schedule.
double tree_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return tree_sum(v.first(half)) + tree_sum(v.subspan(half));
}

void require_same_shape(const ImageBuf& a, const ImageBuf& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw Error(Errc::dimension_mismatch,
                "image sizes differ: " + std::to_string(a.width()) + "x" +
                    std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                    std::to_string(b.height()));
  }
}

double mse_of(std::span<const float> a, std::span<const float> b) {
  std::vector<double> sq(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    sq[i] = d * d;
  }
  return tree_sum(sq) / static_cast<double>(a.size());
}

}  // namespace

LabColor srgb_to_lab(const Rgb& c) {
  const double lin[3] = {srgb_eotf(std::clamp<double>(c[0], 0.0, 1.0)),
                         srgb_eotf(std::clamp<double>(c[1], 0.0, 1.0)),
                         srgb_eotf(std::clamp<double>(c[2], 0.0, 1.0))};
  double xyz[3];
  double white[3];
  for (int i = 0; i < 3; ++i) {
    xyz[i] = kM[i][0] * lin[0] + kM[i][1] * lin[1] + kM[i][2] * lin[2];
    white[i] = kM[i][0] + kM[i][1] + kM[i][2];
  }
  const double fx = lab_f(xyz[0] / white[0]);
  const double fy = lab_f(xyz[1] / white[1]);
  const double fz = lab_f(xyz[2] / white[2]);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

double delta_e_2000(const LabColor& x, const LabColor& y) {
  const double c1 = std::hypot(x.a, x.b);
  const double c2 = std::hypot(y.a, y.b);
  const double c_bar = 0.5 * (c1 + c2);
  const double c_bar7 = std::pow(c_bar, 7.0);
  const double g = 0.5 * (1.0 - std::sqrt(c_bar7 / (c_bar7 + std::pow(25.0, 7.0))));
  const double a1 = (1.0 + g) * x.a;
  const double a2 = (1.0 + g) * y.a;
  const double cp1 = std::hypot(a1, x.b);
  const double cp2 = std::hypot(a2, y.b);

  const auto hue = [](double b, double a) {
    if (a == 0.0 && b == 0.0) return 0.0;
    double h = deg(std::atan2(b, a));
    if (h < 0.0) h += 360.0;
    return h;
  };
  const double hp1 = hue(x.b, a1);
  const double hp2 = hue(y.b, a2);

  const double dl = y.L - x.L;
  const double dc = cp2 - cp1;
  double dh = 0.0;
  if (cp1 * cp2 != 0.0) {
    dh = hp2 - hp1;
    if (dh > 180.0) {
      dh -= 360.0;
    } else if (dh < -180.0) {
      dh += 360.0;
    }
  }
  const double dH = 2.0 * std::sqrt(cp1 * cp2) * std::sin(rad(dh / 2.0));

  const double l_bar = 0.5 * (x.L + y.L);
  const double cp_bar = 0.5 * (cp1 + cp2);
  double hp_bar = hp1 + hp2;
  if (cp1 * cp2 != 0.0) {
    if (std::abs(hp1 - hp2) <= 180.0) {
      hp_bar *= 0.5;
    } else if (hp1 + hp2 < 360.0) {
      hp_bar = 0.5 * (hp1 + hp2 + 360.0);
    } else {
      hp_bar = 0.5 * (hp1 + hp2 - 360.0);
    }
  }

  const double t = 1.0 - 0.17 * std::cos(rad(hp_bar - 30.0)) + 0.24 * std::cos(rad(2.0 * hp_bar)) +
                   0.32 * std::cos(rad(3.0 * hp_bar + 6.0)) -
                   0.20 * std::cos(rad(4.0 * hp_bar - 63.0));
  const double d_theta = 30.0 * std::exp(-std::pow((hp_bar - 275.0) / 25.0, 2.0));
  const double cp_bar7 = std::pow(cp_bar, 7.0);
  const double rc = 2.0 * std::sqrt(cp_bar7 / (cp_bar7 + std::pow(25.0, 7.0)));
  const double l50 = (l_bar - 50.0) * (l_bar - 50.0);
  const double sl = 1.0 + 0.015 * l50 / std::sqrt(20.0 + l50);
  const double sc = 1.0 + 0.045 * cp_bar;
  const double sh = 1.0 + 0.015 * cp_bar * t;
  const double rt = -std::sin(rad(2.0 * d_theta)) * rc;

  const double tl = dl / sl;
  const double tc = dc / sc;
  const double th = dH / sh;
  return std::sqrt(std::max(0.0, tl * tl + tc * tc + th * th + rt * tc * th));
}

ImageBuf downsample_area(const ImageBuf& img, int max_edge) {
  const int w = img.width();
  const int h = img.height();
  const int edge = std::max(w, h);
  if (edge <= max_edge) return img;
  const double scale = static_cast<double>(max_edge) / edge;
  const int ow = std::max(1, static_cast<int>(std::lround(w * scale)));
  const int oh = std::max(1, static_cast<int>(std::lround(h * scale)));
  ImageBuf out(ow, oh);
  const double sx = static_cast<double>(w) / ow;
  const double sy = static_cast<double>(h) / oh;
  for (int oy = 0; oy < oh; ++oy) {
    const double y0 = oy * sy;
    const double y1 = y0 + sy;
    for (int ox = 0; ox < ow; ++ox) {
      const double x0 = ox * sx;
      const double x1 = x0 + sx;
      double acc[3] = {0.0, 0.0, 0.0};
      double area = 0.0;
      for (int y = static_cast<int>(y0); y < std::min(h, static_cast<int>(std::ceil(y1))); ++y) {
        const double wy = std::min<double>(y + 1, y1) - std::max<double>(y, y0);
        if (wy <= 0.0) continue;
        for (int x = static_cast<int>(x0); x < std::min(w, static_cast<int>(std::ceil(x1))); ++x) {
          const double wx = std::min<double>(x + 1, x1) - std::max<double>(x, x0);
          if (wx <= 0.0) continue;
          const Rgb p = img.pixel(x, y);
          const double wgt = wx * wy;
          for (int c = 0; c < 3; ++c) acc[c] += wgt * p[c];
          area += wgt;
        }
      }
      out.set_pixel(ox, oy,
                    {static_cast<float>(acc[0] / area), static_cast<float>(acc[1] / area),
                     static_cast<float>(acc[2] / area)});
    }
  }
  return out;
}

double mean_delta_e(const ImageBuf& a, const ImageBuf& b) {
  require_same_shape(a, b);
  const ImageBuf da = downsample_area(a, kDeltaEMaxEdge);
  const ImageBuf db = downsample_area(b, kDeltaEMaxEdge);
  std::vector<double> de(da.pixel_count());
  for (std::size_t i = 0; i < de.size(); ++i) {
    de[i] = delta_e_2000(srgb_to_lab(da.pixel(i)), srgb_to_lab(db.pixel(i)));
  }
  return tree_sum(de) / static_cast<double>(de.size());
}

double mse(const ImageBuf& a, const ImageBuf& b) {
  require_same_shape(a, b);
  return mse_of(a.data(), b.data());
}

double mse(const Lut3d& a, const Lut3d& b) {
  if (a.resolution() != b.resolution()) {
    throw Error(Errc::dimension_mismatch, "LUT resolutions differ");
  }
  return mse_of(a.data(), b.data());
}

double psnr_from_mse(double m) {
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

double psnr(const ImageBuf& a, const ImageBuf& b) { return psnr_from_mse(mse(a, b)); }
double psnr(const Lut3d& a, const Lut3d& b) { return psnr_from_mse(mse(a, b)); }

double color_reward_from_delta_e(double de) { return 1.0 / (std::max(2.0, de) - 1.0); }

double color_reward(const ImageBuf& pred, const ImageBuf& gt) {
  return color_reward_from_delta_e(mean_delta_e(pred, gt));
}

double HeuristicAestheticScorer::score(const ImageBuf& img) const {
  const std::size_t n = img.pixel_count();
  double rg_sum = 0, rg_sq = 0, yb_sum = 0, yb_sq = 0, y_sum = 0, y_sq = 0;
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Rgb p = img.pixel(i);
    const double r = p[0], g = p[1], b = p[2];
    const double rg = r - g;
    const double yb = 0.5 * (r + g) - b;
    const double luma = 0.2126 * r + 0.7152 * g + 0.0722 * b;
    rg_sum += rg;
    rg_sq += rg * rg;
    yb_sum += yb;
    yb_sq += yb * yb;
    y_sum += luma;
    y_sq += luma * luma;
    const auto lo = std::min({p[0], p[1], p[2]});
    const auto hi = std::max({p[0], p[1], p[2]});
    if (lo <= 0.5f / 255.0f || hi >= 254.5f / 255.0f) ++clipped;
  }
  const double inv = 1.0 / static_cast<double>(n);
  const double mu_rg = rg_sum * inv, mu_yb = yb_sum * inv;
  const double var_rg = std::max(0.0, rg_sq * inv - mu_rg * mu_rg);
  const double var_yb = std::max(0.0, yb_sq * inv - mu_yb * mu_yb);
  const double colorful =
      std::sqrt(var_rg + var_yb) + 0.3 * std::sqrt(mu_rg * mu_rg + mu_yb * mu_yb);
  const double mu_y = y_sum * inv;
  const double std_y = std::sqrt(std::max(0.0, y_sq * inv - mu_y * mu_y));

  const double c_term = std::min(1.0, colorful / 0.5);
  const double k_term = std::min(1.0, std_y / 0.25);
  const double clip_term = 1.0 - static_cast<double>(clipped) * inv;
  const double total_w = weights_.colorfulness + weights_.contrast + weights_.clipping;
  const double s = (weights_.colorfulness * c_term + weights_.contrast * k_term +
                    weights_.clipping * clip_term) /
                   total_w;
  return 5.0 * std::clamp(s, 0.0, 1.0);
}

double aesthetic_reward(const ImageBuf& img, const AestheticScorer& scorer) {
  double s = 0.0;
  try {
    s = scorer.score(img);
  } catch (const std::exception& e) {
    throw Error(Errc::reward_unavailable, std::string("aesthetic scorer failed: ") + e.what());
  }
  if (!std::isfinite(s)) throw Error(Errc::reward_unavailable, "aesthetic score is not finite");
  return std::clamp(s / 5.0, 0.0, 1.0);
}

RewardValue composite_reward(const ImageBuf& pred, const ImageBuf& gt,
                             const AestheticScorer& scorer, const RewardWeights& weights) {
  RewardValue r;
  r.mean_delta_e = mean_delta_e(pred, gt);
  r.color = color_reward_from_delta_e(r.mean_delta_e);
  r.aesthetic = aesthetic_reward(pred, scorer);
  r.total = weights.color * r.color + weights.aesthetic * r.aesthetic;
  return r;
}

MetricReport evaluate_metrics(const ImageBuf& pred, const ImageBuf& gt,
                              const AestheticScorer& scorer) {
  MetricReport m;
  m.psnr_db = psnr(pred, gt);
  m.mean_delta_e = mean_delta_e(pred, gt);
  m.color_reward = color_reward_from_delta_e(m.mean_delta_e);
  m.aesthetic_reward = aesthetic_reward(pred, scorer);
  return m;
}

std::string metric_report_json(const MetricReport& report) {
  nlohmann::json j;
  j["psnr_db"] = report.psnr_db;
  j["mean_delta_e"] = report.mean_delta_e;
  j["color_reward"] = report.color_reward;
  j["aesthetic_reward"] = report.aesthetic_reward;
  return j.dump();
}

}  // namespace acetone
