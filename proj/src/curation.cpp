#include "acetone/curation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>

#include "acetone/error.hpp"
#include "acetone/random.hpp"

namespace acetone {

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace

// --- PCA ----------------------------------------------------------------------

std::vector<double> flatten_lut(const Lut3d& lut) {
  const auto d = lut.data();
  return std::vector<double>(d.begin(), d.end());
}

PcaModel fit_pca(const std::vector<Lut3d>& luts, int p) {
  const int n = static_cast<int>(luts.size());
  if (n < 2) throw Error(Errc::insufficient_data, "PCA needs at least 2 LUTs, got " + std::to_string(n));
  if (p < 1 || p > n - 1) {
    throw Error(Errc::invalid_parameter, "PCA components must be in [1," + std::to_string(n - 1) +
                                             "], got " + std::to_string(p));
  }
  const int res = luts.front().resolution();
  for (const auto& l : luts) {
    if (l.resolution() != res) throw Error(Errc::dimension_mismatch, "PCA corpus mixes LUT resolutions");
  }
  const int dim = static_cast<int>(luts.front().data().size());

  Eigen::MatrixXd x(n, dim);
  for (int i = 0; i < n; ++i) {
    const auto d = luts[i].data();
    for (int j = 0; j < dim; ++j) x(i, j) = d[j];
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd gram = x * x.transpose();
  const double trace = gram.trace();
  if (!(trace > 1e-20)) throw Error(Errc::zero_variance, "PCA corpus has zero variance (all LUTs identical)");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
  if (solver.info() != Eigen::Success) throw Error(Errc::non_finite, "Gram eigendecomposition failed");
  // Eigen sorts ascending.
  const Eigen::VectorXd values = solver.eigenvalues();
  const Eigen::MatrixXd vectors = solver.eigenvectors();

  PcaModel model;
  model.dim = dim;
  model.mean.assign(mean.data(), mean.data() + dim);
  for (int c = 0; c < p; ++c) {
    const int idx = n - 1 - c;
    const double lambda = values(idx);
    if (!(lambda > trace * 1e-12)) {
      throw Error(Errc::zero_variance, "PCA corpus rank is below the requested " + std::to_string(p) +
                                           " components");
    }
    Eigen::VectorXd u = x.transpose() * vectors.col(idx);
    u /= u.norm();
    // Sign convention: largest-magnitude coordinate positive.
    Eigen::Index arg = 0;
    u.cwiseAbs().maxCoeff(&arg);
    if (u(arg) < 0) u = -u;
    model.components.emplace_back(u.data(), u.data() + dim);
    model.explained_variance.push_back(lambda / (n - 1));
  }
  return model;
}

std::vector<double> pca_project(const PcaModel& pca, const std::vector<double>& x) {
  if (static_cast<int>(x.size()) != pca.dim) throw Error(Errc::dimension_mismatch, "PCA input dimension");
  std::vector<double> out(pca.components.size());
  for (std::size_t c = 0; c < out.size(); ++c) {
    double acc = 0.0;
    for (int j = 0; j < pca.dim; ++j) acc += (x[j] - pca.mean[j]) * pca.components[c][j];
    out[c] = acc;
  }
  return out;
}

std::vector<double> pca_reconstruct(const PcaModel& pca, const std::vector<double>& coeffs) {
  if (coeffs.size() != pca.components.size()) throw Error(Errc::dimension_mismatch, "PCA coefficient count");
  std::vector<double> out = pca.mean;
  for (std::size_t c = 0; c < coeffs.size(); ++c) {
    for (int j = 0; j < pca.dim; ++j) out[j] += coeffs[c] * pca.components[c][j];
  }
  return out;
}

Checkpoint pca_to_checkpoint(const PcaModel& pca) {
  Checkpoint ckpt;
  ckpt.kind = "pca";
  ckpt.meta["dim"] = std::to_string(pca.dim);
  ckpt.meta["components"] = std::to_string(pca.component_count());
  ckpt.tensors.push_back({"mean", {pca.dim}, std::vector<float>(pca.mean.begin(), pca.mean.end())});
  std::vector<float> comps;
  for (const auto& c : pca.components) comps.insert(comps.end(), c.begin(), c.end());
  ckpt.tensors.push_back({"components", {pca.component_count(), pca.dim}, std::move(comps)});
  ckpt.tensors.push_back({"explained_variance",
                          {pca.component_count()},
                          std::vector<float>(pca.explained_variance.begin(), pca.explained_variance.end())});
  return ckpt;
}

PcaModel pca_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "pca") throw Error(Errc::format, "checkpoint kind '" + ckpt.kind + "' is not a PCA model");
  PcaModel pca;
  pca.dim = ckpt.meta_int("dim");
  const int p = ckpt.meta_int("components");
  const auto& mean = ckpt.tensor("mean").data;
  const auto& comps = ckpt.tensor("components").data;
  const auto& var = ckpt.tensor("explained_variance").data;
  if (mean.size() != static_cast<std::size_t>(pca.dim) ||
      comps.size() != static_cast<std::size_t>(p) * pca.dim || var.size() != static_cast<std::size_t>(p)) {
    throw Error(Errc::dimension_mismatch, "PCA checkpoint tensor sizes");
  }
  pca.mean.assign(mean.begin(), mean.end());
  for (int c = 0; c < p; ++c) {
    pca.components.emplace_back(comps.begin() + static_cast<std::ptrdiff_t>(c) * pca.dim,
                                comps.begin() + static_cast<std::ptrdiff_t>(c + 1) * pca.dim);
  }
  pca.explained_variance.assign(var.begin(), var.end());
  return pca;
}

// --- k-means -------------------------------------------------------------------

KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k, std::uint64_t seed,
                    int max_iterations) {
  const int n = static_cast<int>(points.size());
  if (k < 1) throw Error(Errc::invalid_parameter, "k must be positive");
  if (k > n) {
    throw Error(Errc::insufficient_data, "k=" + std::to_string(k) + " exceeds point count " + std::to_string(n));
  }
  for (const auto& pt : points) {
    if (pt.size() != points.front().size()) throw Error(Errc::dimension_mismatch, "k-means points differ in dimension");
  }

  Rng rng(seed);
  KMeansResult res;
  // k-means++: first center uniform, the rest proportional to squared distance.
  std::vector<int> chosen{static_cast<int>(rng.below(n))};
  std::vector<double> nearest(n);
  for (int i = 0; i < n; ++i) nearest[i] = sq_dist(points[i], points[chosen[0]]);
  while (static_cast<int>(chosen.size()) < k) {
    const double total = std::accumulate(nearest.begin(), nearest.end(), 0.0);
    int pick = -1;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      for (int i = 0; i < n; ++i) {
        if (nearest[i] <= 0.0) continue;
        pick = i;
        target -= nearest[i];
        if (target < 0.0) break;
      }
    } else {
      // Remaining points coincide with centers; take the first unused one.
      for (int i = 0; i < n && pick < 0; ++i) {
        if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) pick = i;
      }
    }
    chosen.push_back(pick);
    for (int i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], sq_dist(points[i], points[pick]));
  }
  for (int c : chosen) res.centroids.push_back(points[c]);

  res.assignment.assign(n, -1);
  const std::size_t dim = points.front().size();
  for (int iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = sq_dist(points[i], res.centroids[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (res.assignment[i] != best) changed = true;
      res.assignment[i] = best;
      inertia += best_d;
    }
    res.inertia_history.push_back(inertia);
    res.iterations = iter + 1;
    if (!changed && iter > 0) break;

    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      const int c = res.assignment[i];
      ++counts[c];
      for (std::size_t j = 0; j < dim; ++j) sums[c][j] += points[i][j];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < dim; ++j) res.centroids[c][j] = sums[c][j] / counts[c];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      // Move the empty center onto the point worst served by its own center.
      int far = 0;
      double far_d = -1.0;
      for (int i = 0; i < n; ++i) {
        if (counts[res.assignment[i]] <= 1) continue;
        const double d = sq_dist(points[i], res.centroids[res.assignment[i]]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      --counts[res.assignment[far]];
      res.centroids[c] = points[far];
      res.assignment[far] = c;
      counts[c] = 1;
    }
  }

  res.medoids.assign(k, -1);
  std::vector<double> medoid_d(k, std::numeric_limits<double>::infinity());
  for (int i = 0; i < n; ++i) {
    const int c = res.assignment[i];
    const double d = sq_dist(points[i], res.centroids[c]);
    if (d < medoid_d[c]) {
      medoid_d[c] = d;
      res.medoids[c] = i;
    }
  }
  return res;
}

FuseLibrary build_fuse_library(const std::vector<std::string>& ids, const std::vector<Lut3d>& luts,
                               int k, int pca_components, std::uint64_t seed) {
  if (ids.size() != luts.size()) throw Error(Errc::dimension_mismatch, "one id per LUT required");
  std::set<std::string> unique(ids.begin(), ids.end());
  if (unique.size() != ids.size()) throw Error(Errc::invalid_parameter, "LUT ids must be unique");
  const int p = std::min<int>(pca_components, static_cast<int>(luts.size()) - 1);
  const PcaModel pca = fit_pca(luts, p);
  std::vector<std::vector<double>> points;
  for (const auto& l : luts) points.push_back(pca_project(pca, flatten_lut(l)));
  const KMeansResult km = kmeans(points, k, seed);
  FuseLibrary lib;
  for (int m : km.medoids) lib.representative_ids.push_back(ids[m]);
  for (std::size_t i = 0; i < ids.size(); ++i) lib.assignment[ids[i]] = km.assignment[i];
  lib.inertia_history = km.inertia_history;
  lib.explained_variance = pca.explained_variance;
  return lib;
}

// --- instruction tags ----------------------------------------------------------

const std::vector<std::string>& tag_names() {
  static const std::vector<std::string> names{
      "neutral",     "warm",          "cool",        "golden_hour",   "teal_shadows", "magenta_tint",
      "green_tint",  "bright",        "dark",        "high_contrast", "low_contrast", "vibrant",
      "desaturated", "faded",         "crushed_blacks", "pastel"};
  return names;
}

int tag_index(const std::string& name) {
  const auto& names = tag_names();
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw Error(Errc::parse, "unknown condition tag '" + name + "'");
  return static_cast<int>(it - names.begin());
}

namespace {

struct ToneStats {
  std::array<double, 3> mean{};
  std::array<double, 3> shadow_mean{};
  std::array<double, 3> highlight_mean{};
  double luma_mean = 0.0;
  double luma_std = 0.0;
  double saturation = 0.0;
  double black_point = 0.0;  // mean luma of the darkest 5%
};

double luma_of(const Rgb& p) { return 0.2126 * p[0] + 0.7152 * p[1] + 0.0722 * p[2]; }

// Shadow and highlight masks come from the reference image so both sides
// average over the same pixels.
ToneStats tone_stats(const ImageBuf& img, const ImageBuf& mask_source) {
  ToneStats s;
  const std::size_t n = img.pixel_count();
  std::vector<double> lumas(n);
  std::size_t n_shadow = 0, n_high = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Rgb p = img.pixel(i);
    const double ref_luma = luma_of(mask_source.pixel(i));
    lumas[i] = luma_of(p);
    s.luma_mean += lumas[i];
    s.saturation += *std::max_element(p.begin(), p.end()) - *std::min_element(p.begin(), p.end());
    for (int c = 0; c < 3; ++c) s.mean[c] += p[c];
    if (ref_luma < 0.35) {
      ++n_shadow;
      for (int c = 0; c < 3; ++c) s.shadow_mean[c] += p[c];
    } else if (ref_luma > 0.65) {
      ++n_high;
      for (int c = 0; c < 3; ++c) s.highlight_mean[c] += p[c];
    }
  }
  const double dn = static_cast<double>(n);
  s.luma_mean /= dn;
  s.saturation /= dn;
  for (int c = 0; c < 3; ++c) {
    s.mean[c] /= dn;
    s.shadow_mean[c] = n_shadow ? s.shadow_mean[c] / n_shadow : s.mean[c];
    s.highlight_mean[c] = n_high ? s.highlight_mean[c] / n_high : s.mean[c];
  }
  double var = 0.0;
  for (double l : lumas) var += (l - s.luma_mean) * (l - s.luma_mean);
  s.luma_std = std::sqrt(var / dn);
  std::sort(lumas.begin(), lumas.end());
  const std::size_t tail = std::max<std::size_t>(1, n / 20);
  s.black_point = std::accumulate(lumas.begin(), lumas.begin() + static_cast<std::ptrdiff_t>(tail), 0.0) / tail;
  return s;
}

}  // namespace

int assign_tag(const ImageBuf& original, const ImageBuf& graded) {
  if (original.width() != graded.width() || original.height() != graded.height()) {
    throw Error(Errc::dimension_mismatch, "tagging needs equal image sizes");
  }
  if (original.pixel_count() == 0) throw Error(Errc::insufficient_data, "tagging needs a non-empty image");
  const ToneStats a = tone_stats(original, original);
  const ToneStats b = tone_stats(graded, original);
  auto delta = [](const std::array<double, 3>& x, const std::array<double, 3>& y, int c) { return y[c] - x[c]; };
  const double dr = delta(a.mean, b.mean, 0), dg = delta(a.mean, b.mean, 1), db = delta(a.mean, b.mean, 2);
  const double sr = delta(a.shadow_mean, b.shadow_mean, 0), sg = delta(a.shadow_mean, b.shadow_mean, 1),
               sb = delta(a.shadow_mean, b.shadow_mean, 2);
  const double hr = delta(a.highlight_mean, b.highlight_mean, 0), hg = delta(a.highlight_mean, b.highlight_mean, 1),
               hb = delta(a.highlight_mean, b.highlight_mean, 2);
  const double dl = b.luma_mean - a.luma_mean;
  const double contrast = a.luma_std > 1e-6 ? b.luma_std / a.luma_std : 1.0;
  const double sat = a.saturation > 1e-6 ? b.saturation / a.saturation : 1.0;
  // Black-point change beyond what a pure gain on luma would give.
  const double gain = a.luma_mean > 1e-6 ? b.luma_mean / a.luma_mean : 1.0;
  const double lift = b.black_point - a.black_point * gain;

  std::array<double, kTagCount> score{};
  score[0] = 1.0;                                              // neutral threshold
  score[1] = (dr - db) / 0.05;                                 // warm
  score[2] = (db - dr) / 0.05;                                 // cool
  score[3] = ((hr + hg) / 2 - hb - std::max(0.0, sr - sb)) / 0.05;  // golden_hour
  score[4] = ((sg + sb) / 2 - sr) / 0.04;                      // teal_shadows
  score[5] = ((dr + db) / 2 - dg) / 0.04;                      // magenta_tint
  score[6] = (dg - (dr + db) / 2) / 0.04;                      // green_tint
  score[7] = dl / 0.08;                                        // bright
  score[8] = -dl / 0.08;                                       // dark
  score[9] = (contrast - 1.0) / 0.2;                           // high_contrast
  score[10] = (1.0 - contrast) / 0.2;                          // low_contrast
  score[11] = (sat - 1.0) / 0.2;                               // vibrant
  score[12] = (1.0 - sat) / 0.25;                              // desaturated
  score[13] = lift / 0.05;                                     // faded
  score[14] = -lift / 0.03;                                    // crushed_blacks
  score[15] = std::min(score[12], score[7]) * 1.2;             // pastel
  return static_cast<int>(std::max_element(score.begin(), score.end()) - score.begin());
}

// --- tuples ------------------------------------------------------------------

const char* pair_task_name(PairTask task) {
  switch (task) {
    case PairTask::generate: return "generate";
    case PairTask::transfer: return "transfer";
    case PairTask::instruct: return "instruct";
  }
  return "generate";
}

PairTask parse_pair_task(const std::string& name) {
  if (name == "generate") return PairTask::generate;
  if (name == "transfer") return PairTask::transfer;
  if (name == "instruct") return PairTask::instruct;
  throw Error(Errc::parse, "unknown task '" + name + "' (expected generate, transfer or instruct)");
}

std::vector<DatasetTuple> build_pairs(PairTask task, const std::vector<NamedImage>& images,
                                      const std::vector<NamedLut>& luts, int count, std::uint64_t seed) {
  if (count < 0) throw Error(Errc::invalid_parameter, "tuple count must be non-negative");
  std::vector<DatasetTuple> out;
  if (count == 0) return out;
  if (images.empty() || luts.empty()) throw Error(Errc::insufficient_data, "build_pairs needs images and LUTs");
  if (task == PairTask::transfer && images.size() < 2) {
    throw Error(Errc::insufficient_data, "transfer tuples need at least 2 distinct images");
  }
  Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    DatasetTuple t;
    t.task = task;
    const std::size_t qi = rng.below(images.size());
    const std::size_t li = rng.below(luts.size());
    t.query_image_id = images[qi].id;
    t.lut_id = luts[li].id;
    t.perturbation_seed = rng.next();
    if (task == PairTask::transfer) {
      std::size_t ri = rng.below(images.size() - 1);
      if (ri >= qi) ++ri;
      t.reference_image_id = images[ri].id;
      t.condition = "reference";
    } else {
      const ImageBuf& img = images[qi].image;
      t.condition = tag_names()[assign_tag(img, apply_lut(luts[li].lut, img))];
    }
    out.push_back(std::move(t));
  }
  return out;
}

SplitIds split_ids(const std::vector<std::string>& image_ids, const std::vector<std::string>& lut_ids,
                   double eval_fraction, std::uint64_t seed, int min_per_side) {
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) {
    throw Error(Errc::invalid_parameter, "eval_fraction must be in (0,1)");
  }
  auto dedupe = [](const std::vector<std::string>& ids) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& id : ids) {
      if (seen.insert(id).second) out.push_back(id);
    }
    return out;
  };
  Rng rng(seed);
  SplitIds s;
  auto split = [&](const std::vector<std::string>& ids, std::vector<std::string>& train,
                   std::vector<std::string>& eval, const char* what) {
    std::vector<std::string> u = dedupe(ids);
    const auto n_eval = static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(u.size())));
    if (n_eval < static_cast<std::size_t>(min_per_side) || u.size() - n_eval < static_cast<std::size_t>(min_per_side)) {
      throw Error(Errc::insufficient_data, std::string("too few distinct ") + what + " (" +
                                               std::to_string(u.size()) + ") for a disjoint split");
    }
    rng.shuffle(u.begin(), u.end());
    eval.assign(u.begin(), u.begin() + static_cast<std::ptrdiff_t>(n_eval));
    train.assign(u.begin() + static_cast<std::ptrdiff_t>(n_eval), u.end());
  };
  split(image_ids, s.train_images, s.eval_images, "images");
  split(lut_ids, s.train_luts, s.eval_luts, "LUTs");
  return s;
}

std::string tuple_json(const DatasetTuple& t) {
  nlohmann::ordered_json j;
  j["task"] = pair_task_name(t.task);
  j["query_image_id"] = t.query_image_id;
  if (!t.reference_image_id.empty()) j["reference_image_id"] = t.reference_image_id;
  j["lut_id"] = t.lut_id;
  j["condition"] = t.condition;
  j["perturbation_seed"] = t.perturbation_seed;
  return j.dump();
}

DatasetTuple parse_tuple_json(const std::string& line, std::size_t line_number) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::parse, std::string("tuple is not valid JSON: ") + e.what(), line_number);
  }
  try {
    DatasetTuple t;
    t.task = parse_pair_task(j.at("task").get<std::string>());
    t.query_image_id = j.at("query_image_id").get<std::string>();
    t.reference_image_id = j.value("reference_image_id", std::string());
    t.lut_id = j.at("lut_id").get<std::string>();
    t.condition = j.at("condition").get<std::string>();
    t.perturbation_seed = j.value("perturbation_seed", std::uint64_t{0});
    if (t.task == PairTask::transfer && t.reference_image_id.empty()) {
      throw Error(Errc::format, "transfer tuple without reference_image_id", line_number);
    }
    if (t.task != PairTask::transfer) tag_index(t.condition);
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::format, std::string("tuple field error: ") + e.what(), line_number);
  } catch (const Error& e) {
    if (e.line() != 0) throw;
    throw Error(e.code(), e.message(), line_number);
  }
}

void write_tuples(const std::filesystem::path& path, const std::vector<DatasetTuple>& tuples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
  for (const auto& t : tuples) out << tuple_json(t) << '\n';
  if (!out) throw Error(Errc::io, "write failed for " + path.string());
}

std::vector<DatasetTuple> read_tuples(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  std::vector<DatasetTuple> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_tuple_json(line, n));
  }
  return out;
}

}  // namespace acetone
