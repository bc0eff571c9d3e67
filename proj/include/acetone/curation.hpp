#pragma once

// LUT library fusion (PCA then k-means with medoid representatives),
// instruction tags and train/eval dataset tuples.

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "acetone/checkpoint.hpp"
#include "acetone/lut.hpp"

namespace acetone {

struct PcaModel {
  int dim = 0;
  std::vector<double> mean;                // dim
  std::vector<std::vector<double>> components;  // p unit vectors of length dim
  std::vector<double> explained_variance;  // p values, non-increasing (divisor n-1)

  int component_count() const noexcept { return static_cast<int>(components.size()); }
};

// Flattened LUT data as doubles, [b][g][r][channel].
std::vector<double> flatten_lut(const Lut3d& lut);

// Eigendecomposition of the n x n Gram matrix of the centered data.
// Requires all LUTs at one resolution, n >= 2 and 1 <= p <= n-1.
PcaModel fit_pca(const std::vector<Lut3d>& luts, int p);

std::vector<double> pca_project(const PcaModel& pca, const std::vector<double>& x);
std::vector<double> pca_reconstruct(const PcaModel& pca, const std::vector<double>& coeffs);

Checkpoint pca_to_checkpoint(const PcaModel& pca);
PcaModel pca_from_checkpoint(const Checkpoint& ckpt);

struct KMeansResult {
  std::vector<int> assignment;                // per point
  std::vector<std::vector<double>> centroids;  // k
  std::vector<int> medoids;                   // per cluster, index of the member nearest its centroid
  std::vector<double> inertia_history;        // after each assignment step
  int iterations = 0;

  double inertia() const { return inertia_history.empty() ? 0.0 : inertia_history.back(); }
};

// k-means++ seeding, then Lloyd iterations until the assignment stops
// changing or max_iterations is reached. An emptied cluster is reseeded
// with the point farthest from its current centroid.
KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k, std::uint64_t seed,
                    int max_iterations = 200);

struct FuseLibrary {
  std::vector<std::string> representative_ids;  // one medoid per cluster
  std::map<std::string, int> assignment;
  std::vector<double> inertia_history;
  std::vector<double> explained_variance;
};

FuseLibrary build_fuse_library(const std::vector<std::string>& ids, const std::vector<Lut3d>& luts,
                               int k, int pca_components, std::uint64_t seed);

// Fixed instruction taxonomy; index order is the one-hot order.
inline constexpr int kTagCount = 16;
const std::vector<std::string>& tag_names();
int tag_index(const std::string& name);

// Picks the tag that best describes how graded differs from original.
int assign_tag(const ImageBuf& original, const ImageBuf& graded);

enum class PairTask { generate, transfer, instruct };
const char* pair_task_name(PairTask task);
PairTask parse_pair_task(const std::string& name);

struct DatasetTuple {
  PairTask task = PairTask::generate;
  std::string query_image_id;
  std::string reference_image_id;  // transfer only
  std::string lut_id;
  std::string condition;  // a tag name, or "reference" for transfer
  std::uint64_t perturbation_seed = 0;

  friend bool operator==(const DatasetTuple&, const DatasetTuple&) = default;
};

struct NamedImage {
  std::string id;
  ImageBuf image;
};

struct NamedLut {
  std::string id;
  Lut3d lut;
};

// Samples count tuples: generate and instruct pair one image with one LUT
// and tag L(I) against I; transfer draws two distinct images and a
// perturbation seed. Deterministic per seed.
std::vector<DatasetTuple> build_pairs(PairTask task, const std::vector<NamedImage>& images,
                                      const std::vector<NamedLut>& luts, int count,
                                      std::uint64_t seed);

struct SplitIds {
  std::vector<std::string> train_images, eval_images;
  std::vector<std::string> train_luts, eval_luts;
};

// Seeded shuffle, then the first eval_fraction of each id list goes to
// eval. Both sides must keep at least min_per_side images and LUTs.
SplitIds split_ids(const std::vector<std::string>& image_ids,
                   const std::vector<std::string>& lut_ids, double eval_fraction,
                   std::uint64_t seed, int min_per_side = 1);

std::string tuple_json(const DatasetTuple& t);
DatasetTuple parse_tuple_json(const std::string& line, std::size_t line_number = 0);
void write_tuples(const std::filesystem::path& path, const std::vector<DatasetTuple>& tuples);
std::vector<DatasetTuple> read_tuples(const std::filesystem::path& path);

}  // namespace acetone
