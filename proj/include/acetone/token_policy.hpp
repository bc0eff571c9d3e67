#pragma once

// Conditional autoregressive model over LUT tokens.
//
// Slots: [condition, BOS, z_1 .. z_{T-1}], T+1 in total. Slot 0 is a linear
// projection of the condition vector, slot 1 the BOS embedding (index K),
// slot t+1 the embedding of token t. The output at slot t+1 predicts
// token t+1, so row t of the logits scores z_{t+1} given z_{<=t}.
// Blocks are pre-LayerNorm: x += attn(LN(x)); x += MLP(LN(x)), with a
// final LayerNorm and a zero-initialized output projection.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "acetone/autodiff.hpp"
#include "acetone/checkpoint.hpp"
#include "acetone/config.hpp"
#include "acetone/curation.hpp"
#include "acetone/lut.hpp"

namespace acetone {

// --- condition vector ---------------------------------------------------------

inline constexpr int kHistogramBins = 16;
// Per image: 3 channels x 16 bins, then mean and std per channel.
inline constexpr int kImageFeatureSize = 3 * kHistogramBins + 6;
inline constexpr int kConditionTagCount = 16;
inline constexpr int kConditionSize = 2 * kImageFeatureSize + kConditionTagCount;

struct ConditionField {
  std::string name;
  int offset;
  int length;
};

// Named offsets into the condition vector.
const std::vector<ConditionField>& condition_schema();
std::string condition_schema_json();

std::vector<double> image_features(const ImageBuf& img);

// reference may be null (its block stays zero); tag < 0 leaves the one-hot
// block zero.
std::vector<double> condition_vector(const ImageBuf& query, const ImageBuf* reference, int tag);

using ImageIndex = std::map<std::string, ImageBuf>;
using LutIndex = std::map<std::string, Lut3d>;

// A dataset tuple resolved to pixels. The policy sees condition; the
// predicted LUT is applied to query and compared against gt.
struct TupleInstance {
  ImageBuf query;
  ImageBuf gt;
  std::vector<double> condition;
};

// generate: (I, L(I), tag); instruct: (I, tag); transfer: (phi(I1),
// L(phi(I2))) with gt L(phi(I1)) and phi drawn at low intensity from the
// tuple's perturbation seed.
TupleInstance materialize_tuple(const DatasetTuple& tuple, const ImageIndex& images, const LutIndex& luts);

// --- model --------------------------------------------------------------------

struct PolicySpec {
  int vocab = 256;
  int seq_len = 64;
  int width = 128;
  int heads = 4;
  int blocks = 2;
  int condition_dim = kConditionSize;
  int mlp_ratio = 4;

  friend bool operator==(const PolicySpec&, const PolicySpec&) = default;
};

struct PolicyModel {
  PolicySpec spec;
  std::vector<ad::Parameter<double>> params;

  std::vector<ad::Parameter<double>*> parameter_ptrs();
  std::size_t parameter_count() const;
};

PolicyModel make_policy(const PolicySpec& spec, std::uint64_t seed);

// (T, K) logits for teacher-forced tokens. params are bound in order.
ad::Var policy_logits(ad::Graph<double>& g, const std::vector<ad::Var>& params,
                      const PolicySpec& spec, const std::vector<double>& condition,
                      const std::vector<int>& tokens);
std::vector<ad::Var> bind_policy(ad::Graph<double>& g, PolicyModel& policy, bool trainable);

// Full (T, K) log-probability table.
ad::Tensor<double> position_log_probs(PolicyModel& policy, const std::vector<double>& condition,
                                      const std::vector<int>& tokens);

// log p(z_t | z_<t, condition) for each t.
std::vector<double> log_probs(PolicyModel& policy, const std::vector<double>& condition,
                              const std::vector<int>& tokens);

struct PolicySample {
  std::vector<int> tokens;
  // Temperature-1 log-probabilities of the drawn tokens.
  std::vector<double> log_probs;
};

// Ancestral sampling with a key/value cache. greedy takes the argmax
// (lowest index on ties) and ignores temperature and seed.
PolicySample sample(PolicyModel& policy, const std::vector<double>& condition, double temperature,
                    std::uint64_t seed, bool greedy = false);

std::vector<int> greedy_tokens(PolicyModel& policy, const std::vector<double>& condition);

// --- likelihood training --------------------------------------------------------

struct NllExample {
  std::vector<double> condition;
  std::vector<int> tokens;
};

struct PolicyTrainConfig {
  int steps = 200;
  int batch_size = 8;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  static PolicyTrainConfig from_config(const KeyValueConfig& config, PolicySpec* spec = nullptr);
};

struct NllLogEntry {
  int step = 0;
  double nll = 0.0;  // mean per token over the batch
};

std::string nll_log_json(const NllLogEntry& entry);

// Mean per-token NLL over the examples (no gradient).
double mean_token_nll(PolicyModel& policy, const std::vector<NllExample>& examples);

// Adam on the mean per-token NLL; batches are drawn by cycling through a
// seeded shuffle of the examples.
std::vector<NllLogEntry> train_nll(PolicyModel& policy, const std::vector<NllExample>& examples,
                                   const PolicyTrainConfig& config,
                                   const std::function<void(const NllLogEntry&)>& on_step = {});

Checkpoint policy_to_checkpoint(const PolicyModel& policy);
PolicyModel policy_from_checkpoint(const Checkpoint& ckpt);

}  // namespace acetone
