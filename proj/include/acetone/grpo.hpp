#pragma once

// Group-relative policy optimization over LUT token sequences.
//
// Per step: sample G sequences for one prompt, reward each, normalize the
// rewards within the group, then take one Adam step on
//   mean_{i,t} min(rho * A_i, clip(rho, 1-eps, 1+eps) * A_i) - beta * KL_t
// where rho = p_theta(z_t) / p_old(z_t) and KL_t is the exact categorical
// divergence KL(p_theta || p_ref) at position t.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "acetone/color.hpp"
#include "acetone/config.hpp"
#include "acetone/token_policy.hpp"
#include "acetone/tokenizer.hpp"

namespace acetone {

struct GrpoConfig {
  int group_size = 8;
  double clip_epsilon = 0.2;
  double kl_beta = 0.02;
  double learning_rate = 1e-4;
  int steps = 200;
  double std_floor = 1e-6;
  double temperature = 1.0;
  // Steps whose mean KL exceeds this are reported as failures.
  double kl_ceiling = 10.0;
  // Largest tolerated |log p_theta - log p_old| before a batch is rejected.
  double max_log_ratio = 30.0;
  RewardWeights reward_weights;
  int checkpoint_every = 0;
  std::uint64_t seed = 0;

  void validate() const;
  static GrpoConfig from_config(const KeyValueConfig& config);
};

// Maps a token sequence to its reward components.
using SequenceReward = std::function<RewardValue(const std::vector<int>& tokens)>;

struct GrpoPrompt {
  std::string id;
  std::vector<double> condition;
  SequenceReward reward;
};

struct RolloutBatch {
  std::string prompt_id;
  std::vector<double> condition;
  std::vector<std::vector<int>> sequences;
  std::vector<std::vector<double>> old_log_probs;
  std::vector<std::vector<double>> ref_log_probs;
  std::vector<RewardValue> rewards;
  // "<prompt id>/<index>" per sequence.
  std::vector<std::string> lut_ids;

  int group_size() const noexcept { return static_cast<int>(sequences.size()); }
  std::vector<double> totals() const;
};

// (r - mean) / std with the population std; all zero when std < std_floor.
std::vector<double> advantages(const std::vector<double>& rewards, double std_floor);

// Samples G sequences (seeds derived from seed and the index), rescoring
// each with the tape path so the first-step ratios are exactly 1.
RolloutBatch rollout(PolicyModel& policy, PolicyModel& ref_policy, const GrpoPrompt& prompt,
                     int group_size, std::uint64_t seed, double temperature);

struct GrpoStepResult {
  double surrogate = 0.0;
  double kl = 0.0;
  double total = 0.0;  // surrogate - beta * kl
  double max_log_ratio = 0.0;
  bool rejected = false;
  std::string diagnostic;
};

// Evaluates the objective and, when adam is given, ascends it by one step.
// A batch whose log-ratio exceeds config.max_log_ratio is rejected without
// touching the parameters.
GrpoStepResult grpo_step(PolicyModel& policy, PolicyModel& ref_policy, const RolloutBatch& batch,
                         const GrpoConfig& config, ad::Adam<double>* adam);

struct GrpoLogEntry {
  int step = 0;
  std::string prompt_id;
  double mean_reward = 0.0;
  double mean_delta_e = 0.0;
  double mean_aes = 0.0;
  double kl = 0.0;
  double surrogate = 0.0;
  bool rejected = false;
};

std::string grpo_log_json(const GrpoLogEntry& entry);

struct GrpoCallbacks {
  std::function<void(const GrpoLogEntry&)> on_step;
  std::function<void(int step)> on_checkpoint;
};

// Cycles prompts in a seeded order. ref_policy stays frozen.
std::vector<GrpoLogEntry> train_grpo(PolicyModel& policy, PolicyModel& ref_policy,
                                     const std::vector<GrpoPrompt>& prompts,
                                     const GrpoConfig& config, const GrpoCallbacks& callbacks = {});

// Decodes tokens, applies the LUT to query and scores it against gt.
SequenceReward image_reward(TokenizerModel& tokenizer, ImageBuf query, ImageBuf gt,
                            const AestheticScorer& scorer, RewardWeights weights = {});

// 2 for the exact target, otherwise 0.1 * (matching positions) / T.
SequenceReward planted_reward(std::vector<int> target);

}  // namespace acetone
