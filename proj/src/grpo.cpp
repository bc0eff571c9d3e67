#include "acetone/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <nlohmann/json.hpp>

#include "acetone/error.hpp"
#include "acetone/random.hpp"

namespace acetone {

void GrpoConfig::validate() const {
  if (group_size < 2) throw Error(Errc::invalid_parameter, "group size must be at least 2");
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) {
    throw Error(Errc::invalid_parameter, "clip epsilon must lie in (0,1)");
  }
  if (!(kl_beta >= 0.0)) throw Error(Errc::invalid_parameter, "kl beta must be non-negative");
  if (!(learning_rate > 0.0)) throw Error(Errc::invalid_parameter, "learning rate must be positive");
  if (steps < 0) throw Error(Errc::invalid_parameter, "steps must be non-negative");
  if (!(temperature > 0.0)) throw Error(Errc::invalid_parameter, "temperature must be positive");
}

GrpoConfig GrpoConfig::from_config(const KeyValueConfig& config) {
  GrpoConfig c;
  ConfigReader r(config);
  r.read("group_size", c.group_size, 2, 4096);
  r.read("clip_epsilon", c.clip_epsilon, 1e-9, 1.0 - 1e-9);
  r.read("kl_beta", c.kl_beta, 0.0, 1e6);
  r.read("learning_rate", c.learning_rate, 1e-12, 1.0);
  r.read("steps", c.steps, 0, 10000000);
  r.read("std_floor", c.std_floor, 0.0, 1.0);
  r.read("temperature", c.temperature, 1e-6, 100.0);
  r.read("kl_ceiling", c.kl_ceiling, 0.0, 1e9);
  r.read("max_log_ratio", c.max_log_ratio, 1e-6, 1e3);
  r.read("reward_weight_color", c.reward_weights.color, 0.0, 1e6);
  r.read("reward_weight_aesthetic", c.reward_weights.aesthetic, 0.0, 1e6);
  r.read("checkpoint_every", c.checkpoint_every, 0, 10000000);
  r.read("seed", c.seed);
  r.finish();
  return c;
}

std::vector<double> RolloutBatch::totals() const {
  std::vector<double> out;
  out.reserve(rewards.size());
  for (const auto& r : rewards) out.push_back(r.total);
  return out;
}

std::vector<double> advantages(const std::vector<double>& rewards, double std_floor) {
  if (rewards.size() < 2) throw Error(Errc::invalid_parameter, "advantages need a group of at least 2");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> a(rewards.size(), 0.0);
  if (!(sd >= std_floor) || sd == 0.0) return a;
  for (std::size_t i = 0; i < rewards.size(); ++i) a[i] = (rewards[i] - mean) / sd;
  return a;
}

RolloutBatch rollout(PolicyModel& policy, PolicyModel& ref_policy, const GrpoPrompt& prompt,
                     int group_size, std::uint64_t seed, double temperature) {
  if (group_size < 2) throw Error(Errc::invalid_parameter, "group size must be at least 2");
  if (!prompt.reward) throw Error(Errc::invalid_parameter, "prompt '" + prompt.id + "' has no reward");
  RolloutBatch b;
  b.prompt_id = prompt.id;
  b.condition = prompt.condition;
  for (int i = 0; i < group_size; ++i) {
    const PolicySample s = sample(policy, prompt.condition, temperature, mix_seed(seed, i));
    b.old_log_probs.push_back(log_probs(policy, prompt.condition, s.tokens));
    b.ref_log_probs.push_back(log_probs(ref_policy, prompt.condition, s.tokens));
    RewardValue r = prompt.reward(s.tokens);
    if (!std::isfinite(r.total)) {
      throw Error(Errc::non_finite, "non-finite reward for rollout " + std::to_string(i) + " of '" + prompt.id + "'");
    }
    b.rewards.push_back(r);
    b.sequences.push_back(s.tokens);
    b.lut_ids.push_back(prompt.id + "/" + std::to_string(i));
  }
  return b;
}

GrpoStepResult grpo_step(PolicyModel& policy, PolicyModel& ref_policy, const RolloutBatch& batch,
                         const GrpoConfig& config, ad::Adam<double>* adam) {
  const int g_size = batch.group_size();
  if (g_size < 2) throw Error(Errc::invalid_parameter, "rollout batch needs at least 2 sequences");
  const int t_len = policy.spec.seq_len, k = policy.spec.vocab;
  const std::vector<double> adv = advantages(batch.totals(), config.std_floor);
  const double norm = 1.0 / (static_cast<double>(g_size) * t_len);
  const double lo = 1.0 - config.clip_epsilon, hi = 1.0 + config.clip_epsilon;

  struct Pass {
    std::unique_ptr<ad::Graph<double>> graph;
    ad::Var lp;
  };
  std::vector<Pass> passes;
  GrpoStepResult res;
  for (int i = 0; i < g_size; ++i) {
    auto graph = std::make_unique<ad::Graph<double>>();
    const auto params = bind_policy(*graph, policy, adam != nullptr);
    const ad::Var lp =
        graph->log_softmax(policy_logits(*graph, params, policy.spec, batch.condition, batch.sequences[i]));
    const auto& table = graph->value(lp).data;
    for (int t = 0; t < t_len; ++t) {
      const double gap = std::abs(table[t * k + batch.sequences[i][t]] - batch.old_log_probs[i][t]);
      if (!(gap <= config.max_log_ratio)) {
        res.rejected = true;
        res.max_log_ratio = gap;
        res.diagnostic = "log-ratio " + std::to_string(gap) + " at rollout " + std::to_string(i) +
                         " position " + std::to_string(t) + " exceeds " + std::to_string(config.max_log_ratio);
        return res;
      }
      res.max_log_ratio = std::max(res.max_log_ratio, gap);
    }
    passes.push_back({std::move(graph), lp});
  }

  if (adam) adam->zero_grad();
  for (int i = 0; i < g_size; ++i) {
    const auto& lp = passes[i].graph->value(passes[i].lp).data;
    const ad::Tensor<double> ref = position_log_probs(ref_policy, batch.condition, batch.sequences[i]);
    // Seed holds -d(objective)/d(log p) so that descent ascends the objective.
    ad::Tensor<double> seed(passes[i].graph->value(passes[i].lp).shape);
    for (int t = 0; t < t_len; ++t) {
      const int z = batch.sequences[i][t];
      const double rho = std::exp(lp[t * k + z] - batch.old_log_probs[i][t]);
      const double unclipped = rho * adv[i];
      const double clipped = std::clamp(rho, lo, hi) * adv[i];
      res.surrogate += std::min(unclipped, clipped);
      if (unclipped <= clipped) seed.data[t * k + z] -= norm * unclipped;

      double kl = 0.0;
      for (int c = 0; c < k; ++c) {
        const double diff = lp[t * k + c] - ref.data[t * k + c];
        const double p = std::exp(lp[t * k + c]);
        kl += p * diff;
        seed.data[t * k + c] += norm * config.kl_beta * p * (diff + 1.0);
      }
      res.kl += kl;
    }
    if (adam) passes[i].graph->backward(passes[i].lp, seed);
  }
  res.surrogate *= norm;
  res.kl *= norm;
  res.total = res.surrogate - config.kl_beta * res.kl;
  if (!std::isfinite(res.total)) throw Error(Errc::non_finite, "non-finite objective");
  if (adam) adam->step();
  return res;
}

std::string grpo_log_json(const GrpoLogEntry& e) {
  nlohmann::ordered_json j;
  j["step"] = e.step;
  j["prompt"] = e.prompt_id;
  j["mean_reward"] = e.mean_reward;
  j["mean_delta_e"] = e.mean_delta_e;
  j["mean_aes"] = e.mean_aes;
  j["kl"] = e.kl;
  j["surrogate"] = e.surrogate;
  if (e.rejected) j["rejected"] = true;
  return j.dump();
}

std::vector<GrpoLogEntry> train_grpo(PolicyModel& policy, PolicyModel& ref_policy,
                                     const std::vector<GrpoPrompt>& prompts, const GrpoConfig& config,
                                     const GrpoCallbacks& callbacks) {
  config.validate();
  if (prompts.empty()) throw Error(Errc::insufficient_data, "GRPO needs at least one prompt");
  if (!(policy.spec == ref_policy.spec)) throw Error(Errc::dimension_mismatch, "policy and reference specs differ");
  ad::Adam<double> adam(policy.parameter_ptrs(), {.lr = config.learning_rate});
  Rng rng(config.seed);
  std::vector<std::size_t> order(prompts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();

  std::vector<GrpoLogEntry> log;
  for (int step = 1; step <= config.steps; ++step) {
    if (cursor == order.size()) {
      rng.shuffle(order.begin(), order.end());
      cursor = 0;
    }
    const GrpoPrompt& prompt = prompts[order[cursor++]];
    const RolloutBatch batch = rollout(policy, ref_policy, prompt, config.group_size,
                                       mix_seed(config.seed, static_cast<std::uint64_t>(step)), config.temperature);
    const GrpoStepResult r = grpo_step(policy, ref_policy, batch, config, &adam);

    GrpoLogEntry e;
    e.step = step;
    e.prompt_id = prompt.id;
    for (const auto& rv : batch.rewards) {
      e.mean_reward += rv.total;
      e.mean_delta_e += rv.mean_delta_e;
      e.mean_aes += rv.aesthetic;
    }
    const double g = static_cast<double>(batch.group_size());
    e.mean_reward /= g;
    e.mean_delta_e /= g;
    e.mean_aes /= g;
    e.kl = r.kl;
    e.surrogate = r.surrogate;
    e.rejected = r.rejected;
    if (!r.rejected && !(r.kl <= config.kl_ceiling)) {
      throw Error(Errc::non_finite, "KL " + std::to_string(r.kl) + " exceeds ceiling " +
                                        std::to_string(config.kl_ceiling) + " at step " + std::to_string(step));
    }
    log.push_back(e);
    if (callbacks.on_step) callbacks.on_step(e);
    if (callbacks.on_checkpoint && config.checkpoint_every > 0 && step % config.checkpoint_every == 0) {
      callbacks.on_checkpoint(step);
    }
  }
  return log;
}

SequenceReward image_reward(TokenizerModel& tokenizer, ImageBuf query, ImageBuf gt,
                            const AestheticScorer& scorer, RewardWeights weights) {
  return [&tokenizer, query = std::move(query), gt = std::move(gt), &scorer,
          weights](const std::vector<int>& tokens) {
    const Lut3d lut = detokenize(tokenizer, tokens);
    return composite_reward(apply_lut(lut, query), gt, scorer, weights);
  };
}

SequenceReward planted_reward(std::vector<int> target) {
  return [target = std::move(target)](const std::vector<int>& tokens) {
    if (tokens.size() != target.size()) throw Error(Errc::dimension_mismatch, "planted target length");
    int matches = 0;
    for (std::size_t i = 0; i < target.size(); ++i) matches += tokens[i] == target[i];
    RewardValue r;
    r.color = matches == static_cast<int>(target.size())
                  ? 2.0
                  : 0.1 * matches / static_cast<double>(target.size());
    r.total = r.color;
    return r;
  };
}

}  // namespace acetone
