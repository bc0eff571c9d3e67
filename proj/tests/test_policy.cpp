#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "acetone/checkpoint.hpp"
#include "acetone/error.hpp"
#include "acetone/random.hpp"
#include "acetone/synth.hpp"
#include "acetone/token_policy.hpp"
#include "doctest.h"
#include "grad_check.hpp"

using namespace acetone;
using namespace acetone::ad;

namespace {

PolicySpec small_spec(int vocab = 16, int seq_len = 8) {
  PolicySpec s;
  s.vocab = vocab;
  s.seq_len = seq_len;
  s.width = 16;
  s.heads = 2;
  s.blocks = 2;
  s.condition_dim = 6;
  s.mlp_ratio = 2;
  return s;
}

// Replaces every parameter, including the zero-initialized ones, with
// seeded noise so outputs depend on all of them.
void randomize(PolicyModel& m, std::uint64_t seed, double scale = 0.5) {
  for (std::size_t i = 0; i < m.params.size(); ++i) uniform_init(m.params[i].value, scale, seed * 1000 + i);
}

std::vector<double> random_condition(int dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> c(dim);
  for (auto& v : c) v = rng.uniform(-1, 1);
  return c;
}

std::vector<int> random_tokens(int n, int vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> t(n);
  for (auto& v : t) v = static_cast<int>(rng.below(vocab));
  return t;
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

TEST_CASE("condition vector layout") {
  CHECK(kConditionSize == 124);
  const ImageBuf img = synthetic_image(1, 20, 20);
  const auto f = image_features(img);
  REQUIRE(f.size() == static_cast<std::size_t>(kImageFeatureSize));
  for (int c = 0; c < 3; ++c) {
    double mass = 0.0;
    for (int b = 0; b < kHistogramBins; ++b) mass += f[c * kHistogramBins + b];
    CHECK(mass == doctest::Approx(1.0));
  }
  const auto v = condition_vector(img, nullptr, 3);
  REQUIRE(v.size() == static_cast<std::size_t>(kConditionSize));
  for (int i = kImageFeatureSize; i < 2 * kImageFeatureSize; ++i) CHECK(v[i] == 0.0);
  for (int t = 0; t < kConditionTagCount; ++t) CHECK(v[2 * kImageFeatureSize + t] == (t == 3 ? 1.0 : 0.0));
  int covered = 0;
  for (const auto& field : condition_schema()) covered += field.length;
  CHECK(covered == kConditionSize);
  CHECK(condition_schema_json().find("\"offset\"") != std::string::npos);
}

TEST_CASE("a fresh policy is uniform over the vocabulary") {
  PolicyModel m = make_policy(PolicySpec{}, 1);
  const auto lp = log_probs(m, random_condition(kConditionSize, 2), random_tokens(64, 256, 3));
  REQUIRE(lp.size() == 64);
  for (double v : lp) CHECK(v == doctest::Approx(-std::log(256.0)).epsilon(1e-12));
}

TEST_CASE("every position is a normalized distribution") {
  PolicyModel m = make_policy(small_spec(), 4);
  randomize(m, 5);
  const Tensor<double> table = position_log_probs(m, random_condition(6, 6), random_tokens(8, 16, 7));
  REQUIRE(table.shape == Shape{8, 16});
  for (int t = 0; t < 8; ++t) {
    double mass = 0.0;
    for (int k = 0; k < 16; ++k) mass += std::exp(table.data[t * 16 + k]);
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("later tokens never influence earlier positions") {
  PolicyModel m = make_policy(small_spec(), 8);
  randomize(m, 9);
  const auto cond = random_condition(6, 10);
  const auto base = random_tokens(8, 16, 11);
  const Tensor<double> ref = position_log_probs(m, cond, base);
  for (int changed = 0; changed < 8; ++changed) {
    auto tokens = base;
    tokens[changed] = (tokens[changed] + 5) % 16;
    const Tensor<double> t = position_log_probs(m, cond, tokens);
    // Row r scores z_r given z_<r, so rows 0..changed are unaffected.
    for (int r = 0; r <= changed; ++r)
      for (int k = 0; k < 16; ++k) CHECK(t.data[r * 16 + k] == doctest::Approx(ref.data[r * 16 + k]).epsilon(1e-12));
    bool any = false;
    for (int r = changed + 1; r < 8; ++r)
      for (int k = 0; k < 16; ++k) any = any || std::abs(t.data[r * 16 + k] - ref.data[r * 16 + k]) > 1e-9;
    if (changed < 7) CHECK(any);
  }
}

TEST_CASE("cached sampling log-probs match the teacher-forced pass") {
  PolicyModel m = make_policy(small_spec(), 12);
  randomize(m, 13);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto cond = random_condition(6, 100 + s);
    const PolicySample draw = sample(m, cond, 1.0, s);
    const auto lp = log_probs(m, cond, draw.tokens);
    REQUIRE(lp.size() == draw.log_probs.size());
    for (std::size_t t = 0; t < lp.size(); ++t) CHECK(draw.log_probs[t] == doctest::Approx(lp[t]).epsilon(1e-10));
  }
}

TEST_CASE("policy gradients match finite differences") {
  PolicyModel m = make_policy(small_spec(6, 5), 14);
  randomize(m, 15, 0.3);
  const auto cond = random_condition(6, 16);
  const auto tokens = random_tokens(5, 6, 17);
  const PolicySpec spec = m.spec;
  const double err = max_relative_grad_error(m.params, [&](Graph<double>& g, const std::vector<Var>& vars) {
    return g.nll(g.log_softmax(policy_logits(g, vars, spec, cond, tokens)), tokens);
  });
  CHECK(err < 1e-5);
}

TEST_CASE("sampling is seeded and greedy follows the argmax") {
  PolicyModel m = make_policy(small_spec(), 18);
  randomize(m, 19);
  const auto cond = random_condition(6, 20);
  CHECK(sample(m, cond, 1.0, 7).tokens == sample(m, cond, 1.0, 7).tokens);
  bool differs = false;
  for (std::uint64_t s = 8; s < 16 && !differs; ++s) differs = sample(m, cond, 1.0, s).tokens != sample(m, cond, 1.0, 7).tokens;
  CHECK(differs);

  const auto g = greedy_tokens(m, cond);
  CHECK(sample(m, cond, 0.3, 99, true).tokens == g);
  const Tensor<double> table = position_log_probs(m, cond, g);
  for (int t = 0; t < 8; ++t) {
    const double* row = table.data.data() + t * 16;
    CHECK(std::max_element(row, row + 16) - row == g[t]);
  }
  CHECK(error_code([&] { sample(m, cond, 0.0, 1); }) == Errc::invalid_parameter);
  CHECK(error_code([&] { sample(m, {1.0}, 1.0, 1); }) == Errc::dimension_mismatch);
}

TEST_CASE("sample frequencies follow the model distribution") {
  PolicyModel m = make_policy(small_spec(4, 2), 21);
  randomize(m, 22, 1.0);
  const auto cond = random_condition(6, 23);
  const Tensor<double> table = position_log_probs(m, cond, {0, 0});
  for (double temperature : {1.0, 0.5}) {
    std::vector<double> p(4);
    double z = 0.0;
    for (int k = 0; k < 4; ++k) z += p[k] = std::exp(table.data[k] / temperature);
    for (auto& v : p) v /= z;
    const int n = 20000;
    std::vector<int> counts(4, 0);
    for (int i = 0; i < n; ++i) ++counts[sample(m, cond, temperature, 1000 + i).tokens[0]];
    for (int k = 0; k < 4; ++k) {
      const double sigma = std::sqrt(p[k] * (1 - p[k]) / n);
      CHECK(std::abs(counts[k] / double(n) - p[k]) < 5 * sigma + 1e-9);
    }
  }
}

TEST_CASE("likelihood training memorizes a single example") {
  PolicyModel m = make_policy(small_spec(), 24);
  const std::vector<NllExample> data{{random_condition(6, 25), random_tokens(8, 16, 26)}};
  CHECK(mean_token_nll(m, data) == doctest::Approx(std::log(16.0)));
  PolicyTrainConfig cfg;
  cfg.steps = 150;
  cfg.batch_size = 1;
  cfg.learning_rate = 1e-2;
  cfg.seed = 27;
  const auto log = train_nll(m, data, cfg);
  REQUIRE(log.size() == 150);
  CHECK(log.back().nll < 0.1);
  CHECK(mean_token_nll(m, data) < 0.1);
  CHECK(greedy_tokens(m, data[0].condition) == data[0].tokens);
  CHECK(nll_log_json(log.back()).find("\"nll\"") != std::string::npos);
}

TEST_CASE("policy checkpoint round trip") {
  PolicyModel m = make_policy(small_spec(), 28);
  randomize(m, 29);
  const PolicyModel back = policy_from_checkpoint(deserialize_checkpoint(serialize_checkpoint(policy_to_checkpoint(m)), "policy"));
  CHECK(back.spec == m.spec);
  REQUIRE(back.params.size() == m.params.size());
  PolicyModel copy = back;
  const auto cond = random_condition(6, 30);
  const auto tokens = random_tokens(8, 16, 31);
  const auto a = log_probs(m, cond, tokens), b = log_probs(copy, cond, tokens);
  // Checkpoints hold float32 values.
  for (std::size_t t = 0; t < a.size(); ++t) CHECK(b[t] == doctest::Approx(a[t]).epsilon(1e-5));
  CHECK(m.parameter_count() == back.parameter_count());
}
