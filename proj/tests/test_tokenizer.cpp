#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "acetone/checkpoint.hpp"
#include "acetone/error.hpp"
#include "acetone/lut.hpp"
#include "acetone/random.hpp"
#include "acetone/synth.hpp"
#include "acetone/tokenizer.hpp"
#include "doctest.h"

using namespace acetone;
using namespace acetone::ad;

namespace {

TokenizerSpec tiny_spec() {
  TokenizerSpec s;
  s.latent_dim = 2;
  s.codebook_size = 4;
  s.width1 = 2;
  s.width2 = 2;
  s.width3 = 2;
  return s;
}

// (3, 32, 32, 32) with axes (channel, b, g, r).
Tensor<double> lut_values(const Lut3d& lut) {
  const int n = lut.resolution();
  Tensor<double> t({3, n, n, n});
  for (int b = 0; b < n; ++b)
    for (int g = 0; g < n; ++g)
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < 3; ++c) t.data[((static_cast<std::size_t>(c) * n + b) * n + g) * n + r] = lut.at(r, g, b)[c];
  return t;
}

// Brute-force nearest entry, lowest index on ties.
int nearest(const Codebook& cb, const std::vector<double>& v) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < cb.size; ++k) {
    double d = 0.0;
    for (int j = 0; j < cb.dim; ++j) {
      const double x = v[j] - cb.entry(k)[j];
      d += x * x;
    }
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
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

TEST_CASE("default tokenizer shape and parameter count") {
  const TokenizerModel m = make_tokenizer(TokenizerSpec{}, 0);
  CHECK(m.net.parameter_count() == 1339907);
  CHECK(m.codebook.size == 256);
  CHECK(m.codebook.dim == 64);
  TokenizerModel copy = m;
  const std::vector<int> tokens = tokenize(copy, synthetic_grade_lut(1, 32));
  CHECK(tokens.size() == 64);
  for (int t : tokens) {
    CHECK(t >= 0);
    CHECK(t < 256);
  }
}

TEST_CASE("straight-through gradients match finite differences of the frozen-code surrogate") {
  // With the codes q0 frozen at the current point, the loss
  // MSE(dec(e + (q0 - e0)), L) + w MSE(e, q0) is smooth, and its gradient
  // equals the straight-through gradient at e = e0.
  TokenizerNet<double> net = make_tokenizer_net<double>(tiny_spec(), 3);
  Codebook cb(4, 2);
  Rng rng(4);
  std::vector<float> entries(8);
  for (auto& v : entries) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  cb.set_entries(entries);
  const Lut3d lut = synthetic_grade_lut(5, 32);
  const Tensor<double> target = lut_values(lut);

  for (auto& p : net.params) p.zero_grad();
  tokenizer_loss(net, cb, lut, kCommitWeight, 1.0);
  std::vector<Tensor<double>> analytic;
  for (auto& p : net.params) analytic.push_back(p.grad);

  Tensor<double> e0, q0;
  {
    Graph<double> g;
    const auto p = bind_params(g, net, false);
    e0 = g.value(encoder_graph(g, p, g.constant(lut_offset_tensor<double>(lut))));
    q0 = quantize(cb, e0).latent;
  }
  Tensor<double> shift = q0;
  for (std::size_t i = 0; i < shift.numel(); ++i) shift.data[i] -= e0.data[i];

  auto surrogate = [&] {
    Graph<double> g;
    const auto p = bind_params(g, net, false);
    Var e = encoder_graph(g, p, g.constant(lut_offset_tensor<double>(lut)));
    Var recon = decoder_graph(g, p, g.add(e, g.constant(shift)));
    Var total = g.add(g.mse(recon, target), g.scale(g.mse(e, q0), kCommitWeight));
    return g.value(total).data[0];
  };

  const double h = 1e-5;
  double worst = 0.0;
  int checked = 0;
  for (std::size_t pi = 0; pi < net.params.size(); ++pi) {
    auto& v = net.params[pi].value.data;
    for (std::size_t i = 0; i < v.size(); i += 7) {
      const double saved = v[i];
      v[i] = saved + h;
      const double up = surrogate();
      v[i] = saved - h;
      const double down = surrogate();
      v[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[pi].data[i];
      const double rel = std::abs(a - numeric) / std::max(1e-6, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, rel);
      ++checked;
    }
  }
  CHECK(checked > 100);
  // Output biases touch lattice corners sitting on the clamp boundary.
  CHECK(worst < 1e-3);
}

TEST_CASE("quantize agrees with brute-force nearest neighbour") {
  Codebook cb(256, 64);
  Rng rng(6);
  std::vector<float> entries(256 * 64);
  for (auto& v : entries) v = static_cast<float>(rng.normal());
  cb.set_entries(entries);
  int mismatches = 0;
  for (int trial = 0; trial < 157; ++trial) {  // 157 * 64 > 1e4 latents
    Tensor<double> latent({64, 4, 4, 4});
    for (auto& v : latent.data) v = rng.normal();
    const Quantized<double> q = quantize(cb, latent);
    for (int pos = 0; pos < 64; ++pos) {
      std::vector<double> v(64);
      for (int j = 0; j < 64; ++j) v[j] = latent.data[static_cast<std::size_t>(j) * 64 + pos];
      const int k = nearest(cb, v);
      if (q.tokens[pos] != k) ++mismatches;
      for (int j = 0; j < 64; ++j) CHECK(q.latent.data[static_cast<std::size_t>(j) * 64 + pos] == cb.entry(k)[j]);
    }
  }
  CHECK(mismatches == 0);
}

TEST_CASE("quantize with two entries picks the closer one and breaks ties low") {
  Codebook cb(2, 1);
  cb.set_entries({0.0f, 1.0f});
  Tensor<float> latent({1, 4, 4, 4}, 0.0f);
  latent.data[0] = 0.9f;
  latent.data[1] = 0.5f;
  latent.data[2] = 0.1f;
  latent.data[3] = -3.0f;
  const auto q = quantize(cb, latent);
  CHECK(q.tokens[0] == 1);
  CHECK(q.tokens[1] == 0);
  CHECK(q.tokens[2] == 0);
  CHECK(q.tokens[3] == 0);
  CHECK(q.latent.data[0] == 1.0f);
  CHECK(error_code([&] { quantize(cb, Tensor<float>({2, 4, 4, 4})); }) == Errc::dimension_mismatch);
}

TEST_CASE("EMA update with zero decay moves entries to the assignment means") {
  Codebook cb(3, 2);
  cb.set_entries({0, 0, 5, 5, 9, 9});
  cb.decay = 0.0;
  std::vector<float> latent(2 * 64);
  std::vector<int> tokens(64);
  double sum0[2] = {0, 0}, sum1[2] = {0, 0};
  int n0 = 0, n1 = 0;
  Rng rng(7);
  for (int pos = 0; pos < 64; ++pos) {
    const int k = pos % 3 == 0 ? 1 : 0;
    tokens[pos] = k;
    for (int j = 0; j < 2; ++j) {
      const float v = static_cast<float>(rng.uniform());
      latent[static_cast<std::size_t>(j) * 64 + pos] = v;
      (k == 0 ? sum0 : sum1)[j] += v;
    }
    (k == 0 ? n0 : n1) += 1;
  }
  Rng ema_rng(8);
  ema_update(cb, {latent}, {tokens}, ema_rng);
  for (int j = 0; j < 2; ++j) {
    CHECK(cb.entry(0)[j] == doctest::Approx(sum0[j] / n0).epsilon(1e-4));
    CHECK(cb.entry(1)[j] == doctest::Approx(sum1[j] / n1).epsilon(1e-4));
    CHECK(cb.entry(2)[j] == 9.0f);
  }
  CHECK(cb.idle_steps[2] == 1);
  CHECK(cb.idle_steps[0] == 0);
}

TEST_CASE("entries idle for dead_after updates are reseeded from the batch") {
  Codebook cb(2, 1);
  cb.set_entries({0.0f, 100.0f});
  cb.dead_after = 3;
  std::vector<float> latent(64, 0.25f);
  std::vector<int> tokens(64, 0);
  Rng rng(9);
  ema_update(cb, {latent}, {tokens}, rng);
  ema_update(cb, {latent}, {tokens}, rng);
  CHECK(cb.entry(1)[0] == doctest::Approx(100.0f).epsilon(1e-4));
  ema_update(cb, {latent}, {tokens}, rng);
  CHECK(cb.entry(1)[0] == 0.25f);
  CHECK(cb.idle_steps[1] == 0);
}

TEST_CASE("loss decomposition and determinism") {
  TokenizerModel a = make_tokenizer(tiny_spec(), 10);
  TokenizerModel b = make_tokenizer(tiny_spec(), 10);
  CHECK(a.codebook == b.codebook);
  const Lut3d lut = synthetic_grade_lut(11, 32);
  const TokenizerLoss la = tokenizer_loss(a.net, a.codebook, lut);
  const TokenizerLoss lb = tokenizer_loss(b.net, b.codebook, lut);
  CHECK(la.total == lb.total);
  CHECK(la.tokens == lb.tokens);
  CHECK(la.total - la.rec == doctest::Approx(kCommitWeight * la.commit).epsilon(1e-5));

  TokenizerTrainConfig cfg;
  cfg.spec = tiny_spec();
  cfg.epochs = 2;
  cfg.seed = 12;
  const std::vector<Lut3d> corpus{synthetic_grade_lut(1, 32), synthetic_grade_lut(2, 32), synthetic_grade_lut(3, 32)};
  const auto r1 = train_tokenizer(corpus, cfg);
  const auto r2 = train_tokenizer(corpus, cfg);
  REQUIRE(r1.log.size() == 2);
  CHECK(r1.log[1].rec == r2.log[1].rec);
  CHECK(codebook_hash(r1.model.codebook) == codebook_hash(r2.model.codebook));
  CHECK(epoch_log_json(r1.log[0]).find("\"utilization\"") != std::string::npos);
}

TEST_CASE("compression accounting") {
  const CompressionAccounting a = compression_accounting();
  CHECK(a.token_bits == 512);
  CHECK(a.lut_bits == 3145728);
  CHECK(a.ratio == doctest::Approx(1.0 - 512.0 / 3145728.0));
  CHECK(a.ratio > 0.9998);
}

TEST_CASE("tokenizer checkpoint round trip") {
  TokenizerModel m = make_tokenizer(tiny_spec(), 13);
  const Checkpoint ckpt = tokenizer_to_checkpoint(m);
  const Checkpoint back = deserialize_checkpoint(serialize_checkpoint(ckpt), "tokenizer");
  TokenizerModel m2 = tokenizer_from_checkpoint(back);
  CHECK(m2.codebook == m.codebook);
  CHECK(m2.net.spec == m.net.spec);
  const Lut3d lut = synthetic_grade_lut(14, 32);
  CHECK(tokenize(m2, lut) == tokenize(m, lut));
  CHECK(detokenize(m2, tokenize(m, lut)) == detokenize(m, tokenize(m, lut)));

  Checkpoint tampered = ckpt;
  tampered.meta["codebook_hash"] = "0000000000000000";
  CHECK(error_code([&] { tokenizer_from_checkpoint(tampered); }) == Errc::hash_mismatch);
  CHECK(error_code([&] { deserialize_checkpoint(serialize_checkpoint(ckpt), "policy"); }) == Errc::format);
}

TEST_CASE("decode rejects bad token lists") {
  TokenizerModel m = make_tokenizer(tiny_spec(), 15);
  CHECK(error_code([&] { detokenize(m, std::vector<int>(63, 0)); }) == Errc::dimension_mismatch);
  std::vector<int> bad(64, 0);
  bad[3] = 4;
  CHECK(error_code([&] { detokenize(m, bad); }) == Errc::out_of_range);
}
