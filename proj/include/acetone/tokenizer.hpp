#pragma once

// VQ-VAE LUT tokenizer.
//
// The encoder sees L - identity as a (3, 32, 32, 32) volume with axes
// (channel, b, g, r) and maps it to a (D, 4, 4, 4) latent:
//   conv k4 s2 p1  3 -> w1   32^3 -> 16^3   SiLU
//   conv k4 s2 p1 w1 -> w2   16^3 ->  8^3   SiLU
//   conv k4 s2 p1 w2 -> w3    8^3 ->  4^3   SiLU
//   conv 1x1      w3 -> D
// The decoder mirrors it with transposed convolutions and predicts an
// offset from the identity; the output is clamp(identity + offset, 0, 1):
//   conv 1x1       D -> w3                  SiLU
//   convT k4 s2 p1 w3 -> w2   4^3 ->  8^3   SiLU
//   convT k4 s2 p1 w2 -> w1   8^3 -> 16^3   SiLU
//   convT k4 s2 p1 w1 -> 3   16^3 -> 32^3
// Token t corresponds to latent position t = (d*4 + h)*4 + w.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "acetone/autodiff.hpp"
#include "acetone/checkpoint.hpp"
#include "acetone/config.hpp"
#include "acetone/lut.hpp"
#include "acetone/random.hpp"

namespace acetone {

inline constexpr int kTokenizerLattice = 32;
inline constexpr int kLatentGrid = 4;
inline constexpr int kLatentPositions = kLatentGrid * kLatentGrid * kLatentGrid;

struct TokenizerSpec {
  int latent_dim = 64;
  int codebook_size = 256;
  int width1 = 32;
  int width2 = 64;
  int width3 = 128;

  friend bool operator==(const TokenizerSpec&, const TokenizerSpec&) = default;
};

template <typename T>
struct TokenizerNet {
  TokenizerSpec spec;
  // Fixed order: enc0..enc2, enc_proj, dec_proj, dec0..dec2; weight then bias.
  std::vector<ad::Parameter<T>> params;

  std::vector<ad::Parameter<T>*> parameter_ptrs();
  std::size_t parameter_count() const;
};

// Uniform(+-1/sqrt(fan_in)) weights, zero biases.
template <typename T>
TokenizerNet<T> make_tokenizer_net(const TokenizerSpec& spec, std::uint64_t seed);

struct Codebook {
  int size = 0;
  int dim = 0;
  std::vector<float> entries;     // size x dim
  std::vector<float> ema_counts;  // size
  std::vector<float> ema_sums;    // size x dim
  std::vector<int> idle_steps;    // consecutive updates without an assignment
  double decay = 0.99;
  double epsilon = 1e-5;
  int dead_after = 100;

  Codebook() = default;
  // Entries zero, EMA counts one, EMA sums equal to the entries.
  Codebook(int size, int dim);

  const float* entry(int k) const { return entries.data() + static_cast<std::size_t>(k) * dim; }
  // Sets entries and resets the EMA state to match them.
  void set_entries(std::vector<float> values);

  friend bool operator==(const Codebook&, const Codebook&) = default;
};

// FNV-1a over the raw entry bytes, 16 hex digits.
std::string codebook_hash(const Codebook& codebook);

struct TokenizerModel {
  TokenizerNet<float> net;
  Codebook codebook;
};

TokenizerModel make_tokenizer(const TokenizerSpec& spec, std::uint64_t seed);

// Graph builders. params are the vars bound to net.params in order.
template <typename T>
std::vector<ad::Var> bind_params(ad::Graph<T>& g, TokenizerNet<T>& net, bool trainable);
template <typename T>
ad::Var encoder_graph(ad::Graph<T>& g, const std::vector<ad::Var>& params, ad::Var offset);
// Returns clamp(identity + decoder(latent), 0, 1) as a (3, 32, 32, 32) var.
template <typename T>
ad::Var decoder_graph(ad::Graph<T>& g, const std::vector<ad::Var>& params, ad::Var latent);

// (3, 32, 32, 32) encoder input, L - identity.
template <typename T>
ad::Tensor<T> lut_offset_tensor(const Lut3d& lut);

template <typename T>
ad::Tensor<T> encode(TokenizerNet<T>& net, const Lut3d& lut);

template <typename T>
struct Quantized {
  std::vector<int> tokens;
  ad::Tensor<T> latent;  // selected entries, (D, 4, 4, 4)
};

// Nearest entry by squared distance at each of the 64 positions; ties go
// to the lowest index.
template <typename T>
Quantized<T> quantize(const Codebook& codebook, const ad::Tensor<T>& latent);

template <typename T>
ad::Tensor<T> embed_tokens(const Codebook& codebook, const std::vector<int>& tokens);

template <typename T>
Lut3d decode(TokenizerNet<T>& net, const Codebook& codebook, const std::vector<int>& tokens);

// encode -> quantize tokens for a LUT of any resolution (resampled to 32).
std::vector<int> tokenize(TokenizerModel& model, const Lut3d& lut);
Lut3d detokenize(TokenizerModel& model, const std::vector<int>& tokens);

struct TokenizerLoss {
  double total = 0.0;
  double rec = 0.0;
  double commit = 0.0;
  std::vector<int> tokens;
  std::vector<float> latent;  // encoder output, (D, 4, 4, 4)
};

inline constexpr double kCommitWeight = 0.25;

// rec = MSE over the 3*32^3 LUT values, commit = MSE(e, sg(q)) over the
// latent, total = rec + commit_weight * commit. When grad_scale is nonzero
// the gradient of grad_scale * total is added into the parameter grads; the
// codebook receives none.
template <typename T>
TokenizerLoss tokenizer_loss(TokenizerNet<T>& net, const Codebook& codebook, const Lut3d& lut,
                             double commit_weight = kCommitWeight, double grad_scale = 0.0);

// EMA step over a batch of latents (each (D, 4, 4, 4), flattened) and their
// tokens. Entries unused for dead_after consecutive updates are reseeded
// from a random latent of this batch.
void ema_update(Codebook& codebook, const std::vector<std::vector<float>>& latents,
                const std::vector<std::vector<int>>& tokens, Rng& rng);

struct TokenizerTrainConfig {
  TokenizerSpec spec;
  int epochs = 50;
  int batch_size = 4;
  double learning_rate = 1e-3;
  double commit_weight = kCommitWeight;
  double ema_decay = 0.99;
  double ema_epsilon = 1e-5;
  int dead_after = 100;
  Intensity augment = Intensity::low;
  std::uint64_t seed = 0;

  static TokenizerTrainConfig from_config(const KeyValueConfig& config);
};

struct TokenizerEpochLog {
  int epoch = 0;
  double rec = 0.0;
  double commit = 0.0;
  double utilization = 0.0;
};

// {"epoch":..,"rec":..,"commit":..,"utilization":..}
std::string epoch_log_json(const TokenizerEpochLog& entry);

struct TokenizerTrainResult {
  TokenizerModel model;
  std::vector<TokenizerEpochLog> log;
};

// Each epoch visits every corpus LUT once in a seeded order, perturbed by a
// fresh random augmentation.
TokenizerTrainResult train_tokenizer(
    const std::vector<Lut3d>& corpus, const TokenizerTrainConfig& config,
    const std::function<void(const TokenizerEpochLog&)>& on_epoch = {});

Checkpoint tokenizer_to_checkpoint(const TokenizerModel& model);
TokenizerModel tokenizer_from_checkpoint(const Checkpoint& ckpt);

inline constexpr int kTokenBits = 8;
inline constexpr int kValueBits = 32;

struct CompressionAccounting {
  long long token_bits;
  long long lut_bits;
  double ratio;  // 1 - token_bits / lut_bits
};

CompressionAccounting compression_accounting(int tokens = kLatentPositions,
                                             int bits_per_token = kTokenBits,
                                             int lattice = kTokenizerLattice,
                                             int bits_per_value = kValueBits);

extern template struct TokenizerNet<float>;
extern template struct TokenizerNet<double>;

}  // namespace acetone
