#include "acetone/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "acetone/error.hpp"

namespace acetone {

namespace {

using ad::Graph;
using ad::Parameter;
using ad::Tensor;
using ad::Var;

constexpr int kLatticeVertices = kTokenizerLattice * kTokenizerLattice * kTokenizerLattice;

struct LayerShape {
  const char* name;
  ad::Shape weight;
  int bias;
  int fan_in;
};

std::vector<LayerShape> layer_shapes(const TokenizerSpec& s) {
  const int k3 = 4 * 4 * 4;
  return {
      {"enc0", {s.width1, 3, 4, 4, 4}, s.width1, 3 * k3},
      {"enc1", {s.width2, s.width1, 4, 4, 4}, s.width2, s.width1 * k3},
      {"enc2", {s.width3, s.width2, 4, 4, 4}, s.width3, s.width2 * k3},
      {"enc_proj", {s.latent_dim, s.width3, 1, 1, 1}, s.latent_dim, s.width3},
      {"dec_proj", {s.width3, s.latent_dim, 1, 1, 1}, s.width3, s.latent_dim},
      // Transposed layers: (Cin, Cout, k, k, k); each output sees Cin * 8 taps.
      {"dec0", {s.width3, s.width2, 4, 4, 4}, s.width2, s.width3 * 8},
      {"dec1", {s.width2, s.width1, 4, 4, 4}, s.width1, s.width2 * 8},
      {"dec2", {s.width1, 3, 4, 4, 4}, 3, s.width1 * 8},
  };
}

void validate_spec(const TokenizerSpec& s) {
  if (s.latent_dim < 1 || s.codebook_size < 2 || s.width1 < 1 || s.width2 < 1 || s.width3 < 1) {
    throw Error(Errc::invalid_parameter, "tokenizer widths, latent_dim and codebook_size must be positive");
  }
}

void require_lattice(const Lut3d& lut) {
  if (lut.resolution() != kTokenizerLattice) {
    throw Error(Errc::dimension_mismatch,
                "tokenizer expects a 32^3 LUT, got " + std::to_string(lut.resolution()));
  }
}

const Lut3d& identity32() {
  static const Lut3d id = identity_lut(kTokenizerLattice);
  return id;
}

template <typename T>
const Tensor<T>& identity_tensor() {
  static const Tensor<T> t = [] {
    Tensor<T> out({3, kTokenizerLattice, kTokenizerLattice, kTokenizerLattice});
    const auto d = identity32().data();
    for (int v = 0; v < kLatticeVertices; ++v) {
      for (int c = 0; c < 3; ++c) out.data[static_cast<std::size_t>(c) * kLatticeVertices + v] = d[3 * v + c];
    }
    return out;
  }();
  return t;
}

template <typename T>
Tensor<T> lut_tensor(const Lut3d& lut) {
  Tensor<T> out({3, kTokenizerLattice, kTokenizerLattice, kTokenizerLattice});
  const auto d = lut.data();
  for (int v = 0; v < kLatticeVertices; ++v) {
    for (int c = 0; c < 3; ++c) out.data[static_cast<std::size_t>(c) * kLatticeVertices + v] = d[3 * v + c];
  }
  return out;
}

template <typename T>
Lut3d tensor_lut(const Tensor<T>& t) {
  std::vector<float> data(3 * static_cast<std::size_t>(kLatticeVertices));
  for (int v = 0; v < kLatticeVertices; ++v) {
    for (int c = 0; c < 3; ++c) {
      data[3 * v + c] = static_cast<float>(t.data[static_cast<std::size_t>(c) * kLatticeVertices + v]);
    }
  }
  return Lut3d(kTokenizerLattice, std::move(data));
}

double squared_distance(const float* entry, const double* v, int dim) {
  double acc = 0.0;
  for (int j = 0; j < dim; ++j) {
    const double d = v[j] - entry[j];
    acc += d * d;
  }
  return acc;
}

}  // namespace

// --- network ----------------------------------------------------------------

template <typename T>
std::vector<Parameter<T>*> TokenizerNet<T>::parameter_ptrs() {
  std::vector<Parameter<T>*> out;
  for (auto& p : params) out.push_back(&p);
  return out;
}

template <typename T>
std::size_t TokenizerNet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.numel();
  return n;
}

template <typename T>
TokenizerNet<T> make_tokenizer_net(const TokenizerSpec& spec, std::uint64_t seed) {
  validate_spec(spec);
  TokenizerNet<T> net;
  net.spec = spec;
  std::uint64_t salt = 0;
  for (const auto& layer : layer_shapes(spec)) {
    Tensor<T> w(layer.weight);
    ad::uniform_init(w, 1.0 / std::sqrt(static_cast<double>(layer.fan_in)), mix_seed(seed, salt++));
    net.params.emplace_back(std::string(layer.name) + ".w", std::move(w));
    net.params.emplace_back(std::string(layer.name) + ".b", Tensor<T>({layer.bias}));
  }
  return net;
}

template <typename T>
std::vector<Var> bind_params(Graph<T>& g, TokenizerNet<T>& net, bool trainable) {
  std::vector<Var> vars;
  vars.reserve(net.params.size());
  for (auto& p : net.params) vars.push_back(trainable ? g.param(p) : g.constant(p.value));
  return vars;
}

template <typename T>
Var encoder_graph(Graph<T>& g, const std::vector<Var>& p, Var offset) {
  Var h = g.silu(g.conv3d(offset, p[0], p[1], 2, 1));
  h = g.silu(g.conv3d(h, p[2], p[3], 2, 1));
  h = g.silu(g.conv3d(h, p[4], p[5], 2, 1));
  return g.conv3d(h, p[6], p[7], 1, 0);
}

template <typename T>
Var decoder_graph(Graph<T>& g, const std::vector<Var>& p, Var latent) {
  Var h = g.silu(g.conv3d(latent, p[8], p[9], 1, 0));
  h = g.silu(g.conv_transpose3d(h, p[10], p[11], 2, 1));
  h = g.silu(g.conv_transpose3d(h, p[12], p[13], 2, 1));
  Var offset = g.conv_transpose3d(h, p[14], p[15], 2, 1);
  return g.clamp_unit(g.add(g.constant(identity_tensor<T>()), offset));
}

template <typename T>
Tensor<T> lut_offset_tensor(const Lut3d& lut) {
  require_lattice(lut);
  Tensor<T> t = lut_tensor<T>(lut);
  const auto& id = identity_tensor<T>();
  for (std::size_t i = 0; i < t.numel(); ++i) t.data[i] -= id.data[i];
  return t;
}

template <typename T>
Tensor<T> encode(TokenizerNet<T>& net, const Lut3d& lut) {
  Graph<T> g;
  const auto p = bind_params(g, net, false);
  Var e = encoder_graph(g, p, g.constant(lut_offset_tensor<T>(lut)));
  return g.value(e);
}

// --- codebook ---------------------------------------------------------------

Codebook::Codebook(int k, int d)
    : size(k),
      dim(d),
      entries(static_cast<std::size_t>(k) * d, 0.0f),
      ema_counts(k, 1.0f),
      ema_sums(static_cast<std::size_t>(k) * d, 0.0f),
      idle_steps(k, 0) {
  if (k < 1 || d < 1) throw Error(Errc::invalid_parameter, "codebook size and dim must be positive");
}

void Codebook::set_entries(std::vector<float> values) {
  if (values.size() != static_cast<std::size_t>(size) * dim) {
    throw Error(Errc::dimension_mismatch, "codebook entries must hold size*dim values");
  }
  entries = std::move(values);
  ema_sums = entries;
  std::fill(ema_counts.begin(), ema_counts.end(), 1.0f);
  std::fill(idle_steps.begin(), idle_steps.end(), 0);
}

std::string codebook_hash(const Codebook& codebook) {
  const std::string_view bytes(reinterpret_cast<const char*>(codebook.entries.data()),
                               codebook.entries.size() * sizeof(float));
  return hex64(fnv1a64(bytes));
}

TokenizerModel make_tokenizer(const TokenizerSpec& spec, std::uint64_t seed) {
  TokenizerModel model;
  model.net = make_tokenizer_net<float>(spec, seed);
  model.codebook = Codebook(spec.codebook_size, spec.latent_dim);
  // Small random entries until data-dependent initialization replaces them.
  Tensor<float> init({spec.codebook_size, spec.latent_dim});
  ad::uniform_init(init, 0.01, mix_seed(seed, 1000));
  model.codebook.set_entries(std::move(init.data));
  return model;
}

template <typename T>
Quantized<T> quantize(const Codebook& codebook, const Tensor<T>& latent) {
  const int dim = codebook.dim;
  if (latent.shape != ad::Shape{dim, kLatentGrid, kLatentGrid, kLatentGrid}) {
    throw Error(Errc::dimension_mismatch, "latent shape " + ad::shape_string(latent.shape) +
                                              " does not match codebook dim " + std::to_string(dim));
  }
  Quantized<T> out;
  out.tokens.resize(kLatentPositions);
  out.latent = Tensor<T>(latent.shape);
  std::vector<double> v(dim);
  for (int pos = 0; pos < kLatentPositions; ++pos) {
    for (int j = 0; j < dim; ++j) v[j] = latent.data[static_cast<std::size_t>(j) * kLatentPositions + pos];
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < codebook.size; ++k) {
      const double d = squared_distance(codebook.entry(k), v.data(), dim);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    out.tokens[pos] = best;
    const float* e = codebook.entry(best);
    for (int j = 0; j < dim; ++j) out.latent.data[static_cast<std::size_t>(j) * kLatentPositions + pos] = e[j];
  }
  return out;
}

template <typename T>
Tensor<T> embed_tokens(const Codebook& codebook, const std::vector<int>& tokens) {
  if (tokens.size() != static_cast<std::size_t>(kLatentPositions)) {
    throw Error(Errc::dimension_mismatch,
                "expected 64 tokens, got " + std::to_string(tokens.size()));
  }
  Tensor<T> out({codebook.dim, kLatentGrid, kLatentGrid, kLatentGrid});
  for (int pos = 0; pos < kLatentPositions; ++pos) {
    const int k = tokens[pos];
    if (k < 0 || k >= codebook.size) {
      throw Error(Errc::out_of_range, "token " + std::to_string(k) + " at position " +
                                          std::to_string(pos) + " outside codebook of " +
                                          std::to_string(codebook.size));
    }
    const float* e = codebook.entry(k);
    for (int j = 0; j < codebook.dim; ++j) out.data[static_cast<std::size_t>(j) * kLatentPositions + pos] = e[j];
  }
  return out;
}

template <typename T>
Lut3d decode(TokenizerNet<T>& net, const Codebook& codebook, const std::vector<int>& tokens) {
  Graph<T> g;
  const auto p = bind_params(g, net, false);
  Var out = decoder_graph(g, p, g.constant(embed_tokens<T>(codebook, tokens)));
  return tensor_lut(g.value(out));
}

std::vector<int> tokenize(TokenizerModel& model, const Lut3d& lut) {
  const Lut3d src = lut.resolution() == kTokenizerLattice ? lut : resample_lut(lut, kTokenizerLattice);
  return quantize(model.codebook, encode(model.net, src)).tokens;
}

Lut3d detokenize(TokenizerModel& model, const std::vector<int>& tokens) {
  return decode(model.net, model.codebook, tokens);
}

template <typename T>
TokenizerLoss tokenizer_loss(TokenizerNet<T>& net, const Codebook& codebook, const Lut3d& lut,
                             double commit_weight, double grad_scale) {
  require_lattice(lut);
  Graph<T> g;
  const bool train = grad_scale != 0.0;
  const auto p = bind_params(g, net, train);
  Var e = encoder_graph(g, p, g.constant(lut_offset_tensor<T>(lut)));
  Quantized<T> q = quantize(codebook, g.value(e));
  Var st = g.straight_through(e, q.latent);
  Var recon = decoder_graph(g, p, st);
  Var rec = g.mse(recon, lut_tensor<T>(lut));
  Var commit = g.mse(e, q.latent);
  Var total = g.add(rec, g.scale(commit, static_cast<T>(commit_weight)));
  if (train) g.backward(total, Tensor<T>({1}, {static_cast<T>(grad_scale)}));

  TokenizerLoss out;
  out.total = g.value(total).data[0];
  out.rec = g.value(rec).data[0];
  out.commit = g.value(commit).data[0];
  out.tokens = std::move(q.tokens);
  const auto& ev = g.value(e).data;
  out.latent.assign(ev.begin(), ev.end());
  return out;
}

void ema_update(Codebook& cb, const std::vector<std::vector<float>>& latents,
                const std::vector<std::vector<int>>& tokens, Rng& rng) {
  if (latents.size() != tokens.size()) {
    throw Error(Errc::dimension_mismatch, "ema_update needs one token list per latent");
  }
  const int dim = cb.dim;
  const std::size_t latent_size = static_cast<std::size_t>(dim) * kLatentPositions;
  std::vector<double> counts(cb.size, 0.0);
  std::vector<double> sums(static_cast<std::size_t>(cb.size) * dim, 0.0);
  for (std::size_t b = 0; b < latents.size(); ++b) {
    if (latents[b].size() != latent_size || tokens[b].size() != static_cast<std::size_t>(kLatentPositions)) {
      throw Error(Errc::dimension_mismatch, "ema_update latent or token shape");
    }
    for (int pos = 0; pos < kLatentPositions; ++pos) {
      const int k = tokens[b][pos];
      if (k < 0 || k >= cb.size) throw Error(Errc::out_of_range, "ema_update token outside codebook");
      counts[k] += 1.0;
      for (int j = 0; j < dim; ++j) {
        sums[static_cast<std::size_t>(k) * dim + j] += latents[b][static_cast<std::size_t>(j) * kLatentPositions + pos];
      }
    }
  }

  const double decay = cb.decay;
  double total = 0.0;
  for (int k = 0; k < cb.size; ++k) {
    cb.ema_counts[k] = static_cast<float>(decay * cb.ema_counts[k] + (1.0 - decay) * counts[k]);
    total += cb.ema_counts[k];
    for (int j = 0; j < dim; ++j) {
      const std::size_t i = static_cast<std::size_t>(k) * dim + j;
      cb.ema_sums[i] = static_cast<float>(decay * cb.ema_sums[i] + (1.0 - decay) * sums[i]);
    }
  }
  // Laplace smoothing keeps rarely used entries from dividing by ~0.
  const double denom = total + cb.size * cb.epsilon;
  for (int k = 0; k < cb.size; ++k) {
    if (!(cb.ema_counts[k] > 0.0f)) continue;
    const double smoothed = (cb.ema_counts[k] + cb.epsilon) / denom * total;
    for (int j = 0; j < dim; ++j) {
      const std::size_t i = static_cast<std::size_t>(k) * dim + j;
      cb.entries[i] = static_cast<float>(cb.ema_sums[i] / smoothed);
    }
  }

  for (int k = 0; k < cb.size; ++k) {
    cb.idle_steps[k] = counts[k] > 0.0 ? 0 : cb.idle_steps[k] + 1;
    if (cb.idle_steps[k] < cb.dead_after || latents.empty()) continue;
    const auto& src = latents[rng.below(latents.size())];
    const auto pos = static_cast<std::size_t>(rng.below(kLatentPositions));
    for (int j = 0; j < dim; ++j) {
      const std::size_t i = static_cast<std::size_t>(k) * dim + j;
      cb.entries[i] = src[static_cast<std::size_t>(j) * kLatentPositions + pos];
      cb.ema_sums[i] = cb.entries[i];
    }
    cb.ema_counts[k] = 1.0f;
    cb.idle_steps[k] = 0;
  }
}

// --- training ---------------------------------------------------------------

TokenizerTrainConfig TokenizerTrainConfig::from_config(const KeyValueConfig& config) {
  TokenizerTrainConfig c;
  ConfigReader r(config);
  r.read("latent_dim", c.spec.latent_dim, 1, 1024);
  r.read("codebook_size", c.spec.codebook_size, 2, 65536);
  r.read("width1", c.spec.width1, 1, 1024);
  r.read("width2", c.spec.width2, 1, 1024);
  r.read("width3", c.spec.width3, 1, 1024);
  r.read("epochs", c.epochs, 1, 100000);
  r.read("batch_size", c.batch_size, 1, 4096);
  r.read("learning_rate", c.learning_rate, 1e-12, 1.0);
  r.read("commit_weight", c.commit_weight, 0.0, 100.0);
  r.read("ema_decay", c.ema_decay, 0.0, 0.999999);
  r.read("ema_epsilon", c.ema_epsilon, 1e-12, 1.0);
  r.read("dead_after", c.dead_after, 1, 1000000);
  std::string augment = c.augment == Intensity::low ? "low" : "high";
  r.read("augment", augment);
  r.read("seed", c.seed);
  r.finish();
  if (augment == "low") {
    c.augment = Intensity::low;
  } else if (augment == "high") {
    c.augment = Intensity::high;
  } else {
    throw Error(Errc::config, "invalid configuration; augment: expected low or high, got '" + augment + "'");
  }
  return c;
}

std::string epoch_log_json(const TokenizerEpochLog& e) {
  nlohmann::ordered_json j;
  j["epoch"] = e.epoch;
  j["rec"] = e.rec;
  j["commit"] = e.commit;
  j["utilization"] = e.utilization;
  return j.dump();
}

TokenizerTrainResult train_tokenizer(const std::vector<Lut3d>& corpus,
                                     const TokenizerTrainConfig& config,
                                     const std::function<void(const TokenizerEpochLog&)>& on_epoch) {
  if (corpus.empty()) throw Error(Errc::insufficient_data, "tokenizer corpus is empty");
  std::vector<Lut3d> luts;
  luts.reserve(corpus.size());
  for (const auto& l : corpus) {
    validate(l);
    luts.push_back(l.resolution() == kTokenizerLattice ? l : resample_lut(l, kTokenizerLattice));
  }

  TokenizerTrainResult result;
  TokenizerModel& model = result.model;
  model = make_tokenizer(config.spec, mix_seed(config.seed, 1));
  model.codebook.decay = config.ema_decay;
  model.codebook.epsilon = config.ema_epsilon;
  model.codebook.dead_after = config.dead_after;

  ad::Adam<float> adam(model.net.parameter_ptrs(), {.lr = config.learning_rate});
  Rng order_rng(mix_seed(config.seed, 2));
  Rng ema_rng(mix_seed(config.seed, 3));
  bool codebook_ready = false;
  long sample_counter = 0;

  std::vector<std::size_t> order(luts.size());
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order.begin(), order.end());
    double rec_sum = 0.0, commit_sum = 0.0;
    std::set<int> used;

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<Lut3d> batch;
      for (std::size_t i = start; i < end; ++i) {
        const auto p = sample_random_perturbation(mix_seed(config.seed, 1000000 + sample_counter++), config.augment);
        batch.push_back(apply_perturbation(p, luts[order[i]]));
      }

      if (!codebook_ready) {
        // Data-dependent initialization from the first batch of latents.
        std::vector<double> pool;
        for (const auto& l : batch) {
          const auto e = encode(model.net, l);
          for (int pos = 0; pos < kLatentPositions; ++pos) {
            for (int j = 0; j < config.spec.latent_dim; ++j) {
              pool.push_back(e.data[static_cast<std::size_t>(j) * kLatentPositions + pos]);
            }
          }
        }
        const std::size_t available = pool.size() / config.spec.latent_dim;
        std::vector<std::size_t> pick(available);
        for (std::size_t i = 0; i < available; ++i) pick[i] = i;
        ema_rng.shuffle(pick.begin(), pick.end());
        std::vector<float> entries(static_cast<std::size_t>(config.spec.codebook_size) * config.spec.latent_dim);
        for (int k = 0; k < config.spec.codebook_size; ++k) {
          const std::size_t src = pick[static_cast<std::size_t>(k) % available];
          const bool repeat = static_cast<std::size_t>(k) >= available;
          for (int j = 0; j < config.spec.latent_dim; ++j) {
            const double jitter = repeat ? ema_rng.normal() * 1e-3 : 0.0;
            entries[static_cast<std::size_t>(k) * config.spec.latent_dim + j] =
                static_cast<float>(pool[src * config.spec.latent_dim + j] + jitter);
          }
        }
        model.codebook.set_entries(std::move(entries));
        codebook_ready = true;
      }

      adam.zero_grad();
      std::vector<std::vector<float>> latents;
      std::vector<std::vector<int>> tokens;
      const double scale = 1.0 / static_cast<double>(batch.size());
      for (const auto& l : batch) {
        TokenizerLoss loss = tokenizer_loss(model.net, model.codebook, l, config.commit_weight, scale);
        if (!std::isfinite(loss.total)) {
          std::ostringstream msg;
          msg << "non-finite tokenizer loss at epoch " << epoch << " (rec=" << loss.rec
              << ", commit=" << loss.commit << ")";
          throw Error(Errc::non_finite, msg.str());
        }
        rec_sum += loss.rec;
        commit_sum += loss.commit;
        used.insert(loss.tokens.begin(), loss.tokens.end());
        latents.push_back(std::move(loss.latent));
        tokens.push_back(std::move(loss.tokens));
      }
      adam.step();
      ema_update(model.codebook, latents, tokens, ema_rng);
    }

    TokenizerEpochLog entry;
    entry.epoch = epoch;
    entry.rec = rec_sum / static_cast<double>(luts.size());
    entry.commit = commit_sum / static_cast<double>(luts.size());
    entry.utilization = static_cast<double>(used.size()) / config.spec.codebook_size;
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

// --- checkpoints --------------------------------------------------------------

Checkpoint tokenizer_to_checkpoint(const TokenizerModel& model) {
  Checkpoint ckpt;
  ckpt.kind = "tokenizer";
  const auto& s = model.net.spec;
  ckpt.meta = {{"D", std::to_string(s.latent_dim)},
               {"K", std::to_string(s.codebook_size)},
               {"width1", std::to_string(s.width1)},
               {"width2", std::to_string(s.width2)},
               {"width3", std::to_string(s.width3)},
               {"lattice", std::to_string(kTokenizerLattice)},
               {"dead_after", std::to_string(model.codebook.dead_after)},
               {"codebook_hash", codebook_hash(model.codebook)}};
  std::ostringstream decay, eps;
  decay.precision(17);
  eps.precision(17);
  decay << model.codebook.decay;
  eps << model.codebook.epsilon;
  ckpt.meta["ema_decay"] = decay.str();
  ckpt.meta["ema_epsilon"] = eps.str();
  for (const auto& p : model.net.params) ckpt.tensors.push_back({p.name, p.value.shape, p.value.data});
  const auto& cb = model.codebook;
  ckpt.tensors.push_back({"codebook.entries", {cb.size, cb.dim}, cb.entries});
  ckpt.tensors.push_back({"codebook.ema_counts", {cb.size}, cb.ema_counts});
  ckpt.tensors.push_back({"codebook.ema_sums", {cb.size, cb.dim}, cb.ema_sums});
  std::vector<float> idle(cb.idle_steps.begin(), cb.idle_steps.end());
  ckpt.tensors.push_back({"codebook.idle_steps", {cb.size}, std::move(idle)});
  return ckpt;
}

TokenizerModel tokenizer_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "tokenizer") throw Error(Errc::format, "checkpoint kind '" + ckpt.kind + "' is not a tokenizer");
  if (ckpt.meta_int("lattice") != kTokenizerLattice) throw Error(Errc::unsupported, "tokenizer lattice");
  TokenizerSpec spec;
  spec.latent_dim = ckpt.meta_int("D");
  spec.codebook_size = ckpt.meta_int("K");
  spec.width1 = ckpt.meta_int("width1");
  spec.width2 = ckpt.meta_int("width2");
  spec.width3 = ckpt.meta_int("width3");
  TokenizerModel model;
  model.net = make_tokenizer_net<float>(spec, 0);
  for (auto& p : model.net.params) {
    const NamedTensor& t = ckpt.tensor(p.name);
    if (t.shape != p.value.shape) throw Error(Errc::dimension_mismatch, "checkpoint tensor '" + p.name + "' shape");
    p.value.data = t.data;
    p.grad = Tensor<float>(p.value.shape);
  }
  Codebook cb(spec.codebook_size, spec.latent_dim);
  auto load = [&](const char* name, std::vector<float>& dst) {
    const NamedTensor& t = ckpt.tensor(name);
    if (t.data.size() != dst.size()) throw Error(Errc::dimension_mismatch, std::string("checkpoint tensor '") + name + "' size");
    dst = t.data;
  };
  load("codebook.entries", cb.entries);
  load("codebook.ema_counts", cb.ema_counts);
  load("codebook.ema_sums", cb.ema_sums);
  std::vector<float> idle(cb.size);
  load("codebook.idle_steps", idle);
  for (int k = 0; k < cb.size; ++k) cb.idle_steps[k] = static_cast<int>(idle[k]);
  cb.dead_after = ckpt.meta_int("dead_after");
  cb.decay = std::stod(ckpt.meta_value("ema_decay"));
  cb.epsilon = std::stod(ckpt.meta_value("ema_epsilon"));
  if (codebook_hash(cb) != ckpt.meta_value("codebook_hash")) {
    throw Error(Errc::hash_mismatch, "codebook entries do not match the recorded hash");
  }
  model.codebook = std::move(cb);
  return model;
}

CompressionAccounting compression_accounting(int tokens, int bits_per_token, int lattice,
                                             int bits_per_value) {
  CompressionAccounting a;
  a.token_bits = static_cast<long long>(tokens) * bits_per_token;
  a.lut_bits = 3LL * lattice * lattice * lattice * bits_per_value;
  a.ratio = 1.0 - static_cast<double>(a.token_bits) / static_cast<double>(a.lut_bits);
  return a;
}

#define ACETONE_TOKENIZER_INSTANTIATE(T)                                                        \
  template struct TokenizerNet<T>;                                                              \
  template TokenizerNet<T> make_tokenizer_net<T>(const TokenizerSpec&, std::uint64_t);          \
  template std::vector<Var> bind_params<T>(Graph<T>&, TokenizerNet<T>&, bool);                  \
  template Var encoder_graph<T>(Graph<T>&, const std::vector<Var>&, Var);                       \
  template Var decoder_graph<T>(Graph<T>&, const std::vector<Var>&, Var);                       \
  template Tensor<T> lut_offset_tensor<T>(const Lut3d&);                                        \
  template Tensor<T> encode<T>(TokenizerNet<T>&, const Lut3d&);                                 \
  template Quantized<T> quantize<T>(const Codebook&, const Tensor<T>&);                         \
  template Tensor<T> embed_tokens<T>(const Codebook&, const std::vector<int>&);                 \
  template Lut3d decode<T>(TokenizerNet<T>&, const Codebook&, const std::vector<int>&);         \
  template TokenizerLoss tokenizer_loss<T>(TokenizerNet<T>&, const Codebook&, const Lut3d&,     \
                                           double, double);

ACETONE_TOKENIZER_INSTANTIATE(float)
ACETONE_TOKENIZER_INSTANTIATE(double)

}  // namespace acetone
