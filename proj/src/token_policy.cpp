#include "acetone/token_policy.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>

#include "acetone/error.hpp"
#include "acetone/random.hpp"

namespace acetone {

namespace {

using ad::Graph;
using ad::Parameter;
using ad::Tensor;
using ad::Var;

// Parameter layout.
constexpr int kCondW = 0, kCondB = 1, kTokEmb = 2, kPos = 3, kFirstBlock = 4, kPerBlock = 12;
enum BlockParam { kLn1G, kLn1B, kQkvW, kQkvB, kProjW, kProjB, kLn2G, kLn2B, kFc1W, kFc1B, kFc2W, kFc2B };

int block_param(int block, int which) { return kFirstBlock + block * kPerBlock + which; }
int final_param(const PolicySpec& s, int which) { return kFirstBlock + s.blocks * kPerBlock + which; }

void validate_spec(const PolicySpec& s) {
  if (s.vocab < 2 || s.seq_len < 1 || s.width < 1 || s.heads < 1 || s.blocks < 0 ||
      s.condition_dim < 1 || s.mlp_ratio < 1 || s.width % s.heads != 0) {
    throw Error(Errc::invalid_parameter, "invalid policy spec (width must divide by heads)");
  }
}

void check_tokens(const PolicySpec& s, const std::vector<int>& tokens) {
  if (tokens.size() != static_cast<std::size_t>(s.seq_len)) {
    throw Error(Errc::dimension_mismatch, "expected " + std::to_string(s.seq_len) + " tokens, got " +
                                              std::to_string(tokens.size()));
  }
  for (int t : tokens) {
    if (t < 0 || t >= s.vocab) {
      throw Error(Errc::out_of_range, "token " + std::to_string(t) + " outside [0," + std::to_string(s.vocab) + ")");
    }
  }
}

void check_condition(const PolicySpec& s, const std::vector<double>& condition) {
  if (condition.size() != static_cast<std::size_t>(s.condition_dim)) {
    throw Error(Errc::dimension_mismatch, "condition has " + std::to_string(condition.size()) +
                                              " values, policy expects " + std::to_string(s.condition_dim));
  }
}

constexpr double kGeluC = 0.7978845608028654;
constexpr double kGeluA = 0.044715;
double gelu(double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))); }

}  // namespace

// --- condition ------------------------------------------------------------------

const std::vector<ConditionField>& condition_schema() {
  static const std::vector<ConditionField> schema = [] {
    std::vector<ConditionField> s;
    int off = 0;
    for (const char* who : {"query", "reference"}) {
      for (const char* ch : {"r", "g", "b"}) {
        s.push_back({std::string(who) + ".hist." + ch, off, kHistogramBins});
        off += kHistogramBins;
      }
      for (const char* ch : {"r", "g", "b"}) s.push_back({std::string(who) + ".mean." + ch, off++, 1});
      for (const char* ch : {"r", "g", "b"}) s.push_back({std::string(who) + ".std." + ch, off++, 1});
    }
    s.push_back({"tag.onehot", off, kConditionTagCount});
    return s;
  }();
  return schema;
}

std::string condition_schema_json() {
  nlohmann::ordered_json j;
  j["dimension"] = kConditionSize;
  j["histogram_bins"] = kHistogramBins;
  auto fields = nlohmann::ordered_json::array();
  for (const auto& f : condition_schema()) {
    fields.push_back({{"name", f.name}, {"offset", f.offset}, {"length", f.length}});
  }
  j["fields"] = fields;
  return j.dump(2);
}

std::vector<double> image_features(const ImageBuf& img) {
  const std::size_t n = img.pixel_count();
  if (n == 0) throw Error(Errc::insufficient_data, "image features need a non-empty image");
  std::vector<double> f(kImageFeatureSize, 0.0);
  std::array<double, 3> sum{}, sum2{};
  for (std::size_t i = 0; i < n; ++i) {
    const Rgb p = img.pixel(i);
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(static_cast<double>(p[c]), 0.0, 1.0);
      const int bin = std::min(kHistogramBins - 1, static_cast<int>(v * kHistogramBins));
      f[c * kHistogramBins + bin] += 1.0;
      sum[c] += v;
      sum2[c] += v * v;
    }
  }
  const double dn = static_cast<double>(n);
  for (int i = 0; i < 3 * kHistogramBins; ++i) f[i] /= dn;
  for (int c = 0; c < 3; ++c) {
    const double mean = sum[c] / dn;
    f[3 * kHistogramBins + c] = mean;
    f[3 * kHistogramBins + 3 + c] = std::sqrt(std::max(0.0, sum2[c] / dn - mean * mean));
  }
  return f;
}

std::vector<double> condition_vector(const ImageBuf& query, const ImageBuf* reference, int tag) {
  std::vector<double> v(kConditionSize, 0.0);
  const auto q = image_features(query);
  std::copy(q.begin(), q.end(), v.begin());
  if (reference) {
    const auto r = image_features(*reference);
    std::copy(r.begin(), r.end(), v.begin() + kImageFeatureSize);
  }
  if (tag >= kConditionTagCount) throw Error(Errc::out_of_range, "condition tag " + std::to_string(tag));
  if (tag >= 0) v[2 * kImageFeatureSize + tag] = 1.0;
  return v;
}

TupleInstance materialize_tuple(const DatasetTuple& t, const ImageIndex& images, const LutIndex& luts) {
  auto image = [&](const std::string& id) -> const ImageBuf& {
    const auto it = images.find(id);
    if (it == images.end()) throw Error(Errc::io, "tuple references unknown image '" + id + "'");
    return it->second;
  };
  const auto lit = luts.find(t.lut_id);
  if (lit == luts.end()) throw Error(Errc::io, "tuple references unknown LUT '" + t.lut_id + "'");
  const Lut3d& lut = lit->second;
  TupleInstance out;
  switch (t.task) {
    case PairTask::transfer: {
      const Perturbation phi = sample_random_perturbation(t.perturbation_seed, Intensity::low);
      out.query = apply_perturbation(phi, image(t.query_image_id));
      const ImageBuf reference = apply_lut(lut, apply_perturbation(phi, image(t.reference_image_id)));
      out.gt = apply_lut(lut, out.query);
      out.condition = condition_vector(out.query, &reference, -1);
      break;
    }
    case PairTask::instruct:
      out.query = image(t.query_image_id);
      out.gt = apply_lut(lut, out.query);
      out.condition = condition_vector(out.query, nullptr, tag_index(t.condition));
      break;
    case PairTask::generate:
      out.query = image(t.query_image_id);
      out.gt = apply_lut(lut, out.query);
      out.condition = condition_vector(out.query, &out.gt, tag_index(t.condition));
      break;
  }
  return out;
}

// --- model --------------------------------------------------------------------

std::vector<Parameter<double>*> PolicyModel::parameter_ptrs() {
  std::vector<Parameter<double>*> out;
  for (auto& p : params) out.push_back(&p);
  return out;
}

std::size_t PolicyModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.numel();
  return n;
}

PolicyModel make_policy(const PolicySpec& spec, std::uint64_t seed) {
  validate_spec(spec);
  PolicyModel m;
  m.spec = spec;
  const int w = spec.width, hidden = spec.mlp_ratio * spec.width;
  std::uint64_t salt = 0;
  auto uniform = [&](const std::string& name, ad::Shape shape, double bound) {
    Tensor<double> t(std::move(shape));
    ad::uniform_init(t, bound, mix_seed(seed, salt++));
    m.params.emplace_back(name, std::move(t));
  };
  auto fill = [&](const std::string& name, ad::Shape shape, double value) {
    m.params.emplace_back(name, Tensor<double>(std::move(shape), value));
  };
  uniform("cond.w", {w, spec.condition_dim}, 1.0 / std::sqrt(static_cast<double>(spec.condition_dim)));
  fill("cond.b", {w}, 0.0);
  uniform("tok_emb", {spec.vocab + 1, w}, 0.1);
  uniform("pos", {spec.seq_len + 1, w}, 0.1);
  for (int b = 0; b < spec.blocks; ++b) {
    const std::string pre = "block" + std::to_string(b) + ".";
    fill(pre + "ln1.g", {w}, 1.0);
    fill(pre + "ln1.b", {w}, 0.0);
    uniform(pre + "qkv.w", {3 * w, w}, 1.0 / std::sqrt(static_cast<double>(w)));
    fill(pre + "qkv.b", {3 * w}, 0.0);
    uniform(pre + "proj.w", {w, w}, 1.0 / std::sqrt(static_cast<double>(w)));
    fill(pre + "proj.b", {w}, 0.0);
    fill(pre + "ln2.g", {w}, 1.0);
    fill(pre + "ln2.b", {w}, 0.0);
    uniform(pre + "fc1.w", {hidden, w}, 1.0 / std::sqrt(static_cast<double>(w)));
    fill(pre + "fc1.b", {hidden}, 0.0);
    uniform(pre + "fc2.w", {w, hidden}, 1.0 / std::sqrt(static_cast<double>(hidden)));
    fill(pre + "fc2.b", {w}, 0.0);
  }
  fill("lnf.g", {w}, 1.0);
  fill("lnf.b", {w}, 0.0);
  fill("out.w", {spec.vocab, w}, 0.0);
  fill("out.b", {spec.vocab}, 0.0);
  return m;
}

std::vector<Var> bind_policy(Graph<double>& g, PolicyModel& policy, bool trainable) {
  std::vector<Var> vars;
  vars.reserve(policy.params.size());
  for (auto& p : policy.params) vars.push_back(trainable ? g.param(p) : g.constant(p.value));
  return vars;
}

Var policy_logits(Graph<double>& g, const std::vector<Var>& p, const PolicySpec& s,
                  const std::vector<double>& condition, const std::vector<int>& tokens) {
  check_condition(s, condition);
  check_tokens(s, tokens);
  Var cond = g.linear(g.constant(Tensor<double>({1, s.condition_dim}, condition)), p[kCondW], p[kCondB]);
  std::vector<int> inputs{s.vocab};
  inputs.insert(inputs.end(), tokens.begin(), tokens.end() - 1);
  Var x = g.add(g.concat_rows(cond, g.embedding(p[kTokEmb], inputs)), p[kPos]);
  for (int b = 0; b < s.blocks; ++b) {
    auto P = [&](int which) { return p[block_param(b, which)]; };
    Var h = g.layernorm(x, P(kLn1G), P(kLn1B));
    Var a = g.causal_attention(g.linear(h, P(kQkvW), P(kQkvB)), s.heads);
    x = g.add(x, g.linear(a, P(kProjW), P(kProjB)));
    h = g.layernorm(x, P(kLn2G), P(kLn2B));
    x = g.add(x, g.linear(g.gelu(g.linear(h, P(kFc1W), P(kFc1B))), P(kFc2W), P(kFc2B)));
  }
  Var h = g.layernorm(x, p[final_param(s, 0)], p[final_param(s, 1)]);
  return g.linear(g.rows(h, 1, s.seq_len), p[final_param(s, 2)], p[final_param(s, 3)]);
}

Tensor<double> position_log_probs(PolicyModel& policy, const std::vector<double>& condition,
                                  const std::vector<int>& tokens) {
  Graph<double> g;
  const auto p = bind_policy(g, policy, false);
  return g.value(g.log_softmax(policy_logits(g, p, policy.spec, condition, tokens)));
}

std::vector<double> log_probs(PolicyModel& policy, const std::vector<double>& condition,
                              const std::vector<int>& tokens) {
  const Tensor<double> table = position_log_probs(policy, condition, tokens);
  const int k = policy.spec.vocab;
  std::vector<double> out(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) out[t] = table.data[t * k + tokens[t]];
  return out;
}

// --- incremental inference --------------------------------------------------------

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using CMap = Eigen::Map<const Mat>;

CMap mat(const Parameter<double>& p) { return CMap(p.value.data.data(), p.value.dim(0), p.value.dim(1)); }
Eigen::Map<const Vec> vec(const Parameter<double>& p) {
  return Eigen::Map<const Vec>(p.value.data.data(), static_cast<Eigen::Index>(p.value.numel()));
}

Vec layernorm(const Vec& x, const Parameter<double>& gamma, const Parameter<double>& beta) {
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  const double inv = 1.0 / std::sqrt(var + 1e-5);
  return ((x.array() - mean) * inv * vec(gamma).array() + vec(beta).array()).matrix();
}

// Feeds one slot at a time and keeps per-block keys and values.
class Stepper {
 public:
  explicit Stepper(const PolicyModel& m) : m_(m), keys_(m.spec.blocks), values_(m.spec.blocks) {}

  // Returns the logits produced at this slot.
  Vec feed(const Vec& slot_input) {
    const PolicySpec& s = m_.spec;
    const int w = s.width, dh = w / s.heads;
    Vec x = slot_input + mat(m_.params[kPos]).row(pos_).transpose();
    for (int b = 0; b < s.blocks; ++b) {
      auto P = [&](int which) -> const Parameter<double>& { return m_.params[block_param(b, which)]; };
      const Vec h = layernorm(x, P(kLn1G), P(kLn1B));
      const Vec qkv = mat(P(kQkvW)) * h + vec(P(kQkvB));
      keys_[b].push_back(qkv.segment(w, w));
      values_[b].push_back(qkv.segment(2 * w, w));
      Vec attn(w);
      const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
      const std::size_t n = keys_[b].size();
      std::vector<double> score(n);
      for (int head = 0; head < s.heads; ++head) {
        const auto q = qkv.segment(head * dh, dh);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          score[j] = q.dot(keys_[b][j].segment(head * dh, dh)) * scale;
          mx = std::max(mx, score[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          score[j] = std::exp(score[j] - mx);
          z += score[j];
        }
        Vec out = Vec::Zero(dh);
        for (std::size_t j = 0; j < n; ++j) out += (score[j] / z) * values_[b][j].segment(head * dh, dh);
        attn.segment(head * dh, dh) = out;
      }
      x += mat(P(kProjW)) * attn + vec(P(kProjB));
      const Vec h2 = layernorm(x, P(kLn2G), P(kLn2B));
      Vec hidden = mat(P(kFc1W)) * h2 + vec(P(kFc1B));
      for (Eigen::Index i = 0; i < hidden.size(); ++i) hidden(i) = gelu(hidden(i));
      x += mat(P(kFc2W)) * hidden + vec(P(kFc2B));
    }
    ++pos_;
    const Vec h = layernorm(x, m_.params[final_param(s, 0)], m_.params[final_param(s, 1)]);
    return mat(m_.params[final_param(s, 2)]) * h + vec(m_.params[final_param(s, 3)]);
  }

  Vec condition_slot(const std::vector<double>& condition) const {
    const Eigen::Map<const Vec> c(condition.data(), static_cast<Eigen::Index>(condition.size()));
    return mat(m_.params[kCondW]) * c + vec(m_.params[kCondB]);
  }

  Vec token_slot(int token) const { return mat(m_.params[kTokEmb]).row(token).transpose(); }

 private:
  const PolicyModel& m_;
  int pos_ = 0;
  std::vector<std::vector<Vec>> keys_;
  std::vector<std::vector<Vec>> values_;
};

Vec log_softmax(const Vec& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return (logits.array() - lse).matrix();
}

}  // namespace

PolicySample sample(PolicyModel& policy, const std::vector<double>& condition, double temperature,
                    std::uint64_t seed, bool greedy) {
  const PolicySpec& s = policy.spec;
  check_condition(s, condition);
  if (!greedy && !(temperature > 0.0)) throw Error(Errc::invalid_parameter, "temperature must be positive");
  Rng rng(seed);
  Stepper stepper(policy);
  stepper.feed(stepper.condition_slot(condition));
  PolicySample out;
  int prev = s.vocab;  // BOS
  for (int t = 0; t < s.seq_len; ++t) {
    const Vec logits = stepper.feed(stepper.token_slot(prev));
    const Vec lp = log_softmax(logits);
    int pick = 0;
    if (greedy) {
      for (int k = 1; k < s.vocab; ++k) {
        if (logits(k) > logits(pick)) pick = k;
      }
    } else {
      const Vec tl = log_softmax(logits / temperature);
      double u = rng.uniform();
      pick = s.vocab - 1;
      for (int k = 0; k < s.vocab; ++k) {
        u -= std::exp(tl(k));
        if (u < 0.0) {
          pick = k;
          break;
        }
      }
    }
    out.tokens.push_back(pick);
    out.log_probs.push_back(lp(pick));
    prev = pick;
  }
  return out;
}

std::vector<int> greedy_tokens(PolicyModel& policy, const std::vector<double>& condition) {
  return sample(policy, condition, 1.0, 0, true).tokens;
}

// --- likelihood training ------------------------------------------------------------

PolicyTrainConfig PolicyTrainConfig::from_config(const KeyValueConfig& config, PolicySpec* spec) {
  PolicyTrainConfig c;
  ConfigReader r(config);
  r.read("steps", c.steps, 1, 10000000);
  r.read("batch_size", c.batch_size, 1, 4096);
  r.read("learning_rate", c.learning_rate, 1e-12, 1.0);
  r.read("seed", c.seed);
  PolicySpec dummy;
  PolicySpec& s = spec ? *spec : dummy;
  r.read("width", s.width, 1, 4096);
  r.read("heads", s.heads, 1, 64);
  r.read("blocks", s.blocks, 0, 64);
  r.read("mlp_ratio", s.mlp_ratio, 1, 16);
  r.finish();
  return c;
}

std::string nll_log_json(const NllLogEntry& e) {
  nlohmann::ordered_json j;
  j["step"] = e.step;
  j["nll"] = e.nll;
  return j.dump();
}

double mean_token_nll(PolicyModel& policy, const std::vector<NllExample>& examples) {
  if (examples.empty()) throw Error(Errc::insufficient_data, "no examples");
  double acc = 0.0;
  for (const auto& ex : examples) {
    for (double lp : log_probs(policy, ex.condition, ex.tokens)) acc -= lp;
  }
  return acc / (static_cast<double>(examples.size()) * policy.spec.seq_len);
}

std::vector<NllLogEntry> train_nll(PolicyModel& policy, const std::vector<NllExample>& examples,
                                   const PolicyTrainConfig& config,
                                   const std::function<void(const NllLogEntry&)>& on_step) {
  if (examples.empty()) throw Error(Errc::insufficient_data, "policy training set is empty");
  for (const auto& ex : examples) {
    check_condition(policy.spec, ex.condition);
    check_tokens(policy.spec, ex.tokens);
  }
  ad::Adam<double> adam(policy.parameter_ptrs(), {.lr = config.learning_rate});
  Rng rng(config.seed);
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());
  std::size_t cursor = 0;

  std::vector<NllLogEntry> log;
  for (int step = 1; step <= config.steps; ++step) {
    adam.zero_grad();
    const int batch = std::min<int>(config.batch_size, static_cast<int>(examples.size()));
    double nll = 0.0;
    for (int b = 0; b < batch; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(order.begin(), order.end());
        cursor = 0;
      }
      const NllExample& ex = examples[order[cursor++]];
      Graph<double> g;
      const auto p = bind_policy(g, policy, true);
      Var loss = g.nll(g.log_softmax(policy_logits(g, p, policy.spec, ex.condition, ex.tokens)), ex.tokens);
      g.backward(loss, Tensor<double>({1}, {1.0 / batch}));
      nll += g.value(loss).data[0];
    }
    nll /= batch;
    if (!std::isfinite(nll)) throw Error(Errc::non_finite, "non-finite NLL at step " + std::to_string(step));
    adam.step();
    NllLogEntry entry{step, nll};
    log.push_back(entry);
    if (on_step) on_step(entry);
  }
  return log;
}

// --- checkpoints ----------------------------------------------------------------------

Checkpoint policy_to_checkpoint(const PolicyModel& policy) {
  Checkpoint ckpt;
  ckpt.kind = "policy";
  const PolicySpec& s = policy.spec;
  ckpt.meta = {{"vocab", std::to_string(s.vocab)},   {"seq_len", std::to_string(s.seq_len)},
               {"width", std::to_string(s.width)},   {"heads", std::to_string(s.heads)},
               {"blocks", std::to_string(s.blocks)}, {"condition_dim", std::to_string(s.condition_dim)},
               {"mlp_ratio", std::to_string(s.mlp_ratio)}};
  for (const auto& p : policy.params) {
    ckpt.tensors.push_back({p.name, p.value.shape, std::vector<float>(p.value.data.begin(), p.value.data.end())});
  }
  return ckpt;
}

PolicyModel policy_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "policy") throw Error(Errc::format, "checkpoint kind '" + ckpt.kind + "' is not a policy");
  PolicySpec s;
  s.vocab = ckpt.meta_int("vocab");
  s.seq_len = ckpt.meta_int("seq_len");
  s.width = ckpt.meta_int("width");
  s.heads = ckpt.meta_int("heads");
  s.blocks = ckpt.meta_int("blocks");
  s.condition_dim = ckpt.meta_int("condition_dim");
  s.mlp_ratio = ckpt.meta_int("mlp_ratio");
  PolicyModel m = make_policy(s, 0);
  for (auto& p : m.params) {
    const NamedTensor& t = ckpt.tensor(p.name);
    if (t.shape != p.value.shape) throw Error(Errc::dimension_mismatch, "checkpoint tensor '" + p.name + "' shape");
    p.value.data.assign(t.data.begin(), t.data.end());
  }
  return m;
}

}  // namespace acetone
