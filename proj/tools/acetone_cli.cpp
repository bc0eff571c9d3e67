// acetone: command-line pipelines over the LUT engine, tokenizer, curation,
// policy and GRPO modules.

#include <Eigen/Core>
#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "acetone/checkpoint.hpp"
#include "acetone/color.hpp"
#include "acetone/config.hpp"
#include "acetone/curation.hpp"
#include "acetone/error.hpp"
#include "acetone/grpo.hpp"
#include "acetone/io.hpp"
#include "acetone/lut.hpp"
#include "acetone/random.hpp"
#include "acetone/synth.hpp"
#include "acetone/token_policy.hpp"
#include "acetone/tokenizer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace acetone;

namespace {

struct Common {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string config;
  std::string out;
  int verbose = 0;
};

KeyValueConfig load_config(const std::string& path) {
  return path.empty() ? KeyValueConfig{} : KeyValueConfig::load(path);
}

void note(const Common& c, const std::string& msg) {
  if (c.verbose > 0) std::cerr << msg << '\n';
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io, "cannot open '" + path.string() + "' for writing");
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_output(path);
  out << text;
  if (!out) throw Error(Errc::io, "write failed for '" + path.string() + "'");
}

std::vector<NamedImage> load_images(const fs::path& manifest) {
  std::vector<NamedImage> out;
  for (const auto& e : read_manifest(manifest)) out.push_back({e.id, read_image(resolve_entry(manifest, e))});
  if (out.empty()) throw Error(Errc::insufficient_data, "image manifest '" + manifest.string() + "' is empty");
  return out;
}

std::vector<NamedLut> load_luts(const fs::path& manifest) {
  std::vector<NamedLut> out;
  for (const auto& e : read_manifest(manifest)) out.push_back({e.id, read_cube(resolve_entry(manifest, e)).lut});
  if (out.empty()) throw Error(Errc::insufficient_data, "LUT manifest '" + manifest.string() + "' is empty");
  return out;
}

ImageIndex image_index(const std::vector<NamedImage>& images) {
  ImageIndex idx;
  for (const auto& i : images) idx.emplace(i.id, i.image);
  return idx;
}

LutIndex lut_index(const std::vector<NamedLut>& luts) {
  LutIndex idx;
  for (const auto& l : luts) idx.emplace(l.id, l.lut);
  return idx;
}

Lut3d at_lattice(const Lut3d& lut) {
  return lut.resolution() == kTokenizerLattice ? lut : resample_lut(lut, kTokenizerLattice);
}

TokenizerModel load_tokenizer(const std::string& path) {
  return tokenizer_from_checkpoint(load_checkpoint(path, "tokenizer"));
}

std::vector<DatasetTuple> load_pairs(const std::vector<std::string>& paths) {
  std::vector<DatasetTuple> out;
  for (const auto& p : paths) {
    auto part = read_tuples(p);
    out.insert(out.end(), part.begin(), part.end());
  }
  if (out.empty()) throw Error(Errc::insufficient_data, "no dataset tuples in the given pair files");
  return out;
}

// Image used to report image-space error for LUT round trips.
const ImageBuf& probe_image() {
  static const ImageBuf img = synthetic_image(0, 64, 64);
  return img;
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

// --- subcommands ----------------------------------------------------------------

struct SynthArgs {
  int luts = 64;
  int images = 16;
  int size = 64;
};

int cmd_synth(const Common& c, const SynthArgs& a) {
  if (a.luts < 1 || a.images < 1 || a.size < 1) throw Error(Errc::invalid_parameter, "counts and size must be positive");
  const fs::path root = c.out;
  fs::create_directories(root / "luts");
  fs::create_directories(root / "images");
  std::vector<ManifestEntry> lut_entries, image_entries;
  for (int i = 0; i < a.luts; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "lut_%04d", i);
    const std::string rel = std::string("luts/") + id + ".cube";
    write_cube_file(root / rel, synthetic_grade_lut(mix_seed(c.seed, static_cast<std::uint64_t>(i))), 6, std::string(id));
    lut_entries.push_back({id, rel, SourceTag::filter});
  }
  for (int i = 0; i < a.images; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "img_%04d", i);
    const std::string rel = std::string("images/") + id + ".png";
    write_image(synthetic_image(mix_seed(c.seed, 1000000ULL + static_cast<std::uint64_t>(i)), a.size, a.size), root / rel);
    image_entries.push_back({id, rel, SourceTag::filter});
  }
  write_manifest(root / "luts.jsonl", lut_entries);
  write_manifest(root / "images.jsonl", image_entries);
  std::cout << json{{"luts", a.luts}, {"images", a.images}, {"out", root.string()}}.dump() << '\n';
  return 0;
}

struct ApplyArgs {
  std::string lut, image, gt;
};

int cmd_apply(const Common& c, const ApplyArgs& a) {
  const Lut3d lut = at_lattice(read_cube(a.lut).lut);
  const ImageBuf out = apply_lut(lut, read_image(a.image));
  write_image(out, c.out);
  if (!a.gt.empty()) {
    const HeuristicAestheticScorer scorer;
    std::cout << metric_report_json(evaluate_metrics(out, read_image(a.gt), scorer)) << '\n';
  }
  return 0;
}

struct TokenizeArgs {
  std::string checkpoint, lut, manifest;
};

int cmd_tokenize(const Common& c, const TokenizeArgs& a) {
  if (a.lut.empty() == a.manifest.empty()) throw Error(Errc::invalid_parameter, "give exactly one of --lut or --manifest");
  TokenizerModel model = load_tokenizer(a.checkpoint);
  const std::string hash = codebook_hash(model.codebook);
  std::vector<NamedLut> luts;
  if (!a.lut.empty()) {
    luts.push_back({fs::path(a.lut).stem().string(), read_cube(a.lut).lut});
  } else {
    luts = load_luts(a.manifest);
  }
  std::vector<TokenFileRecord> records;
  for (const auto& l : luts) {
    const Lut3d lut = at_lattice(l.lut);
    TokenFileRecord r{l.id, hash, tokenize(model, lut)};
    const Lut3d back = detokenize(model, r.tokens);
    const ImageBuf& probe = probe_image();
    std::cout << json{{"lut_id", l.id},
                      {"tokens", r.tokens.size()},
                      {"psnr_db", psnr(lut, back)},
                      {"mean_delta_e", mean_delta_e(apply_lut(back, probe), apply_lut(lut, probe))}}
                     .dump()
              << '\n';
    records.push_back(std::move(r));
  }
  write_tokens_file(c.out, records);
  return 0;
}

struct DetokenizeArgs {
  std::string checkpoint, tokens;
};

int cmd_detokenize(const Common& c, const DetokenizeArgs& a) {
  TokenizerModel model = load_tokenizer(a.checkpoint);
  TokenReadOptions opts;
  opts.codebook_size = model.codebook.size;
  opts.expected_hash = codebook_hash(model.codebook);
  const auto records = read_tokens_file(a.tokens, opts);
  if (records.empty()) throw Error(Errc::insufficient_data, "token file '" + a.tokens + "' has no records");
  const fs::path out = c.out;
  if (out.extension() == ".cube") {
    if (records.size() != 1) throw Error(Errc::invalid_parameter, "a .cube output takes exactly one token record");
    write_cube_file(out, detokenize(model, records[0].tokens), 6, records[0].lut_id);
  } else {
    fs::create_directories(out);
    for (const auto& r : records) write_cube_file(out / (r.lut_id + ".cube"), detokenize(model, r.tokens), 6, r.lut_id);
  }
  std::cout << json{{"records", records.size()}, {"tokens_per_record", kTokensPerLut}}.dump() << '\n';
  return 0;
}

struct TrainTokenizerArgs {
  std::string manifest, log;
  int epochs = 0;
};

int cmd_train_tokenizer(const Common& c, const TrainTokenizerArgs& a) {
  TokenizerTrainConfig cfg = TokenizerTrainConfig::from_config(load_config(c.config));
  if (c.seed_given) cfg.seed = c.seed;
  if (a.epochs > 0) cfg.epochs = a.epochs;
  std::vector<Lut3d> corpus;
  for (const auto& l : load_luts(a.manifest)) corpus.push_back(at_lattice(l.lut));
  const std::string log_path = a.log.empty() ? c.out + ".log.jsonl" : a.log;
  auto log = open_output(log_path);
  const auto result = train_tokenizer(corpus, cfg, [&](const TokenizerEpochLog& e) {
    log << epoch_log_json(e) << '\n';
    note(c, epoch_log_json(e));
  });
  save_checkpoint(c.out, tokenizer_to_checkpoint(result.model));
  const auto& last = result.log.back();
  std::cout << json{{"epochs", cfg.epochs}, {"rec", last.rec}, {"utilization", last.utilization}, {"checkpoint", c.out}}.dump()
            << '\n';
  return 0;
}

struct ClusterArgs {
  std::string manifest, manifest_out;
  int k = 64;
  int components = 64;
};

int cmd_cluster(const Common& c, const ClusterArgs& a) {
  const auto named = load_luts(a.manifest);
  std::vector<std::string> ids;
  std::vector<Lut3d> luts;
  for (const auto& l : named) {
    ids.push_back(l.id);
    luts.push_back(at_lattice(l.lut));
  }
  // PCA on n points has at most n-1 components.
  const int components = std::min(a.components, std::max(1, static_cast<int>(luts.size()) - 1));
  const FuseLibrary lib = build_fuse_library(ids, luts, a.k, components, c.seed);
  json j;
  j["k"] = a.k;
  j["components"] = components;
  j["representatives"] = lib.representative_ids;
  json assign = json::object();
  for (const auto& [id, cluster] : lib.assignment) assign[id] = cluster;
  j["assignment"] = assign;
  j["inertia"] = lib.inertia_history.empty() ? 0.0 : lib.inertia_history.back();
  j["inertia_history"] = lib.inertia_history;
  j["explained_variance"] = lib.explained_variance;
  write_text(c.out, j.dump(2) + "\n");
  if (!a.manifest_out.empty()) {
    const auto entries = read_manifest(a.manifest);
    std::vector<ManifestEntry> fused;
    for (const auto& id : lib.representative_ids) {
      const auto it = std::find_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.id == id; });
      fused.push_back({id, fs::absolute(resolve_entry(a.manifest, *it)).lexically_normal().string(), SourceTag::fuse});
    }
    write_manifest(a.manifest_out, fused);
  }
  std::cout << json{{"k", a.k}, {"inertia", j["inertia"]}, {"representatives", lib.representative_ids.size()}}.dump() << '\n';
  return 0;
}

struct BuildPairsArgs {
  std::string images, luts, task = "transfer";
  int count = 256;
  int eval_count = 0;
  double eval_fraction = 0.25;
};

int cmd_build_pairs(const Common& c, const BuildPairsArgs& a) {
  const PairTask task = parse_pair_task(a.task);
  const auto images = load_images(a.images);
  const auto luts = load_luts(a.luts);
  std::vector<std::string> image_ids, lut_ids;
  for (const auto& i : images) image_ids.push_back(i.id);
  for (const auto& l : luts) lut_ids.push_back(l.id);
  const int min_side = task == PairTask::transfer ? 2 : 1;
  const SplitIds split = split_ids(image_ids, lut_ids, a.eval_fraction, c.seed, min_side);
  auto subset = [](const auto& all, const std::vector<std::string>& keep) {
    std::remove_cvref_t<decltype(all)> out;
    for (const auto& x : all) {
      if (std::find(keep.begin(), keep.end(), x.id) != keep.end()) out.push_back(x);
    }
    return out;
  };
  const int eval_count = a.eval_count > 0 ? a.eval_count : std::max(1, a.count / 4);
  const auto train = build_pairs(task, subset(images, split.train_images), subset(luts, split.train_luts), a.count,
                                 mix_seed(c.seed, 1));
  const auto eval = build_pairs(task, subset(images, split.eval_images), subset(luts, split.eval_luts), eval_count,
                                mix_seed(c.seed, 2));
  const fs::path root = c.out;
  fs::create_directories(root);
  write_tuples(root / "train.jsonl", train);
  write_tuples(root / "eval.jsonl", eval);
  json s;
  s["train_images"] = split.train_images;
  s["eval_images"] = split.eval_images;
  s["train_luts"] = split.train_luts;
  s["eval_luts"] = split.eval_luts;
  write_text(root / "split.json", s.dump(2) + "\n");
  std::cout << json{{"task", pair_task_name(task)}, {"train", train.size()}, {"eval", eval.size()}}.dump() << '\n';
  return 0;
}

// Target tokens per LUT id, computed once.
class TokenCache {
 public:
  TokenCache(TokenizerModel& model, const LutIndex& luts) : model_(model), luts_(luts) {}

  const std::vector<int>& tokens(const std::string& lut_id) {
    auto it = cache_.find(lut_id);
    if (it != cache_.end()) return it->second;
    const auto lit = luts_.find(lut_id);
    if (lit == luts_.end()) throw Error(Errc::io, "unknown LUT '" + lut_id + "'");
    return cache_.emplace(lut_id, tokenize(model_, at_lattice(lit->second))).first->second;
  }

 private:
  TokenizerModel& model_;
  const LutIndex& luts_;
  std::map<std::string, std::vector<int>> cache_;
};

struct PolicyDataArgs {
  std::string checkpoint, images, luts;
  std::vector<std::string> pairs;
};

struct TrainPolicyArgs {
  PolicyDataArgs data;
  std::string log;
  int steps = 0;
};

int cmd_train_policy(const Common& c, const TrainPolicyArgs& a) {
  PolicySpec spec;
  PolicyTrainConfig cfg = PolicyTrainConfig::from_config(load_config(c.config), &spec);
  if (c.seed_given) cfg.seed = c.seed;
  if (a.steps > 0) cfg.steps = a.steps;
  TokenizerModel tok = load_tokenizer(a.data.checkpoint);
  spec.vocab = tok.codebook.size;
  const ImageIndex images = image_index(load_images(a.data.images));
  const LutIndex luts = lut_index(load_luts(a.data.luts));
  TokenCache cache(tok, luts);

  std::vector<NllExample> style, instruct;
  for (const auto& t : load_pairs(a.data.pairs)) {
    NllExample ex{materialize_tuple(t, images, luts).condition, cache.tokens(t.lut_id)};
    (t.task == PairTask::transfer ? style : instruct).push_back(std::move(ex));
  }
  // Equal weight for style and instruction tuples: the smaller group is repeated.
  std::vector<NllExample> examples;
  if (!style.empty() && !instruct.empty()) {
    const std::size_t n = std::max(style.size(), instruct.size());
    for (std::size_t i = 0; i < n; ++i) {
      examples.push_back(style[i % style.size()]);
      examples.push_back(instruct[i % instruct.size()]);
    }
  } else {
    examples = style.empty() ? instruct : style;
  }

  PolicyModel policy = make_policy(spec, cfg.seed);
  const std::string log_path = a.log.empty() ? c.out + ".log.jsonl" : a.log;
  auto log = open_output(log_path);
  const auto entries = train_nll(policy, examples, cfg, [&](const NllLogEntry& e) {
    log << nll_log_json(e) << '\n';
    note(c, nll_log_json(e));
  });
  save_checkpoint(c.out, policy_to_checkpoint(policy));
  std::cout << json{{"examples", examples.size()},
                    {"steps", cfg.steps},
                    {"initial_nll", entries.front().nll},
                    {"final_nll", entries.back().nll},
                    {"checkpoint", c.out}}
                   .dump()
            << '\n';
  return 0;
}

struct GrpoArgs {
  PolicyDataArgs data;
  std::string policy, log;
  int steps = 0;
  int group_size = 0;
};

int cmd_grpo(const Common& c, const GrpoArgs& a) {
  GrpoConfig cfg = GrpoConfig::from_config(load_config(c.config));
  if (c.seed_given) cfg.seed = c.seed;
  if (a.steps > 0) cfg.steps = a.steps;
  if (a.group_size > 0) cfg.group_size = a.group_size;
  TokenizerModel tok = load_tokenizer(a.data.checkpoint);
  PolicyModel ref = policy_from_checkpoint(load_checkpoint(a.policy, "policy"));
  PolicyModel policy = ref;
  const ImageIndex images = image_index(load_images(a.data.images));
  const LutIndex luts = lut_index(load_luts(a.data.luts));
  const HeuristicAestheticScorer scorer;

  std::vector<GrpoPrompt> prompts;
  const auto tuples = load_pairs(a.data.pairs);
  for (std::size_t i = 0; i < tuples.size(); ++i) {
    TupleInstance inst = materialize_tuple(tuples[i], images, luts);
    prompts.push_back({std::to_string(i), inst.condition,
                       image_reward(tok, std::move(inst.query), std::move(inst.gt), scorer, cfg.reward_weights)});
  }
  const std::string log_path = a.log.empty() ? c.out + ".log.jsonl" : a.log;
  auto log = open_output(log_path);
  GrpoCallbacks cb;
  cb.on_step = [&](const GrpoLogEntry& e) {
    log << grpo_log_json(e) << '\n';
    note(c, grpo_log_json(e));
  };
  cb.on_checkpoint = [&](int step) {
    save_checkpoint(c.out + ".step" + std::to_string(step), policy_to_checkpoint(policy));
  };
  const auto entries = train_grpo(policy, ref, prompts, cfg, cb);
  save_checkpoint(c.out, policy_to_checkpoint(policy));

  const std::size_t w = std::min<std::size_t>(20, entries.size());
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < w; ++i) {
    first += entries[i].mean_reward;
    last += entries[entries.size() - 1 - i].mean_reward;
  }
  json summary{{"steps", entries.size()}, {"group_size", cfg.group_size}, {"checkpoint", c.out}};
  if (w > 0) {
    summary["initial_window_reward"] = first / static_cast<double>(w);
    summary["final_window_reward"] = last / static_cast<double>(w);
  }
  std::cout << summary.dump() << '\n';
  return 0;
}

struct EvalArgs {
  PolicyDataArgs data;
  std::string policy, predictions;
};

int cmd_eval(const Common& c, const EvalArgs& a) {
  if (a.policy.empty() == a.predictions.empty()) {
    throw Error(Errc::invalid_parameter, "give exactly one of --policy or --predictions");
  }
  TokenizerModel tok = load_tokenizer(a.data.checkpoint);
  const ImageIndex images = image_index(load_images(a.data.images));
  const LutIndex luts = lut_index(load_luts(a.data.luts));
  const auto tuples = load_pairs(a.data.pairs);
  const HeuristicAestheticScorer scorer;

  std::optional<PolicyModel> policy;
  std::map<std::string, std::vector<int>> predicted;
  if (!a.policy.empty()) {
    policy = policy_from_checkpoint(load_checkpoint(a.policy, "policy"));
  } else {
    TokenReadOptions opts;
    opts.codebook_size = tok.codebook.size;
    opts.expected_hash = codebook_hash(tok.codebook);
    for (auto& r : read_tokens_file(a.predictions, opts)) predicted.emplace(r.lut_id, std::move(r.tokens));
  }

  json samples = json::array();
  MetricReport mean;
  for (std::size_t i = 0; i < tuples.size(); ++i) {
    const TupleInstance inst = materialize_tuple(tuples[i], images, luts);
    std::vector<int> tokens;
    if (policy) {
      tokens = greedy_tokens(*policy, inst.condition);
    } else {
      // Records are matched by tuple index first, then by LUT id.
      auto it = predicted.find(std::to_string(i));
      if (it == predicted.end()) it = predicted.find(tuples[i].lut_id);
      if (it == predicted.end()) {
        throw Error(Errc::io, "no prediction for tuple " + std::to_string(i) + " (lut '" + tuples[i].lut_id + "')");
      }
      tokens = it->second;
    }
    const MetricReport m = evaluate_metrics(apply_lut(detokenize(tok, tokens), inst.query), inst.gt, scorer);
    samples.push_back({{"index", i},
                       {"task", pair_task_name(tuples[i].task)},
                       {"lut_id", tuples[i].lut_id},
                       {"psnr_db", m.psnr_db},
                       {"mean_delta_e", m.mean_delta_e},
                       {"color_reward", m.color_reward},
                       {"aesthetic_reward", m.aesthetic_reward}});
    mean.psnr_db += m.psnr_db;
    mean.mean_delta_e += m.mean_delta_e;
    mean.color_reward += m.color_reward;
    mean.aesthetic_reward += m.aesthetic_reward;
  }
  const double n = static_cast<double>(tuples.size());
  json aggregate{{"count", tuples.size()},
                 {"psnr_db", mean.psnr_db / n},
                 {"mean_delta_e", mean.mean_delta_e / n},
                 {"color_reward", mean.color_reward / n},
                 {"aesthetic_reward", mean.aesthetic_reward / n},
                 {"lpips", "n/a"}};
  write_text(c.out, json{{"aggregate", aggregate}, {"samples", samples}}.dump(2) + "\n");

  // Aesthetic score shown on the 0-5 scale.
  char row[160];
  std::snprintf(row, sizeof row, "| %-11s | %5s | %6s | %5s | %6s |\n", policy ? "policy" : "predictions",
                fixed2(5.0 * mean.aesthetic_reward / n).c_str(), fixed2(mean.psnr_db / n).c_str(), "n/a",
                fixed2(mean.mean_delta_e / n).c_str());
  std::cout << "| Method      | Aes.  | PSNR   | LPIPS | dE     |\n"
            << "|-------------|-------|--------|-------|--------|\n"
            << row;
  return 0;
}

void apply_thread_cap() {
  const char* env = std::getenv("ACETONE_THREADS");
  if (!env || !*env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1 || n > 4096) throw Error(Errc::config, "ACETONE_THREADS must be a positive integer, got '" + std::string(env) + "'");
  Eigen::setNbThreads(static_cast<int>(n));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acetone: generative LUT color grading toolkit"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub, bool needs_out) {
    auto* seed = sub->add_option("--seed", common.seed, "random seed");
    seed->each([&](const std::string&) { common.seed_given = true; });
    sub->add_option("--config", common.config, "key=value config file")->check(CLI::ExistingFile);
    auto* out = sub->add_option("--out", common.out, "primary output path");
    if (needs_out) out->required();
    sub->add_flag("-v,--verbose", common.verbose, "log progress to stderr");
  };
  auto add_data = [&](CLI::App* sub, PolicyDataArgs& d) {
    sub->add_option("--checkpoint", d.checkpoint, "tokenizer checkpoint")->required();
    sub->add_option("--images", d.images, "image manifest (JSON lines)")->required();
    sub->add_option("--luts", d.luts, "LUT manifest (JSON lines)")->required();
    sub->add_option("--pairs", d.pairs, "dataset tuple files (JSON lines)")->required();
  };

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth", "write a synthetic LUT and image corpus with manifests");
  add_common(s_synth, true);
  s_synth->add_option("--luts", synth.luts, "number of LUTs");
  s_synth->add_option("--images", synth.images, "number of images");
  s_synth->add_option("--size", synth.size, "image edge in pixels");

  ApplyArgs apply;
  auto* s_apply = app.add_subcommand("apply", "apply a .cube LUT to an image");
  add_common(s_apply, true);
  s_apply->add_option("--lut", apply.lut, ".cube file")->required();
  s_apply->add_option("--image", apply.image, "input image (.png/.ppm)")->required();
  s_apply->add_option("--gt", apply.gt, "ground-truth image; prints a metric report");

  TokenizeArgs tokenize_args;
  auto* s_tok = app.add_subcommand("tokenize", "encode LUTs to 64 tokens each");
  add_common(s_tok, true);
  s_tok->add_option("--checkpoint", tokenize_args.checkpoint, "tokenizer checkpoint")->required();
  s_tok->add_option("--lut", tokenize_args.lut, "single .cube file");
  s_tok->add_option("--manifest", tokenize_args.manifest, "LUT manifest");

  DetokenizeArgs detok;
  auto* s_detok = app.add_subcommand("detokenize", "decode token records to .cube files");
  add_common(s_detok, true);
  s_detok->add_option("--checkpoint", detok.checkpoint, "tokenizer checkpoint")->required();
  s_detok->add_option("--tokens", detok.tokens, "token file")->required();

  TrainTokenizerArgs ttok;
  auto* s_ttok = app.add_subcommand("train-tokenizer", "train the VQ tokenizer on a LUT manifest");
  add_common(s_ttok, true);
  s_ttok->add_option("--manifest", ttok.manifest, "LUT manifest")->required();
  s_ttok->add_option("--epochs", ttok.epochs, "override the configured epoch count");
  s_ttok->add_option("--log", ttok.log, "epoch log (JSON lines)");

  ClusterArgs cluster;
  auto* s_cluster = app.add_subcommand("cluster", "fuse a LUT library with PCA and k-means");
  add_common(s_cluster, true);
  s_cluster->add_option("--manifest", cluster.manifest, "LUT manifest")->required();
  s_cluster->add_option("--k", cluster.k, "cluster count");
  s_cluster->add_option("--components", cluster.components, "PCA components");
  s_cluster->add_option("--manifest-out", cluster.manifest_out, "manifest of the representatives");

  BuildPairsArgs pairs;
  auto* s_pairs = app.add_subcommand("build-pairs", "sample train/eval dataset tuples over a disjoint split");
  add_common(s_pairs, true);
  s_pairs->add_option("--images", pairs.images, "image manifest")->required();
  s_pairs->add_option("--luts", pairs.luts, "LUT manifest")->required();
  s_pairs->add_option("--task", pairs.task, "generate, transfer or instruct");
  s_pairs->add_option("--count", pairs.count, "training tuples");
  s_pairs->add_option("--eval-count", pairs.eval_count, "evaluation tuples (default count/4)");
  s_pairs->add_option("--eval-fraction", pairs.eval_fraction, "share of ids held out");

  TrainPolicyArgs tpol;
  auto* s_tpol = app.add_subcommand("train-policy", "likelihood training of the token policy");
  add_common(s_tpol, true);
  add_data(s_tpol, tpol.data);
  s_tpol->add_option("--steps", tpol.steps, "override the configured step count");
  s_tpol->add_option("--log", tpol.log, "step log (JSON lines)");

  GrpoArgs grpo;
  auto* s_grpo = app.add_subcommand("grpo", "refine a policy with group-relative policy optimization");
  add_common(s_grpo, true);
  add_data(s_grpo, grpo.data);
  s_grpo->add_option("--policy", grpo.policy, "reference policy checkpoint")->required();
  s_grpo->add_option("--steps", grpo.steps, "override the configured step count");
  s_grpo->add_option("--group-size", grpo.group_size, "rollouts per prompt");
  s_grpo->add_option("--log", grpo.log, "step log (JSON lines)");

  EvalArgs eval;
  auto* s_eval = app.add_subcommand("eval", "score policy outputs or token predictions on dataset tuples");
  add_common(s_eval, true);
  add_data(s_eval, eval.data);
  s_eval->add_option("--policy", eval.policy, "policy checkpoint (greedy decoding)");
  s_eval->add_option("--predictions", eval.predictions, "token file keyed by tuple index or LUT id");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    apply_thread_cap();
    if (*s_synth) return cmd_synth(common, synth);
    if (*s_apply) return cmd_apply(common, apply);
    if (*s_tok) return cmd_tokenize(common, tokenize_args);
    if (*s_detok) return cmd_detokenize(common, detok);
    if (*s_ttok) return cmd_train_tokenizer(common, ttok);
    if (*s_cluster) return cmd_cluster(common, cluster);
    if (*s_pairs) return cmd_build_pairs(common, pairs);
    if (*s_tpol) return cmd_train_policy(common, tpol);
    if (*s_grpo) return cmd_grpo(common, grpo);
    if (*s_eval) return cmd_eval(common, eval);
  } catch (const Error& e) {
    std::cerr << "acetone: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "acetone: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
