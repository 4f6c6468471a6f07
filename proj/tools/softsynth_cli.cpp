// softsynth: pretrain a backbone, learn domain soft tokens, synthesize,
// filter, pair, diagnose and sweep.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "softsynth/backbone.hpp"
#include "softsynth/config.hpp"
#include "softsynth/diagnostics.hpp"
#include "softsynth/representation.hpp"
#include "softsynth/sweep.hpp"
#include "softsynth/synthesis.hpp"
#include "softsynth/toy_domains.hpp"
#include "softsynth/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace softsynth;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

/// --out if given, else $SOFTSYNTH_OUT_DIR/<fallback>, else ./<fallback>.
fs::path output_path(const std::string& out, const std::string& fallback) {
  if (!out.empty()) return out;
  if (const char* dir = std::getenv("SOFTSYNTH_OUT_DIR"); dir && *dir) {
    fs::create_directories(dir);
    return fs::path(dir) / fallback;
  }
  return fallback;
}

fs::path sidecar(const fs::path& out) { return fs::path(out.string() + ".config.json"); }

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw RuntimeFailure("cannot write '" + path.string() + "'");
  f << j.dump(2) << '\n';
}

void require_path(const std::string& value, const std::string& flag) {
  if (value.empty()) throw ValidationError("missing required option " + flag);
}

KeyValues config_or_empty(const std::string& path) { return path.empty() ? KeyValues{} : load_key_values(path); }

std::string take(KeyValues& kv, const std::string& key, const std::string& fallback = "") {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  std::string v = it->second;
  kv.erase(it);
  return v;
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_number<double>("--values", item));
  }
  return out;
}

Vocabulary vocab_from_arg(const std::string& arg) {
  if (arg.empty() || arg == "byte") return Vocabulary::byte_level();
  return Vocabulary::restricted(arg, true);
}

// ---------------------------------------------------------------------------

struct PretrainOpts {
  std::string config, corpus, out;
  std::optional<std::uint64_t> seed;
};

int run_pretrain(const PretrainOpts& o) {
  KeyValues kv = config_or_empty(o.config);
  std::string corpus_path = o.corpus.empty() ? take(kv, "corpus") : (take(kv, "corpus"), o.corpus);
  if (corpus_path.empty()) throw ValidationError("missing corpus: pass --corpus or set 'corpus' in the config");
  std::string out_cfg = take(kv, "out");
  const Vocabulary vocab = vocab_from_arg(take(kv, "vocab", "byte"));

  ArchConfig arch;
  arch.d_model = parse_number<int>("d_model", take(kv, "d_model", "64"));
  arch.n_layers = parse_number<int>("n_layers", take(kv, "n_layers", "2"));
  arch.n_heads = parse_number<int>("n_heads", take(kv, "n_heads", "4"));
  arch.d_ff = parse_number<int>("d_ff", take(kv, "d_ff", std::to_string(4 * arch.d_model)));
  arch.max_positions = parse_number<int>("max_positions", take(kv, "max_positions", "768"));

  PretrainConfig pc;
  pc.max_steps = parse_number<int>("max_steps", take(kv, "max_steps", std::to_string(pc.max_steps)));
  pc.batch_size = parse_number<int>("batch_size", take(kv, "batch_size", std::to_string(pc.batch_size)));
  pc.window = parse_number<int>("window", take(kv, "window", std::to_string(pc.window)));
  pc.learning_rate = parse_number<double>("learning_rate", take(kv, "learning_rate", "0.003"));
  pc.warmup_steps = parse_number<int>("warmup_steps", take(kv, "warmup_steps", std::to_string(pc.warmup_steps)));
  pc.eval_every = parse_number<int>("eval_every", take(kv, "eval_every", std::to_string(pc.eval_every)));
  pc.patience = parse_number<int>("patience", take(kv, "patience", std::to_string(pc.patience)));
  pc.holdout_fraction = parse_number<double>("holdout_fraction", take(kv, "holdout_fraction", "0.1"));
  pc.random_offsets = parse_bool("random_offsets", take(kv, "random_offsets", "true"));
  pc.seed = parse_number<std::uint64_t>("seed", take(kv, "seed", "0"));
  if (o.seed) pc.seed = *o.seed;
  if (!kv.empty()) throw ValidationError("unknown pretrain config key '" + kv.begin()->first + "'");

  const Corpus corpus = load_corpus(corpus_path);
  PretrainReport report;
  const Backbone model = pretrain_backbone(corpus, vocab, arch, pc, &report);
  const fs::path out = output_path(o.out.empty() ? out_cfg : o.out, "backbone.ckpt");
  model.save(out);

  json resolved{{"command", "pretrain"},
                {"corpus", corpus_path},
                {"vocab", vocab.is_byte_level() ? "byte" : vocab.characters()},
                {"arch", model.to_container().meta["arch"]},
                {"pretrain",
                 {{"max_steps", pc.max_steps},
                  {"batch_size", pc.batch_size},
                  {"window", pc.window},
                  {"learning_rate", pc.learning_rate},
                  {"warmup_steps", pc.warmup_steps},
                  {"eval_every", pc.eval_every},
                  {"patience", pc.patience},
                  {"holdout_fraction", pc.holdout_fraction},
                  {"random_offsets", pc.random_offsets},
                  {"seed", std::to_string(pc.seed)}}},
                {"result",
                 {{"steps", report.steps},
                  {"heldout_nll", report.final_heldout_nll},
                  {"unigram_entropy", report.unigram_entropy},
                  {"early_stopped", report.early_stopped},
                  {"checksum", model.checksum_hex()},
                  {"digest", file_digest(out)}}}};
  write_json(sidecar(out), resolved);
  std::cout << resolved["result"].dump() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainOpts {
  std::string config, backbone, corpus, out, mode, init;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda, lr;
  std::optional<int> k, l, steps, batch_size, max_len;
  int workers = 1;
};

TrainConfig resolve_train_config(const TrainOpts& o) {
  TrainConfig cfg;
  cfg.apply(config_or_empty(o.config));
  if (o.seed) cfg.seed = *o.seed;
  if (o.lambda) cfg.lambda = *o.lambda;
  if (o.lr) cfg.learning_rate = *o.lr;
  if (o.k) cfg.k = *o.k;
  if (o.l) cfg.l = *o.l;
  if (o.steps) cfg.steps = *o.steps;
  if (o.batch_size) cfg.batch_size = *o.batch_size;
  if (o.max_len) cfg.max_len = *o.max_len;
  if (!o.mode.empty()) cfg.mode = parse_contrastive_mode(o.mode);
  if (!o.init.empty()) cfg.init = parse_init_strategy(o.init);
  cfg.validate();
  return cfg;
}

int run_train(const TrainOpts& o) {
  require_path(o.backbone, "--backbone");
  require_path(o.corpus, "--corpus");
  TrainConfig cfg = resolve_train_config(o);
  const Backbone backbone = Backbone::load(o.backbone);
  const Corpus corpus = load_corpus(o.corpus);
  const fs::path out = output_path(o.out, "representation.ckpt");
  const fs::path metrics = fs::path(out.string() + ".metrics.jsonl");

  FitResult result;
  try {
    result = fit(corpus, backbone, cfg);
  } catch (const TrainingDiverged& e) {
    save_representation(make_checkpoint(e.last_good(), backbone), out);
    std::cerr << "last good representation kept at " << out << '\n';
    throw;
  }
  save_representation(make_checkpoint(result, backbone), out);
  {
    std::ofstream m(metrics);
    result.report.write_metrics(m);
  }
  json resolved{{"command", "train"},
                {"backbone", o.backbone},
                {"backbone_checksum", backbone.checksum_hex()},
                {"corpus", o.corpus},
                {"config", cfg.to_json()},
                {"workers", o.workers},
                {"result",
                 {{"steps", result.report.steps_executed},
                  {"final_l1", result.report.final_loss.likelihood},
                  {"final_l2", std::isfinite(result.report.final_loss.contrastive)
                                   ? json(result.report.final_loss.contrastive)
                                   : json(nullptr)},
                  {"final_total", result.report.final_loss.total},
                  {"per_token_nll", result.report.final_per_token_nll},
                  {"digest", file_digest(out)}}}};
  write_json(sidecar(out), resolved);
  std::cout << resolved["result"].dump() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct SynthOpts {
  std::string config, backbone, representation, out;
  int count = 2000;
  double temperature = 0.8;
  int max_len = 256;
  std::uint64_t seed = 0;
  int workers = 1;
};

int run_synthesize(const SynthOpts& o) {
  require_path(o.backbone, "--backbone");
  require_path(o.representation, "--representation");
  SynthesisConfig cfg;
  KeyValues kv = config_or_empty(o.config);
  cfg.count = parse_number<int>("count", take(kv, "count", std::to_string(o.count)));
  cfg.temperature = parse_number<double>("temperature", take(kv, "temperature", std::to_string(o.temperature)));
  cfg.max_len = parse_number<int>("max_len", take(kv, "max_len", std::to_string(o.max_len)));
  cfg.seed = parse_number<std::uint64_t>("seed", take(kv, "seed", std::to_string(o.seed)));
  cfg.dedup = parse_bool("dedup", take(kv, "dedup", "true"));
  if (!kv.empty()) throw ValidationError("unknown synthesis config key '" + kv.begin()->first + "'");
  cfg.workers = o.workers;
  cfg.validate();

  const Backbone backbone = Backbone::load(o.backbone);
  const auto ckpt = load_representation(o.representation, backbone);
  const std::string checkpoint_id = file_digest(o.representation);
  const auto samples = synthesize(backbone, ckpt.domain, cfg, checkpoint_id);
  const fs::path out = output_path(o.out, "synthetic.jsonl");
  {
    std::ofstream f(out);
    if (!f) throw RuntimeFailure("cannot write '" + out.string() + "'");
    write_synthetic(f, samples);
  }
  std::size_t truncated = 0;
  for (const auto& s : samples) truncated += s.input_truncated ? 1 : 0;
  json resolved{{"command", "synthesize"},
                {"backbone", o.backbone},
                {"representation", o.representation},
                {"checkpoint", checkpoint_id},
                {"config", cfg.to_json()},
                {"result", {{"count", samples.size()}, {"truncated", truncated}, {"digest", file_digest(out)}}}};
  write_json(sidecar(out), resolved);
  std::cout << resolved["result"].dump() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct FilterOpts {
  std::string in, out;
  std::size_t min_length = 1, max_length = 4096;
  double min_printable = 0.95, max_repeat = 0.5;
  bool no_dedup = false;
};

int run_filter(const FilterOpts& o) {
  require_path(o.in, "--in");
  std::ifstream in(o.in);
  if (!in) throw ValidationError("cannot open '" + o.in + "'");
  auto samples = read_synthetic(in);
  std::vector<FilterRule> rules{FilterRule::length(o.min_length, o.max_length), FilterRule::printable(o.min_printable),
                                FilterRule::repeated_substring(o.max_repeat)};
  if (!o.no_dedup) rules.push_back(FilterRule::duplicate());
  samples = filter(std::move(samples), rules);
  const fs::path out = output_path(o.out, "filtered.jsonl");
  {
    std::ofstream f(out);
    if (!f) throw RuntimeFailure("cannot write '" + out.string() + "'");
    write_synthetic(f, samples);
  }
  json counts = json::object();
  for (auto [k, v] : verdict_counts(samples)) counts[k] = v;
  json resolved{{"command", "filter"},
                {"in", o.in},
                {"rules",
                 {{"min_length", o.min_length},
                  {"max_length", o.max_length},
                  {"min_printable", o.min_printable},
                  {"max_repeat", o.max_repeat},
                  {"dedup", !o.no_dedup}}},
                {"result", {{"counts", counts}, {"digest", file_digest(out)}}}};
  write_json(sidecar(out), resolved);
  std::cout << counts.dump() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct PairOpts {
  std::string backbone, representation, in, out;
  double temperature = 0.8;
  int max_len = 256;
  std::uint64_t seed = 0;
};

int run_pair(const PairOpts& o) {
  require_path(o.backbone, "--backbone");
  require_path(o.representation, "--representation");
  require_path(o.in, "--in");
  const Backbone backbone = Backbone::load(o.backbone);
  const auto ckpt = load_representation(o.representation, backbone);
  std::ifstream in(o.in);
  if (!in) throw ValidationError("cannot open '" + o.in + "'");
  auto paired = generate_outputs(backbone, ckpt.domain, kept(read_synthetic(in)), o.temperature, o.max_len, o.seed);

  std::vector<ReferenceSample> records;
  std::size_t flagged = 0;
  for (const auto& s : paired) {
    ReferenceSample r;
    r.id = "syn-" + std::to_string(s.provenance.draw_index);
    r.input_text = s.input_text;
    r.output_text = s.output_text.value_or("");
    r.extra["provenance"] = to_json(s)["provenance"];
    r.extra["verdict"] = "kept";
    if (s.output_truncated) {
      r.extra["output_truncated"] = true;
      ++flagged;
    }
    records.push_back(std::move(r));
  }
  const fs::path out = output_path(o.out, "pairs.jsonl");
  save_corpus(out, Corpus(std::move(records)));
  json resolved{{"command", "pair"},
                {"backbone", o.backbone},
                {"representation", o.representation},
                {"in", o.in},
                {"temperature", o.temperature},
                {"max_len", o.max_len},
                {"seed", std::to_string(o.seed)},
                {"result", {{"pairs", paired.size()}, {"truncated_outputs", flagged}, {"digest", file_digest(out)}}}};
  write_json(sidecar(out), resolved);
  std::cout << resolved["result"].dump() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct DiagnoseOpts {
  std::string backbone, base, full, corpus, samples, scatter, out;
  std::vector<double> epsilons;
  int max_len = 4;
};

int run_diagnose(const DiagnoseOpts& o) {
  require_path(o.backbone, "--backbone");
  std::vector<double> eps = o.epsilons.empty() ? std::vector<double>{1e-3} : o.epsilons;
  for (double e : eps) check_epsilon(e);
  const Backbone backbone = Backbone::load(o.backbone);
  std::vector<json> records;
  records.push_back({{"record", "config"},
                     {"backbone", o.backbone},
                     {"base", o.base},
                     {"full", o.full},
                     {"corpus", o.corpus},
                     {"samples", o.samples},
                     {"epsilons", eps},
                     {"max_len", o.max_len}});

  std::optional<RepresentationCheckpoint> base, full;
  if (!o.base.empty()) base = load_representation(o.base, backbone);
  if (!o.full.empty()) full = load_representation(o.full, backbone);

  const double states = std::pow(static_cast<double>(backbone.arch().vocab_size), o.max_len);
  const bool enumerable = states <= kEnumerationGuard;
  auto exact_summaries = [&](const char* name, const RepresentationCheckpoint& c) {
    const auto dist = enumerate_distribution(backbone, compose_prefix(c.domain), o.max_len);
    for (double e : eps) {
      json r = summarize(dist, e).to_json();
      r["record"] = "summary";
      r["source"] = "exact";
      r["checkpoint"] = name;
      r["truncated_mass"] = dist.truncated_mass;
      records.push_back(r);
    }
  };
  if (enumerable) {
    if (base) exact_summaries("base", *base);
    if (full) exact_summaries("full", *full);
    if (base && full) {
      const auto cmp = compare_entropies(backbone, base->domain, full->domain, eps, o.max_len);
      for (const auto& v : cmp.verdicts) {
        json r = v.to_json();
        r["record"] = "support_expansion";
        records.push_back(r);
      }
    }
  } else if (base || full) {
    records.push_back({{"record", "note"},
                       {"message", "exact enumeration skipped: V^max_len exceeds 1e6; use --samples for empirical summaries"}});
  }

  if (!o.corpus.empty()) {
    const Corpus corpus = load_corpus(o.corpus);
    for (const auto* c : {base ? &*base : nullptr, full ? &*full : nullptr}) {
      if (!c || c->samples.rows() == 0) continue;
      const TrainConfig tc = TrainConfig::from_json(c->config);
      const auto seqs = prepare_sequences(corpus, backbone.vocab(), tc.max_len);
      records.push_back({{"record", "mi_proxy"},
                         {"checkpoint", c == &*base ? "base" : "full"},
                         {"value", mi_bound_proxy(backbone, c->domain, c->samples, seqs, tc.objective())},
                         {"note", "-L2 lower-bound proxy, not the mutual information"}});
    }
  }

  if (!o.samples.empty()) {
    std::ifstream in(o.samples);
    if (!in) throw ValidationError("cannot open '" + o.samples + "'");
    const auto samples = read_synthetic(in);
    std::vector<std::string> inputs;
    for (const auto& s : samples) inputs.push_back(s.input_text);
    json d = diversity_report(inputs).to_json();
    d["record"] = "diversity";
    records.push_back(d);
    std::map<std::string, double> freq;
    for (const auto& t : inputs) freq[t] += 1.0 / static_cast<double>(inputs.size());
    std::vector<double> p;
    for (auto& [t, f] : freq) p.push_back(f);
    double total = 0.0;
    for (double x : p) total += x;
    for (double& x : p) x /= total;
    for (double e : eps) {
      json r = summarize(p, e).to_json();
      r["record"] = "summary";
      r["source"] = "empirical";
      r["checkpoint"] = o.samples;
      records.push_back(r);
    }
    if (!o.scatter.empty()) {
      Matrix emb(static_cast<Eigen::Index>(inputs.size()), backbone.width());
      for (std::size_t i = 0; i < inputs.size(); ++i)
        emb.row(static_cast<Eigen::Index>(i)) = text_embedding(backbone, tokenize(inputs[i], backbone.vocab()));
      const Matrix pcs = principal_components_2d(emb);
      std::ofstream f(o.scatter);
      if (!f) throw RuntimeFailure("cannot write '" + o.scatter + "'");
      f << "index\tpc1\tpc2\n";
      for (Eigen::Index i = 0; i < pcs.rows(); ++i) f << i << '\t' << pcs(i, 0) << '\t' << pcs(i, 1) << '\n';
    }
  }

  const fs::path out = output_path(o.out, "diagnostics.jsonl");
  std::ofstream f(out);
  if (!f) throw RuntimeFailure("cannot write '" + out.string() + "'");
  for (const auto& r : records) {
    f << r.dump() << '\n';
    if (r["record"] != "config") std::cout << r.dump() << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct SweepOpts {
  std::string config, backbone, corpus, axis, values, out;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda;
  std::optional<int> k, l, steps, max_len;
  int count = 200;
  double temperature = 0.8;
  bool toy_template = false;
  int workers = 1;
};

int run_sweep(const SweepOpts& o) {
  require_path(o.backbone, "--backbone");
  require_path(o.corpus, "--corpus");
  require_path(o.axis, "--axis");
  const SweepAxis axis = parse_sweep_axis(o.axis);
  const std::vector<double> values = o.values.empty() ? default_grid(axis) : parse_values(o.values);
  validate_sweep_values(axis, values);
  TrainOpts t;
  t.config = o.config;
  t.seed = o.seed;
  t.lambda = o.lambda;
  t.k = o.k;
  t.l = o.l;
  t.steps = o.steps;
  t.max_len = o.max_len;
  const TrainConfig base = resolve_train_config(t);
  SynthesisConfig synth;
  synth.count = o.count;
  synth.temperature = o.temperature;
  synth.seed = base.seed;
  synth.max_len = base.max_len;
  synth.workers = o.workers;

  const Backbone backbone = Backbone::load(o.backbone);
  const Corpus corpus = load_corpus(o.corpus);
  std::optional<TwoFactorTemplate> tmpl;
  if (o.toy_template) tmpl = default_template(backbone.vocab());
  const auto rows = sweep(corpus, backbone, base, synth, axis, values, tmpl);

  const fs::path out = output_path(o.out, "sweep_" + to_string(axis) + ".jsonl");
  std::ofstream f(out);
  if (!f) throw RuntimeFailure("cannot write '" + out.string() + "'");
  for (const auto& r : rows) {
    f << r.to_json().dump() << '\n';
    std::cout << r.to_json().dump() << '\n';
  }
  write_json(sidecar(out), {{"command", "sweep"},
                            {"axis", to_string(axis)},
                            {"values", values},
                            {"backbone", o.backbone},
                            {"corpus", o.corpus},
                            {"train_config", base.to_json()},
                            {"synthesis_config", synth.to_json()}});
  return 0;
}

// ---------------------------------------------------------------------------

struct ToyOpts {
  std::string kind = "two-factor", vocab = "byte", out;
  std::size_t n = 32, chars = 50000;
  std::uint64_t seed = 0;
};

int run_toy(const ToyOpts& o) {
  const Vocabulary vocab = vocab_from_arg(o.vocab);
  Corpus corpus;
  if (o.kind == "two-factor") corpus = make_two_factor_domain(o.seed, o.n, vocab);
  else if (o.kind == "world") corpus = make_world_corpus(o.seed, o.chars, vocab);
  else throw ValidationError("unknown --kind '" + o.kind + "' (expected two-factor or world)");
  const fs::path out = output_path(o.out, o.kind + ".jsonl");
  save_corpus(out, corpus);
  std::cout << json{{"records", corpus.size()}, {"out", out.string()}}.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain soft-token learning and in-domain data synthesis against a frozen backbone"};
  app.require_subcommand(1);

  PretrainOpts pre;
  auto* c_pre = app.add_subcommand("pretrain", "Pretrain and freeze a small backbone on a corpus");
  c_pre->add_option("--config", pre.config, "key = value config file");
  c_pre->add_option("--corpus", pre.corpus, "Pretraining corpus (JSONL)");
  c_pre->add_option("--seed", pre.seed);
  c_pre->add_option("--out", pre.out, "Backbone checkpoint path");

  TrainOpts tr;
  auto* c_train = app.add_subcommand("train", "Learn domain (and sample) soft tokens");
  c_train->add_option("--config", tr.config);
  c_train->add_option("--backbone", tr.backbone);
  c_train->add_option("--corpus", tr.corpus);
  c_train->add_option("--seed", tr.seed);
  c_train->add_option("--lambda", tr.lambda, "Contrastive weight (0 = likelihood-only ablation)");
  c_train->add_option("--k", tr.k, "Domain soft tokens");
  c_train->add_option("--l", tr.l, "Sample soft tokens");
  c_train->add_option("--steps", tr.steps);
  c_train->add_option("--batch-size", tr.batch_size);
  c_train->add_option("--max-len", tr.max_len);
  c_train->add_option("--lr", tr.lr);
  c_train->add_option("--mode", tr.mode, "inclusive | paper-literal");
  c_train->add_option("--init", tr.init, "vocab-rows | gaussian");
  c_train->add_option("--workers", tr.workers);
  c_train->add_option("--out", tr.out);

  SynthOpts sy;
  auto* c_syn = app.add_subcommand("synthesize", "Sample inputs from the domain prefix");
  c_syn->add_option("--config", sy.config);
  c_syn->add_option("--backbone", sy.backbone);
  c_syn->add_option("--representation", sy.representation);
  c_syn->add_option("--count", sy.count)->capture_default_str();
  c_syn->add_option("--temperature", sy.temperature)->capture_default_str();
  c_syn->add_option("--max-len", sy.max_len)->capture_default_str();
  c_syn->add_option("--seed", sy.seed);
  c_syn->add_option("--workers", sy.workers);
  c_syn->add_option("--out", sy.out);

  FilterOpts fi;
  auto* c_fil = app.add_subcommand("filter", "Rule-based post-processing of synthesized inputs");
  c_fil->add_option("--in", fi.in);
  c_fil->add_option("--out", fi.out);
  c_fil->add_option("--min-length", fi.min_length)->capture_default_str();
  c_fil->add_option("--max-length", fi.max_length)->capture_default_str();
  c_fil->add_option("--min-printable", fi.min_printable)->capture_default_str();
  c_fil->add_option("--max-repeat", fi.max_repeat)->capture_default_str();
  c_fil->add_flag("--no-dedup", fi.no_dedup);

  PairOpts pa;
  auto* c_pair = app.add_subcommand("pair", "Generate outputs for kept inputs");
  c_pair->add_option("--backbone", pa.backbone);
  c_pair->add_option("--representation", pa.representation);
  c_pair->add_option("--in", pa.in);
  c_pair->add_option("--out", pa.out);
  c_pair->add_option("--temperature", pa.temperature)->capture_default_str();
  c_pair->add_option("--max-len", pa.max_len)->capture_default_str();
  c_pair->add_option("--seed", pa.seed);

  DiagnoseOpts di;
  auto* c_diag = app.add_subcommand("diagnose", "Entropy / support / MI-proxy / diversity diagnostics");
  c_diag->add_option("--backbone", di.backbone);
  c_diag->add_option("--base", di.base, "Likelihood-only representation (lambda = 0)");
  c_diag->add_option("--full", di.full, "Full-objective representation");
  c_diag->add_option("--corpus", di.corpus, "Reference corpus for the MI proxy");
  c_diag->add_option("--samples", di.samples, "Synthetic samples for diversity and empirical summaries");
  c_diag->add_option("--epsilon", di.epsilons, "Support threshold(s) in (0, 1/e)");
  c_diag->add_option("--max-len", di.max_len)->capture_default_str();
  c_diag->add_option("--scatter", di.scatter, "Write a 2-D principal-component table of the samples");
  c_diag->add_option("--out", di.out);

  SweepOpts sw;
  auto* c_sweep = app.add_subcommand("sweep", "Ablation sweeps over lambda, k, temperature or reference fraction");
  c_sweep->add_option("--config", sw.config);
  c_sweep->add_option("--backbone", sw.backbone);
  c_sweep->add_option("--corpus", sw.corpus);
  c_sweep->add_option("--axis", sw.axis, "lambda | k | temperature | fraction");
  c_sweep->add_option("--values", sw.values, "Comma-separated values (default: the axis grid)");
  c_sweep->add_option("--seed", sw.seed);
  c_sweep->add_option("--lambda", sw.lambda);
  c_sweep->add_option("--k", sw.k);
  c_sweep->add_option("--l", sw.l);
  c_sweep->add_option("--steps", sw.steps);
  c_sweep->add_option("--max-len", sw.max_len);
  c_sweep->add_option("--count", sw.count, "Synthesized samples per row")->capture_default_str();
  c_sweep->add_option("--temperature", sw.temperature)->capture_default_str();
  c_sweep->add_flag("--toy-template", sw.toy_template, "Report template match rate for the two-factor toy template");
  c_sweep->add_option("--workers", sw.workers);
  c_sweep->add_option("--out", sw.out);

  ToyOpts toy;
  auto* c_toy = app.add_subcommand("toy", "Emit a toy corpus (two-factor domain or pretraining world)");
  c_toy->add_option("--kind", toy.kind)->capture_default_str();
  c_toy->add_option("--vocab", toy.vocab, "byte, or the characters of a restricted vocabulary")->capture_default_str();
  c_toy->add_option("--n", toy.n)->capture_default_str();
  c_toy->add_option("--chars", toy.chars)->capture_default_str();
  c_toy->add_option("--seed", toy.seed);
  c_toy->add_option("--out", toy.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*c_pre) return run_pretrain(pre);
    if (*c_train) return run_train(tr);
    if (*c_syn) return run_synthesize(sy);
    if (*c_fil) return run_filter(fi);
    if (*c_pair) return run_pair(pa);
    if (*c_diag) return run_diagnose(di);
    if (*c_sweep) return run_sweep(sw);
    if (*c_toy) return run_toy(toy);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}
