#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "softsynth/backbone.hpp"
#include "softsynth/config.hpp"
#include "softsynth/data.hpp"
#include "softsynth/objectives.hpp"
#include "softsynth/optim.hpp"
#include "softsynth/representation.hpp"

namespace softsynth {

struct TrainConfig {
  int k = 256;
  int l = 256;
  double lambda = 1.0;
  double learning_rate = 1e-2;
  /// "constant", or "cosine": decays to 5% of learning_rate over `steps`.
  std::string lr_schedule = "constant";
  int steps = 2000;
  int batch_size = 8;
  std::uint64_t seed = 0;
  /// Token budget per reference input, EOS included; longer inputs are truncated.
  int max_len = 256;
  InitStrategy init = InitStrategy::VocabRows;
  ContrastiveMode mode = ContrastiveMode::Inclusive;
  bool per_token_normalized = false;
  /// Early stop once the smoothed total loss has not improved by
  /// plateau_tolerance (relative) for plateau_patience steps. 0 disables.
  int plateau_patience = 200;
  double plateau_tolerance = 1e-3;
  int smoothing_window = 50;

  void validate() const {
    require(k >= 1, "k must be >= 1");
    require(l >= 0, "l must be >= 0");
    require(lambda >= 0.0, "lambda must be >= 0");
    require(learning_rate > 0.0, "learning rate must be positive");
    require(steps >= 1, "steps must be >= 1");
    require(lr_schedule == "constant" || lr_schedule == "cosine",
            "lr_schedule must be 'constant' or 'cosine', got '" + lr_schedule + "'");
    require(max_len >= 1, "max_len must be >= 1");
    require(smoothing_window >= 1 && plateau_patience >= 0, "invalid plateau settings");
    if (lambda > 0.0) {
      require(batch_size >= 2, "batch_size must be >= 2 when lambda > 0 (the contrastive term needs negatives)");
      require(l >= 1, "l = 0 with lambda > 0 is rejected: the contrastive term would compare identical conditionals");
    } else {
      require(batch_size >= 1, "batch_size must be >= 1");
    }
  }

  ObjectiveOptions objective() const { return {mode, per_token_normalized}; }

  nlohmann::json to_json() const {
    return {{"k", k},
            {"l", l},
            {"lambda", lambda},
            {"learning_rate", learning_rate},
            {"lr_schedule", lr_schedule},
            {"steps", steps},
            {"batch_size", batch_size},
            {"seed", std::to_string(seed)},
            {"max_len", max_len},
            {"init", to_string(init)},
            {"mode", to_string(mode)},
            {"per_token_normalized", per_token_normalized},
            {"plateau_patience", plateau_patience},
            {"plateau_tolerance", plateau_tolerance},
            {"smoothing_window", smoothing_window}};
  }

  /// Applies recognised keys; unknown keys are an error.
  void apply(const KeyValues& kv) {
    for (const auto& [key, v] : kv) {
      if (key == "k") k = parse_number<int>(key, v);
      else if (key == "l") l = parse_number<int>(key, v);
      else if (key == "lambda") lambda = parse_number<double>(key, v);
      else if (key == "learning_rate") learning_rate = parse_number<double>(key, v);
      else if (key == "lr_schedule") lr_schedule = v;
      else if (key == "steps") steps = parse_number<int>(key, v);
      else if (key == "batch_size") batch_size = parse_number<int>(key, v);
      else if (key == "seed") seed = parse_number<std::uint64_t>(key, v);
      else if (key == "max_len") max_len = parse_number<int>(key, v);
      else if (key == "init") init = parse_init_strategy(v);
      else if (key == "mode") mode = parse_contrastive_mode(v);
      else if (key == "per_token_normalized") per_token_normalized = parse_bool(key, v);
      else if (key == "plateau_patience") plateau_patience = parse_number<int>(key, v);
      else if (key == "plateau_tolerance") plateau_tolerance = parse_number<double>(key, v);
      else if (key == "smoothing_window") smoothing_window = parse_number<int>(key, v);
      else throw ValidationError("unknown train config key '" + key + "'");
    }
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    KeyValues kv;
    for (auto& [key, value] : j.items()) kv[key] = value.is_string() ? value.get<std::string>() : value.dump();
    c.apply(kv);
    return c;
  }
};

struct TrainReport {
  std::vector<double> likelihood;   // L1 per step
  std::vector<double> contrastive;  // L2 per step (NaN when lambda = 0)
  std::vector<double> total;
  int steps_executed = 0;
  bool early_stopped = false;
  double wall_seconds = 0.0;
  double final_gradient_norm = 0.0;
  /// total_loss over the whole corpus as one batch, at the returned matrices.
  LossValue final_loss;
  double final_per_token_nll = 0.0;
  std::size_t truncated_inputs = 0;
  std::uint64_t seed = 0;
  nlohmann::json config;

  /// One JSON object per step, then a summary line.
  void write_metrics(std::ostream& out) const {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    for (std::size_t i = 0; i < total.size(); ++i)
      out << nlohmann::json{{"step", i + 1}, {"l1", num(likelihood[i])}, {"l2", num(contrastive[i])},
                            {"total", num(total[i])}}
                 .dump()
          << '\n';
    out << nlohmann::json{{"summary", true},
                          {"steps", steps_executed},
                          {"early_stopped", early_stopped},
                          {"wall_seconds", wall_seconds},
                          {"final_gradient_norm", final_gradient_norm},
                          {"final_l1", num(final_loss.likelihood)},
                          {"final_l2", num(final_loss.contrastive)},
                          {"final_total", num(final_loss.total)},
                          {"final_per_token_nll", final_per_token_nll},
                          {"truncated_inputs", truncated_inputs},
                          {"seed", std::to_string(seed)},
                          {"config", config}}
               .dump()
        << '\n';
  }
};

struct FitResult {
  DomainRepresentation domain;
  SampleRepresentationSet samples;
  TrainReport report;
};

/// Thrown when a loss or gradient turns non-finite; carries the matrices
/// from the last step that evaluated finitely.
class TrainingDiverged : public RuntimeFailure {
 public:
  TrainingDiverged(const std::string& msg, FitResult last_good)
      : RuntimeFailure(msg), last_good_(std::move(last_good)) {}
  const FitResult& last_good() const { return last_good_; }

 private:
  FitResult last_good_;
};

/// Tokenized reference inputs, truncated to max_len tokens (EOS kept last).
inline std::vector<LabeledSequence> prepare_sequences(const Corpus& corpus, const Vocabulary& vocab, int max_len,
                                                      std::size_t* truncated = nullptr) {
  std::vector<LabeledSequence> out;
  std::size_t cut = 0;
  for (const auto& s : corpus) {
    TokenSequence seq = tokenize(s.input_text, vocab);
    if (static_cast<int>(seq.size()) > max_len) {
      seq.ids.resize(static_cast<std::size_t>(max_len));
      seq.ids.back() = vocab.eos();
      ++cut;
    }
    out.push_back({s.id, std::move(seq)});
  }
  if (truncated) *truncated = cut;
  return out;
}

/// Σ -log p(X | D) / Σ |X| over the sequences.
inline double per_token_nll(const Backbone& model, const DomainRepresentation& domain,
                            std::span<const LabeledSequence> seqs) {
  const Matrix prefix = compose_prefix(domain);
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& s : seqs) {
    nll -= sequence_logprob(model, prefix, s.tokens);
    tokens += s.tokens.size();
  }
  return nll / static_cast<double>(tokens);
}

/// Deterministic batch schedule: the whole corpus when n <= B, otherwise
/// in-batch negatives from a per-epoch shuffle seeded by (seed, epoch).
class BatchSchedule {
 public:
  BatchSchedule(std::size_t n, int batch_size, bool needs_pairs, std::uint64_t seed)
      : n_(n), b_(static_cast<std::size_t>(batch_size)), pairs_(needs_pairs), seed_(seed) {}

  std::vector<std::size_t> next() {
    if (n_ <= b_) {
      std::vector<std::size_t> all(n_);
      std::iota(all.begin(), all.end(), 0);
      return all;
    }
    if (queue_.empty()) refill();
    auto batch = std::move(queue_.front());
    queue_.erase(queue_.begin());
    return batch;
  }

 private:
  void refill() {
    std::vector<std::size_t> order(n_);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(seed_, 0x5eed0000ULL + epoch_++));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n_; start += b_)
      queue_.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                          order.begin() + static_cast<std::ptrdiff_t>(std::min(n_, start + b_)));
    // A lone trailing sample has no negatives; fold it into the previous batch.
    if (pairs_ && queue_.size() > 1 && queue_.back().size() < 2) {
      queue_[queue_.size() - 2].push_back(queue_.back().front());
      queue_.pop_back();
    }
  }

  std::size_t n_, b_;
  bool pairs_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::vector<std::size_t>> queue_;
};

inline double learning_rate_at(const TrainConfig& cfg, int step) {
  if (cfg.lr_schedule != "cosine" || cfg.steps <= 1) return cfg.learning_rate;
  constexpr double kFloor = 0.05;
  const double t = static_cast<double>(step - 1) / static_cast<double>(cfg.steps - 1);
  return cfg.learning_rate * (kFloor + (1.0 - kFloor) * 0.5 * (1.0 + std::cos(std::numbers::pi * t)));
}

inline FitResult fit(const Corpus& corpus, const Backbone& backbone, const TrainConfig& cfg) {
  cfg.validate();
  require(backbone.frozen(), "fit requires a frozen backbone");
  require(!corpus.empty(), "corpus is empty");
  require(cfg.lambda == 0.0 || corpus.size() >= 2, "the contrastive term needs at least 2 reference samples");
  const int positions = cfg.k + cfg.l + cfg.max_len;
  require(positions <= backbone.arch().max_positions,
          "k + l + max_len = " + std::to_string(positions) + " exceeds the backbone's max_positions " +
              std::to_string(backbone.arch().max_positions));

  const auto start_time = std::chrono::steady_clock::now();
  const ObjectiveOptions opts = cfg.objective();
  FitResult result;
  result.report.seed = cfg.seed;
  result.report.config = cfg.to_json();
  const auto seqs = prepare_sequences(corpus, backbone.vocab(), cfg.max_len, &result.report.truncated_inputs);
  if (result.report.truncated_inputs > 0)
    std::cerr << "warning: truncated " << result.report.truncated_inputs << " reference inputs to max_len "
              << cfg.max_len << " tokens\n";

  const Eigen::Index d = backbone.width();
  const Matrix& table = backbone.weights().tok_emb;
  result.domain.matrix = init_representation(cfg.k, d, cfg.init, table, mix_seed(cfg.seed, 0));
  result.samples = SampleRepresentationSet(cfg.l, d);
  for (std::size_t i = 0; i < seqs.size(); ++i)
    result.samples.add(seqs[i].id, init_representation(cfg.l, d, cfg.init, table, mix_seed(cfg.seed, 1 + i)));

  const AdamConfig adam_cfg{cfg.learning_rate, 0.9, 0.999, 1e-8};
  Adam domain_opt(adam_cfg);
  std::vector<Adam> sample_opts(seqs.size(), Adam(adam_cfg));
  BatchSchedule schedule(seqs.size(), cfg.batch_size, cfg.lambda > 0.0, cfg.seed);

  FitResult last_good = result;
  double best_smoothed = std::numeric_limits<double>::infinity();
  int since_best = 0;
  auto& rep = result.report;
  for (int step = 1; step <= cfg.steps; ++step) {
    const auto idx = schedule.next();
    std::vector<LabeledSequence> batch;
    for (std::size_t i : idx) batch.push_back(seqs[i]);

    LossGradient g;
    try {
      g = gradient(backbone, result.domain, result.samples, batch, cfg.lambda, opts);
    } catch (const RuntimeFailure& e) {
      throw TrainingDiverged("training diverged at step " + std::to_string(step) + ": " + e.what(), last_good);
    }
    if (!std::isfinite(g.value.total))
      throw TrainingDiverged("training diverged at step " + std::to_string(step) + ": non-finite loss", last_good);
    last_good.domain = result.domain;
    last_good.samples = result.samples;

    rep.likelihood.push_back(g.value.likelihood);
    rep.contrastive.push_back(g.value.contrastive);
    rep.total.push_back(g.value.total);
    rep.steps_executed = step;
    rep.final_gradient_norm = std::sqrt(g.squared_norm());

    const double lr = learning_rate_at(cfg, step);
    domain_opt.set_learning_rate(lr);
    for (std::size_t i : idx) sample_opts[i].set_learning_rate(lr);

    if (result.domain.matrix.trainable) domain_opt.step({&result.domain.matrix.values}, {&g.domain});
    for (std::size_t i : idx) {
      auto it = g.samples.find(seqs[i].id);
      SoftTokenMatrix& s = result.samples.at(seqs[i].id);
      if (it == g.samples.end() || !s.trainable || s.rows() == 0) continue;
      sample_opts[i].step({&s.values}, {&it->second});
    }

    if (cfg.plateau_patience > 0 && step >= cfg.smoothing_window) {
      const auto w = static_cast<std::ptrdiff_t>(cfg.smoothing_window);
      const double smoothed = std::accumulate(rep.total.end() - w, rep.total.end(), 0.0) / static_cast<double>(w);
      if (smoothed < best_smoothed - cfg.plateau_tolerance * std::max(1.0, std::abs(best_smoothed))) {
        best_smoothed = smoothed;
        since_best = 0;
      } else if (++since_best >= cfg.plateau_patience) {
        rep.early_stopped = true;
        break;
      }
    }
  }

  rep.final_loss = total_loss(backbone, result.domain, result.samples, seqs, cfg.lambda, opts);
  rep.final_per_token_nll = per_token_nll(backbone, result.domain, seqs);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  return result;
}

inline RepresentationCheckpoint make_checkpoint(const FitResult& fit_result, const Backbone& backbone) {
  RepresentationCheckpoint c;
  c.domain = fit_result.domain;
  c.samples = fit_result.samples;
  c.config = fit_result.report.config;
  c.backbone_checksum = backbone.checksum_hex();
  return c;
}

}  // namespace softsynth
