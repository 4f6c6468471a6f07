#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "softsynth/common.hpp"
#include "softsynth/container.hpp"
#include "softsynth/data.hpp"
#include "softsynth/optim.hpp"
#include "softsynth/transformer.hpp"
#include "softsynth/vocab.hpp"

namespace softsynth {

/// A decoder-only language model plus its vocabulary. Once frozen, the
/// weights can no longer be reached mutably.
class Backbone {
 public:
  Backbone(ArchConfig arch, Vocabulary vocab, Weights weights, std::uint64_t seed)
      : arch_(arch), vocab_(std::move(vocab)), weights_(std::move(weights)), seed_(seed) {
    arch_.validate();
    require(arch_.vocab_size == vocab_.size(), "arch vocab_size does not match vocabulary");
    require(arch_.bos_id == vocab_.bos() && arch_.eos_id == vocab_.eos(), "arch bos/eos ids disagree with vocabulary");
  }

  /// Randomly initialized, not frozen.
  static Backbone initialize(ArchConfig arch, const Vocabulary& vocab, std::uint64_t seed) {
    arch.vocab_size = vocab.size();
    arch.bos_id = vocab.bos();
    arch.eos_id = vocab.eos();
    return Backbone(arch, vocab, init_weights(arch, seed), seed);
  }

  const ArchConfig& arch() const { return arch_; }
  const Vocabulary& vocab() const { return vocab_; }
  const Weights& weights() const { return weights_; }
  int width() const { return arch_.d_model; }
  std::uint64_t seed() const { return seed_; }
  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

  Weights& mutable_weights() {
    if (frozen_) throw ValidationError("backbone is frozen; weights are immutable");
    return weights_;
  }

  /// Hash of architecture and every weight tensor.
  std::uint64_t checksum() const {
    Digest d;
    for (int v : {arch_.vocab_size, arch_.d_model, arch_.n_layers, arch_.n_heads, arch_.d_ff, arch_.max_positions,
                  arch_.bos_id, arch_.eos_id})
      d.update(static_cast<std::uint64_t>(v));
    weights_.for_each_tensor([&](const std::string& name, const Matrix& m) {
      d.update(name);
      d.update(m);
    });
    return d.value();
  }
  std::string checksum_hex() const { return Digest::to_hex(checksum()); }

  Container to_container() const {
    Container c;
    c.kind = "backbone";
    c.meta["arch"] = {{"vocab_size", arch_.vocab_size}, {"d_model", arch_.d_model},   {"n_layers", arch_.n_layers},
                      {"n_heads", arch_.n_heads},       {"d_ff", arch_.d_ff},         {"max_positions", arch_.max_positions},
                      {"bos_id", arch_.bos_id},         {"eos_id", arch_.eos_id}};
    c.meta["vocab"] = {{"byte_level", vocab_.is_byte_level()},
                       {"characters", vocab_.is_byte_level() ? std::string() : vocab_.characters()},
                       {"separator", vocab_.separator().has_value()}};
    c.meta["frozen"] = frozen_;
    c.meta["seed"] = std::to_string(seed_);
    c.meta["checksum"] = checksum_hex();
    weights_.for_each_tensor([&](const std::string& name, const Matrix& m) { c.add(name, m); });
    return c;
  }

  static Backbone from_container(const Container& c) {
    const auto& a = c.meta.at("arch");
    ArchConfig arch{a.at("vocab_size"), a.at("d_model"),       a.at("n_layers"), a.at("n_heads"),
                    a.at("d_ff"),       a.at("max_positions"), a.at("bos_id"),   a.at("eos_id")};
    const auto& v = c.meta.at("vocab");
    Vocabulary vocab = v.at("byte_level").get<bool>()
                           ? Vocabulary::byte_level()
                           : Vocabulary::restricted(v.at("characters").get<std::string>(), v.at("separator").get<bool>());
    Weights w = Weights::zeros(arch);
    w.for_each_tensor([&](const std::string& name, Matrix& m) {
      const Matrix& stored = c.tensor(name);
      require(stored.rows() == m.rows() && stored.cols() == m.cols(), "checkpoint tensor '" + name + "' has wrong shape");
      m = stored;
    });
    Backbone b(arch, std::move(vocab), std::move(w), std::stoull(c.meta.at("seed").get<std::string>()));
    if (c.meta.at("frozen").get<bool>()) b.freeze();
    if (c.meta.contains("checksum") && c.meta["checksum"].get<std::string>() != b.checksum_hex())
      throw ValidationError("backbone checkpoint: stored checksum does not match weights");
    return b;
  }

  void save(const std::filesystem::path& path) const { to_container().save(path); }
  static Backbone load(const std::filesystem::path& path) { return from_container(Container::load(path, "backbone")); }

 private:
  ArchConfig arch_;
  Vocabulary vocab_;
  Weights weights_;
  std::uint64_t seed_ = 0;
  bool frozen_ = false;
};

namespace detail {

inline void check_prefix(const Backbone& model, const Matrix& prefix) {
  require(prefix.rows() == 0 || prefix.cols() == model.width(),
          "prefix width " + std::to_string(prefix.cols()) + " != model width " + std::to_string(model.width()));
  require(prefix.allFinite(), "prefix has non-finite entries");
}

inline void check_tokens(const Backbone& model, std::span<const TokenId> ids) {
  for (TokenId id : ids)
    require(id >= 0 && id < model.arch().vocab_size, "token id " + std::to_string(id) + " out of range");
}

/// Rows: prefix, BOS, then `tokens`; positional embeddings added.
inline Matrix embed_inputs(const Backbone& model, const Matrix& prefix, std::span<const TokenId> tokens) {
  const auto& w = model.weights();
  const Eigen::Index m = prefix.rows();
  const Eigen::Index n = m + 1 + static_cast<Eigen::Index>(tokens.size());
  require(n <= model.arch().max_positions, "input of " + std::to_string(n) + " positions exceeds max_positions " +
                                               std::to_string(model.arch().max_positions));
  Matrix x(n, model.width());
  if (m > 0) x.topRows(m) = prefix;
  x.row(m) = w.tok_emb.row(model.arch().bos_id);
  for (std::size_t t = 0; t < tokens.size(); ++t) x.row(m + 1 + static_cast<Eigen::Index>(t)) = w.tok_emb.row(tokens[t]);
  x += w.pos_emb.topRows(n);
  return x;
}

/// Log-softmax of a row with max subtraction.
inline RowVector log_softmax(const RowVector& logits) {
  const double hi = logits.maxCoeff();
  const double lse = hi + std::log((logits.array() - hi).exp().sum());
  return logits.array() - lse;
}

}  // namespace detail

inline Vector softmax_with_temperature(const RowVector& logits, double temperature) {
  require(temperature > 0.0, "temperature must be positive");
  RowVector z = logits / temperature;
  const double hi = z.maxCoeff();
  Vector p = (z.array() - hi).exp().transpose();
  return p / p.sum();
}

/// log p(token_t | prefix, BOS, tokens_<t) for every t.
inline std::vector<double> token_logprobs(const Backbone& model, const Matrix& prefix, std::span<const TokenId> tokens) {
  detail::check_prefix(model, prefix);
  detail::check_tokens(model, tokens);
  require(!tokens.empty(), "token sequence is empty");
  const Eigen::Index m = prefix.rows();
  ForwardCache cache;
  forward(model.arch(), model.weights(), detail::embed_inputs(model, prefix, tokens.first(tokens.size() - 1)), cache);
  std::vector<double> out(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t)
    out[t] = detail::log_softmax(cache.logits.row(m + static_cast<Eigen::Index>(t)))(tokens[t]);
  return out;
}

inline void check_scored_sequence(const Backbone& model, const TokenSequence& seq) {
  require(!seq.empty(), "token sequence is empty");
  require(seq.ids.back() == model.arch().eos_id, "scored sequence must end with EOS");
}

/// Σ_t log p(token_t | prefix, tokens_<t), in nats.
inline double sequence_logprob(const Backbone& model, const Matrix& prefix, const TokenSequence& seq) {
  check_scored_sequence(model, seq);
  const auto lp = token_logprobs(model, prefix, seq.ids);
  double total = 0.0;
  for (double v : lp) total += v;
  return total;
}

/// Returns sequence_logprob and adds weight * d(logprob)/d(prefix) into dprefix.
inline double sequence_logprob_grad(const Backbone& model, const Matrix& prefix, const TokenSequence& seq,
                                    double weight, Matrix& dprefix) {
  check_scored_sequence(model, seq);
  detail::check_prefix(model, prefix);
  detail::check_tokens(model, seq.ids);
  require(dprefix.rows() == prefix.rows() && dprefix.cols() == prefix.cols(), "gradient buffer shape mismatch");
  const Eigen::Index m = prefix.rows();
  const std::span<const TokenId> ids(seq.ids);
  ForwardCache cache;
  forward(model.arch(), model.weights(), detail::embed_inputs(model, prefix, ids.first(ids.size() - 1)), cache);
  Matrix dlogits = Matrix::Zero(cache.logits.rows(), cache.logits.cols());
  double total = 0.0;
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const Eigen::Index row = m + static_cast<Eigen::Index>(t);
    RowVector lsm = detail::log_softmax(cache.logits.row(row));
    total += lsm(ids[t]);
    dlogits.row(row) = -weight * lsm.array().exp();
    dlogits(row, ids[t]) += weight;
  }
  if (m > 0) {
    Matrix dx = backward(model.arch(), model.weights(), cache, dlogits, nullptr);
    dprefix += dx.topRows(m);
  }
  return total;
}

/// Softmax(logits / temperature) for the token following prefix, BOS, tokens_so_far.
inline Vector next_step_distribution(const Backbone& model, const Matrix& prefix, std::span<const TokenId> tokens_so_far,
                                     double temperature) {
  require(temperature > 0.0, "temperature must be positive");
  detail::check_prefix(model, prefix);
  detail::check_tokens(model, tokens_so_far);
  ForwardCache cache;
  forward(model.arch(), model.weights(), detail::embed_inputs(model, prefix, tokens_so_far), cache);
  return softmax_with_temperature(cache.logits.row(cache.logits.rows() - 1), temperature);
}

/// Position-by-position decoder with cached keys and values. Copyable, so a
/// primed prefix state can be shared across independent continuations.
class IncrementalDecoder {
 public:
  explicit IncrementalDecoder(const Backbone& model) : model_(&model) {
    const auto& a = model.arch();
    keys_.assign(static_cast<std::size_t>(a.n_layers), Matrix(a.max_positions, a.d_model));
    values_ = keys_;
  }

  /// Pushes the prefix rows and BOS; returns logits for the first token.
  RowVector prime(const Matrix& prefix) {
    detail::check_prefix(*model_, prefix);
    require(length_ == 0, "decoder already primed");
    for (Eigen::Index r = 0; r < prefix.rows(); ++r) push_row(prefix.row(r));
    return push_token(model_->arch().bos_id);
  }

  RowVector push_token(TokenId id) {
    require(id >= 0 && id < model_->arch().vocab_size, "token id out of range");
    return push_row(model_->weights().tok_emb.row(id));
  }

  Eigen::Index length() const { return length_; }

 private:
  RowVector push_row(const RowVector& embedding) {
    const auto& a = model_->arch();
    const auto& w = model_->weights();
    require(length_ < a.max_positions, "decoder exceeded max_positions");
    const int dh = a.d_model / a.n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const Eigen::Index pos = length_;
    Matrix x = embedding + w.pos_emb.row(pos);
    detail::LayerNormCache scratch;
    for (std::size_t li = 0; li < w.layers.size(); ++li) {
      const auto& lw = w.layers[li];
      Matrix h = detail::layer_norm(x, lw.ln1_g, lw.ln1_b, scratch);
      RowVector q = h * lw.wq + lw.bq;
      keys_[li].row(pos) = h * lw.wk + lw.bk;
      values_[li].row(pos) = h * lw.wv + lw.bv;
      RowVector ctx(a.d_model);
      for (int hd = 0; hd < a.n_heads; ++hd) {
        auto k = keys_[li].block(0, hd * dh, pos + 1, dh);
        auto v = values_[li].block(0, hd * dh, pos + 1, dh);
        Vector s = (k * q.segment(hd * dh, dh).transpose()) * scale;
        s = (s.array() - s.maxCoeff()).exp();
        s /= s.sum();
        ctx.segment(hd * dh, dh) = s.transpose() * v;
      }
      Matrix mid = x + ctx * lw.wo + lw.bo;
      Matrix h2 = detail::layer_norm(mid, lw.ln2_g, lw.ln2_b, scratch);
      Matrix u = h2 * lw.w1 + lw.b1;
      u = u.unaryExpr([](double z) { return detail::gelu(z); });
      x = mid + u * lw.w2 + lw.b2;
    }
    Matrix f = detail::layer_norm(x, w.lnf_g, w.lnf_b, scratch);
    ++length_;
    return f * w.w_out + w.b_out;
  }

  const Backbone* model_;
  std::vector<Matrix> keys_, values_;
  Eigen::Index length_ = 0;
};

inline TokenId sample_categorical(const Vector& probs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double cum = 0.0;
  TokenId last_nonzero = 0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (probs(i) <= 0.0) continue;
    cum += probs(i);
    last_nonzero = static_cast<TokenId>(i);
    if (u < cum) return last_nonzero;
  }
  return last_nonzero;
}

/// Continues a primed decoder until EOS or max_len tokens.
inline TokenSequence sample_continuation(IncrementalDecoder decoder, RowVector logits, TokenId eos, double temperature,
                                         int max_len, std::uint64_t seed) {
  require(max_len >= 1, "max_len must be >= 1");
  require(temperature > 0.0, "temperature must be positive");
  std::mt19937_64 rng(seed);
  TokenSequence out;
  while (true) {
    const TokenId next = sample_categorical(softmax_with_temperature(logits, temperature), rng);
    out.ids.push_back(next);
    if (next == eos || static_cast<int>(out.size()) >= max_len) break;
    logits = decoder.push_token(next);
  }
  return out;
}

/// Ancestral sampling from p(X | prefix) at the given temperature. The result
/// ends with EOS unless it was cut at max_len.
inline TokenSequence sample_sequence(const Backbone& model, const Matrix& prefix, double temperature, int max_len,
                                     std::uint64_t seed) {
  require(max_len >= 1, "max_len must be >= 1");
  require(temperature > 0.0, "temperature must be positive");
  IncrementalDecoder dec(model);
  RowVector logits = dec.prime(prefix);
  return sample_continuation(dec, logits, model.arch().eos_id, temperature, max_len, seed);
}

/// Exact distribution over EOS-terminated sequences of at most max_len
/// tokens. Mass of sequences still unterminated at max_len is kept apart.
struct ExactDistribution {
  std::vector<TokenSequence> outcomes;
  std::vector<double> probabilities;
  std::vector<double> log_probabilities;
  double truncated_mass = 0.0;
  /// Token strings examined (all strings of length 1..max_len reachable
  /// without an earlier EOS).
  std::size_t nodes_visited = 0;

  double total_mass() const {
    double s = truncated_mass;
    for (double p : probabilities) s += p;
    return s;
  }

  /// Probabilities of the terminated outcomes, rescaled to sum to one.
  std::vector<double> renormalized() const {
    double s = 0.0;
    for (double p : probabilities) s += p;
    require(s > 0.0, "distribution has no terminated mass");
    std::vector<double> out(probabilities);
    for (double& p : out) p /= s;
    return out;
  }

  std::optional<double> probability_of(const TokenSequence& seq) const {
    for (std::size_t i = 0; i < outcomes.size(); ++i)
      if (outcomes[i] == seq) return probabilities[i];
    return std::nullopt;
  }
};

inline constexpr double kEnumerationGuard = 1e6;

inline ExactDistribution enumerate_distribution(const Backbone& model, const Matrix& prefix, int max_len,
                                                double temperature = 1.0) {
  require(max_len >= 1, "max_len must be >= 1");
  require(temperature > 0.0, "temperature must be positive");
  const double states = std::pow(static_cast<double>(model.arch().vocab_size), max_len);
  require(states <= kEnumerationGuard, "enumeration guard exceeded: V^max_len = " + std::to_string(states) + " > 1e6");

  ExactDistribution dist;
  const TokenId eos = model.arch().eos_id;
  std::vector<TokenId> path;
  std::function<void(const IncrementalDecoder&, const RowVector&, double)> walk =
      [&](const IncrementalDecoder& dec, const RowVector& logits, double logp) {
        const Vector probs = softmax_with_temperature(logits, temperature);
        const RowVector logps = (probs.array().log()).transpose();
        for (TokenId id = 0; id < static_cast<TokenId>(probs.size()); ++id) {
          ++dist.nodes_visited;
          const double lp = logp + logps(id);
          path.push_back(id);
          if (id == eos) {
            dist.outcomes.push_back(TokenSequence{path});
            dist.log_probabilities.push_back(lp);
            dist.probabilities.push_back(std::exp(lp));
          } else if (static_cast<int>(path.size()) == max_len) {
            dist.truncated_mass += std::exp(lp);
          } else if (probs(id) > 0.0) {
            IncrementalDecoder next = dec;
            const RowVector next_logits = next.push_token(id);
            walk(next, next_logits, lp);
          }
          path.pop_back();
        }
      };
  IncrementalDecoder root(model);
  const RowVector logits = root.prime(prefix);
  walk(root, logits, 0.0);
  return dist;
}

// ---------------------------------------------------------------------------
// Pretraining.

struct PretrainConfig {
  int max_steps = 2000;
  int batch_size = 8;
  int window = 128;
  double learning_rate = 3e-3;
  int warmup_steps = 50;
  double grad_clip = 1.0;
  int eval_every = 50;
  /// Consecutive evaluations without improvement before stopping.
  int patience = 4;
  double min_improvement = 1e-3;
  double holdout_fraction = 0.1;
  /// Place each training window at a random position offset so that every
  /// positional embedding up to max_positions is trained (soft prefixes push
  /// text to later positions).
  bool random_offsets = true;
  std::uint64_t seed = 0;
};

struct PretrainReport {
  int steps = 0;
  std::vector<double> train_nll;
  std::vector<std::pair<int, double>> heldout_nll;
  double final_heldout_nll = 0.0;
  double unigram_entropy = 0.0;
  bool early_stopped = false;
};

/// BOS input EOS ... over the corpus; records with an output (and a
/// vocabulary with a separator) contribute BOS input SEP output EOS.
inline std::vector<TokenId> corpus_stream(const Corpus& corpus, const Vocabulary& vocab) {
  std::vector<TokenId> stream;
  const auto sep = vocab.separator();
  for (const auto& s : corpus) {
    stream.push_back(vocab.bos());
    auto seq = tokenize(s.input_text, vocab);
    if (sep && !s.output_text.empty()) {
      seq.ids.back() = *sep;
      const auto out = tokenize(s.output_text, vocab);
      seq.ids.insert(seq.ids.end(), out.ids.begin(), out.ids.end());
    }
    stream.insert(stream.end(), seq.ids.begin(), seq.ids.end());
  }
  return stream;
}

/// Entropy (nats) of the empirical unigram distribution of predicted tokens.
inline double unigram_entropy(std::span<const TokenId> tokens, int vocab_size) {
  std::vector<double> counts(static_cast<std::size_t>(vocab_size), 0.0);
  for (TokenId t : tokens) counts[static_cast<std::size_t>(t)] += 1.0;
  double h = 0.0;
  const auto n = static_cast<double>(tokens.size());
  for (double c : counts)
    if (c > 0) h -= (c / n) * std::log(c / n);
  return h;
}

namespace detail {

/// Mean next-token NLL over a window; accumulates weight grads (scaled by `scale`) when grads != null.
/// The window occupies positions offset .. offset + |window| - 2.
inline double window_nll(const Backbone& model, std::span<const TokenId> window, Weights* grads, double scale,
                         Eigen::Index offset = 0) {
  const auto& w = model.weights();
  const auto n = static_cast<Eigen::Index>(window.size()) - 1;
  Matrix x(n, model.width());
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = w.tok_emb.row(window[static_cast<std::size_t>(i)]);
  x += w.pos_emb.middleRows(offset, n);
  ForwardCache cache;
  forward(model.arch(), w, x, cache);
  double nll = 0.0;
  Matrix dlogits(n, cache.logits.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    RowVector lsm = log_softmax(cache.logits.row(i));
    const TokenId target = window[static_cast<std::size_t>(i + 1)];
    nll -= lsm(target);
    dlogits.row(i) = lsm.array().exp() * (scale / static_cast<double>(n));
    dlogits(i, target) -= scale / static_cast<double>(n);
  }
  if (grads) {
    Matrix dx = backward(model.arch(), w, cache, dlogits, grads);
    for (Eigen::Index i = 0; i < n; ++i) {
      grads->tok_emb.row(window[static_cast<std::size_t>(i)]) += dx.row(i);
      grads->pos_emb.row(offset + i) += dx.row(i);
    }
  }
  return nll / static_cast<double>(n);
}

}  // namespace detail

/// Mean per-token NLL of `stream` under the model, in consecutive windows.
inline double stream_nll(const Backbone& model, std::span<const TokenId> stream, int window) {
  require(stream.size() >= 2, "stream too short to evaluate");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t start = 0; start + 1 < stream.size(); start += static_cast<std::size_t>(window)) {
    const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(window) + 1, stream.size() - start);
    if (len < 2) break;
    total += detail::window_nll(model, stream.subspan(start, len), nullptr, 1.0) * static_cast<double>(len - 1);
    count += len - 1;
  }
  return total / static_cast<double>(count);
}

/// Continues training an unfrozen backbone on the corpus stream; stops when
/// held-out NLL plateaus. Throws on a frozen backbone or non-finite loss.
inline PretrainReport train_backbone(Backbone& model, const Corpus& corpus, const PretrainConfig& cfg) {
  require(!corpus.empty(), "pretraining corpus is empty");
  require(cfg.window >= 2 && cfg.window <= model.arch().max_positions, "window must be in [2, max_positions)");
  require(cfg.batch_size >= 1 && cfg.max_steps >= 1, "batch_size and max_steps must be positive");
  Weights& weights = model.mutable_weights();  // throws if frozen

  const auto stream = corpus_stream(corpus, model.vocab());
  const auto split = static_cast<std::size_t>(static_cast<double>(stream.size()) * (1.0 - cfg.holdout_fraction));
  const std::span<const TokenId> all(stream);
  const auto train = all.first(split);
  const auto heldout = all.subspan(split);
  require(train.size() > static_cast<std::size_t>(cfg.window) + 1, "corpus too small for the pretraining window");

  PretrainReport report;
  report.unigram_entropy = unigram_entropy(heldout.subspan(1), model.arch().vocab_size);

  Adam adam(AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> start_dist(0, train.size() - static_cast<std::size_t>(cfg.window) - 1);
  std::uniform_int_distribution<Eigen::Index> offset_dist(0, model.arch().max_positions - cfg.window);
  std::vector<Matrix*> params;
  weights.for_each_tensor([&](const std::string&, Matrix& m) { params.push_back(&m); });

  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  Weights best_weights = weights;
  for (int step = 1; step <= cfg.max_steps; ++step) {
    Weights grads = Weights::zeros(model.arch());
    double loss = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::size_t start = start_dist(rng);
      const Eigen::Index offset = cfg.random_offsets ? offset_dist(rng) : 0;
      loss += detail::window_nll(model, train.subspan(start, static_cast<std::size_t>(cfg.window) + 1), &grads,
                                 1.0 / cfg.batch_size, offset) /
              cfg.batch_size;
    }
    if (!std::isfinite(loss)) throw RuntimeFailure("pretraining diverged: non-finite loss at step " + std::to_string(step));
    report.train_nll.push_back(loss);

    double sq = 0.0;
    grads.for_each_tensor([&](const std::string&, const Matrix& g) { sq += g.squaredNorm(); });
    const double clip = std::sqrt(sq) > cfg.grad_clip ? cfg.grad_clip / std::sqrt(sq) : 1.0;
    std::vector<const Matrix*> gptr;
    grads.for_each_tensor([&](const std::string&, Matrix& g) {
      g *= clip;
      gptr.push_back(&g);
    });
    adam.set_learning_rate(cfg.learning_rate * std::min(1.0, static_cast<double>(step) / std::max(1, cfg.warmup_steps)));
    adam.step(params, gptr);
    report.steps = step;

    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      const double h = stream_nll(model, heldout, cfg.window);
      if (!std::isfinite(h)) throw RuntimeFailure("pretraining diverged: non-finite held-out loss at step " + std::to_string(step));
      report.heldout_nll.emplace_back(step, h);
      if (h < best - cfg.min_improvement) {
        best = h;
        stale = 0;
        best_weights = weights;
      } else if (++stale >= cfg.patience) {
        report.early_stopped = true;
        break;
      }
    }
  }
  weights = best_weights;
  report.final_heldout_nll = best;
  return report;
}

/// Random init, pretraining to a held-out plateau, then freezing.
inline Backbone pretrain_backbone(const Corpus& corpus, const Vocabulary& vocab, const ArchConfig& arch,
                                  const PretrainConfig& cfg, PretrainReport* report = nullptr) {
  Backbone model = Backbone::initialize(arch, vocab, cfg.seed);
  PretrainReport r = train_backbone(model, corpus, cfg);
  model.freeze();
  if (report) *report = std::move(r);
  return model;
}

}  // namespace softsynth
