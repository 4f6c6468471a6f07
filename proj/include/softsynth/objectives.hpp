#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "softsynth/backbone.hpp"
#include "softsynth/parallel.hpp"
#include "softsynth/representation.hpp"

namespace softsynth {

/// inclusive: the positive sits in its own denominator (bounded below by 0).
/// paper-literal: the denominator sums over negatives only.
enum class ContrastiveMode { Inclusive, PaperLiteral };

inline ContrastiveMode parse_contrastive_mode(std::string_view s) {
  if (s == "inclusive") return ContrastiveMode::Inclusive;
  if (s == "paper-literal") return ContrastiveMode::PaperLiteral;
  throw ValidationError("unknown loss mode '" + std::string(s) + "' (expected inclusive or paper-literal)");
}

inline std::string to_string(ContrastiveMode m) { return m == ContrastiveMode::Inclusive ? "inclusive" : "paper-literal"; }

struct LabeledSequence {
  std::string id;
  TokenSequence tokens;
};

struct ObjectiveOptions {
  ContrastiveMode mode = ContrastiveMode::Inclusive;
  /// Score q_ij by per-token mean log-likelihood instead of the total.
  bool per_token_normalized = false;
  /// Threads for per-sequence evaluations; results are reduced in batch order.
  int workers = 1;
};

// ---------------------------------------------------------------------------
// Contrastive arithmetic on a precomputed score matrix s_ij = log q_ij.

/// -(1/B) Σ_i log(q_ii / Σ_j q_ij), with j ranging over the batch (inclusive)
/// or over j != i (paper-literal). Log space throughout.
inline double contrastive_from_scores(const Matrix& log_q, ContrastiveMode mode) {
  const Eigen::Index b = log_q.rows();
  require(b >= 2 && log_q.cols() == b, "contrastive loss needs a square score matrix with B >= 2");
  double total = 0.0;
  std::vector<double> row;
  for (Eigen::Index i = 0; i < b; ++i) {
    row.clear();
    for (Eigen::Index j = 0; j < b; ++j)
      if (mode == ContrastiveMode::Inclusive || j != i) row.push_back(log_q(i, j));
    total -= log_q(i, i) - log_sum_exp(row);
  }
  return total / static_cast<double>(b);
}

/// d(contrastive_from_scores)/d(log_q).
inline Matrix contrastive_score_gradient(const Matrix& log_q, ContrastiveMode mode) {
  const Eigen::Index b = log_q.rows();
  Matrix g = Matrix::Zero(b, b);
  std::vector<double> row;
  for (Eigen::Index i = 0; i < b; ++i) {
    row.clear();
    for (Eigen::Index j = 0; j < b; ++j)
      if (mode == ContrastiveMode::Inclusive || j != i) row.push_back(log_q(i, j));
    const double lse = log_sum_exp(row);
    for (Eigen::Index j = 0; j < b; ++j)
      if (mode == ContrastiveMode::Inclusive || j != i) g(i, j) = std::exp(log_q(i, j) - lse);
    g(i, i) -= 1.0;
  }
  return g / static_cast<double>(b);
}

// ---------------------------------------------------------------------------
// Losses against the frozen backbone.

/// L1 = -(1/|batch|) Σ_i log p(X_i | D).
inline double likelihood_loss(const Backbone& model, const DomainRepresentation& domain,
                              std::span<const TokenSequence> batch) {
  require(!batch.empty(), "likelihood loss needs a non-empty batch");
  const Matrix prefix = compose_prefix(domain);
  double total = 0.0;
  for (const auto& seq : batch) total -= sequence_logprob(model, prefix, seq);
  return total / static_cast<double>(batch.size());
}

inline double score_scale(const TokenSequence& seq, const ObjectiveOptions& opts) {
  return opts.per_token_normalized ? 1.0 / static_cast<double>(seq.size()) : 1.0;
}

/// s_ij = log p(X_j | D, S_i) (optionally per-token).
inline Matrix contrastive_scores(const Backbone& model, const DomainRepresentation& domain,
                                 const SampleRepresentationSet& samples, std::span<const LabeledSequence> batch,
                                 const ObjectiveOptions& opts = {}) {
  const auto b = static_cast<Eigen::Index>(batch.size());
  require(b >= 2, "contrastive loss needs a batch of at least 2");
  for (const auto& x : batch) (void)samples.at(x.id);
  Matrix s(b, b);
  parallel_for(static_cast<std::size_t>(b), opts.workers, [&](std::size_t i) {
    const Matrix prefix = compose_prefix(domain, &samples.at(batch[i].id));
    for (Eigen::Index j = 0; j < b; ++j) {
      const auto& seq = batch[static_cast<std::size_t>(j)].tokens;
      s(static_cast<Eigen::Index>(i), j) = sequence_logprob(model, prefix, seq) * score_scale(seq, opts);
    }
  });
  return s;
}

inline double contrastive_loss(const Backbone& model, const DomainRepresentation& domain,
                               const SampleRepresentationSet& samples, std::span<const LabeledSequence> batch,
                               const ObjectiveOptions& opts = {}) {
  return contrastive_from_scores(contrastive_scores(model, domain, samples, batch, opts), opts.mode);
}

struct LossValue {
  double likelihood = 0.0;
  /// NaN when λ = 0 and the contrastive term was skipped.
  double contrastive = std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
};

/// L1 + λ L2 over one batch; each term evaluated once. With λ = 0 the
/// contrastive term is not evaluated.
inline LossValue total_loss(const Backbone& model, const DomainRepresentation& domain,
                            const SampleRepresentationSet& samples, std::span<const LabeledSequence> batch,
                            double lambda, const ObjectiveOptions& opts = {}) {
  require(lambda >= 0.0, "lambda must be non-negative");
  std::vector<TokenSequence> seqs;
  for (const auto& x : batch) seqs.push_back(x.tokens);
  LossValue v;
  v.likelihood = likelihood_loss(model, domain, seqs);
  v.total = v.likelihood;
  if (lambda > 0.0) {
    v.contrastive = contrastive_loss(model, domain, samples, batch, opts);
    v.total += lambda * v.contrastive;
  }
  return v;
}

struct LossGradient {
  LossValue value;
  Matrix domain;
  /// Keyed by sample id; only samples in the batch appear.
  std::map<std::string, Matrix> samples;
  /// Backbone weights are frozen; their gradient is identically zero.
  double backbone_weight_gradient_norm = 0.0;

  double squared_norm() const {
    double s = domain.squaredNorm();
    for (const auto& [id, g] : samples) s += g.squaredNorm();
    return s;
  }
};

/// Exact gradient of total_loss with respect to every soft-token entry.
inline LossGradient gradient(const Backbone& model, const DomainRepresentation& domain,
                             const SampleRepresentationSet& samples, std::span<const LabeledSequence> batch,
                             double lambda, const ObjectiveOptions& opts = {}) {
  require(lambda >= 0.0, "lambda must be non-negative");
  require(model.frozen(), "gradient requires a frozen backbone");
  require(!batch.empty(), "gradient needs a non-empty batch");
  const Eigen::Index k = domain.k();
  const auto b = static_cast<Eigen::Index>(batch.size());
  LossGradient out;
  out.domain = Matrix::Zero(k, domain.matrix.cols());

  // L1: domain-only prefix. Per-item buffers, reduced in batch order.
  const Matrix dprefix = compose_prefix(domain);
  std::vector<Matrix> item_grads(batch.size());
  std::vector<double> item_logp(batch.size());
  parallel_for(batch.size(), opts.workers, [&](std::size_t i) {
    item_grads[i] = Matrix::Zero(k, domain.matrix.cols());
    item_logp[i] = sequence_logprob_grad(model, dprefix, batch[i].tokens, -1.0 / static_cast<double>(b), item_grads[i]);
  });
  double l1 = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    l1 -= item_logp[i];
    out.domain += item_grads[i];
  }
  out.value.likelihood = l1 / static_cast<double>(b);
  out.value.total = out.value.likelihood;

  if (lambda > 0.0) {
    const Matrix scores = contrastive_scores(model, domain, samples, batch, opts);
    out.value.contrastive = contrastive_from_scores(scores, opts.mode);
    out.value.total += lambda * out.value.contrastive;
    const Matrix ds = lambda * contrastive_score_gradient(scores, opts.mode);
    std::vector<Matrix> row_grads(batch.size());
    parallel_for(batch.size(), opts.workers, [&](std::size_t i) {
      const Matrix prefix = compose_prefix(domain, &samples.at(batch[i].id));
      row_grads[i] = Matrix::Zero(prefix.rows(), prefix.cols());
      for (Eigen::Index j = 0; j < b; ++j) {
        const double w = ds(static_cast<Eigen::Index>(i), j);
        if (w == 0.0) continue;
        const auto& seq = batch[static_cast<std::size_t>(j)].tokens;
        sequence_logprob_grad(model, prefix, seq, w * score_scale(seq, opts), row_grads[i]);
      }
    });
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const SoftTokenMatrix& s_i = samples.at(batch[i].id);
      out.domain += row_grads[i].topRows(k);
      auto [it, inserted] = out.samples.try_emplace(batch[i].id, Matrix::Zero(s_i.rows(), s_i.cols()));
      it->second += row_grads[i].bottomRows(s_i.rows());
    }
  }
  if (!std::isfinite(out.squared_norm()))
    throw RuntimeFailure("non-finite gradient (L1=" + std::to_string(out.value.likelihood) +
                         ", L2=" + std::to_string(out.value.contrastive) + ")");
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference checking.

struct FiniteDifferenceReport {
  double max_relative_error = 0.0;
  std::size_t worst_matrix = 0;
  Eigen::Index worst_entry = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
  bool passed = false;
};

/// |a - n| / max(|a|, |n|), with the denominator floored so entries whose
/// true derivative is ~0 are judged on an absolute scale.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central differences of `loss` on the entries of `params` versus
/// `analytic`. Above `max_entries` total entries a seeded random subset is checked.
inline FiniteDifferenceReport finite_difference_check(const std::function<double()>& loss,
                                                      const std::vector<Matrix*>& params,
                                                      const std::vector<const Matrix*>& analytic, double step,
                                                      double tolerance, std::uint64_t seed = 0,
                                                      std::size_t max_entries = 10000) {
  require(params.size() == analytic.size(), "finite difference: params/gradients size mismatch");
  require(step >= 1e-7 && step <= 1e-3, "finite difference step must lie in [1e-7, 1e-3]");
  std::vector<std::pair<std::size_t, Eigen::Index>> entries;
  for (std::size_t m = 0; m < params.size(); ++m) {
    require(params[m]->rows() == analytic[m]->rows() && params[m]->cols() == analytic[m]->cols(),
            "finite difference: gradient shape mismatch");
    for (Eigen::Index i = 0; i < params[m]->size(); ++i) entries.emplace_back(m, i);
  }
  if (entries.size() > max_entries) {
    std::mt19937_64 rng(seed);
    std::shuffle(entries.begin(), entries.end(), rng);
    entries.resize(max_entries);
  }
  FiniteDifferenceReport report;
  for (auto [m, i] : entries) {
    double& x = params[m]->data()[i];
    const double saved = x;
    x = saved + step;
    const double up = loss();
    x = saved - step;
    const double down = loss();
    x = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic[m]->data()[i];
    const double err = relative_error(a, numeric);
    ++report.entries_checked;
    if (err > report.max_relative_error || !std::isfinite(err)) {
      report.max_relative_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
      report.worst_matrix = m;
      report.worst_entry = i;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  }
  report.passed = report.max_relative_error < tolerance;
  return report;
}

}  // namespace softsynth
