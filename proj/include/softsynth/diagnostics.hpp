#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "softsynth/backbone.hpp"
#include "softsynth/objectives.hpp"
#include "softsynth/representation.hpp"

namespace softsynth {

struct DistributionSummary {
  double entropy = 0.0;  // nats
  double epsilon = 0.0;
  std::size_t support_size = 0;  // |{x : p(x) > epsilon}|
  /// log(support_size) - entropy; -inf when the ε-support is empty.
  double uniformity_gap = 0.0;
  /// Mass on outcomes with 0 < p(x) <= epsilon.
  double tail_mass = 0.0;

  /// -ε log(1/ε), the floor on δ used by the support-expansion argument.
  double gap_floor() const { return -epsilon * std::log(1.0 / epsilon); }
  bool gap_bound_holds() const { return uniformity_gap >= gap_floor(); }

  nlohmann::json to_json() const {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {{"entropy", entropy},     {"epsilon", epsilon},     {"support_size", support_size},
            {"uniformity_gap", num(uniformity_gap)}, {"tail_mass", tail_mass}, {"gap_bound_holds", gap_bound_holds()}};
  }
};

inline void check_epsilon(double eps) {
  require(eps > 0.0 && eps < 1.0 / std::numbers::e, "epsilon must lie in (0, 1/e)");
}

/// Exact entropy, ε-support size and uniformity gap; 0 log 0 = 0.
inline DistributionSummary summarize(std::span<const double> p, double eps) {
  check_epsilon(eps);
  double total = 0.0;
  for (double x : p) {
    require(x >= 0.0 && std::isfinite(x), "probabilities must be finite and non-negative");
    total += x;
  }
  require(std::abs(total - 1.0) <= 1e-9, "distribution is not normalized (sum = " + std::to_string(total) + ")");
  DistributionSummary s;
  s.epsilon = eps;
  for (double x : p) {
    if (x > 0.0) s.entropy -= x * std::log(x);
    if (x > eps) ++s.support_size;
    else if (x > 0.0) s.tail_mass += x;
  }
  s.entropy = std::max(0.0, s.entropy);
  s.uniformity_gap = s.support_size > 0 ? std::log(static_cast<double>(s.support_size)) - s.entropy
                                        : -std::numeric_limits<double>::infinity();
  return s;
}

/// Summary of the renormalized terminated-sequence distribution.
inline DistributionSummary summarize(const ExactDistribution& dist, double eps) {
  const auto p = dist.renormalized();
  return summarize(p, eps);
}

struct SupportExpansionVerdict {
  DistributionSummary base;      // p(X | D)
  DistributionSummary expanded;  // p(X | D*)
  double lhs = 0.0;              // H(p_D*) - H(p_D)
  double rhs = 0.0;              // δ_{p_D} + ε log(1/ε)
  bool condition_holds = false;
  /// Only meaningful when the condition holds: S_{D*} > S_D.
  bool conclusion_holds = false;
  long support_margin = 0;  // S_{D*} - S_D

  bool violates() const { return condition_holds && !conclusion_holds; }

  nlohmann::json to_json() const {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {{"base", base.to_json()},
            {"expanded", expanded.to_json()},
            {"lhs", num(lhs)},
            {"rhs", num(rhs)},
            {"condition_margin", num(lhs - rhs)},
            {"condition_holds", condition_holds},
            {"conclusion_holds", conclusion_holds},
            {"support_margin", support_margin}};
  }
};

/// Evaluates H(p_D*) - H(p_D) > δ_{p_D} + ε log(1/ε) and, when it holds,
/// whether S^ε_{D*} > S^ε_D.
inline SupportExpansionVerdict check_support_expansion(std::span<const double> p_base, std::span<const double> p_expanded,
                                                       double eps) {
  require(p_base.size() == p_expanded.size(), "distributions are over different outcome spaces");
  SupportExpansionVerdict v;
  v.base = summarize(p_base, eps);
  v.expanded = summarize(p_expanded, eps);
  v.lhs = v.expanded.entropy - v.base.entropy;
  v.rhs = v.base.uniformity_gap + eps * std::log(1.0 / eps);
  v.condition_holds = v.lhs > v.rhs;
  v.support_margin = static_cast<long>(v.expanded.support_size) - static_cast<long>(v.base.support_size);
  v.conclusion_holds = v.expanded.support_size > v.base.support_size;
  return v;
}

inline SupportExpansionVerdict check_support_expansion(const ExactDistribution& base, const ExactDistribution& expanded,
                                                       double eps) {
  require(base.outcomes == expanded.outcomes, "distributions are over different outcome spaces");
  const auto a = base.renormalized();
  const auto b = expanded.renormalized();
  return check_support_expansion(a, b, eps);
}

/// −L2 over the given sequences as one batch: a lower-bound proxy for the
/// conditional mutual information between sample tokens and data given D*.
/// It is not an estimate of the mutual information itself.
inline double mi_bound_proxy(const Backbone& model, const DomainRepresentation& domain,
                             const SampleRepresentationSet& samples, std::span<const LabeledSequence> seqs,
                             const ObjectiveOptions& opts = {}) {
  return -contrastive_loss(model, domain, samples, seqs, opts);
}

struct EntropyComparison {
  int max_len = 0;
  double base_truncated_mass = 0.0;
  double expanded_truncated_mass = 0.0;
  std::vector<SupportExpansionVerdict> verdicts;  // one per ε

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& v : verdicts) rows.push_back(v.to_json());
    return {{"max_len", max_len},
            {"base_truncated_mass", base_truncated_mass},
            {"expanded_truncated_mass", expanded_truncated_mass},
            {"verdicts", rows}};
  }
};

/// Enumerates p(X | D) (likelihood-only checkpoint) and p(X | D*) (full
/// objective checkpoint) and checks support expansion at each ε.
inline EntropyComparison compare_entropies(const Backbone& backbone, const DomainRepresentation& likelihood_only,
                                           const DomainRepresentation& full, std::span<const double> epsilons,
                                           int max_len) {
  const auto base = enumerate_distribution(backbone, compose_prefix(likelihood_only), max_len);
  const auto expanded = enumerate_distribution(backbone, compose_prefix(full), max_len);
  EntropyComparison out;
  out.max_len = max_len;
  out.base_truncated_mass = base.truncated_mass;
  out.expanded_truncated_mass = expanded.truncated_mass;
  for (double eps : epsilons) out.verdicts.push_back(check_support_expansion(base, expanded, eps));
  return out;
}

// ---------------------------------------------------------------------------
// 2-D scatter export.

/// Mean final-layer-norm hidden state of BOS + text under an empty prefix.
inline RowVector text_embedding(const Backbone& model, const TokenSequence& seq) {
  ForwardCache cache;
  const std::span<const TokenId> ids(seq.ids);
  forward(model.arch(), model.weights(), detail::embed_inputs(model, Matrix(0, model.width()), ids.first(ids.size() - 1)),
          cache);
  return cache.lnf_out.colwise().mean();
}

/// Projection of each row onto the first two principal components.
inline Matrix principal_components_2d(const Matrix& rows) {
  require(rows.rows() >= 2, "need at least 2 points for a projection");
  Matrix centered = rows.rowwise() - rows.colwise().mean();
  const Matrix cov = (centered.transpose() * centered) / static_cast<double>(rows.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  const Eigen::Index d = cov.cols();
  Matrix basis(d, 2);
  basis.col(0) = solver.eigenvectors().col(d - 1);
  basis.col(1) = d >= 2 ? Vector(solver.eigenvectors().col(d - 2)) : Vector::Zero(d);
  // Sign convention: the largest-magnitude loading of each axis is positive.
  for (int c = 0; c < 2; ++c) {
    Eigen::Index idx;
    basis.col(c).cwiseAbs().maxCoeff(&idx);
    if (basis(idx, c) < 0) basis.col(c) *= -1.0;
  }
  return centered * basis;
}

}  // namespace softsynth
