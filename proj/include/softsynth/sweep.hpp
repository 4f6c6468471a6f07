#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "softsynth/diagnostics.hpp"
#include "softsynth/synthesis.hpp"
#include "softsynth/toy_domains.hpp"
#include "softsynth/trainer.hpp"

namespace softsynth {

enum class SweepAxis { Lambda, TokenCount, Temperature, ReferenceFraction };

inline SweepAxis parse_sweep_axis(std::string_view s) {
  if (s == "lambda") return SweepAxis::Lambda;
  if (s == "k") return SweepAxis::TokenCount;
  if (s == "temperature") return SweepAxis::Temperature;
  if (s == "fraction") return SweepAxis::ReferenceFraction;
  throw ValidationError("invalid sweep axis '" + std::string(s) + "' (expected lambda, k, temperature or fraction)");
}

inline std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::Lambda: return "lambda";
    case SweepAxis::TokenCount: return "k";
    case SweepAxis::Temperature: return "temperature";
    case SweepAxis::ReferenceFraction: return "fraction";
  }
  return "?";
}

/// The ablation grids each axis is usually run over.
inline std::vector<double> default_grid(SweepAxis a) {
  switch (a) {
    case SweepAxis::Lambda: return {0.25, 0.5, 1.0, 2.0, 4.0};
    case SweepAxis::TokenCount: return {64, 128, 256, 512};
    case SweepAxis::Temperature: return {0.2, 0.4, 0.6, 0.8, 1.0};
    case SweepAxis::ReferenceFraction: return {0.2, 0.4, 0.6, 0.8, 1.0};
  }
  return {};
}

inline void validate_sweep_values(SweepAxis axis, std::span<const double> values) {
  require(!values.empty(), "sweep needs at least one value");
  for (double v : values) {
    require(std::isfinite(v), "sweep values must be finite");
    switch (axis) {
      case SweepAxis::Lambda: require(v >= 0.0, "lambda values must be >= 0"); break;
      case SweepAxis::TokenCount:
        require(v >= 1.0 && v == std::floor(v), "k values must be positive integers");
        break;
      case SweepAxis::Temperature: require(v > 0.0, "temperature values must be positive"); break;
      case SweepAxis::ReferenceFraction: require(v > 0.0 && v <= 1.0, "fraction values must lie in (0, 1]"); break;
    }
  }
}

struct SweepRow {
  std::string axis;
  double value = 0.0;
  std::size_t references = 0;
  int steps = 0;
  LossValue final_loss;
  double per_token_nll = 0.0;
  std::optional<double> mi_proxy;
  std::size_t synthesized = 0;
  std::size_t kept = 0;
  DiversityReport diversity;
  std::optional<double> template_match;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {{"axis", axis},
            {"value", value},
            {"references", references},
            {"steps", steps},
            {"l1", num(final_loss.likelihood)},
            {"l2", num(final_loss.contrastive)},
            {"total", num(final_loss.total)},
            {"per_token_nll", per_token_nll},
            {"mi_proxy", mi_proxy ? nlohmann::json(*mi_proxy) : nlohmann::json(nullptr)},
            {"synthesized", synthesized},
            {"kept", kept},
            {"distinct_ratio", diversity.distinct_ratio},
            {"mean_pairwise_distance", diversity.mean_pairwise_distance},
            {"template_match_rate", template_match ? nlohmann::json(*template_match) : nlohmann::json(nullptr)},
            {"wall_seconds", wall_seconds}};
  }
};

/// Indices of the first ceil(f * n) entries of a seeded permutation, in
/// corpus order. Subsets for increasing f are nested.
inline std::vector<std::size_t> nested_subset(std::size_t n, double fraction, std::uint64_t seed,
                                              std::size_t minimum = 1) {
  require(fraction > 0.0 && fraction <= 1.0, "fraction must lie in (0, 1]");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, 0xf4ac710aULL));
  std::shuffle(order.begin(), order.end(), rng);
  const auto take = std::min(n, std::max(minimum, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9))));
  order.resize(take);
  std::sort(order.begin(), order.end());
  return order;
}

namespace detail {

inline SweepRow evaluate_run(SweepAxis axis, double value, const Corpus& refs, const Backbone& backbone,
                             const TrainConfig& cfg, const FitResult& fitted, const SynthesisConfig& synth,
                             const std::optional<TwoFactorTemplate>& tmpl) {
  SweepRow row;
  row.axis = to_string(axis);
  row.value = value;
  row.references = refs.size();
  row.steps = fitted.report.steps_executed;
  row.final_loss = fitted.report.final_loss;
  row.per_token_nll = fitted.report.final_per_token_nll;
  const auto seqs = prepare_sequences(refs, backbone.vocab(), cfg.max_len);
  if (cfg.l > 0 && seqs.size() >= 2) row.mi_proxy = mi_bound_proxy(backbone, fitted.domain, fitted.samples, seqs, cfg.objective());
  auto samples = synthesize(backbone, fitted.domain, synth);
  row.synthesized = samples.size();
  samples = filter(std::move(samples), default_filter_rules());
  const auto kept_samples = kept(samples);
  row.kept = kept_samples.size();
  std::vector<std::string> inputs;
  for (const auto& s : samples) inputs.push_back(s.input_text);
  if (inputs.size() >= 2) row.diversity = diversity_report(inputs, synth.seed);
  if (tmpl) row.template_match = template_match_rate(inputs, *tmpl);
  return row;
}

}  // namespace detail

/// One fit + diagnostics row per value. The temperature axis reuses a single
/// fit; the fraction axis trains on nested seeded subsets.
inline std::vector<SweepRow> sweep(const Corpus& corpus, const Backbone& backbone, const TrainConfig& base,
                                   const SynthesisConfig& synth, SweepAxis axis, std::span<const double> values,
                                   const std::optional<TwoFactorTemplate>& tmpl = std::nullopt) {
  validate_sweep_values(axis, values);
  std::vector<SweepRow> rows;
  std::optional<FitResult> shared_fit;
  for (double v : values) {
    const auto t0 = std::chrono::steady_clock::now();
    TrainConfig cfg = base;
    SynthesisConfig sc = synth;
    Corpus refs = corpus;
    switch (axis) {
      case SweepAxis::Lambda: cfg.lambda = v; break;
      case SweepAxis::TokenCount: cfg.k = static_cast<int>(v); break;
      case SweepAxis::Temperature: sc.temperature = v; break;
      case SweepAxis::ReferenceFraction: {
        const auto idx = nested_subset(corpus.size(), v, base.seed, base.lambda > 0.0 ? 2 : 1);
        refs = corpus.subset(idx);
        break;
      }
    }
    FitResult fitted;
    if (axis == SweepAxis::Temperature) {
      if (!shared_fit) shared_fit = fit(refs, backbone, cfg);
      fitted = *shared_fit;
    } else {
      fitted = fit(refs, backbone, cfg);
    }
    SweepRow row = detail::evaluate_run(axis, v, refs, backbone, cfg, fitted, sc, tmpl);
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace softsynth
