#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "softsynth/backbone.hpp"
#include "softsynth/data.hpp"
#include "softsynth/parallel.hpp"
#include "softsynth/representation.hpp"

namespace softsynth {

struct SynthesisConfig {
  int count = 2000;
  double temperature = 0.8;
  int max_len = 256;
  std::uint64_t seed = 0;
  bool dedup = true;
  int workers = 1;

  void validate() const {
    require(count >= 1, "count must be >= 1");
    require(temperature > 0.0, "temperature must be positive");
    require(max_len >= 1, "max_len must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"count", count}, {"temperature", temperature}, {"max_len", max_len}, {"seed", std::to_string(seed)},
            {"dedup", dedup}, {"workers", workers}};
  }
};

struct Provenance {
  std::string checkpoint;  // digest of the generating representation checkpoint
  std::uint64_t seed = 0;
  std::size_t draw_index = 0;
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct Verdict {
  bool kept = true;
  std::string reason;  // first failing rule when dropped
  friend bool operator==(const Verdict&, const Verdict&) = default;
};

struct SyntheticSample {
  std::string input_text;
  std::optional<std::string> output_text;
  Provenance provenance;
  Verdict verdict;
  /// Generation stopped at max_len without EOS.
  bool input_truncated = false;
  bool output_truncated = false;
  friend bool operator==(const SyntheticSample&, const SyntheticSample&) = default;
};

/// `count` independent draws from p(X | D) at the configured temperature.
/// Draw i uses the stream mix_seed(seed, i); output order is draw order.
inline std::vector<SyntheticSample> synthesize(const Backbone& backbone, const DomainRepresentation& domain,
                                               const SynthesisConfig& cfg, const std::string& checkpoint_id = "") {
  cfg.validate();
  require(domain.matrix.cols() == backbone.width(), "domain representation width does not match backbone");
  IncrementalDecoder primed(backbone);
  const RowVector first_logits = primed.prime(compose_prefix(domain));
  std::vector<SyntheticSample> out(static_cast<std::size_t>(cfg.count));
  const int budget = std::min<int>(cfg.max_len, backbone.arch().max_positions - static_cast<int>(domain.k()));
  require(budget >= 1, "no room in the context after the domain prefix");
  parallel_for(out.size(), cfg.workers, [&](std::size_t i) {
    const auto seq = sample_continuation(primed, first_logits, backbone.arch().eos_id, cfg.temperature, budget,
                                         mix_seed(cfg.seed, i));
    SyntheticSample& s = out[i];
    s.input_text = detokenize(seq, backbone.vocab());
    s.input_truncated = seq.ids.back() != backbone.arch().eos_id;
    s.provenance = {checkpoint_id, cfg.seed, i};
  });
  return out;
}

// ---------------------------------------------------------------------------
// Rule-based post-processing filter.

struct FilterRule {
  enum class Kind { Length, PrintableRatio, Duplicate, RepeatedSubstring };
  Kind kind = Kind::Length;
  std::size_t min_length = 1;
  std::size_t max_length = std::numeric_limits<std::size_t>::max();
  double printable_threshold = 0.9;
  /// Drop when the longest repeated substring covers more than this fraction.
  double max_repeat_ratio = 0.5;

  static FilterRule length(std::size_t lo, std::size_t hi) { return {Kind::Length, lo, hi}; }
  static FilterRule printable(double threshold) {
    FilterRule r;
    r.kind = Kind::PrintableRatio;
    r.printable_threshold = threshold;
    return r;
  }
  static FilterRule duplicate() { return {Kind::Duplicate}; }
  static FilterRule repeated_substring(double ratio) {
    FilterRule r;
    r.kind = Kind::RepeatedSubstring;
    r.max_repeat_ratio = ratio;
    return r;
  }

  std::string name() const {
    switch (kind) {
      case Kind::Length: return "length";
      case Kind::PrintableRatio: return "printable";
      case Kind::Duplicate: return "duplicate";
      case Kind::RepeatedSubstring: return "repetition";
    }
    return "unknown";
  }
};

/// Pluggable external judge (e.g. an LLM grader); returns a drop reason or nothing.
using Judge = std::function<std::optional<std::string>(const SyntheticSample&)>;

inline std::vector<FilterRule> default_filter_rules() {
  return {FilterRule::length(1, 4096), FilterRule::printable(0.95), FilterRule::repeated_substring(0.5),
          FilterRule::duplicate()};
}

inline double printable_ratio(std::string_view s) {
  if (s.empty()) return 1.0;
  const auto ok = std::count_if(s.begin(), s.end(), [](unsigned char c) { return c >= 0x20 && c < 0x7f; });
  return static_cast<double>(ok) / static_cast<double>(s.size());
}

/// Length of the longest substring occurring at least twice (overlaps allowed).
inline std::size_t longest_repeated_substring(std::string_view s) {
  const std::size_t n = s.size();
  std::size_t best = 0;
  // Longest common prefix of suffix pairs via DP on shifted copies.
  for (std::size_t shift = 1; shift < n; ++shift) {
    std::size_t run = 0;
    for (std::size_t i = 0; i + shift < n; ++i) {
      run = s[i] == s[i + shift] ? run + 1 : 0;
      best = std::max(best, run);
    }
  }
  return best;
}

inline double repeated_substring_ratio(std::string_view s) {
  return s.empty() ? 0.0 : static_cast<double>(longest_repeated_substring(s)) / static_cast<double>(s.size());
}

/// Assigns a verdict to every sample: the first failing rule in order, else
/// the judge, else kept. Samples already dropped stay dropped. Duplicates
/// are judged against earlier kept samples only.
inline std::vector<SyntheticSample> filter(std::vector<SyntheticSample> samples, std::span<const FilterRule> rules,
                                           const Judge& judge = nullptr) {
  std::set<std::string> seen;
  for (auto& s : samples) {
    if (!s.verdict.kept) continue;
    const std::string& t = s.input_text;
    std::optional<std::string> reason;
    bool checks_duplicates = false;
    for (const auto& r : rules) {
      switch (r.kind) {
        case FilterRule::Kind::Length:
          if (t.size() < r.min_length || t.size() > r.max_length) reason = r.name();
          break;
        case FilterRule::Kind::PrintableRatio:
          if (printable_ratio(t) < r.printable_threshold) reason = r.name();
          break;
        case FilterRule::Kind::RepeatedSubstring:
          if (repeated_substring_ratio(t) > r.max_repeat_ratio) reason = r.name();
          break;
        case FilterRule::Kind::Duplicate:
          checks_duplicates = true;
          if (seen.contains(t)) reason = r.name();
          break;
      }
      if (reason) break;
    }
    if (!reason && judge) reason = judge(s);
    if (reason) {
      s.verdict = {false, *reason};
    } else if (checks_duplicates) {
      seen.insert(t);
    }
  }
  return samples;
}

inline std::vector<SyntheticSample> kept(std::span<const SyntheticSample> samples) {
  std::vector<SyntheticSample> out;
  std::copy_if(samples.begin(), samples.end(), std::back_inserter(out), [](const auto& s) { return s.verdict.kept; });
  return out;
}

inline std::map<std::string, std::size_t> verdict_counts(std::span<const SyntheticSample> samples) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : samples) ++counts[s.verdict.kept ? "kept" : "dropped:" + s.verdict.reason];
  return counts;
}

// ---------------------------------------------------------------------------
// Output pairing.

/// For each kept input, samples one output conditioned on
/// (domain prefix, BOS, input tokens, SEP). Output i uses mix_seed(seed, i).
inline std::vector<SyntheticSample> generate_outputs(const Backbone& backbone, const DomainRepresentation& domain,
                                                     std::vector<SyntheticSample> samples, double temperature,
                                                     int max_len, std::uint64_t seed) {
  const auto sep = backbone.vocab().separator();
  require(sep.has_value(), "vocabulary has no separator token; cannot pair outputs");
  require(max_len >= 1, "max_len must be >= 1");
  const Matrix prefix = compose_prefix(domain);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto& s = samples[i];
    require(s.verdict.kept, "generate_outputs expects samples kept by the filter");
    IncrementalDecoder dec(backbone);
    RowVector logits = dec.prime(prefix);
    const TokenSequence input = tokenize(s.input_text, backbone.vocab());
    for (std::size_t t = 0; t + 1 < input.size(); ++t) logits = dec.push_token(input.ids[t]);
    logits = dec.push_token(*sep);
    const int room = backbone.arch().max_positions - static_cast<int>(dec.length());
    require(room >= 1, "no room left in the context for an output");
    const auto out = sample_continuation(dec, logits, backbone.arch().eos_id, temperature, std::min(max_len, room),
                                         mix_seed(seed, i));
    s.output_text = detokenize(out, backbone.vocab());
    s.output_truncated = out.ids.back() != backbone.arch().eos_id;
  }
  return samples;
}

/// Reference-corpus record plus provenance and verdict fields.
inline nlohmann::json to_json(const SyntheticSample& s) {
  nlohmann::json j{{"input", s.input_text},
                   {"provenance",
                    {{"checkpoint", s.provenance.checkpoint},
                     {"seed", std::to_string(s.provenance.seed)},
                     {"draw_index", s.provenance.draw_index}}},
                   {"verdict", s.verdict.kept ? "kept" : "dropped(" + s.verdict.reason + ")"},
                   {"input_truncated", s.input_truncated}};
  if (s.output_text) {
    j["output"] = *s.output_text;
    j["output_truncated"] = s.output_truncated;
  }
  return j;
}

inline SyntheticSample synthetic_from_json(const nlohmann::json& j) {
  SyntheticSample s;
  s.input_text = j.at("input").get<std::string>();
  if (j.contains("output")) s.output_text = j["output"].get<std::string>();
  const auto& p = j.at("provenance");
  s.provenance = {p.at("checkpoint").get<std::string>(), std::stoull(p.at("seed").get<std::string>()),
                  p.at("draw_index").get<std::size_t>()};
  const std::string v = j.value("verdict", "kept");
  if (v != "kept") {
    require(v.starts_with("dropped(") && v.ends_with(")"), "malformed verdict '" + v + "'");
    s.verdict = {false, v.substr(8, v.size() - 9)};
  }
  s.input_truncated = j.value("input_truncated", false);
  s.output_truncated = j.value("output_truncated", false);
  return s;
}

inline void write_synthetic(std::ostream& out, std::span<const SyntheticSample> samples) {
  for (const auto& s : samples) out << to_json(s).dump() << '\n';
}

inline std::vector<SyntheticSample> read_synthetic(std::istream& in) {
  std::vector<SyntheticSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (Corpus::is_blank(line)) continue;
    try {
      out.push_back(synthetic_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": malformed synthetic record (" + e.what() + ")");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Diversity.

/// Levenshtein distance divided by the longer length (0 for two empty strings).
inline double normalized_edit_distance(std::string_view a, std::string_view b) {
  if (a.empty() && b.empty()) return 0.0;
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[b.size()]) / static_cast<double>(std::max(a.size(), b.size()));
}

struct DiversityReport {
  std::size_t count = 0;
  double distinct_ratio = 0.0;
  double mean_pairwise_distance = 0.0;
  std::size_t pairs_measured = 0;
  /// Input length (bytes) -> number of samples.
  std::map<std::size_t, std::size_t> length_histogram;

  nlohmann::json to_json() const {
    nlohmann::json hist = nlohmann::json::object();
    for (auto [len, c] : length_histogram) hist[std::to_string(len)] = c;
    return {{"count", count},
            {"distinct_ratio", distinct_ratio},
            {"mean_pairwise_distance", mean_pairwise_distance},
            {"pairs_measured", pairs_measured},
            {"length_histogram", hist}};
  }
};

inline DiversityReport diversity_report(std::span<const std::string> inputs, std::uint64_t seed = 0,
                                        std::size_t max_pairs = 10000) {
  require(inputs.size() >= 2, "diversity report needs at least 2 samples");
  DiversityReport r;
  r.count = inputs.size();
  r.distinct_ratio = static_cast<double>(std::set<std::string>(inputs.begin(), inputs.end()).size()) /
                     static_cast<double>(inputs.size());
  for (const auto& s : inputs) ++r.length_histogram[s.size()];
  const std::size_t n = inputs.size();
  const double all_pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  double total = 0.0;
  if (all_pairs <= static_cast<double>(max_pairs)) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j, ++r.pairs_measured) total += normalized_edit_distance(inputs[i], inputs[j]);
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    while (r.pairs_measured < max_pairs) {
      const std::size_t i = pick(rng), j = pick(rng);
      if (i == j) continue;
      total += normalized_edit_distance(inputs[i], inputs[j]);
      ++r.pairs_measured;
    }
  }
  r.mean_pairwise_distance = total / static_cast<double>(r.pairs_measured);
  return r;
}

inline DiversityReport diversity_report(std::span<const SyntheticSample> samples, std::uint64_t seed = 0) {
  std::vector<std::string> inputs;
  for (const auto& s : samples) inputs.push_back(s.input_text);
  return diversity_report(inputs, seed);
}

}  // namespace softsynth
