#pragma once

#include <algorithm>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "softsynth/data.hpp"
#include "softsynth/vocab.hpp"

namespace softsynth {

/// A structural template: markers[0] slot markers[1] slot ... markers[N].
/// Slots hold strings over slot_alphabet with length in [slot_min, slot_max].
struct TwoFactorTemplate {
  std::string name = "problem-example-constraint";
  std::vector<std::string> markers{"Problem: ", " Example: ", " Constraint: ", "."};
  std::string slot_alphabet = "abcdefghijklmnopqrstuvwxyz";
  int slot_min = 3;
  int slot_max = 3;

  std::size_t slots() const { return markers.size() - 1; }

  void validate() const {
    require(markers.size() >= 2, "template needs at least one slot");
    require(!slot_alphabet.empty() && slot_min >= 1 && slot_max >= slot_min, "invalid slot specification");
    for (std::size_t i = 1; i < markers.size(); ++i)
      require(markers[i].empty() || slot_alphabet.find(markers[i][0]) == std::string::npos,
              "marker '" + markers[i] + "' must not start with a slot character");
  }

  std::string render(const std::vector<std::string>& fills) const {
    require(fills.size() == slots(), "wrong number of slot fills");
    std::string out = markers[0];
    for (std::size_t i = 0; i < fills.size(); ++i) out += fills[i] + markers[i + 1];
    return out;
  }

  /// Slot fills when `text` parses against the template.
  std::optional<std::vector<std::string>> parse(std::string_view text) const {
    std::size_t pos = 0;
    std::vector<std::string> fills;
    for (std::size_t i = 0; i < markers.size(); ++i) {
      if (text.substr(pos, markers[i].size()) != markers[i]) return std::nullopt;
      pos += markers[i].size();
      if (i + 1 == markers.size()) break;
      std::size_t end = pos;
      while (end < text.size() && slot_alphabet.find(text[end]) != std::string::npos &&
             end - pos < static_cast<std::size_t>(slot_max))
        ++end;
      const auto len = static_cast<int>(end - pos);
      if (len < slot_min) return std::nullopt;
      fills.emplace_back(text.substr(pos, end - pos));
      pos = end;
    }
    if (pos != text.size()) return std::nullopt;
    return fills;
  }

  bool matches(std::string_view text) const { return parse(text).has_value(); }

  bool representable_in(const Vocabulary& vocab) const {
    auto ok = [&](std::string_view s) {
      return std::all_of(s.begin(), s.end(), [&](char c) { return vocab.lookup(c).has_value(); });
    };
    return ok(slot_alphabet) && std::all_of(markers.begin(), markers.end(), ok);
  }
};

/// The default template for byte-level vocabularies; for a restricted
/// vocabulary, its first character is the marker and the rest fill one slot.
inline TwoFactorTemplate default_template(const Vocabulary& vocab) {
  if (vocab.is_byte_level()) return TwoFactorTemplate{};
  const std::string chars = vocab.characters();
  if (chars.size() < 3) throw ValidationError("vocabulary too small for markers (need >= 3 characters)");
  return TwoFactorTemplate{"tiny", {std::string(1, chars[0]), ""}, chars.substr(1), 1, 2};
}

inline double template_match_rate(std::span<const std::string> texts, const TwoFactorTemplate& tmpl) {
  if (texts.empty()) return 0.0;
  const auto hits = std::count_if(texts.begin(), texts.end(), [&](const auto& t) { return tmpl.matches(t); });
  return static_cast<double>(hits) / static_cast<double>(texts.size());
}

inline double template_match_rate(const Corpus& corpus, const TwoFactorTemplate& tmpl) {
  std::vector<std::string> texts;
  for (const auto& s : corpus) texts.push_back(s.input_text);
  return template_match_rate(texts, tmpl);
}

namespace detail {

inline std::string random_fill(const TwoFactorTemplate& t, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(t.slot_min, t.slot_max);
  std::uniform_int_distribution<std::size_t> ch(0, t.slot_alphabet.size() - 1);
  std::string s(static_cast<std::size_t>(len(rng)), ' ');
  for (char& c : s) c = t.slot_alphabet[ch(rng)];
  return s;
}

inline double fill_space(const TwoFactorTemplate& t) {
  double total = 0.0;
  for (int len = t.slot_min; len <= t.slot_max; ++len) total += std::pow(static_cast<double>(t.slot_alphabet.size()), len);
  return total;
}

}  // namespace detail

/// n samples sharing the template (domain factor) with per-sample random
/// slot fills (sample factor). For each slot the fills are pairwise distinct
/// across samples. Ground truth goes into each sample's extra fields.
inline Corpus make_two_factor_domain(std::uint64_t seed, std::size_t n, const Vocabulary& vocab,
                                     const TwoFactorTemplate& tmpl) {
  require(n >= 2, "two-factor domain needs n >= 2");
  tmpl.validate();
  if (!tmpl.representable_in(vocab)) throw ValidationError("vocabulary too small for markers of template '" + tmpl.name + "'");
  require(detail::fill_space(tmpl) >= static_cast<double>(n), "slot space too small for pairwise distinct fills");
  std::mt19937_64 rng(seed);
  std::vector<std::set<std::string>> used(tmpl.slots());
  std::vector<ReferenceSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::string> fills;
    for (std::size_t s = 0; s < tmpl.slots(); ++s) {
      std::string f;
      do f = detail::random_fill(tmpl, rng);
      while (used[s].contains(f));
      used[s].insert(f);
      fills.push_back(f);
    }
    ReferenceSample r;
    r.id = "toy-" + std::to_string(i);
    r.input_text = tmpl.render(fills);
    r.extra["template"] = tmpl.name;
    r.extra["slots"] = fills;
    out.push_back(std::move(r));
  }
  return Corpus(std::move(out));
}

inline Corpus make_two_factor_domain(std::uint64_t seed, std::size_t n, const Vocabulary& vocab) {
  return make_two_factor_domain(seed, n, vocab, default_template(vocab));
}

/// Background corpus for pretraining a backbone: documents of 2-5 records,
/// each document using one of `n_templates` marker templates (the default
/// template among them). Slot length is fixed within a template. Within a document a record repeats an earlier
/// record with probability `reuse`, so the model learns to recall content
/// from context.
/// Half the records carry an output (their slot fills, space separated).
inline Corpus make_world_corpus(std::uint64_t seed, std::size_t target_chars, const Vocabulary& vocab,
                                std::size_t n_templates = 12, double reuse = 0.5) {
  const TwoFactorTemplate base = default_template(vocab);
  std::vector<TwoFactorTemplate> templates{base};
  std::mt19937_64 rng(seed);
  if (vocab.is_byte_level()) {
    const std::vector<std::string> words{"Problem", "Example", "Constraint", "Input", "Output", "Note",
                                         "Task",    "Query",   "Answer",     "Hint",  "Rule",   "Case"};
    const std::vector<std::string> ends{".", ";", "!", "?"};
    std::uniform_int_distribution<int> nslots(2, 4);
    while (templates.size() < n_templates) {
      std::vector<std::string> pick = words;
      std::shuffle(pick.begin(), pick.end(), rng);
      const int s = nslots(rng);
      TwoFactorTemplate t;
      t.name = "world-" + std::to_string(templates.size());
      t.markers.clear();
      for (int i = 0; i < s; ++i) t.markers.push_back((i == 0 ? "" : " ") + pick[static_cast<std::size_t>(i)] + ": ");
      t.markers.push_back(ends[std::uniform_int_distribution<std::size_t>(0, ends.size() - 1)(rng)]);
      t.slot_min = t.slot_max = nslots(rng) % 3 + 2;  // fixed per template, 2-4
      templates.push_back(t);
    }
  } else {
    const std::string chars = vocab.characters();
    for (std::size_t m = 1; m < chars.size() && templates.size() < n_templates; ++m) {
      TwoFactorTemplate t = base;
      t.name = "world-" + std::to_string(m);
      t.markers = {std::string(1, chars[m]), ""};
      t.slot_alphabet.clear();
      for (std::size_t c = 0; c < chars.size(); ++c)
        if (c != m) t.slot_alphabet += chars[c];
      templates.push_back(t);
    }
  }

  std::uniform_int_distribution<std::size_t> pick_template(0, templates.size() - 1);
  std::uniform_int_distribution<int> doc_len(2, 5);
  std::bernoulli_distribution reuse_fill(reuse);
  std::bernoulli_distribution with_output(0.5);
  std::vector<ReferenceSample> out;
  std::size_t chars_written = 0;
  while (chars_written < target_chars) {
    const auto& t = templates[pick_template(rng)];
    const int records = doc_len(rng);
    std::vector<std::vector<std::string>> seen;
    for (int r = 0; r < records; ++r) {
      std::vector<std::string> fills;
      if (!seen.empty() && reuse_fill(rng)) {
        fills = seen[std::uniform_int_distribution<std::size_t>(0, seen.size() - 1)(rng)];
      } else {
        for (std::size_t s = 0; s < t.slots(); ++s) fills.push_back(detail::random_fill(t, rng));
        seen.push_back(fills);
      }
      ReferenceSample rec;
      rec.id = "world-" + std::to_string(out.size());
      rec.input_text = t.render(fills);
      if (with_output(rng)) {
        for (const auto& f : fills) rec.output_text += (rec.output_text.empty() ? "" : " ") + f;
      }
      chars_written += rec.input_text.size() + rec.output_text.size();
      out.push_back(std::move(rec));
    }
  }
  return Corpus(std::move(out));
}

}  // namespace softsynth
