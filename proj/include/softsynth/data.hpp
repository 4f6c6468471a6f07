#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "softsynth/common.hpp"

namespace softsynth {

using Date = std::chrono::year_month_day;

/// Accepts "YYYY-MM-DD" optionally followed by a time part ("T..." or " ...").
inline Date parse_date(std::string_view text) {
  auto bad = [&] { return ValidationError("malformed ISO-8601 date '" + std::string(text) + "'"); };
  if (text.size() < 10 || text[4] != '-' || text[7] != '-') throw bad();
  if (text.size() > 10 && text[10] != 'T' && text[10] != ' ') throw bad();
  auto num = [&](std::size_t pos, std::size_t len) {
    int v = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
      if (text[i] < '0' || text[i] > '9') throw bad();
      v = v * 10 + (text[i] - '0');
    }
    return v;
  };
  Date d{std::chrono::year{num(0, 4)}, std::chrono::month{static_cast<unsigned>(num(5, 2))},
         std::chrono::day{static_cast<unsigned>(num(8, 2))}};
  if (!d.ok()) throw bad();
  return d;
}

inline std::string format_date(const Date& d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()),
                static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
  return buf;
}

struct ReferenceSample {
  std::string id;
  std::string input_text;
  std::string output_text;
  std::optional<Date> timestamp;
  /// Another record earlier in the corpus has the same input_text.
  bool duplicate_input = false;
  /// Free-form extra fields carried through (e.g. provenance on exported pairs).
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const ReferenceSample& a, const ReferenceSample& b) {
    return a.id == b.id && a.input_text == b.input_text && a.output_text == b.output_text &&
           a.timestamp == b.timestamp && a.duplicate_input == b.duplicate_input && a.extra == b.extra;
  }
};

class Corpus {
 public:
  Corpus() = default;

  /// Validates invariants: non-blank inputs, unique ids. Flags duplicate inputs.
  explicit Corpus(std::vector<ReferenceSample> samples) : samples_(std::move(samples)) {
    std::set<std::string> ids;
    std::set<std::string> inputs;
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      auto& s = samples_[i];
      if (s.id.empty()) s.id = std::to_string(i);
      require(!is_blank(s.input_text), "record " + std::to_string(i) + ": empty input");
      require(ids.insert(s.id).second, "duplicate sample id '" + s.id + "'");
      s.duplicate_input = !inputs.insert(s.input_text).second;
    }
  }

  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const std::vector<ReferenceSample>& samples() const { return samples_; }
  const ReferenceSample& operator[](std::size_t i) const { return samples_[i]; }
  auto begin() const { return samples_.begin(); }
  auto end() const { return samples_.end(); }

  std::size_t duplicate_count() const {
    return static_cast<std::size_t>(
        std::count_if(samples_.begin(), samples_.end(), [](const auto& s) { return s.duplicate_input; }));
  }

  /// Samples at the given positions, in the given order.
  Corpus subset(std::span<const std::size_t> indices) const {
    std::vector<ReferenceSample> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(samples_.at(i));
    return Corpus(std::move(out));
  }

  friend bool operator==(const Corpus&, const Corpus&) = default;

  static bool is_blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
  }

 private:
  std::vector<ReferenceSample> samples_;
};

inline ReferenceSample parse_record(const std::string& line, std::size_t line_no) {
  auto where = [&] { return "line " + std::to_string(line_no) + ": "; };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(where() + "malformed record (" + e.what() + ")");
  }
  if (!j.is_object()) throw ValidationError(where() + "malformed record (not an object)");
  if (!j.contains("input") || !j["input"].is_string())
    throw ValidationError(where() + "malformed record (missing string field 'input')");

  ReferenceSample s;
  s.input_text = j["input"].get<std::string>();
  if (Corpus::is_blank(s.input_text)) throw ValidationError(where() + "empty input");
  for (auto& [key, value] : j.items()) {
    if (key == "input") continue;
    if (key == "output") {
      if (!value.is_string()) throw ValidationError(where() + "field 'output' must be a string");
      s.output_text = value.get<std::string>();
    } else if (key == "timestamp") {
      if (value.is_null()) continue;
      if (!value.is_string()) throw ValidationError(where() + "field 'timestamp' must be a string");
      try {
        s.timestamp = parse_date(value.get<std::string>());
      } catch (const ValidationError& e) {
        throw ValidationError(where() + e.what());
      }
    } else if (key == "id") {
      s.id = value.is_string() ? value.get<std::string>() : value.dump();
    } else {
      s.extra[key] = value;
    }
  }
  return s;
}

inline nlohmann::json to_json(const ReferenceSample& s) {
  nlohmann::json j = nlohmann::json::object();
  j["id"] = s.id;
  j["input"] = s.input_text;
  j["output"] = s.output_text;
  if (s.timestamp) j["timestamp"] = format_date(*s.timestamp);
  for (auto& [key, value] : s.extra.items()) j[key] = value;
  return j;
}

inline Corpus read_corpus(std::istream& in) {
  std::vector<ReferenceSample> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (Corpus::is_blank(line)) continue;
    samples.push_back(parse_record(line, line_no));
  }
  if (samples.empty()) throw ValidationError("corpus empty");
  return Corpus(std::move(samples));
}

/// One JSON object per line: input (required), output, timestamp, id.
/// Missing ids become the record index.
inline Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open corpus file '" + path.string() + "'");
  return read_corpus(in);
}

inline void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (const auto& s : corpus) out << to_json(s).dump() << '\n';
}

inline void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write '" + path.string() + "'");
  write_corpus(out, corpus);
}

/// Reference holds samples strictly before the cutoff.
inline std::pair<Corpus, Corpus> split_by_cutoff(const Corpus& corpus, const Date& cutoff) {
  std::vector<ReferenceSample> before, after;
  for (const auto& s : corpus) {
    if (!s.timestamp) throw ValidationError("sample '" + s.id + "' has no timestamp");
    (std::chrono::sys_days(*s.timestamp) < std::chrono::sys_days(cutoff) ? before : after).push_back(s);
  }
  return {Corpus(std::move(before)), Corpus(std::move(after))};
}

}  // namespace softsynth
