#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "softsynth/common.hpp"

namespace softsynth {

using TokenId = int;

struct TokenSequence {
  std::vector<TokenId> ids;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// Atomic symbols are single bytes. Ids 0..V-1 are dense; the special ids
/// follow the byte/character ids.
class Vocabulary {
 public:
  /// 256 byte ids followed by BOS, EOS, PAD, SEP.
  static Vocabulary byte_level() {
    Vocabulary v;
    v.byte_level_ = true;
    for (int b = 0; b < 256; ++b) v.surface_.push_back(std::string(1, static_cast<char>(b)));
    v.by_byte_.fill(-1);
    for (int b = 0; b < 256; ++b) v.by_byte_[static_cast<std::size_t>(b)] = b;
    v.add_specials(true);
    return v;
  }

  /// Tiny vocabulary over the given characters followed by BOS, EOS, PAD and,
  /// when requested, SEP.
  static Vocabulary restricted(std::string_view chars, bool with_separator = false) {
    Vocabulary v;
    v.by_byte_.fill(-1);
    for (char c : chars) {
      auto& slot = v.by_byte_[static_cast<unsigned char>(c)];
      require(slot < 0, std::string("duplicate vocabulary symbol '") + c + "'");
      slot = static_cast<TokenId>(v.surface_.size());
      v.surface_.push_back(std::string(1, c));
    }
    v.add_specials(with_separator);
    return v;
  }

  int size() const { return static_cast<int>(surface_.size()); }
  TokenId bos() const { return bos_; }
  TokenId eos() const { return eos_; }
  TokenId pad() const { return pad_; }
  std::optional<TokenId> separator() const {
    return sep_ < 0 ? std::nullopt : std::optional<TokenId>(sep_);
  }
  bool is_byte_level() const { return byte_level_; }
  bool is_special(TokenId id) const {
    return id == bos_ || id == eos_ || id == pad_ || (sep_ >= 0 && id == sep_);
  }
  const std::string& surface(TokenId id) const { return surface_.at(static_cast<std::size_t>(id)); }

  /// The non-special characters, in id order.
  std::string characters() const {
    std::string out;
    for (TokenId id = 0; id < size(); ++id)
      if (!is_special(id)) out += surface_[static_cast<std::size_t>(id)];
    return out;
  }

  std::optional<TokenId> lookup(char c) const {
    TokenId id = by_byte_[static_cast<unsigned char>(c)];
    return id < 0 ? std::nullopt : std::optional<TokenId>(id);
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.surface_ == b.surface_ && a.byte_level_ == b.byte_level_ && a.sep_ == b.sep_;
  }

 private:
  void add_specials(bool with_separator) {
    auto add = [this](const char* name) {
      surface_.emplace_back(name);
      return static_cast<TokenId>(surface_.size() - 1);
    };
    bos_ = add("<bos>");
    eos_ = add("<eos>");
    pad_ = add("<pad>");
    if (with_separator) sep_ = add("<sep>");
  }

  std::vector<std::string> surface_;
  std::array<TokenId, 256> by_byte_{};
  TokenId bos_ = -1, eos_ = -1, pad_ = -1, sep_ = -1;
  bool byte_level_ = false;
};

/// Encodes text and appends EOS.
inline TokenSequence tokenize(std::string_view text, const Vocabulary& vocab) {
  TokenSequence seq;
  seq.ids.reserve(text.size() + 1);
  for (std::size_t i = 0; i < text.size(); ++i) {
    auto id = vocab.lookup(text[i]);
    if (!id) {
      throw ValidationError("out-of-vocabulary symbol at offset " + std::to_string(i) +
                            " (byte " + std::to_string(static_cast<unsigned char>(text[i])) + ")");
    }
    seq.ids.push_back(*id);
  }
  seq.ids.push_back(vocab.eos());
  return seq;
}

/// Stops at the first EOS; other specials contribute nothing.
inline std::string detokenize(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : ids) {
    require(id >= 0 && id < vocab.size(), "token id out of range: " + std::to_string(id));
    if (id == vocab.eos()) break;
    if (vocab.is_special(id)) continue;
    out += vocab.surface(id);
  }
  return out;
}

inline std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
  return detokenize(std::span<const TokenId>(seq.ids), vocab);
}

}  // namespace softsynth
