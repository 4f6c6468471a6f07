#include <gtest/gtest.h>

#include <random>

#include "softsynth/toy_domains.hpp"

using namespace softsynth;

TEST(TwoFactor, EightSamplesShareTemplateWithDistinctSlots) {
  const auto vocab = Vocabulary::byte_level();
  const Corpus c = make_two_factor_domain(1, 8, vocab);
  ASSERT_EQ(c.size(), 8u);
  const auto tmpl = default_template(vocab);
  EXPECT_EQ(template_match_rate(c, tmpl), 1.0);
  for (std::size_t slot = 0; slot < tmpl.slots(); ++slot) {
    std::set<std::string> fills;
    for (const auto& s : c) fills.insert(s.extra["slots"][slot].get<std::string>());
    EXPECT_EQ(fills.size(), 8u) << "slot " << slot;
  }
  for (const auto& s : c) EXPECT_EQ(*tmpl.parse(s.input_text), s.extra["slots"].get<std::vector<std::string>>());
  EXPECT_EQ(c[0].input_text.substr(0, 9), "Problem: ");
}

TEST(TwoFactor, DeterministicPerSeed) {
  const auto vocab = Vocabulary::byte_level();
  EXPECT_EQ(make_two_factor_domain(3, 16, vocab), make_two_factor_domain(3, 16, vocab));
  EXPECT_NE(make_two_factor_domain(3, 16, vocab), make_two_factor_domain(4, 16, vocab));
}

TEST(TwoFactor, RandomBytesRarelyMatch) {
  const auto tmpl = default_template(Vocabulary::byte_level());
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> byte(0, 255), len(1, 40);
  std::vector<std::string> noise;
  for (int i = 0; i < 1000; ++i) {
    std::string s(static_cast<std::size_t>(len(rng)), ' ');
    for (char& ch : s) ch = static_cast<char>(byte(rng));
    noise.push_back(s);
  }
  EXPECT_LT(template_match_rate(noise, tmpl), 0.05);
  EXPECT_EQ(template_match_rate(std::vector<std::string>{}, tmpl), 0.0);
}

TEST(TwoFactor, ParseRejectsNearMisses) {
  const TwoFactorTemplate t;
  EXPECT_TRUE(t.matches("Problem: abc Example: def Constraint: ghi."));
  EXPECT_FALSE(t.matches("Problem: abc Example: def Constraint: ghi"));
  EXPECT_FALSE(t.matches("Problem: abcd Example: def Constraint: ghi."));
  EXPECT_FALSE(t.matches("Problem: ab Example: def Constraint: ghi."));
  EXPECT_FALSE(t.matches("Problem: ABC Example: def Constraint: ghi."));
  EXPECT_FALSE(t.matches("Problem: abc Example: def Constraint: ghi.."));
}

TEST(TwoFactor, RestrictedVocabularies) {
  const auto v = Vocabulary::restricted("abcd");
  const Corpus c = make_two_factor_domain(2, 8, v);
  EXPECT_EQ(template_match_rate(c, default_template(v)), 1.0);
  for (const auto& s : c) EXPECT_EQ(s.input_text[0], 'a');
  try {
    make_two_factor_domain(1, 4, Vocabulary::restricted("ab"));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("vocabulary too small for markers"), std::string::npos);
  }
  TwoFactorTemplate t;
  t.markers = {"Q: ", "."};
  EXPECT_THROW(make_two_factor_domain(1, 4, Vocabulary::restricted("abc"), t), ValidationError);
  // Slot space of "bc" with length 1..2 holds 6 strings.
  EXPECT_THROW(make_two_factor_domain(1, 7, Vocabulary::restricted("abc")), ValidationError);
  EXPECT_THROW(make_two_factor_domain(1, 1, v), ValidationError);
}

TEST(WorldCorpus, SizeTemplatesAndOutputs) {
  const auto vocab = Vocabulary::byte_level();
  const Corpus c = make_world_corpus(5, 20000, vocab);
  std::size_t chars = 0, outputs = 0;
  for (const auto& s : c) {
    chars += s.input_text.size() + s.output_text.size();
    outputs += !s.output_text.empty();
  }
  EXPECT_GE(chars, 20000u);
  EXPECT_GT(outputs, c.size() / 4);
  EXPECT_LT(outputs, 3 * c.size() / 4);
  const double rate = template_match_rate(c, default_template(vocab));
  EXPECT_GT(rate, 0.02);
  EXPECT_LT(rate, 0.5);
  EXPECT_EQ(make_world_corpus(5, 5000, vocab), make_world_corpus(5, 5000, vocab));
}
