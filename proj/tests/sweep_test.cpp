#include <gtest/gtest.h>

#include "softsynth/sweep.hpp"
#include "test_util.hpp"

using namespace softsynth;
using fixtures::tiny_backbone;

TEST(SweepAxis, NamesAndGrids) {
  for (const char* name : {"lambda", "k", "temperature", "fraction"})
    EXPECT_EQ(to_string(parse_sweep_axis(name)), name);
  EXPECT_THROW(parse_sweep_axis("beta"), ValidationError);
  EXPECT_EQ(default_grid(SweepAxis::Lambda), (std::vector<double>{0.25, 0.5, 1.0, 2.0, 4.0}));
  EXPECT_EQ(default_grid(SweepAxis::TokenCount), (std::vector<double>{64, 128, 256, 512}));
  EXPECT_EQ(default_grid(SweepAxis::Temperature).size(), 5u);
  EXPECT_EQ(default_grid(SweepAxis::ReferenceFraction).back(), 1.0);
}

TEST(SweepAxis, ValueValidation) {
  const std::vector<double> none;
  EXPECT_THROW(validate_sweep_values(SweepAxis::Lambda, none), ValidationError);
  EXPECT_THROW(validate_sweep_values(SweepAxis::Lambda, std::vector<double>{-1.0}), ValidationError);
  EXPECT_NO_THROW(validate_sweep_values(SweepAxis::Lambda, std::vector<double>{0.0}));
  EXPECT_THROW(validate_sweep_values(SweepAxis::TokenCount, std::vector<double>{2.5}), ValidationError);
  EXPECT_THROW(validate_sweep_values(SweepAxis::Temperature, std::vector<double>{0.0}), ValidationError);
  EXPECT_THROW(validate_sweep_values(SweepAxis::ReferenceFraction, std::vector<double>{1.2}), ValidationError);
  EXPECT_THROW(validate_sweep_values(SweepAxis::ReferenceFraction, std::vector<double>{NAN}), ValidationError);
}

TEST(NestedSubset, SizesAndNesting) {
  const std::vector<double> fractions{0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<std::size_t> previous;
  for (double f : fractions) {
    const auto idx = nested_subset(66, f, 3);
    EXPECT_EQ(idx.size(), static_cast<std::size_t>(std::ceil(f * 66 - 1e-9)));
    EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
    EXPECT_TRUE(std::includes(idx.begin(), idx.end(), previous.begin(), previous.end()));
    previous = idx;
  }
  EXPECT_EQ(nested_subset(66, 0.4, 3), nested_subset(66, 0.4, 3));
  EXPECT_NE(nested_subset(66, 0.4, 3), nested_subset(66, 0.4, 4));
  EXPECT_EQ(nested_subset(3, 0.1, 1, 2).size(), 2u);
  EXPECT_THROW(nested_subset(10, 0.0, 1), ValidationError);
}

TEST(Sweep, RowsPerValueWithTemplateMatch) {
  const Backbone model = tiny_backbone("abcd", 8, 1, 2, 16, 40, 3, 2.0);
  const auto tmpl = default_template(model.vocab());
  const Corpus corpus = make_two_factor_domain(1, 6, model.vocab());
  TrainConfig cfg;
  cfg.k = 2;
  cfg.l = 2;
  cfg.steps = 4;
  cfg.batch_size = 6;
  cfg.max_len = 8;
  cfg.plateau_patience = 0;
  SynthesisConfig synth;
  synth.count = 16;
  synth.max_len = 6;
  const std::vector<double> temps{0.5, 1.0};
  const auto rows = sweep(corpus, model, cfg, synth, SweepAxis::Temperature, temps, tmpl);
  ASSERT_EQ(rows.size(), 2u);
  // One shared fit: identical losses across temperatures.
  EXPECT_EQ(rows[0].final_loss.total, rows[1].final_loss.total);
  for (const auto& r : rows) {
    EXPECT_EQ(r.synthesized, 16u);
    EXPECT_LE(r.kept, r.synthesized);
    ASSERT_TRUE(r.template_match.has_value());
    EXPECT_GE(*r.template_match, 0.0);
    ASSERT_TRUE(r.mi_proxy.has_value());
    EXPECT_LE(*r.mi_proxy, 0.0);
    EXPECT_EQ(r.to_json()["axis"], "temperature");
  }

  const std::vector<double> fractions{0.5, 1.0};
  const auto frows = sweep(corpus, model, cfg, synth, SweepAxis::ReferenceFraction, fractions);
  EXPECT_EQ(frows[0].references, 3u);
  EXPECT_EQ(frows[1].references, 6u);
  EXPECT_FALSE(frows[0].template_match.has_value());

  const std::vector<double> lambdas{0.0};
  const auto lrows = sweep(corpus, model, cfg, synth, SweepAxis::Lambda, lambdas);
  EXPECT_TRUE(lrows[0].to_json()["l2"].is_null());
}
