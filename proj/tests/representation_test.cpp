#include <gtest/gtest.h>

#include <filesystem>

#include "softsynth/representation.hpp"
#include "softsynth/trainer.hpp"
#include "test_util.hpp"

using namespace softsynth;
using fixtures::random_matrix;
using fixtures::tiny_backbone;

TEST(Init, VocabRowsWithSingleRowTableCopiesIt) {
  const Matrix table = random_matrix(1, 6, 3);
  const auto m = init_representation(1, 6, InitStrategy::VocabRows, table, 9);
  EXPECT_EQ(m.values, table);
  EXPECT_TRUE(m.trainable);
}

TEST(Init, VocabRowsDrawsTableRows) {
  const Matrix table = random_matrix(10, 4, 1);
  const auto m = init_representation(20, 4, InitStrategy::VocabRows, table, 2);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    bool found = false;
    for (Eigen::Index v = 0; v < table.rows(); ++v) found = found || m.values.row(r) == table.row(v);
    EXPECT_TRUE(found);
  }
}

TEST(Init, GaussianIsDeterministicAndMatchesTableScale) {
  const Matrix table = random_matrix(260, 64, 4, 0.37);
  const auto a = init_representation(512, 64, InitStrategy::Gaussian, table, 5);
  const auto b = init_representation(512, 64, InitStrategy::Gaussian, table, 5);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NEAR(entry_stddev(a.values) / entry_stddev(table), 1.0, 0.1);
  EXPECT_NE(init_representation(512, 64, InitStrategy::Gaussian, table, 6).values, a.values);
}

TEST(Init, StrategyNames) {
  EXPECT_EQ(parse_init_strategy("gaussian"), InitStrategy::Gaussian);
  EXPECT_EQ(to_string(parse_init_strategy("vocab-rows")), "vocab-rows");
  EXPECT_THROW(parse_init_strategy("xavier"), ValidationError);
  EXPECT_THROW(init_representation(2, 5, InitStrategy::VocabRows, random_matrix(3, 4, 1), 1), ValidationError);
}

TEST(ComposePrefix, DomainRowsFirst) {
  DomainRepresentation d{{random_matrix(256, 8, 1), true}};
  const SoftTokenMatrix s{random_matrix(256, 8, 2), true};
  const Matrix p = compose_prefix(d, &s);
  EXPECT_EQ(p.rows(), 512);
  EXPECT_EQ(p.row(0), d.matrix.values.row(0));
  EXPECT_EQ(p.row(256), s.values.row(0));
  EXPECT_EQ(compose_prefix(d).rows(), 256);
  EXPECT_EQ(compose_prefix(d, &s), p);
  const SoftTokenMatrix wrong{random_matrix(2, 7, 2), true};
  EXPECT_THROW(compose_prefix(d, &wrong), ValidationError);
}

TEST(SoftTokenMatrix, FrozenMatrixIgnoresUpdates) {
  SoftTokenMatrix m{Matrix::Zero(2, 2), false};
  m.apply_update(Matrix::Ones(2, 2));
  EXPECT_EQ(m.values, Matrix::Zero(2, 2));
  m.trainable = true;
  m.apply_update(Matrix::Ones(2, 2));
  EXPECT_EQ(m.values, Matrix::Ones(2, 2));
}

TEST(SampleSet, ShapeAndLookupContracts) {
  SampleRepresentationSet s(2, 3);
  s.add("a", {Matrix::Zero(2, 3), true});
  EXPECT_THROW(s.add("a", {Matrix::Zero(2, 3), true}), ValidationError);
  EXPECT_THROW(s.add("b", {Matrix::Zero(3, 3), true}), ValidationError);
  EXPECT_THROW(s.at("missing"), ValidationError);
  EXPECT_TRUE(s.contains("a"));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const Backbone model = tiny_backbone("ab");
  RepresentationCheckpoint c;
  c.domain.matrix = {random_matrix(4, 8, 1), true};
  c.samples = SampleRepresentationSet(2, 8);
  c.samples.add("x", {random_matrix(2, 8, 2), true});
  c.samples.add("y", {random_matrix(2, 8, 3), true});
  c.config = TrainConfig{}.to_json();
  c.backbone_checksum = model.checksum_hex();
  const auto path = std::filesystem::temp_directory_path() / "softsynth_repr_test.ckpt";
  save_representation(c, path);
  const auto back = load_representation(path, model);
  EXPECT_EQ(back.domain, c.domain);
  EXPECT_EQ(back.samples, c.samples);
  EXPECT_EQ(back.config, c.config);
  EXPECT_EQ(back.config["lambda"], 1.0);
  EXPECT_EQ(back.config["k"], 256);
  EXPECT_EQ(back.config["l"], 256);

  const Backbone other = tiny_backbone("ab", 8, 2, 2, 16, 32, 8);
  EXPECT_THROW(load_representation(path, other), ValidationError);
  std::filesystem::remove(path);
}
