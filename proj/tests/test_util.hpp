#pragma once

#include <random>

#include "softsynth/backbone.hpp"

namespace softsynth::fixtures {

/// Small random (untrained) backbone over a restricted vocabulary.
inline Backbone tiny_backbone(std::string_view chars, int d = 8, int layers = 2, int heads = 2, int ff = 16,
                              int positions = 32, std::uint64_t seed = 7, double weight_scale = 1.0) {
  ArchConfig arch;
  arch.d_model = d;
  arch.n_layers = layers;
  arch.n_heads = heads;
  arch.d_ff = ff;
  arch.max_positions = positions;
  Backbone b = Backbone::initialize(arch, Vocabulary::restricted(chars), seed);
  if (weight_scale != 1.0) {
    b.mutable_weights().for_each_tensor([&](const std::string& name, Matrix& m) {
      if (name.find("ln") == std::string::npos) m *= weight_scale;
    });
  }
  b.freeze();
  return b;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace softsynth::fixtures

namespace softsynth::fixtures {

/// A frozen model whose logits are identically zero: every step is uniform.
inline Backbone uniform_backbone(std::string_view chars, int d = 8, int positions = 32) {
  ArchConfig arch;
  arch.d_model = d;
  arch.n_layers = 1;
  arch.n_heads = 2;
  arch.d_ff = 16;
  arch.max_positions = positions;
  Backbone b = Backbone::initialize(arch, Vocabulary::restricted(chars), 1);
  b.mutable_weights().w_out.setZero();
  b.mutable_weights().b_out.setZero();
  b.freeze();
  return b;
}

}  // namespace softsynth::fixtures
