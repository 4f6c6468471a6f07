#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "softsynth/common.hpp"

namespace softsynth {

struct ArchConfig {
  int vocab_size = 260;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int max_positions = 256;
  int bos_id = 256;
  int eos_id = 257;

  void validate() const {
    require(vocab_size >= 2, "vocab_size must be >= 2");
    require(d_model >= 1 && n_heads >= 1 && d_model % n_heads == 0,
            "d_model must be a positive multiple of n_heads");
    require(n_layers >= 0 && d_ff >= 1 && max_positions >= 1, "invalid layer/ff/position sizes");
    require(bos_id >= 0 && bos_id < vocab_size && eos_id >= 0 && eos_id < vocab_size && bos_id != eos_id,
            "bos/eos ids must be distinct and inside the vocabulary");
  }
  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

struct LayerWeights {
  Matrix ln1_g, ln1_b;
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix ln2_g, ln2_b;
  Matrix w1, b1, w2, b2;
};

/// All weight tensors of the decoder. Tensor order is fixed by for_each_tensor
/// and defines checkpoint layout and checksums.
struct Weights {
  Matrix tok_emb;  // V x d
  Matrix pos_emb;  // P x d
  std::vector<LayerWeights> layers;
  Matrix lnf_g, lnf_b;
  Matrix w_out, b_out;  // d x V, 1 x V

  static Weights zeros(const ArchConfig& c) {
    Weights w;
    const int d = c.d_model, f = c.d_ff;
    w.tok_emb = Matrix::Zero(c.vocab_size, d);
    w.pos_emb = Matrix::Zero(c.max_positions, d);
    w.layers.resize(static_cast<std::size_t>(c.n_layers));
    for (auto& l : w.layers) {
      l.ln1_g = l.ln1_b = l.ln2_g = l.ln2_b = Matrix::Zero(1, d);
      l.wq = l.wk = l.wv = l.wo = Matrix::Zero(d, d);
      l.bq = l.bk = l.bv = l.bo = l.b2 = Matrix::Zero(1, d);
      l.w1 = Matrix::Zero(d, f);
      l.b1 = Matrix::Zero(1, f);
      l.w2 = Matrix::Zero(f, d);
    }
    w.lnf_g = w.lnf_b = Matrix::Zero(1, d);
    w.w_out = Matrix::Zero(d, c.vocab_size);
    w.b_out = Matrix::Zero(1, c.vocab_size);
    return w;
  }

  template <typename F>
  void for_each_tensor(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    visit(*this, f);
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    f("tok_emb", self.tok_emb);
    f("pos_emb", self.pos_emb);
    for (std::size_t i = 0; i < self.layers.size(); ++i) {
      auto& l = self.layers[i];
      const std::string p = "layer" + std::to_string(i) + ".";
      f(p + "ln1_g", l.ln1_g);
      f(p + "ln1_b", l.ln1_b);
      f(p + "wq", l.wq);
      f(p + "bq", l.bq);
      f(p + "wk", l.wk);
      f(p + "bk", l.bk);
      f(p + "wv", l.wv);
      f(p + "bv", l.bv);
      f(p + "wo", l.wo);
      f(p + "bo", l.bo);
      f(p + "ln2_g", l.ln2_g);
      f(p + "ln2_b", l.ln2_b);
      f(p + "w1", l.w1);
      f(p + "b1", l.b1);
      f(p + "w2", l.w2);
      f(p + "b2", l.b2);
    }
    f("lnf_g", self.lnf_g);
    f("lnf_b", self.lnf_b);
    f("w_out", self.w_out);
    f("b_out", self.b_out);
  }
};

/// GPT-2 style initialization: N(0, 0.02) matrices, unit LayerNorm gains,
/// residual projections scaled by 1/sqrt(2 * layers).
inline Weights init_weights(const ArchConfig& c, std::uint64_t seed) {
  c.validate();
  Weights w = Weights::zeros(c);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  auto fill = [&](Matrix& m, double scale = 1.0) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng) * scale;
  };
  const double resid = 1.0 / std::sqrt(2.0 * std::max(1, c.n_layers));
  fill(w.tok_emb);
  fill(w.pos_emb);
  for (auto& l : w.layers) {
    l.ln1_g.setOnes();
    l.ln2_g.setOnes();
    fill(l.wq);
    fill(l.wk);
    fill(l.wv);
    fill(l.wo, resid);
    fill(l.w1);
    fill(l.w2, resid);
  }
  w.lnf_g.setOnes();
  fill(w.w_out);
  return w;
}

namespace detail {

struct LayerNormCache {
  Matrix xhat;
  Vector rstd;
};

inline Matrix layer_norm(const Matrix& x, const Matrix& g, const Matrix& b, LayerNormCache& cache) {
  constexpr double kEps = 1e-5;
  const Eigen::Index n = x.rows(), d = x.cols();
  cache.xhat.resize(n, d);
  cache.rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    cache.rstd(i) = 1.0 / std::sqrt(var + kEps);
    cache.xhat.row(i) = (x.row(i).array() - mean) * cache.rstd(i);
  }
  Matrix y = cache.xhat.array().rowwise() * g.row(0).array();
  y.rowwise() += b.row(0);
  return y;
}

inline Matrix layer_norm_backward(const Matrix& dy, const Matrix& g, const LayerNormCache& cache,
                                  Matrix* dg, Matrix* db) {
  if (dg) dg->row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  if (db) db->row(0) += dy.colwise().sum();
  Matrix dxhat = dy.array().rowwise() * g.row(0).array();
  const auto d = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double mean_dxhat = dxhat.row(i).sum() / d;
    const double mean_dxhat_xhat = dxhat.row(i).dot(cache.xhat.row(i)) / d;
    dx.row(i) = cache.rstd(i) *
                (dxhat.row(i).array() - mean_dxhat - cache.xhat.row(i).array() * mean_dxhat_xhat);
  }
  return dx;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

inline double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); }

inline double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

}  // namespace detail

/// Activations kept by forward() for backward().
struct ForwardCache {
  struct Layer {
    Matrix x_in;
    detail::LayerNormCache ln1;
    Matrix a;  // ln1 output
    Matrix q, k, v;
    std::vector<Matrix> probs;  // per head, rows x rows
    Matrix ctx;
    Matrix h_mid;
    detail::LayerNormCache ln2;
    Matrix a2;  // ln2 output
    Matrix u;   // pre-activation
    Matrix act;
  };
  std::vector<Layer> layers;
  Matrix x_final;
  detail::LayerNormCache lnf;
  Matrix lnf_out;
  Matrix logits;
};

/// Runs the decoder on an already-embedded input (rows = positions 0..L-1,
/// positional embeddings already added). Fills cache.logits (L x V).
inline void forward(const ArchConfig& c, const Weights& w, const Matrix& x0, ForwardCache& cache) {
  const Eigen::Index n = x0.rows();
  const int dh = c.d_model / c.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  cache.layers.resize(w.layers.size());
  Matrix x = x0;
  for (std::size_t li = 0; li < w.layers.size(); ++li) {
    const auto& lw = w.layers[li];
    auto& lc = cache.layers[li];
    lc.x_in = x;
    lc.a = detail::layer_norm(x, lw.ln1_g, lw.ln1_b, lc.ln1);
    lc.q.noalias() = lc.a * lw.wq;
    lc.q.rowwise() += lw.bq.row(0);
    lc.k.noalias() = lc.a * lw.wk;
    lc.k.rowwise() += lw.bk.row(0);
    lc.v.noalias() = lc.a * lw.wv;
    lc.v.rowwise() += lw.bv.row(0);
    lc.ctx.setZero(n, c.d_model);
    lc.probs.resize(static_cast<std::size_t>(c.n_heads));
    for (int h = 0; h < c.n_heads; ++h) {
      auto qh = lc.q.middleCols(h * dh, dh);
      auto kh = lc.k.middleCols(h * dh, dh);
      auto vh = lc.v.middleCols(h * dh, dh);
      Matrix& p = lc.probs[static_cast<std::size_t>(h)];
      p.noalias() = (qh * kh.transpose()) * scale;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double hi = p.row(i).head(i + 1).maxCoeff();
        double total = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          const double e = std::exp(p(i, j) - hi);
          p(i, j) = e;
          total += e;
        }
        p.row(i).head(i + 1) /= total;
        p.row(i).tail(n - i - 1).setZero();
      }
      lc.ctx.middleCols(h * dh, dh).noalias() = p * vh;
    }
    lc.h_mid = x;
    lc.h_mid.noalias() += lc.ctx * lw.wo;
    lc.h_mid.rowwise() += lw.bo.row(0);
    lc.a2 = detail::layer_norm(lc.h_mid, lw.ln2_g, lw.ln2_b, lc.ln2);
    lc.u.noalias() = lc.a2 * lw.w1;
    lc.u.rowwise() += lw.b1.row(0);
    lc.act = lc.u.unaryExpr([](double v) { return detail::gelu(v); });
    x = lc.h_mid;
    x.noalias() += lc.act * lw.w2;
    x.rowwise() += lw.b2.row(0);
  }
  cache.x_final = x;
  cache.lnf_out = detail::layer_norm(x, w.lnf_g, w.lnf_b, cache.lnf);
  cache.logits.noalias() = cache.lnf_out * w.w_out;
  cache.logits.rowwise() += w.b_out.row(0);
}

/// Backpropagates dlogits to the embedded input. When weight_grads is
/// non-null, weight gradients are accumulated into it (embedding tables are
/// left to the caller, who knows which rows came from which table).
inline Matrix backward(const ArchConfig& c, const Weights& w, const ForwardCache& cache, const Matrix& dlogits,
                       Weights* weight_grads) {
  const int dh = c.d_model / c.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Weights* g = weight_grads;
  if (g) {
    g->w_out.noalias() += cache.lnf_out.transpose() * dlogits;
    g->b_out.row(0) += dlogits.colwise().sum();
  }
  Matrix dlnf = dlogits * w.w_out.transpose();
  Matrix dx = detail::layer_norm_backward(dlnf, w.lnf_g, cache.lnf, g ? &g->lnf_g : nullptr,
                                          g ? &g->lnf_b : nullptr);
  for (std::size_t li = w.layers.size(); li-- > 0;) {
    const auto& lw = w.layers[li];
    const auto& lc = cache.layers[li];
    LayerWeights* lg = g ? &g->layers[li] : nullptr;

    // MLP branch.
    Matrix dact = dx * lw.w2.transpose();
    if (lg) {
      lg->w2.noalias() += lc.act.transpose() * dx;
      lg->b2.row(0) += dx.colwise().sum();
    }
    Matrix du = dact.array() * lc.u.unaryExpr([](double v) { return detail::gelu_grad(v); }).array();
    if (lg) {
      lg->w1.noalias() += lc.a2.transpose() * du;
      lg->b1.row(0) += du.colwise().sum();
    }
    Matrix da2 = du * lw.w1.transpose();
    Matrix dh_mid = dx + detail::layer_norm_backward(da2, lw.ln2_g, lc.ln2, lg ? &lg->ln2_g : nullptr,
                                                     lg ? &lg->ln2_b : nullptr);

    // Attention branch.
    Matrix dctx = dh_mid * lw.wo.transpose();
    if (lg) {
      lg->wo.noalias() += lc.ctx.transpose() * dh_mid;
      lg->bo.row(0) += dh_mid.colwise().sum();
    }
    const Eigen::Index n = dctx.rows();
    Matrix dq(n, c.d_model), dk(n, c.d_model), dv(n, c.d_model);
    for (int h = 0; h < c.n_heads; ++h) {
      const Matrix& p = lc.probs[static_cast<std::size_t>(h)];
      auto dctx_h = dctx.middleCols(h * dh, dh);
      Matrix dp = dctx_h * lc.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh).noalias() = p.transpose() * dctx_h;
      Matrix ds = p.array() * (dp.colwise() - (dp.array() * p.array()).rowwise().sum().matrix()).array();
      ds *= scale;
      dq.middleCols(h * dh, dh).noalias() = ds * lc.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh).noalias() = ds.transpose() * lc.q.middleCols(h * dh, dh);
    }
    if (lg) {
      lg->wq.noalias() += lc.a.transpose() * dq;
      lg->bq.row(0) += dq.colwise().sum();
      lg->wk.noalias() += lc.a.transpose() * dk;
      lg->bk.row(0) += dk.colwise().sum();
      lg->wv.noalias() += lc.a.transpose() * dv;
      lg->bv.row(0) += dv.colwise().sum();
    }
    Matrix da = dq * lw.wq.transpose();
    da.noalias() += dk * lw.wk.transpose();
    da.noalias() += dv * lw.wv.transpose();
    dx = dh_mid + detail::layer_norm_backward(da, lw.ln1_g, lc.ln1, lg ? &lg->ln1_g : nullptr,
                                              lg ? &lg->ln1_b : nullptr);
  }
  return dx;
}

}  // namespace softsynth
