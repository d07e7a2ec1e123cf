// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

// Independent reference implementations used to check the library. Nothing
// here calls into the code under test except to read weight structs.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <random>
#include <stdexcept>
#include <vector>

#include "shortcut/linalg.hpp"
#include "shortcut/model.hpp"

namespace shortcut::oracle {

using Vec = std::vector<double>;
using Rows = std::vector<Vec>;

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                            double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = normal(rng);
  return m;
}

/// Solves G · X = B (G square) by Gauss-Jordan elimination with partial
/// pivoting in long double.
inline std::vector<std::vector<long double>> gauss_jordan(std::vector<std::vector<long double>> g,
                                                          std::vector<std::vector<long double>> b) {
  const std::size_t n = g.size();
  const std::size_t m = b.empty() ? 0 : b[0].size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::fabs(g[r][col]) > std::fabs(g[pivot][col])) pivot = r;
    }
    if (g[pivot][col] == 0.0L) throw std::runtime_error("oracle: singular system");
    std::swap(g[col], g[pivot]);
    std::swap(b[col], b[pivot]);
    const long double inv = 1.0L / g[col][col];
    for (std::size_t c = 0; c < n; ++c) g[col][c] *= inv;
    for (std::size_t c = 0; c < m; ++c) b[col][c] *= inv;
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col || g[r][col] == 0.0L) continue;
      const long double f = g[r][col];
      for (std::size_t c = 0; c < n; ++c) g[r][c] -= f * g[col][c];
      for (std::size_t c = 0; c < m; ++c) b[r][c] -= f * b[col][c];
    }
  }
  return b;
}

/// argmin_A Σᵢ ‖A·xᵢ − yᵢ‖² + ridge·‖A‖²_F via long-double normal equations.
/// Returns A as d′ × d.
inline Matrix least_squares(const Matrix& x, const Matrix& y, double ridge = 0.0) {
  const std::size_t n = x.rows(), d = x.cols(), dp = y.cols();
  std::vector<std::vector<long double>> g(d, std::vector<long double>(d, 0.0L));
  std::vector<std::vector<long double>> b(d, std::vector<long double>(dp, 0.0L));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t c = 0; c < d; ++c) g[a][c] += static_cast<long double>(x(i, a)) * x(i, c);
      for (std::size_t c = 0; c < dp; ++c) b[a][c] += static_cast<long double>(x(i, a)) * y(i, c);
    }
  }
  for (std::size_t a = 0; a < d; ++a) g[a][a] += ridge;
  const auto at = gauss_jordan(g, b);  // d × d′
  Matrix out(dp, d);
  for (std::size_t r = 0; r < dp; ++r) {
    for (std::size_t c = 0; c < d; ++c) out(r, c) = static_cast<double>(at[c][r]);
  }
  return out;
}

/// Textbook r²: mean over columns with nonzero variance of 1 − SS_res/SS_tot.
inline double r2(const Matrix& pred, const Matrix& target) {
  long double total = 0.0L;
  std::size_t used = 0;
  for (std::size_t c = 0; c < target.cols(); ++c) {
    long double mean = 0.0L;
    for (std::size_t i = 0; i < target.rows(); ++i) mean += target(i, c);
    mean /= static_cast<long double>(target.rows());
    long double ss_tot = 0.0L, ss_res = 0.0L;
    for (std::size_t i = 0; i < target.rows(); ++i) {
      ss_tot += (target(i, c) - mean) * (target(i, c) - mean);
      ss_res += (target(i, c) - pred(i, c)) * (target(i, c) - pred(i, c));
    }
    if (ss_tot == 0.0L) continue;
    total += 1.0L - ss_res / ss_tot;
    ++used;
  }
  return static_cast<double>(total / static_cast<long double>(used));
}

inline double relative_frobenius(const Matrix& a, const Matrix& b) {
  long double num = 0.0L, den = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double e = a.values()[i] - b.values()[i];
    num += e * e;
    den += static_cast<long double>(b.values()[i]) * b.values()[i];
  }
  return static_cast<double>(std::sqrt(num) / std::sqrt(den));
}

// ---------------------------------------------------------------------------
// Naive transformer: vectors of rows, written from the block equations.

inline Vec mul(const Matrix& w, const Vec& x) {
  Vec y(w.rows(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t c = 0; c < w.cols(); ++c) y[r] += w(r, c) * x[c];
  }
  return y;
}

inline Vec norm(const Vec& x, const LayerNormParams& p, double eps) {
  const double d = static_cast<double>(x.size());
  double mu = 0.0;
  for (double v : x) mu += v / d;
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu) / d;
  Vec y(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    y[k] = p.scale[k] * (x[k] - mu) / std::sqrt(var + eps) + p.shift[k];
  }
  return y;
}

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * std::pow(x, 3))));
}

inline Rows attend(const BlockWeights& b, const Rows& a, std::size_t heads, bool causal) {
  const std::size_t n = a.size(), d = a[0].size(), w = d / heads;
  Rows q(n), k(n), v(n);
  for (std::size_t i = 0; i < n; ++i) {
    q[i] = mul(b.query, a[i]);
    k[i] = mul(b.key, a[i]);
    v[i] = mul(b.value, a[i]);
  }
  Rows out(n, Vec(d, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    Vec ctx(d, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t visible = causal ? i + 1 : n;
      Vec s(visible);
      for (std::size_t j = 0; j < visible; ++j) {
        double dot = 0.0;
        for (std::size_t c = h * w; c < (h + 1) * w; ++c) dot += q[i][c] * k[j][c];
        s[j] = dot / std::sqrt(static_cast<double>(w));
      }
      const double top = *std::max_element(s.begin(), s.end());
      double z = 0.0;
      for (double& e : s) z += (e = std::exp(e - top));
      for (std::size_t j = 0; j < visible; ++j) {
        for (std::size_t c = h * w; c < (h + 1) * w; ++c) ctx[c] += s[j] / z * v[j][c];
      }
    }
    out[i] = mul(b.output, ctx);
  }
  return out;
}

inline Vec ffn(const BlockWeights& b, const Vec& x) {
  Vec hidden = mul(b.ffn_in, x);
  for (std::size_t c = 0; c < hidden.size(); ++c) hidden[c] = gelu(hidden[c] + b.ffn_in_bias[c]);
  Vec y = mul(b.ffn_out, hidden);
  for (std::size_t c = 0; c < y.size(); ++c) y[c] += b.ffn_out_bias[c];
  return y;
}

enum class Swap { kNone, kAttn, kFfn, kLn1Ln2 };

struct SwapMaps {
  Swap kind = Swap::kNone;
  std::size_t start = 0;
  std::map<std::size_t, Matrix> first;
  std::map<std::size_t, Matrix> second;
};

/// Hidden states of every layer (ℓ = 0..L), optionally with sub-modules of
/// blocks start+1..L swapped for linear maps.
inline std::vector<Rows> forward(const ModelWeights& w, const std::vector<TokenId>& tokens,
                                 const SwapMaps& swap = {}) {
  const auto& cfg = w.config;
  const bool causal = cfg.mode == AttentionMode::kCausal;
  Rows h(tokens.size(), Vec(cfg.d_hidden));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    for (std::size_t k = 0; k < cfg.d_hidden; ++k) {
      h[i][k] = w.token_embedding(k, tokens[i]) + w.position_embedding(k, i);
    }
  }
  std::vector<Rows> layers{h};
  for (std::size_t l = 1; l <= cfg.n_layers; ++l) {
    const auto& b = w.blocks[l - 1];
    const Swap kind = l > swap.start ? swap.kind : Swap::kNone;
    const std::size_t n = h.size();
    Rows attn_in(n), attn_out;
    for (std::size_t i = 0; i < n; ++i) {
      attn_in[i] = kind == Swap::kLn1Ln2 ? mul(swap.first.at(l), h[i])
                                          : norm(h[i], b.ln1, cfg.layer_norm_eps);
    }
    if (kind == Swap::kAttn) {
      for (std::size_t i = 0; i < n; ++i) attn_out.push_back(mul(swap.first.at(l), attn_in[i]));
    } else {
      attn_out = attend(b, attn_in, cfg.n_heads, causal);
    }
    Rows next(n);
    for (std::size_t i = 0; i < n; ++i) {
      Vec m(cfg.d_hidden);
      for (std::size_t k = 0; k < m.size(); ++k) m[k] = h[i][k] + attn_out[i][k];
      const Vec f_in = kind == Swap::kLn1Ln2 ? mul(swap.second.at(l), m)
                                              : norm(m, b.ln2, cfg.layer_norm_eps);
      const Vec f = kind == Swap::kFfn ? mul(swap.first.at(l), f_in) : ffn(b, f_in);
      next[i].resize(m.size());
      for (std::size_t k = 0; k < m.size(); ++k) next[i][k] = m[k] + f[k];
    }
    h = std::move(next);
    layers.push_back(h);
  }
  return layers;
}

/// softmax(Eᵀ·x), x optionally passed through the final layer norm.
inline Vec distribution(const ModelWeights& w, const Vec& h, bool final_ln) {
  const Vec x = final_ln ? norm(h, *w.final_ln, w.config.layer_norm_eps) : h;
  Vec logits(w.config.vocab_size, 0.0);
  for (std::size_t t = 0; t < logits.size(); ++t) {
    for (std::size_t k = 0; k < x.size(); ++k) logits[t] += w.token_embedding(k, t) * x[k];
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& v : logits) z += (v = std::exp(v - top));
  for (double& v : logits) v /= z;
  return logits;
}

}  // namespace shortcut::oracle
