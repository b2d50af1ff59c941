#pragma once

// Test-only reference implementations: straight scalar loops, independent of
// the tape engine, plus a central finite-difference gradient checker.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "nvs/tensor.hpp"

namespace oracle {

inline std::vector<double> naive_matmul(const std::vector<double>& a,
                                        const std::vector<double>& b, std::size_t m,
                                        std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

inline std::vector<double> naive_softmax_rows(const std::vector<double>& x, std::size_t r,
                                              std::size_t c) {
  std::vector<double> y(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = x[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[i * c + j]);
    double denom = 0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(x[i * c + j] - mx);
    for (std::size_t j = 0; j < c; ++j) y[i * c + j] = std::exp(x[i * c + j] - mx) / denom;
  }
  return y;
}

// QK-Norm attention per the definition: per head, L2-normalize q and k rows,
// logits = gain * (q_hat . k_hat), masked entries get -inf, softmax, times V.
inline std::vector<double> naive_qknorm_attention(
    const std::vector<double>& q, const std::vector<double>& k, const std::vector<double>& v,
    const std::vector<double>& gains, const std::vector<std::uint8_t>* mask, std::size_t lq,
    std::size_t lk, std::size_t heads, std::size_t dh) {
  auto normalize = [&](const std::vector<double>& src, std::size_t row, std::size_t head) {
    std::vector<double> out(dh);
    double sq = 0;
    for (std::size_t i = 0; i < dh; ++i) {
      double val = src[(row * heads + head) * dh + i];
      sq += val * val;
    }
    double inv = 1.0 / std::sqrt(sq + 1e-12);
    for (std::size_t i = 0; i < dh; ++i) out[i] = src[(row * heads + head) * dh + i] * inv;
    return out;
  };
  std::vector<double> out(lq * heads * dh, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < lq; ++i) {
      std::vector<double> qh = normalize(q, i, h);
      std::vector<double> logits(lk, -1e300);
      for (std::size_t j = 0; j < lk; ++j) {
        if (mask && !(*mask)[i * lk + j]) continue;
        std::vector<double> kh = normalize(k, j, h);
        double dot = 0;
        for (std::size_t t = 0; t < dh; ++t) dot += qh[t] * kh[t];
        logits[j] = gains[h] * dot;
      }
      double mx = -1e300;
      for (double l : logits) mx = std::max(mx, l);
      double denom = 0;
      std::vector<double> w(lk, 0.0);
      for (std::size_t j = 0; j < lk; ++j) {
        if (mask && !(*mask)[i * lk + j]) continue;
        w[j] = std::exp(logits[j] - mx);
        denom += w[j];
      }
      for (std::size_t j = 0; j < lk; ++j) {
        double attn = w[j] / denom;
        for (std::size_t t = 0; t < dh; ++t)
          out[(i * heads + h) * dh + t] += attn * v[(j * heads + h) * dh + t];
      }
    }
  }
  return out;
}

inline std::vector<double> naive_layer_norm(const std::vector<double>& x,
                                            const std::vector<double>& gain, std::size_t r,
                                            std::size_t c, double eps = 1e-5) {
  std::vector<double> y(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += x[i * c + j];
    mu /= c;
    double var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (x[i * c + j] - mu) * (x[i * c + j] - mu);
    var /= c;
    for (std::size_t j = 0; j < c; ++j)
      y[i * c + j] = gain[j] * (x[i * c + j] - mu) / std::sqrt(var + eps);
  }
  return y;
}

inline double naive_gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)));
}

struct NaiveLayerW {
  std::vector<double> ln1, wq, wk, wv, wo, qk_gain, ln2, w_up, w_down;
};

// Straight-line pre-norm block: x + Attn(LN(x)), then + MLP(LN(.)).
inline std::vector<double> naive_transformer_layer(const std::vector<double>& x, std::size_t L,
                                                   std::size_t d, std::size_t heads,
                                                   const NaiveLayerW& w,
                                                   const std::vector<std::uint8_t>* mask,
                                                   std::size_t mlp_ratio = 4) {
  auto u = naive_layer_norm(x, w.ln1, L, d);
  auto q = naive_matmul(u, w.wq, L, d, d);
  auto k = naive_matmul(u, w.wk, L, d, d);
  auto v = naive_matmul(u, w.wv, L, d, d);
  auto att = naive_qknorm_attention(q, k, v, w.qk_gain, mask, L, L, heads, d / heads);
  auto proj = naive_matmul(att, w.wo, L, d, d);
  std::vector<double> h1(L * d);
  for (std::size_t i = 0; i < h1.size(); ++i) h1[i] = x[i] + proj[i];
  auto m = naive_layer_norm(h1, w.ln2, L, d);
  auto up = naive_matmul(m, w.w_up, L, d, mlp_ratio * d);
  for (double& e : up) e = naive_gelu(e);
  auto down = naive_matmul(up, w.w_down, L, mlp_ratio * d, d);
  std::vector<double> out(L * d);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = h1[i] + down[i];
  return out;
}

// Central finite differences over every element of every parameter.
// rel = |analytic - fd| / max(floor, |analytic|, |fd|).
inline double max_fd_rel_error(std::span<nvs::Tensor<double>* const> params,
                               const std::function<double()>& forward, double step = 1e-4,
                               double floor = 1e-3) {
  double worst = 0;
  for (nvs::Tensor<double>* p : params) {
    for (std::size_t i = 0; i < p->data.size(); ++i) {
      double saved = p->data[i];
      p->data[i] = saved + step;
      double up = forward();
      p->data[i] = saved - step;
      double down = forward();
      p->data[i] = saved;
      double fd = (up - down) / (2.0 * step);
      double analytic = p->grad.empty() ? 0.0 : p->grad[i];
      double rel = std::fabs(analytic - fd) / std::max({floor, std::fabs(analytic), std::fabs(fd)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace oracle
