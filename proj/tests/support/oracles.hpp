#pragma once

// Plain-vector reference implementations. Nothing in here touches the
// autodiff engine; every routine is a direct loop transcription so the
// library can be checked against something written independently.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "ecgx/tensor.hpp"

namespace oracle {

using Vec = std::vector<double>;

inline Vec randn(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Vec v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

inline Vec uniform(std::size_t n, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Vec v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

inline ecgx::Tensor tensor(ecgx::Shape s, const Vec& v) { return ecgx::Tensor(s, v); }

inline Vec values(const ecgx::Tensor& t) { return Vec(t.values().begin(), t.values().end()); }

inline double max_abs_diff(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// x[B][L][Cin], w[K][Cin][Cout], b[Cout]
inline Vec conv1d(const Vec& x, std::size_t B, std::size_t L, std::size_t Cin, const Vec& w, std::size_t K,
                  std::size_t Cout, const Vec& b) {
  const std::size_t T = L - K + 1;
  Vec out(B * T * Cout, 0.0);
  for (std::size_t bb = 0; bb < B; ++bb)
    for (std::size_t n = 0; n < T; ++n)
      for (std::size_t j = 0; j < Cout; ++j) {
        double s = b.empty() ? 0.0 : b[j];
        for (std::size_t k = 0; k < K; ++k)
          for (std::size_t c = 0; c < Cin; ++c) s += w[(k * Cin + c) * Cout + j] * x[(bb * L + n + k) * Cin + c];
        out[(bb * T + n) * Cout + j] = s;
      }
  return out;
}

// rows of x are length F; w[F][C]
inline Vec linear(const Vec& x, std::size_t rows, std::size_t F, const Vec& w, std::size_t C, const Vec& b) {
  Vec out(rows * C, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      double s = b.empty() ? 0.0 : b[c];
      for (std::size_t k = 0; k < F; ++k) s += x[r * F + k] * w[k * C + c];
      out[r * C + c] = s;
    }
  return out;
}

inline Vec softmax(const Vec& s) {
  double m = *std::max_element(s.begin(), s.end());
  Vec e(s.size());
  double z = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) z += (e[i] = std::exp(s[i] - m));
  for (auto& v : e) v /= z;
  return e;
}

// ---- recurrent cells, transcribed gate by gate --------------------------------

struct Lstm {
  Vec i, f, g, o, c, h;
};

// wx[In][4H], wh[H][4H], gate blocks i f g o
inline Lstm lstm_step(const Vec& x, const Vec& h, const Vec& c, const Vec& wx, const Vec& wh, const Vec& bx,
                      const Vec& bh, std::size_t In, std::size_t H) {
  auto pre = [&](std::size_t gate, std::size_t u) {
    const std::size_t col = gate * H + u;
    double s = bx[col] + bh[col];
    for (std::size_t k = 0; k < In; ++k) s += wx[k * 4 * H + col] * x[k];
    for (std::size_t k = 0; k < H; ++k) s += wh[k * 4 * H + col] * h[k];
    return s;
  };
  Lstm r;
  for (std::size_t u = 0; u < H; ++u) {
    r.i.push_back(sig(pre(0, u)));
    r.f.push_back(sig(pre(1, u)));
    r.g.push_back(std::tanh(pre(2, u)));
    r.o.push_back(sig(pre(3, u)));
  }
  for (std::size_t u = 0; u < H; ++u) {
    r.c.push_back(r.f[u] * c[u] + r.i[u] * r.g[u]);
    r.h.push_back(r.o[u] * std::tanh(r.c[u]));
  }
  return r;
}

struct Gru {
  Vec r, z, n, h;
};

// gate blocks r z n; n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
inline Gru gru_step(const Vec& x, const Vec& h, const Vec& wx, const Vec& wh, const Vec& bx, const Vec& bh,
                    std::size_t In, std::size_t H) {
  auto px = [&](std::size_t gate, std::size_t u) {
    const std::size_t col = gate * H + u;
    double s = bx[col];
    for (std::size_t k = 0; k < In; ++k) s += wx[k * 3 * H + col] * x[k];
    return s;
  };
  auto ph = [&](std::size_t gate, std::size_t u) {
    const std::size_t col = gate * H + u;
    double s = bh[col];
    for (std::size_t k = 0; k < H; ++k) s += wh[k * 3 * H + col] * h[k];
    return s;
  };
  Gru g;
  for (std::size_t u = 0; u < H; ++u) {
    g.r.push_back(sig(px(0, u) + ph(0, u)));
    g.z.push_back(sig(px(1, u) + ph(1, u)));
  }
  for (std::size_t u = 0; u < H; ++u) {
    g.n.push_back(std::tanh(px(2, u) + g.r[u] * ph(2, u)));
    g.h.push_back((1.0 - g.z[u]) * g.n[u] + g.z[u] * h[u]);
  }
  return g;
}

// h' = tanh(W_hh h + W_xh x), no bias
inline Vec rnn_step(const Vec& x, const Vec& h, const Vec& wx, const Vec& wh, std::size_t In, std::size_t H) {
  Vec out(H);
  for (std::size_t u = 0; u < H; ++u) {
    double s = 0.0;
    for (std::size_t k = 0; k < H; ++k) s += wh[k * H + u] * h[k];
    for (std::size_t k = 0; k < In; ++k) s += wx[k * H + u] * x[k];
    out[u] = std::tanh(s);
  }
  return out;
}

// ---- CAM / attention ------------------------------------------------------------

// features[T][K], weight[F][C]
inline Vec cam(const Vec& features, std::size_t T, std::size_t K, const Vec& weight, std::size_t C, std::size_t cls,
               std::size_t offset) {
  Vec out(T, 0.0);
  for (std::size_t n = 0; n < T; ++n)
    for (std::size_t k = 0; k < K; ++k) out[n] += weight[(offset + k) * C + cls] * features[n * K + k];
  return out;
}

// Linear interpolation with aligned end points.
inline Vec resample(const Vec& v, std::size_t rows, std::size_t C, std::size_t new_rows) {
  Vec out(new_rows * C);
  for (std::size_t t = 0; t < new_rows; ++t) {
    const double pos = new_rows == 1 ? 0.0 : static_cast<double>(t) * static_cast<double>(rows - 1) / static_cast<double>(new_rows - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    if (lo >= rows - 1) lo = rows - 1;
    const std::size_t hi = std::min(lo + 1, rows - 1);
    const double w = pos - static_cast<double>(lo);
    for (std::size_t c = 0; c < C; ++c) out[t * C + c] = (1.0 - w) * v[lo * C + c] + w * v[hi * C + c];
  }
  return out;
}

// x[T][Cx], ctx[Tc][Cc]; wx[Cx][A], wc[Cc][A], bc[A], psi[A], bphi
inline Vec attention(const Vec& x, std::size_t T, std::size_t Cx, const Vec& ctx, std::size_t Tc, std::size_t Cc,
                     const Vec& wx, const Vec& wc, const Vec& bc, const Vec& psi, double bphi, std::size_t A) {
  const Vec c = resample(ctx, Tc, Cc, T);
  Vec alpha(T);
  for (std::size_t i = 0; i < T; ++i) {
    double s = bphi;
    for (std::size_t a = 0; a < A; ++a) {
      double q = bc[a];
      for (std::size_t k = 0; k < Cx; ++k) q += wx[k * A + a] * x[i * Cx + k];
      for (std::size_t k = 0; k < Cc; ++k) q += wc[k * A + a] * c[i * Cc + k];
      s += psi[a] * std::max(0.0, q);
    }
    alpha[i] = sig(s);
  }
  return alpha;
}

// ---- shift warp -----------------------------------------------------------------

inline Vec warp(const Vec& signal, const Vec& coarse) {
  const std::size_t L = signal.size();
  const Vec fine = resample(coarse, coarse.size(), 1, L);
  Vec out(L);
  for (std::size_t n = 0; n < L; ++n) {
    double p = static_cast<double>(n) + fine[n] * static_cast<double>(L - 1) / 2.0;
    p = std::clamp(p, 0.0, static_cast<double>(L - 1));
    std::size_t lo = static_cast<std::size_t>(std::floor(p));
    if (lo >= L - 1) lo = L - 1;
    const std::size_t hi = std::min(lo + 1, L - 1);
    const double w = p - static_cast<double>(lo);
    out[n] = (1.0 - w) * signal[lo] + w * signal[hi];
  }
  return out;
}

inline double l1(const Vec& m) {
  double s = 0.0;
  for (double v : m) s += std::abs(v);
  return s;
}

inline double tv(const Vec& m, double beta) {
  double s = 0.0;
  for (std::size_t j = 1; j < m.size(); ++j) s += std::pow(std::abs(m[j] - m[j - 1]), beta);
  return s;
}

// ---- statistics -------------------------------------------------------------------

inline double mean(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double sample_std(const Vec& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace oracle
