#include "ecgx/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "ecgx/errors.hpp"

namespace ecgx {

using detail::grad_of;
using detail::make_result;
using detail::Node;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

template <class F, class DF>
Tensor unary(const Tensor& x, const char* op, F f, DF df) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_result(x.shape(), std::move(out), op, {x}, [df](Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    const auto& xin = self.parents[0]->value;
    for (std::size_t i = 0; i < xin.size(); ++i) gx[i] += self.grad[i] * df(xin[i], self.value[i]);
  });
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::string_view layer) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  const std::size_t K = ws.batch, Cin = ws.time, Cout = ws.channels;
  if (xs.channels != Cin) {
    throw ShapeError(std::string(layer) + ": input has " + std::to_string(xs.channels) +
                     " channels, kernel expects " + std::to_string(Cin));
  }
  if (xs.time < K) {
    throw ShapeError(std::string(layer) + ": input length " + std::to_string(xs.time) +
                     " is shorter than kernel " + std::to_string(K));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.size() != Cout) {
    throw ShapeError(std::string(layer) + ": bias size " + std::to_string(bias.size()) +
                     " does not match " + std::to_string(Cout) + " output channels");
  }
  const std::size_t B = xs.batch, L = xs.time, N = L - K + 1;
  std::vector<double> out(B * N * Cout, 0.0);
  const double* xv = x.values().data();
  const double* wv = weight.values().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t n = 0; n < N; ++n) {
      double* o = out.data() + (b * N + n) * Cout;
      if (has_bias) std::copy_n(bias.values().data(), Cout, o);
      for (std::size_t k = 0; k < K; ++k) {
        const double* xr = xv + (b * L + n + k) * Cin;
        const double* wk = wv + k * Cin * Cout;
        for (std::size_t c = 0; c < Cin; ++c) {
          const double xc = xr[c];
          if (xc == 0.0) continue;
          const double* wr = wk + c * Cout;
          for (std::size_t j = 0; j < Cout; ++j) o[j] += xc * wr[j];
        }
      }
    }
  }
  std::vector<Tensor> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_result(
      Shape{B, N, Cout}, std::move(out), "conv1d", std::move(parents),
      [B, L, N, K, Cin, Cout, has_bias](Node& self) {
        const double* go = self.grad.data();
        const double* xin = self.parents[0]->value.data();
        const double* w = self.parents[1]->value.data();
        double* gx = grad_of(self, 0);
        double* gw = grad_of(self, 1);
        double* gb = has_bias ? grad_of(self, 2) : nullptr;
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t n = 0; n < N; ++n) {
            const double* g = go + (b * N + n) * Cout;
            if (gb) {
              for (std::size_t j = 0; j < Cout; ++j) gb[j] += g[j];
            }
            for (std::size_t k = 0; k < K; ++k) {
              const std::size_t row = (b * L + n + k) * Cin;
              const double* wk = w + k * Cin * Cout;
              double* gwk = gw ? gw + k * Cin * Cout : nullptr;
              for (std::size_t c = 0; c < Cin; ++c) {
                const double* wr = wk + c * Cout;
                if (gx) {
                  double acc = 0.0;
                  for (std::size_t j = 0; j < Cout; ++j) acc += g[j] * wr[j];
                  gx[row + c] += acc;
                }
                if (gwk) {
                  const double xc = xin[row + c];
                  if (xc == 0.0) continue;
                  double* gwr = gwk + c * Cout;
                  for (std::size_t j = 0; j < Cout; ++j) gwr[j] += xc * g[j];
                }
              }
            }
          }
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.shape().batch != 1) {
    throw ShapeError("linear: weight must be [1,F,C], got " + to_string(weight.shape()));
  }
  if (x.channels() != weight.time()) {
    throw ShapeError("linear: input has " + std::to_string(x.channels()) + " features, weight expects " +
                     std::to_string(weight.time()));
  }
  return conv1d(x, weight, bias, "linear");
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_act(const Tensor& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, "abs", [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor pow_abs(const Tensor& x, double beta) {
  if (beta < 1.0) throw ConfigError("pow_abs: exponent must be >= 1, got " + std::to_string(beta));
  if (beta == 1.0) return abs(x);
  return unary(
      x, "pow_abs", [beta](double v) { return std::pow(std::abs(v), beta); },
      [beta](double v, double) {
        if (v == 0.0) return 0.0;
        const double s = v > 0.0 ? 1.0 : -1.0;
        return beta * std::pow(std::abs(v), beta - 1.0) * s;
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), "add", {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* g = grad_of(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), "sub", {a, b}, [](Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), "mul", {a, b}, [](Node& self) {
    const auto& va = self.parents[0]->value;
    const auto& vb = self.parents[1]->value;
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * vb[i];
    }
    if (double* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * va[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor one_minus(const Tensor& x) {
  return unary(
      x, "one_minus", [](double v) { return 1.0 - v; }, [](double, double) { return -1.0; });
}

Tensor avg_pool1d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  const Shape xs = x.shape();
  if (kernel == 0 || stride == 0) throw ConfigError("avg_pool1d: kernel and stride must be positive");
  if (xs.time < kernel) {
    throw ShapeError("avg_pool1d: input length " + std::to_string(xs.time) + " is shorter than window " +
                     std::to_string(kernel));
  }
  const std::size_t B = xs.batch, L = xs.time, C = xs.channels;
  const std::size_t N = (L - kernel) / stride + 1;
  const double inv = 1.0 / static_cast<double>(kernel);
  auto xv = x.values();
  std::vector<double> out(B * N * C, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t n = 0; n < N; ++n) {
      double* o = out.data() + (b * N + n) * C;
      for (std::size_t k = 0; k < kernel; ++k) {
        const double* xr = xv.data() + (b * L + n * stride + k) * C;
        for (std::size_t c = 0; c < C; ++c) o[c] += xr[c];
      }
      for (std::size_t c = 0; c < C; ++c) o[c] *= inv;
    }
  }
  return make_result(Shape{B, N, C}, std::move(out), "avg_pool1d", {x},
                     [B, L, N, C, kernel, stride, inv](Node& self) {
                       double* gx = grad_of(self, 0);
                       if (!gx) return;
                       for (std::size_t b = 0; b < B; ++b) {
                         for (std::size_t n = 0; n < N; ++n) {
                           const double* g = self.grad.data() + (b * N + n) * C;
                           for (std::size_t k = 0; k < kernel; ++k) {
                             double* gr = gx + (b * L + n * stride + k) * C;
                             for (std::size_t c = 0; c < C; ++c) gr[c] += g[c] * inv;
                           }
                         }
                       }
                     });
}

Tensor batch_norm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                    Mode mode, double momentum, double eps) {
  const Shape xs = x.shape();
  const std::size_t C = xs.channels;
  const std::size_t N = xs.batch * xs.time;
  if (gamma.size() != C || beta.size() != C || stats.running_mean.size() != C ||
      stats.running_var.size() != C) {
    throw ShapeError("batch_norm1d: " + std::to_string(C) + " channels but gamma/beta/stats have " +
                     std::to_string(gamma.size()) + "/" + std::to_string(beta.size()) + "/" +
                     std::to_string(stats.running_mean.size()));
  }
  if (N == 0) throw ShapeError("batch_norm1d: empty input");
  auto xv = x.values();
  std::vector<double> mean_c(C, 0.0), var_c(C, 0.0);
  if (mode == Mode::train) {
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t c = 0; c < C; ++c) mean_c[c] += xv[i * C + c];
    }
    for (auto& m : mean_c) m /= static_cast<double>(N);
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t c = 0; c < C; ++c) {
        const double d = xv[i * C + c] - mean_c[c];
        var_c[c] += d * d;
      }
    }
    for (auto& v : var_c) v /= static_cast<double>(N);
    const double unbias = N > 1 ? static_cast<double>(N) / static_cast<double>(N - 1) : 1.0;
    for (std::size_t c = 0; c < C; ++c) {
      stats.running_mean[c] = (1.0 - momentum) * stats.running_mean[c] + momentum * mean_c[c];
      stats.running_var[c] = (1.0 - momentum) * stats.running_var[c] + momentum * var_c[c] * unbias;
    }
  } else {
    mean_c = stats.running_mean;
    var_c = stats.running_var;
  }
  std::vector<double> inv(C);
  for (std::size_t c = 0; c < C; ++c) inv[c] = 1.0 / std::sqrt(var_c[c] + eps);
  auto gv = gamma.values(), bv = beta.values();
  std::vector<double> xhat(N * C), out(N * C);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t c = 0; c < C; ++c) {
      const double h = (xv[i * C + c] - mean_c[c]) * inv[c];
      xhat[i * C + c] = h;
      out[i * C + c] = gv[c] * h + bv[c];
    }
  }
  const bool batch_stats = mode == Mode::train;
  return make_result(xs, std::move(out), "batch_norm1d", {x, gamma, beta},
                     [N, C, batch_stats, xhat = std::move(xhat), inv = std::move(inv)](Node& self) {
                       const double* go = self.grad.data();
                       const auto& g = self.parents[1]->value;
                       double* gx = grad_of(self, 0);
                       double* gg = grad_of(self, 1);
                       double* gb = grad_of(self, 2);
                       std::vector<double> sum_dy(C, 0.0), sum_dy_h(C, 0.0);
                       for (std::size_t i = 0; i < N; ++i) {
                         for (std::size_t c = 0; c < C; ++c) {
                           sum_dy[c] += go[i * C + c];
                           sum_dy_h[c] += go[i * C + c] * xhat[i * C + c];
                         }
                       }
                       if (gg) {
                         for (std::size_t c = 0; c < C; ++c) gg[c] += sum_dy_h[c];
                       }
                       if (gb) {
                         for (std::size_t c = 0; c < C; ++c) gb[c] += sum_dy[c];
                       }
                       if (!gx) return;
                       const double n = static_cast<double>(N);
                       for (std::size_t i = 0; i < N; ++i) {
                         for (std::size_t c = 0; c < C; ++c) {
                           const double dy = go[i * C + c];
                           if (batch_stats) {
                             gx[i * C + c] += g[c] * inv[c] *
                                              (dy - sum_dy[c] / n - xhat[i * C + c] * sum_dy_h[c] / n);
                           } else {
                             gx[i * C + c] += g[c] * inv[c] * dy;
                           }
                         }
                       }
                     });
}

Tensor dropout(const Tensor& x, double p, Mode mode, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: probability must be in [0,1), got " + std::to_string(p));
  if (mode == Mode::eval || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::bernoulli_distribution keep(1.0 - p);
  auto xv = x.values();
  std::vector<double> mask(xv.size()), out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = keep(rng) ? keep_scale : 0.0;
    out[i] = xv[i] * mask[i];
  }
  return make_result(x.shape(), std::move(out), "dropout", {x}, [mask = std::move(mask)](Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += self.grad[i] * mask[i];
  });
}

Tensor softmax(const Tensor& logits) {
  const Shape s = logits.shape();
  const std::size_t rows = s.batch * s.time, C = s.channels;
  auto lv = logits.values();
  std::vector<double> out(lv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = lv.data() + r * C;
    double* o = out.data() + r * C;
    const double mx = *std::max_element(in, in + C);
    double total = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    for (std::size_t c = 0; c < C; ++c) o[c] /= total;
  }
  return make_result(s, std::move(out), "softmax", {logits}, [rows, C](Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * C;
      const double* g = self.grad.data() + r * C;
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) dot += g[c] * y[c];
      for (std::size_t c = 0; c < C; ++c) gx[r * C + c] += y[c] * (g[c] - dot);
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  const Shape s = logits.shape();
  const std::size_t B = s.batch, C = s.channels;
  if (s.time != 1) throw ShapeError("cross_entropy: logits must be [B,1,C], got " + to_string(s));
  if (targets.size() != B) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for batch of " +
                     std::to_string(B));
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= C) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " outside [0," +
                              std::to_string(C) + ")");
    }
  }
  auto lv = logits.values();
  std::vector<double> probs(B * C);
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const double* in = lv.data() + b * C;
    const double mx = *std::max_element(in, in + C);
    double total = 0.0;
    for (std::size_t c = 0; c < C; ++c) total += std::exp(in[c] - mx);
    const double lse = mx + std::log(total);
    loss += lse - in[targets[b]];
    for (std::size_t c = 0; c < C; ++c) probs[b * C + c] = std::exp(in[c] - lse);
  }
  loss /= static_cast<double>(B);
  std::vector<int> tgt(targets.begin(), targets.end());
  return make_result(Shape{1, 1, 1}, {loss}, "cross_entropy", {logits},
                     [B, C, probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
                       double* gx = grad_of(self, 0);
                       if (!gx) return;
                       const double g = self.grad[0] / static_cast<double>(B);
                       for (std::size_t b = 0; b < B; ++b) {
                         for (std::size_t c = 0; c < C; ++c) {
                           const double onehot = static_cast<int>(c) == tgt[b] ? 1.0 : 0.0;
                           gx[b * C + c] += g * (probs[b * C + c] - onehot);
                         }
                       }
                     });
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const std::size_t B = parts[0].batch(), T = parts[0].time();
  std::vector<std::size_t> widths;
  std::size_t C = 0;
  for (const auto& p : parts) {
    if (p.batch() != B || p.time() != T) {
      throw ShapeError("concat_channels: incompatible shapes " + to_string(parts[0].shape()) + " and " +
                       to_string(p.shape()));
    }
    widths.push_back(p.channels());
    C += p.channels();
  }
  std::vector<double> out(B * T * C);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    auto v = parts[i].values();
    const std::size_t w = widths[i];
    for (std::size_t r = 0; r < B * T; ++r) std::copy_n(v.data() + r * w, w, out.data() + r * C + offset);
    offset += w;
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_result(Shape{B, T, C}, std::move(out), "concat_channels", std::move(parents),
                     [B, T, C, widths = std::move(widths)](Node& self) {
                       std::size_t off = 0;
                       for (std::size_t i = 0; i < widths.size(); ++i) {
                         const std::size_t w = widths[i];
                         if (double* g = grad_of(self, i)) {
                           for (std::size_t r = 0; r < B * T; ++r) {
                             for (std::size_t c = 0; c < w; ++c) g[r * w + c] += self.grad[r * C + off + c];
                           }
                         }
                         off += w;
                       }
                     });
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count) {
  const Shape s = x.shape();
  if (begin + count > s.channels) {
    throw ShapeError("slice_channels: [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                     ") outside " + std::to_string(s.channels) + " channels");
  }
  const std::size_t rows = s.batch * s.time, C = s.channels;
  auto v = x.values();
  std::vector<double> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(v.data() + r * C + begin, count, out.data() + r * count);
  return make_result(Shape{s.batch, s.time, count}, std::move(out), "slice_channels", {x},
                     [rows, C, begin, count](Node& self) {
                       double* g = grad_of(self, 0);
                       if (!g) return;
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t c = 0; c < count; ++c) g[r * C + begin + c] += self.grad[r * count + c];
                       }
                     });
}

Tensor slice_time(const Tensor& x, std::size_t begin, std::size_t count) {
  const Shape s = x.shape();
  if (begin + count > s.time) {
    throw ShapeError("slice_time: [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                     ") outside length " + std::to_string(s.time));
  }
  const std::size_t B = s.batch, T = s.time, C = s.channels;
  auto v = x.values();
  std::vector<double> out(B * count * C);
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(v.data() + (b * T + begin) * C, count * C, out.data() + b * count * C);
  }
  return make_result(Shape{B, count, C}, std::move(out), "slice_time", {x}, [B, T, C, begin, count](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t b = 0; b < B; ++b) {
      const double* src = self.grad.data() + b * count * C;
      double* dst = g + (b * T + begin) * C;
      for (std::size_t i = 0; i < count * C; ++i) dst[i] += src[i];
    }
  });
}

Tensor crop_time_center(const Tensor& x, std::size_t length) {
  if (length > x.time()) {
    throw ShapeError("crop_time_center: cannot crop length " + std::to_string(x.time()) + " to " +
                     std::to_string(length));
  }
  if (length == x.time()) return x;
  return slice_time(x, (x.time() - length) / 2, length);
}

Tensor pad_time(const Tensor& x, std::size_t length) {
  const Shape s = x.shape();
  if (length < s.time) {
    throw ShapeError("pad_time: length " + std::to_string(s.time) + " exceeds target " + std::to_string(length));
  }
  if (length == s.time) return x;
  const std::size_t B = s.batch, T = s.time, C = s.channels;
  auto v = x.values();
  std::vector<double> out(B * length * C, 0.0);
  for (std::size_t b = 0; b < B; ++b) std::copy_n(v.data() + b * T * C, T * C, out.data() + b * length * C);
  return make_result(Shape{B, length, C}, std::move(out), "pad_time", {x}, [B, T, C, length](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t b = 0; b < B; ++b) {
      const double* src = self.grad.data() + b * length * C;
      double* dst = g + b * T * C;
      for (std::size_t i = 0; i < T * C; ++i) dst[i] += src[i];
    }
  });
}

Tensor select_batch(std::span<const char> keep_a, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "select_batch");
  const std::size_t B = a.batch(), row = a.time() * a.channels();
  if (keep_a.size() != B) throw ShapeError("select_batch: mask size does not match batch");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < B; ++i) {
    const double* src = keep_a[i] ? av.data() + i * row : bv.data() + i * row;
    std::copy_n(src, row, out.data() + i * row);
  }
  std::vector<char> mask(keep_a.begin(), keep_a.end());
  return make_result(a.shape(), std::move(out), "select_batch", {a, b}, [row, mask = std::move(mask)](Node& self) {
    double* ga = grad_of(self, 0);
    double* gb = grad_of(self, 1);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      double* dst = mask[i] ? ga : gb;
      if (!dst) continue;
      for (std::size_t j = 0; j < row; ++j) dst[i * row + j] += self.grad[i * row + j];
    }
  });
}

Tensor gather_steps(std::span<const Tensor> steps, std::span<const std::size_t> index) {
  if (steps.empty()) throw ShapeError("gather_steps: no steps");
  const Shape s = steps[0].shape();
  if (s.time != 1 || index.size() != s.batch) throw ShapeError("gather_steps: steps must be [B,1,C] with B indices");
  for (const auto& st : steps) {
    if (st.shape() != s) throw ShapeError("gather_steps: inconsistent step shapes");
  }
  const std::size_t C = s.channels;
  std::vector<double> out(s.size());
  for (std::size_t b = 0; b < s.batch; ++b) {
    if (index[b] >= steps.size()) throw ShapeError("gather_steps: index out of range");
    std::copy_n(steps[index[b]].values().data() + b * C, C, out.data() + b * C);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<Tensor> parents(steps.begin(), steps.end());
  return make_result(s, std::move(out), "gather_steps", std::move(parents), [C, idx = std::move(idx)](Node& self) {
    for (std::size_t b = 0; b < idx.size(); ++b) {
      double* g = grad_of(self, idx[b]);
      if (!g) continue;
      for (std::size_t c = 0; c < C; ++c) g[b * C + c] += self.grad[b * C + c];
    }
  });
}

Tensor global_pool(const Tensor& x, std::span<const std::size_t> valid, PoolKind kind) {
  const Shape s = x.shape();
  const std::size_t B = s.batch, T = s.time, C = s.channels;
  if (T == 0) throw ShapeError("global_pool: empty time axis");
  std::vector<std::size_t> lens(B, T);
  if (!valid.empty()) {
    if (valid.size() != B) throw ShapeError("global_pool: valid lengths do not match batch");
    for (std::size_t b = 0; b < B; ++b) {
      if (valid[b] == 0) throw ShapeError("global_pool: valid length 0 for batch row " + std::to_string(b));
      lens[b] = std::min(valid[b], T);
    }
  }
  auto v = x.values();
  std::vector<double> out(B * C, 0.0);
  std::vector<std::size_t> argmax;
  if (kind == PoolKind::max) argmax.assign(B * C, 0);
  for (std::size_t b = 0; b < B; ++b) {
    double* o = out.data() + b * C;
    if (kind == PoolKind::max) {
      for (std::size_t c = 0; c < C; ++c) o[c] = -std::numeric_limits<double>::infinity();
    }
    for (std::size_t t = 0; t < lens[b]; ++t) {
      const double* r = v.data() + (b * T + t) * C;
      for (std::size_t c = 0; c < C; ++c) {
        if (kind == PoolKind::max) {
          if (r[c] > o[c]) {
            o[c] = r[c];
            argmax[b * C + c] = t;
          }
        } else {
          o[c] += r[c];
        }
      }
    }
    if (kind == PoolKind::average) {
      for (std::size_t c = 0; c < C; ++c) o[c] /= static_cast<double>(lens[b]);
    }
  }
  return make_result(Shape{B, 1, C}, std::move(out), "global_pool", {x},
                     [B, T, C, kind, lens = std::move(lens), argmax = std::move(argmax)](Node& self) {
                       double* g = grad_of(self, 0);
                       if (!g) return;
                       for (std::size_t b = 0; b < B; ++b) {
                         const double* go = self.grad.data() + b * C;
                         if (kind == PoolKind::max) {
                           for (std::size_t c = 0; c < C; ++c) g[(b * T + argmax[b * C + c]) * C + c] += go[c];
                           continue;
                         }
                         const double w = kind == PoolKind::average ? 1.0 / static_cast<double>(lens[b]) : 1.0;
                         for (std::size_t t = 0; t < lens[b]; ++t) {
                           for (std::size_t c = 0; c < C; ++c) g[(b * T + t) * C + c] += go[c] * w;
                         }
                       }
                     });
}

Tensor resample_time(const Tensor& x, std::size_t new_length) {
  const Shape s = x.shape();
  const std::size_t B = s.batch, T = s.time, C = s.channels, N = new_length;
  if (T == 0 || N == 0) throw ShapeError("resample_time: empty length");
  std::vector<std::size_t> lo(N), hi(N);
  std::vector<double> frac(N);
  for (std::size_t n = 0; n < N; ++n) {
    const double pos = N == 1 ? 0.0 : static_cast<double>(n) * static_cast<double>(T - 1) / static_cast<double>(N - 1);
    std::size_t i0 = static_cast<std::size_t>(std::floor(pos));
    if (i0 > T - 1) i0 = T - 1;
    lo[n] = i0;
    hi[n] = std::min(i0 + 1, T - 1);
    frac[n] = pos - static_cast<double>(i0);
  }
  auto v = x.values();
  std::vector<double> out(B * N * C);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t n = 0; n < N; ++n) {
      const double* r0 = v.data() + (b * T + lo[n]) * C;
      const double* r1 = v.data() + (b * T + hi[n]) * C;
      double* o = out.data() + (b * N + n) * C;
      for (std::size_t c = 0; c < C; ++c) o[c] = (1.0 - frac[n]) * r0[c] + frac[n] * r1[c];
    }
  }
  return make_result(Shape{B, N, C}, std::move(out), "resample_time", {x},
                     [B, T, C, N, lo = std::move(lo), hi = std::move(hi), frac = std::move(frac)](Node& self) {
                       double* g = grad_of(self, 0);
                       if (!g) return;
                       for (std::size_t b = 0; b < B; ++b) {
                         for (std::size_t n = 0; n < N; ++n) {
                           const double* go = self.grad.data() + (b * N + n) * C;
                           double* g0 = g + (b * T + lo[n]) * C;
                           double* g1 = g + (b * T + hi[n]) * C;
                           for (std::size_t c = 0; c < C; ++c) {
                             g0[c] += (1.0 - frac[n]) * go[c];
                             g1[c] += frac[n] * go[c];
                           }
                         }
                       }
                     });
}

Tensor scale_time(const Tensor& x, const Tensor& alpha) {
  const Shape s = x.shape();
  if (alpha.shape() != Shape{s.batch, s.time, 1}) {
    throw ShapeError("scale_time: alpha " + to_string(alpha.shape()) + " does not match " + to_string(s));
  }
  const std::size_t rows = s.batch * s.time, C = s.channels;
  auto xv = x.values(), av = alpha.values();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] = xv[r * C + c] * av[r];
  }
  return make_result(s, std::move(out), "scale_time", {x, alpha}, [rows, C](Node& self) {
    const auto& xin = self.parents[0]->value;
    const auto& a = self.parents[1]->value;
    double* gx = grad_of(self, 0);
    double* ga = grad_of(self, 1);
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double g = self.grad[r * C + c];
        if (gx) gx[r * C + c] += g * a[r];
        acc += g * xin[r * C + c];
      }
      if (ga) ga[r] += acc;
    }
  });
}

Tensor shift_sample(const Tensor& signal, const Tensor& shift) {
  const Shape s = signal.shape();
  const std::size_t B = s.batch, L = s.time, C = s.channels;
  if (shift.shape() != Shape{B, L, 1}) {
    throw ShapeError("shift_sample: shift " + to_string(shift.shape()) + " does not match signal " + to_string(s));
  }
  if (L == 0) throw ShapeError("shift_sample: empty signal");
  const double half = static_cast<double>(L - 1) / 2.0;
  const double last = static_cast<double>(L - 1);
  auto sv = signal.values(), dv = shift.values();
  std::vector<std::size_t> lo(B * L), hi(B * L);
  std::vector<double> frac(B * L);
  std::vector<char> clamped(B * L, 0);
  std::vector<double> out(B * L * C);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t n = 0; n < L; ++n) {
      const std::size_t i = b * L + n;
      double pos = static_cast<double>(n) + dv[i] * half;
      if (pos <= 0.0) {
        pos = 0.0;
        clamped[i] = 1;
      } else if (pos >= last) {
        pos = last;
        clamped[i] = 1;
      }
      std::size_t i0 = static_cast<std::size_t>(std::floor(pos));
      if (i0 > L - 1) i0 = L - 1;
      lo[i] = i0;
      hi[i] = std::min(i0 + 1, L - 1);
      frac[i] = pos - static_cast<double>(i0);
      const double* r0 = sv.data() + (b * L + lo[i]) * C;
      const double* r1 = sv.data() + (b * L + hi[i]) * C;
      for (std::size_t c = 0; c < C; ++c) out[i * C + c] = (1.0 - frac[i]) * r0[c] + frac[i] * r1[c];
    }
  }
  return make_result(s, std::move(out), "shift_sample", {signal, shift},
                     [B, L, C, half, lo = std::move(lo), hi = std::move(hi), frac = std::move(frac),
                      clamped = std::move(clamped)](Node& self) {
                       const auto& sig = self.parents[0]->value;
                       double* gs = grad_of(self, 0);
                       double* gd = grad_of(self, 1);
                       for (std::size_t b = 0; b < B; ++b) {
                         for (std::size_t n = 0; n < L; ++n) {
                           const std::size_t i = b * L + n;
                           const double* go = self.grad.data() + i * C;
                           const std::size_t r0 = (b * L + lo[i]) * C, r1 = (b * L + hi[i]) * C;
                           double slope = 0.0;
                           for (std::size_t c = 0; c < C; ++c) {
                             if (gs) {
                               gs[r0 + c] += (1.0 - frac[i]) * go[c];
                               gs[r1 + c] += frac[i] * go[c];
                             }
                             slope += go[c] * (sig[r1 + c] - sig[r0 + c]);
                           }
                           if (gd && !clamped[i]) gd[i] += slope * half;
                         }
                       }
                     });
}

Tensor diff_time(const Tensor& x) {
  const Shape s = x.shape();
  const std::size_t B = s.batch, T = s.time, C = s.channels;
  const std::size_t N = T > 0 ? T - 1 : 0;
  auto v = x.values();
  std::vector<double> out(B * N * C);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < N; ++t) {
      for (std::size_t c = 0; c < C; ++c) {
        out[(b * N + t) * C + c] = v[(b * T + t + 1) * C + c] - v[(b * T + t) * C + c];
      }
    }
  }
  return make_result(Shape{B, N, C}, std::move(out), "diff_time", {x}, [B, T, C, N](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t t = 0; t < N; ++t) {
        for (std::size_t c = 0; c < C; ++c) {
          const double go = self.grad[(b * N + t) * C + c];
          g[(b * T + t + 1) * C + c] += go;
          g[(b * T + t) * C + c] -= go;
        }
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return make_result(Shape{1, 1, 1}, {total}, "sum", {x}, [](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    const std::size_t n = self.parents[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

}  // namespace ecgx
