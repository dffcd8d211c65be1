#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "ecgx/tensor.hpp"

namespace ecgx {

enum class Mode { train, eval };

// ---- convolution / dense ---------------------------------------------------

/// Valid (unpadded) 1D convolution. x: [B,L,Cin], weight: [K,Cin,Cout],
/// bias: [1,1,Cout] or undefined. Output [B,L-K+1,Cout].
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::string_view layer = "conv1d");

/// Position-wise dense map. x: [B,T,F], weight: [1,F,C], bias: [1,1,C] or undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// ---- elementwise -----------------------------------------------------------

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_act(const Tensor& x);
Tensor abs(const Tensor& x);
/// |x|^beta, beta >= 1.
Tensor pow_abs(const Tensor& x, double beta);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
/// 1 - x
Tensor one_minus(const Tensor& x);

// ---- pooling / normalisation / regularisation ------------------------------

/// Window means; trailing samples that do not fill a window are dropped.
Tensor avg_pool1d(const Tensor& x, std::size_t kernel = 2, std::size_t stride = 2);

struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;

  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

/// Per-channel normalisation over batch x time. Train mode updates the
/// running statistics (unbiased variance, exponential momentum).
Tensor batch_norm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    BatchNormStats& stats, Mode mode, double momentum = 0.1, double eps = 1e-5);

/// Inverted dropout: survivors are scaled by 1/(1-p) in train mode, identity in eval.
Tensor dropout(const Tensor& x, double p, Mode mode, std::mt19937_64& rng);

// ---- classification --------------------------------------------------------

/// Softmax over the channel axis, independently per (batch, time).
Tensor softmax(const Tensor& logits);

/// Mean over the batch of -log softmax(logits)[target]. logits: [B,1,C].
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

// ---- reshaping / routing ---------------------------------------------------

Tensor concat_channels(std::span<const Tensor> parts);
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_time(const Tensor& x, std::size_t begin, std::size_t count);
/// Symmetric crop along time to `length` (extra sample removed at the end).
Tensor crop_time_center(const Tensor& x, std::size_t length);

/// Appends zeros along time up to `length`.
Tensor pad_time(const Tensor& x, std::size_t length);

/// Per batch row: take `a` where keep_a[b] is non-zero, else `b`.
Tensor select_batch(std::span<const char> keep_a, const Tensor& a, const Tensor& b);

/// Per batch row b: row b of steps[index[b]]. All steps share one shape [B,1,C].
Tensor gather_steps(std::span<const Tensor> steps, std::span<const std::size_t> index);

// ---- temporal aggregation --------------------------------------------------

enum class PoolKind { average, max, sum };

/// Collapses time to 1 using only the first valid[b] positions of each row.
/// Empty `valid` means every position is valid.
Tensor global_pool(const Tensor& x, std::span<const std::size_t> valid, PoolKind kind);

/// Linear resampling along time with aligned end points (0 -> 0, T-1 -> T'-1).
Tensor resample_time(const Tensor& x, std::size_t new_length);

/// x[b,t,c] * alpha[b,t,0]
Tensor scale_time(const Tensor& x, const Tensor& alpha);

/// Samples signal[b,:,c] at positions n + shift[b,n,0] * (L-1)/2 with linear
/// interpolation; positions outside [0,L-1] clamp to the edge sample.
Tensor shift_sample(const Tensor& signal, const Tensor& shift);

/// x[:,t+1,:] - x[:,t,:]
Tensor diff_time(const Tensor& x);

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

}  // namespace ecgx
