#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "trustgan/random.hpp"
#include "trustgan/tensor.hpp"

// Differentiable operators. Every function records itself on the tape when
// any input requires grad and grad mode is enabled.
namespace trustgan::ops {

// Elementwise, operands must have identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
/// log(max(x, floor)); gradient is zero where x is below the floor.
Tensor log_clamped(const Tensor& x, double floor);
/// |x|^p elementwise, p >= 1.
Tensor pow_abs(const Tensor& x, double p);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor tanh(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// [B, ...] -> [B]: mean over every non-leading axis.
Tensor mean_rows(const Tensor& x);
/// [B, n] -> [B]
Tensor sum_rows(const Tensor& x);
/// [B, n] -> [B]
Tensor max_rows(const Tensor& x);
/// [B, n] -> [B]: x[b, index[b]]
Tensor pick(const Tensor& x, std::span<const std::size_t> index);
/// [B, ...] -> [index.size(), ...]
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index);

Tensor reshape(const Tensor& x, Shape shape);

/// [M, K] x [K, N] -> [M, N]
Tensor matmul(const Tensor& a, const Tensor& b);
/// x [B, in], weight [out, in], bias [out] -> [B, out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Stride 1, taps `dilation` apart, zero padding preserving spatial size (odd kernels).
/// x [B, Ci, H, W], weight [Co, Ci, KH, KW], bias [Co] -> [B, Co, H, W]
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t dilation = 1);
/// x [B, Ci, L], weight [Co, Ci, K], bias [Co] -> [B, Co, L]
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t dilation = 1);
/// [B, C, ...spatial] -> [B, C]
Tensor global_avg_pool(const Tensor& x);

/// Row-wise over [B, n].
Tensor softmax(const Tensor& logits);
Tensor log_softmax(const Tensor& logits);
Tensor logsumexp(const Tensor& logits);

struct BatchNormStats {
    Tensor running_mean;
    Tensor running_var;
};

/// Normalizes over every axis except axis 1 (channels).
/// training: batch statistics, optionally folding them into `stats`
/// (unbiased variance, exponential momentum). Otherwise running statistics.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                  bool training, bool update_stats, double momentum = 0.1, double eps = 1e-5);

/// Inverted dropout. rate == 0 returns x itself and draws nothing from rng.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

}  // namespace trustgan::ops
