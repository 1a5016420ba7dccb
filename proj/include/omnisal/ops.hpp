#pragma once

#include <vector>

#include "omnisal/autograd.hpp"

/// Differentiable tensor operations. Every op records its backward closure on
/// the tape when any input requires grad; otherwise it is a plain forward.
namespace omnisal::ops {

// Elementwise. Binary ops broadcast: operands share rank and every axis is
// either equal or 1 in one of them.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var relu(const Var& x);
Var gelu(const Var& x);
Var sigmoid(const Var& x);

// Layout.
Var reshape(const Var& x, Shape shape);
Var permute(const Var& x, const std::vector<int>& order);
Var narrow(const Var& x, int64_t axis, int64_t start, int64_t length);
Var concat(const std::vector<Var>& parts, int64_t axis);

/// y = x Wᵀ + b over the last axis; weight is (out, in). `bias` may be empty.
Var linear(const Var& x, const Var& weight, const Var& bias = {});

/// Batched softmax(q kᵀ · scale) v. q: (G, Nq, d), k: (G, Nk, d), v: (G, Nk, dv).
/// No masking; group g only sees its own keys.
Var attention(const Var& q, const Var& k, const Var& v, double scale);

/// Normalizes each row of the last axis independently.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

/// Channel-last batch statistics: the last axis is the channel, every leading
/// axis is pooled into the mean/variance.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

/// Tokens-to-token unfold on a channel-last sequence (B, rows·cols, C).
/// Output (B, L', C·k²) with feature index c·k² + ky·k + kx.
Var soft_split(const Var& tokens, int64_t rows, int64_t cols, int64_t kernel, int64_t stride, int64_t padding);

/// Stride-1 2-D convolution, input (B, C, H, W), weight (O, C, k, k), zero padding.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int64_t padding);

/// Bilinear resize of (B, C, H, W) maps, align_corners = false.
Var upsample_bilinear(const Var& x, int64_t out_h, int64_t out_w);

Var global_avg_pool(const Var& x);  // (B, C, H, W) -> (B, C, 1, 1)
Var global_max_pool(const Var& x);
Var channel_mean(const Var& x);     // (B, C, H, W) -> (B, 1, H, W)
Var channel_max(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);

/// Mean binary cross-entropy with predictions clamped to [eps, 1 - eps].
Var bce_mean(const Var& prediction, const Tensor& target, double eps = 1e-7);

}  // namespace omnisal::ops
