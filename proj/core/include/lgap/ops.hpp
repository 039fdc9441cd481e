#pragma once

#include <cstddef>
#include <span>

#include "lgap/autograd.hpp"

namespace lgap::nn {

// Differentiable tensor operations. Spatial tensors are NCHW.

Variable add(const Variable& a, const Variable& b);
Variable scale(const Variable& a, float factor);

/// x[N,In] * w[Out,In]^T + b[Out]. `b` may be undefined.
Variable linear(const Variable& x, const Variable& w, const Variable& b);

/// Dense 2-D convolution, w[O,C,k,k], b[O] (may be undefined).
Variable conv2d(const Variable& x, const Variable& w, const Variable& b, std::size_t stride, std::size_t pad);

/// Per-channel convolution, w[C,k,k], b[C], stride 1.
Variable depthwise_conv2d(const Variable& x, const Variable& w, const Variable& b, std::size_t pad);

/// Normalises across channels at every spatial position (ConvNeXt style).
Variable layer_norm_channels(const Variable& x, const Variable& gamma, const Variable& beta, float eps = 1e-6f);

Variable gelu(const Variable& x);
Variable silu(const Variable& x);

/// [N,C,H,W] -> [N,C]
Variable global_avg_pool(const Variable& x);

/// Nearest-neighbour 2x spatial upsampling.
Variable upsample_nearest2(const Variable& x);

/// x[N,C,H,W] * (1 + gamma) + beta, with gamma/beta packed as gb[N, 2C]
/// (first C columns gamma, last C columns beta).
Variable film(const Variable& x, const Variable& gb);

/// Mean squared error against a constant target, averaged over all elements.
Variable mse_loss(const Variable& x, const Tensor& target);

/// Mean of all elements.
Variable mean(const Variable& x);

/// Row-wise L2 normalisation of a 2-D tensor, rows with norm below eps are
/// divided by eps.
Variable normalize_rows(const Variable& x, float eps = 1e-12f);

namespace kernels {

/// C[M,N] = op(A) * op(B) + beta * C, row-major.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const float* a,
          const float* b, float beta, float* c);

/// Pure forward of the FiLM modulation on one feature map batch.
Tensor film_forward(const Tensor& x, const Tensor& gb);

}  // namespace kernels

}  // namespace lgap::nn
