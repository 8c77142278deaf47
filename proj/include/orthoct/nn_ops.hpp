#pragma once

#include "orthoct/tensor.hpp"

namespace orthoct {

// Differentiable network primitives. Spatial tensors are laid out
// [C, H, W] for dims == 2 and [C, D, H, W] for dims == 3; 2-D inputs
// are handled as depth-1 3-D internally. Convolution here is
// cross-correlation (no kernel flip), the usual NN convention.

/// kernel [C_out, C_in, *k], bias [C_out]; output extent per axis is
/// floor((in + 2*pad - k) / stride) + 1.
template <typename T>
Tensor<T> conv(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
    const std::vector<int>& stride, const std::vector<int>& padding, int dims);

/// Linear adjoint of conv with the same kernel, stride and zero
/// padding. kernel [C_src, C_dst, *k]; input carries C_src channels,
/// output extent is (in - 1)*stride + k.
template <typename T>
Tensor<T> transposed_conv(const Tensor<T>& input, const Tensor<T>& kernel,
    const std::vector<int>& stride, int dims);

/// Window maximum; spatial extents must divide by the window. The
/// backward pass routes the gradient to each window's argmax, first
/// position in row-major order on ties.
template <typename T>
Tensor<T> max_pool(const Tensor<T>& input, const std::vector<int>& window, int dims);

/// Per-channel standardization (population variance) followed by the
/// affine gain/shift; differentiable through mean and variance.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& input, const Tensor<T>& gain, const Tensor<T>& shift,
    T eps);

/// x for x >= 0, slope*x otherwise; derivative at exactly 0 is slope.
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, T slope);

/// Bilinear/trilinear interpolation, align-corners-false; spatial
/// extents multiply by factor.
template <typename T>
Tensor<T> linear_upsample(const Tensor<T>& input, int factor, int dims);

/// Concatenate along the channel axis; spatial extents must match.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Scale every spatial location's channel vector to unit L2 norm,
/// dividing by max(norm, eps).
template <typename T>
Tensor<T> l2_normalize_channels(const Tensor<T>& input, T eps);

/// a.b / (max(|a|,eps) * max(|b|,eps)), clamped to [-1, 1]. Plain
/// value computation, not recorded on the graph.
template <typename T>
T cosine_similarity(std::span<const T> a, std::span<const T> b, T eps);

#define ORTHOCT_NN_OPS_DECL(T)                                                             \
    extern template Tensor<T> conv<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
        const std::vector<int>&, const std::vector<int>&, int);                            \
    extern template Tensor<T> transposed_conv<T>(const Tensor<T>&, const Tensor<T>&,       \
        const std::vector<int>&, int);                                                     \
    extern template Tensor<T> max_pool<T>(const Tensor<T>&, const std::vector<int>&, int); \
    extern template Tensor<T> instance_norm<T>(const Tensor<T>&, const Tensor<T>&,         \
        const Tensor<T>&, T);                                                              \
    extern template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                          \
    extern template Tensor<T> linear_upsample<T>(const Tensor<T>&, int, int);              \
    extern template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);      \
    extern template Tensor<T> l2_normalize_channels<T>(const Tensor<T>&, T);               \
    extern template T cosine_similarity<T>(std::span<const T>, std::span<const T>, T);

ORTHOCT_NN_OPS_DECL(float)
ORTHOCT_NN_OPS_DECL(double)
#undef ORTHOCT_NN_OPS_DECL

} // namespace orthoct
