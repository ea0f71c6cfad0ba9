#pragma once

#include <utility>
#include <vector>

#include "stpn/tensor.hpp"

namespace stpn {

/// Mode-n matricization. Result is [dim(n), product of the other dims]; the
/// columns enumerate the remaining modes in their original order with the
/// last one varying fastest.
[[nodiscard]] DenseTensor unfold(const DenseTensor& t, int n);

/// Inverse of unfold: fold matrix m back to full_dims along mode n.
[[nodiscard]] DenseTensor fold(const DenseTensor& m, int n, std::vector<int64_t> full_dims);

/// Contract the trailing n_shared modes of x against the leading n_shared
/// modes of y. Result dims: leading modes of x ++ trailing modes of y (a
/// [1] tensor when both are empty).
[[nodiscard]] DenseTensor contract(const DenseTensor& x, const DenseTensor& y, int n_shared);

/// Gradients of contract given upstream dz.
[[nodiscard]] std::pair<DenseTensor, DenseTensor> contract_backward(
    const DenseTensor& x, const DenseTensor& y, int n_shared, const DenseTensor& dz);

/// Sum over pairs of equal-sized modes of one tensor (a generalized partial
/// trace). pairs hold 1-indexed distinct modes; result keeps the unpaired
/// modes in their original order ([1] tensor if none remain).
[[nodiscard]] DenseTensor diag_contract(const DenseTensor& t,
                                        const std::vector<std::pair<int, int>>& pairs);

/// Scatter gradient of diag_contract.
[[nodiscard]] DenseTensor diag_contract_backward(const DenseTensor& t,
                                                 const std::vector<std::pair<int, int>>& pairs,
                                                 const DenseTensor& dz);

/// Self-contraction of a tensor with modes (I, J1, J1, ..., Jn, Jn, K):
/// sums over the n adjacent equal pairs, leaving (I, K).
[[nodiscard]] DenseTensor self_contract(const DenseTensor& t, int n_pairs);

/// Mode-n product: fold(a * unfold(t, n), n, ...) with cols(a) == dim(n).
[[nodiscard]] DenseTensor mode_n_product(const DenseTensor& t, const DenseTensor& a, int n);

/// Output spatial size of a direct convolution: (size + 2*pad - k) / stride + 1.
[[nodiscard]] int64_t conv_out_size(int64_t size, int64_t k, int64_t stride, int64_t pad);

/// Direct 2-D convolution of x (H x W x Cin) with kernel k (Kh x Kw x Cin x Cout).
[[nodiscard]] DenseTensor conv2d(const DenseTensor& x, const DenseTensor& k,
                                 int64_t stride, int64_t pad);

/// Gradients of conv2d given upstream dy (Ho x Wo x Cout).
[[nodiscard]] std::pair<DenseTensor, DenseTensor> conv2d_backward(
    const DenseTensor& x, const DenseTensor& k, int64_t stride, int64_t pad,
    const DenseTensor& dy);

}  // namespace stpn
