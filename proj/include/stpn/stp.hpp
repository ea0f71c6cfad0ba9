#pragma once

#include <utility>
#include <vector>

#include "stpn/tensor.hpp"

namespace stpn {

/// Tensor with semi-tensor-product metadata: a storage ratio t and one
/// deficiency flag per mode. A deficient mode is stored at 1/t of its logical
/// size; deficiency is always explicit metadata, never inferred from sizes.
/// ratio == 1 implies no mode is deficient.
struct SemiCore {
    DenseTensor tensor;
    int ratio = 1;
    std::vector<bool> deficient;

    SemiCore() = default;
    /// Full tensor, ratio 1.
    explicit SemiCore(DenseTensor t);
    SemiCore(DenseTensor t, int ratio, std::vector<bool> deficient_flags);

    [[nodiscard]] int order() const { return tensor.order(); }
    [[nodiscard]] int64_t stored_dim(int n) const { return tensor.dim(n); }
    [[nodiscard]] int64_t logical_dim(int n) const;
    [[nodiscard]] bool is_deficient(int n) const;
};

/// Swap the two modes (and flags) of a matrix-shaped SemiCore.
[[nodiscard]] SemiCore transpose(const SemiCore& m);

/// Left semi-tensor product of a row vector x (length N*P) with a vector w
/// (length P): result(i) = sum_p x((p-1)*N + i) * w(p), length N.
[[nodiscard]] DenseTensor lstp_vec(const DenseTensor& x, const DenseTensor& w);

/// Left semi-tensor product of X (M x N*P) with W (P x Q): the (m, q) block
/// of the result (M x N*Q) is lstp_vec(X(m,:), W(:,q)). Equals X * (W kron I_N).
[[nodiscard]] DenseTensor stp_mat(const DenseTensor& x, const DenseTensor& w);

/// Gradients of stp_mat given upstream dy (M x N*Q).
[[nodiscard]] std::pair<DenseTensor, DenseTensor> stp_mat_backward(
    const DenseTensor& x, const DenseTensor& w, const DenseTensor& dy);

/// Oracle route: materializes W kron I_N explicitly and multiplies. Kept
/// independent of the blockwise stp_mat path; used for validation only.
[[nodiscard]] DenseTensor stp_oracle_kron(const DenseTensor& x, const DenseTensor& w);

/// Semi-tensor mode-n product: unfold G at mode n, STP the transposed
/// unfolding with A, fold back. Mode n (size t * rows(A)) is replaced by the
/// promoted size t * cols(A); with t == 1 this is mode_n_product with
/// transpose(A.tensor).
[[nodiscard]] DenseTensor semi_mode_n(const DenseTensor& g, const SemiCore& a, int n);

/// Gradients of semi_mode_n given the upstream gradient of its result.
[[nodiscard]] std::pair<DenseTensor, DenseTensor> semi_mode_n_backward(
    const DenseTensor& g, const SemiCore& a, int n, const DenseTensor& dout);

/// Extra classical contractions bundled with a semi_contract: pairs of
/// (mode of X, mode of Y), 1-indexed, contracted alongside the STP pair.
struct SemiContractSpec {
    int mode_x = 0;
    int mode_y = 0;
    std::vector<std::pair<int, int>> shared;
};

/// Semi-tensor contraction of mode_x of X (stored size t*P) against mode_y of
/// Y (stored size P). X's mode splits into (P major, t minor); the major part
/// contracts, and the size-t residual merges as the minor index into the
/// first remaining deficient mode of Y (promoting it to full and clearing its
/// flag), or into the first remaining mode of Y when none is deficient.
/// Result modes: X's remaining modes, then Y's transformed remaining modes.
/// Throws if t > 1 and Y has no remaining mode to take the residual.
[[nodiscard]] SemiCore semi_contract(const SemiCore& x, int mode_x,
                                     const SemiCore& y, int mode_y);

/// General form with extra classical contractions fused in.
[[nodiscard]] SemiCore semi_contract_general(const SemiCore& x, const SemiCore& y,
                                             const SemiContractSpec& spec);

/// Gradients of semi_contract_general given upstream dz.
[[nodiscard]] std::pair<DenseTensor, DenseTensor> semi_contract_general_backward(
    const SemiCore& x, const SemiCore& y, const SemiContractSpec& spec,
    const DenseTensor& dz);

/// Close a merged ring chain: trace the first mode (size S) against the last
/// mode (size S or t*S). For the semi case the last mode splits into
/// (S major, t minor); the major part traces against the first mode and the
/// residual merges into the first deficient remaining mode per the same
/// residual rule. Result keeps the interior modes in order.
[[nodiscard]] SemiCore ring_close(const SemiCore& chain);

namespace detail {
/// Test hook: when set, the residual-merge rule is deliberately corrupted
/// (residual goes to the last remaining mode instead). Used by the
/// self-check negative control; never set in normal operation.
extern bool corrupt_residual_rule;
}  // namespace detail

}  // namespace stpn
