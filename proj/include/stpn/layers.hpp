#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "stpn/factorized.hpp"
#include "stpn/tensor.hpp"

namespace stpn {

/// Gradients of a plain parameterized layer.
struct DenseGrads {
    DenseTensor dx;
    DenseTensor dw;
    DenseTensor db;
};

/// y = x w^T + b with x (B, I), w (O, I), b (O).
[[nodiscard]] DenseTensor dense_forward(const DenseTensor& x, const DenseTensor& w,
                                        const DenseTensor& b);
[[nodiscard]] DenseGrads dense_backward(const DenseTensor& x, const DenseTensor& w,
                                        const DenseTensor& dy);

/// y = x semi-product w plus bias: x (B, n*p), w (p, q), b (n*q) -> (B, n*q).
[[nodiscard]] DenseTensor stp_dense_forward(const DenseTensor& x, const DenseTensor& w,
                                            const DenseTensor& b);
[[nodiscard]] DenseGrads stp_dense_backward(const DenseTensor& x, const DenseTensor& w,
                                            const DenseTensor& dy);

/// Classical tensor regression: y(b, o...) = sum_i W(o..., i...) x(b, i...)
/// plus bias (O_1..O_M). Runs on plain contractions, independent of the
/// semi-product engine.
[[nodiscard]] DenseTensor tensor_regression_forward(const DenseTensor& x, const DenseTensor& w,
                                                    const DenseTensor& bias);
[[nodiscard]] DenseGrads tensor_regression_backward(const DenseTensor& x, const DenseTensor& w,
                                                    const DenseTensor& dy);

/// Gradients of a factorized layer: input, every stored core (in storage
/// order), the shared conv kernel when present, and the bias.
struct FactorGrads {
    DenseTensor dx;
    std::vector<DenseTensor> dcores;
    std::optional<DenseTensor> dkernel;
    DenseTensor dbias;
};

/// Ring-form fully-connected layer (TR when ratio is 1).
/// x (B, I_1..I_N), bias (O_1..O_M) -> (B, O_1..O_M).
[[nodiscard]] DenseTensor str_fcl_forward(const DenseTensor& x, const FactorizedWeight& w,
                                          const DenseTensor& bias);
[[nodiscard]] FactorGrads str_fcl_backward(const DenseTensor& x, const FactorizedWeight& w,
                                           const DenseTensor& bias, const DenseTensor& dy);

/// Train-form fully-connected layer (TT when ratio is 1).
/// x (B, I_1..I_N), bias (O) -> (B, O).
[[nodiscard]] DenseTensor stt_fcl_forward(const DenseTensor& x, const FactorizedWeight& w,
                                          const DenseTensor& bias);
[[nodiscard]] FactorGrads stt_fcl_backward(const DenseTensor& x, const FactorizedWeight& w,
                                           const DenseTensor& bias, const DenseTensor& dy);

/// Tucker-form fully-connected layer (classical Tucker when ratio is 1).
/// x (B, I_1..I_N), bias (O_1..O_M) -> (B, O_1..O_M).
[[nodiscard]] DenseTensor sttu_fcl_forward(const DenseTensor& x, const FactorizedWeight& w,
                                           const DenseTensor& bias);
[[nodiscard]] FactorGrads sttu_fcl_backward(const DenseTensor& x, const FactorizedWeight& w,
                                            const DenseTensor& bias, const DenseTensor& dy);

/// Ring-form conv layer. x (B, H, W, I_1..I_N), bias (O_1..O_M)
/// -> (B, H', W', O_1..O_M).
[[nodiscard]] DenseTensor str_conv_forward(const DenseTensor& x, const FactorizedWeight& w,
                                           int64_t stride, int64_t pad, const DenseTensor& bias);
[[nodiscard]] FactorGrads str_conv_backward(const DenseTensor& x, const FactorizedWeight& w,
                                            int64_t stride, int64_t pad, const DenseTensor& bias,
                                            const DenseTensor& dy);

/// Train-form conv layer. x (B, H, W, 1, I_1..I_N) with the explicit unit
/// channel, bias (O_1..O_N) -> (B, H', W', O_1..O_N).
[[nodiscard]] DenseTensor stt_conv_forward(const DenseTensor& x, const FactorizedWeight& w,
                                           int64_t stride, int64_t pad, const DenseTensor& bias);
[[nodiscard]] FactorGrads stt_conv_backward(const DenseTensor& x, const FactorizedWeight& w,
                                            int64_t stride, int64_t pad, const DenseTensor& bias,
                                            const DenseTensor& dy);

/// Tucker-form conv layer: project channels down, convolve with the reduced
/// kernel, project back up. x (B, H, W, I), bias (O) -> (B, H', W', O).
[[nodiscard]] DenseTensor sttu_conv_forward(const DenseTensor& x, const FactorizedWeight& w,
                                            int64_t stride, int64_t pad, const DenseTensor& bias);
[[nodiscard]] FactorGrads sttu_conv_backward(const DenseTensor& x, const FactorizedWeight& w,
                                             int64_t stride, int64_t pad, const DenseTensor& bias,
                                             const DenseTensor& dy);

}  // namespace stpn
