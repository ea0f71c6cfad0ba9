#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "stpn/plan.hpp"
#include "stpn/stp.hpp"
#include "stpn/tensor.hpp"

namespace stpn {

/// A factorized weight: the stored cores plus (for conv formats) the shared
/// spatial kernel. Core order by format:
///  - TR/STR:          input-mode cores, then output-mode cores
///  - Tucker/STTu FCL: core tensor, then output factors, then input factors
///  - Tucker/STTu conv: input factor, output factor (kernel held separately)
///  - TTvec/STTvec:    chain cores, then the output factor matrix
///  - TTmat/STTmat:    chain cores (kernel held separately)
struct FactorizedWeight {
    Format format = Format::TR;
    LayerKind kind = LayerKind::Fcl;
    std::vector<SemiCore> cores;
    std::optional<DenseTensor> conv_kernel;
    int ratio = 1;
    int64_t rank = 1;
    std::vector<int64_t> input_dims;
    std::vector<int64_t> output_dims;

    /// Total stored elements across cores and the conv kernel.
    [[nodiscard]] int64_t param_elements() const;
};

/// Stored size of one logical mode under the given ratio: divisible modes
/// shrink by the ratio and are flagged deficient, others stay full.
struct StoredMode {
    int64_t size = 0;
    bool deficient = false;
};
[[nodiscard]] StoredMode stored_mode(int64_t logical, int ratio);

/// Build the zero-filled weight for a plan. A chain core holding a mode that
/// is not divisible by the ratio is stored fully classical (all its modes
/// full), which keeps every contraction in the chain well-formed.
[[nodiscard]] FactorizedWeight build_weight(const LayerPlan& plan);

/// Width of the Gaussian that makes each reconstructed weight entry have
/// variance `fan_variance` when a chain of `depth` stored factors is summed
/// over `fan_product` terms: (fan_variance / fan_product)^(1 / (2 depth)).
[[nodiscard]] double init_sigma(double fan_variance, double fan_product, int depth);

/// Build and fill with zero-mean Gaussians so the reconstructed weight
/// matches the 2/fan_in variance of a dense He initialization.
[[nodiscard]] FactorizedWeight init_gaussian(const LayerPlan& plan, uint64_t seed);

enum class MergeStrategy { Sequential, Hierarchical };

/// One merge step: the left operand's last mode against the right's first.
[[nodiscard]] SemiCore merge_pair(const SemiCore& left, const SemiCore& right);

/// Merge a whole chain. Both strategies give identical values and metadata;
/// hierarchical halves the chain recursively, sequential folds left to right.
[[nodiscard]] SemiCore merge_chain(const std::vector<SemiCore>& cores, MergeStrategy strategy);

/// Gradients of the chain cores given the gradient of the sequential merge.
[[nodiscard]] std::vector<DenseTensor> merge_chain_backward(const std::vector<SemiCore>& cores,
                                                            const DenseTensor& d_merged);

/// The merged operands a layer forward pass consumes.
///  - TR/STR: `in` merges the input cores, `out` the output cores.
///  - TTvec/STTvec: `in` is the merged chain with its leading unit mode
///    squeezed, shaped (I_1, ..., I_N, R); `out` is unused (the output factor
///    matrix stays separate).
///  - TTmat/STTmat: `in` is the merged chain permuted to the grouped order
///    (boundary rank, I_1..I_N, O_1..O_N); `out` is unused.
///  - Tucker/STTu: unused (factors are consumed directly).
struct MergedChains {
    SemiCore in;
    std::optional<SemiCore> out;
};
[[nodiscard]] MergedChains merged_chains(const FactorizedWeight& w, MergeStrategy strategy);

/// Gradients of the cores consumed by merged_chains (in storage order) given
/// the gradients of its results. Formats whose merged operand excludes a
/// trailing factor (the vector train forms) get gradients for the chain
/// cores only.
[[nodiscard]] std::vector<DenseTensor> merged_chains_backward(
    const FactorizedWeight& w, const DenseTensor& d_in,
    const std::optional<DenseTensor>& d_out);

/// Materialize the weight the factorization represents:
///  - Tucker/STTu FCL: (O_1..O_M, I_1..I_N)
///  - TR/STR FCL:      (I_1..I_N, O_1..O_M)
///  - TTvec/STTvec:    (O, I_1..I_N)
///  - any conv format: (K, K, prod I, prod O)
[[nodiscard]] DenseTensor reconstruct(const FactorizedWeight& w);

}  // namespace stpn
