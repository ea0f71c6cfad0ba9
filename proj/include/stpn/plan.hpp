#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace stpn {

/// The eight factorization formats. TTvec/STTvec factorize a vector-valued
/// weight (last fully-connected layer); TTmat/STTmat factorize a
/// convolutional kernel with paired input/output modes; TR/STR handle both
/// layer kinds; Tucker/STTu use a core plus per-mode factor matrices.
enum class Format { Tucker, STTu, TTvec, STTvec, TTmat, STTmat, TR, STR };

enum class LayerKind { Fcl, Conv };

[[nodiscard]] const char* format_name(Format f);
[[nodiscard]] bool format_is_semi(Format f);
[[nodiscard]] Format classical_counterpart(Format f);
/// Resolve a CLI family name in {tucker, sttu, tt, stt, tr, str} for a layer
/// kind: tt/stt map to the vector format for FCLs and the matrix format for
/// conv layers. Throws std::invalid_argument on unknown names.
[[nodiscard]] Format resolve_format(const std::string& family, LayerKind kind);

/// Full description of one factorized layer: dimensions, rank, ratio, and
/// (for conv layers) the spatial geometry needed for FLOP estimates.
struct LayerPlan {
    Format format = Format::TR;
    LayerKind kind = LayerKind::Fcl;
    std::vector<int64_t> input_dims;
    std::vector<int64_t> output_dims;
    int64_t rank = 1;
    int ratio = 1;
    int64_t kernel = 1;
    int64_t height = 1;
    int64_t width = 1;
    int64_t stride = 1;
    int64_t pad = 0;
    int64_t batch = 1;
    /// Opt-in: bump dims that are not multiples of the ratio up to the next
    /// multiple before applying the storage schema (changes logical sizes).
    bool pad_odd = false;

    [[nodiscard]] int64_t in_features() const;
    [[nodiscard]] int64_t out_features() const;
    [[nodiscard]] int64_t out_height() const;
    [[nodiscard]] int64_t out_width() const;
    /// Copy with pad_odd applied to the dimension lists (identity when unset).
    [[nodiscard]] LayerPlan normalized() const;
    /// Throws std::invalid_argument when fields are inconsistent.
    void validate() const;
};

}  // namespace stpn
