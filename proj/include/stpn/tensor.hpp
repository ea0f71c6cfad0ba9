#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace stpn {

/// Dense tensor of doubles in row-major layout: the last mode varies fastest.
/// dims is never empty and every dim is >= 1. Modes are 1-indexed in all
/// public operations that take a mode argument.
struct DenseTensor {
    std::vector<int64_t> dims;
    std::vector<double> data;

    DenseTensor() = default;
    DenseTensor(std::vector<int64_t> shape, std::vector<double> values);

    static DenseTensor zeros(std::vector<int64_t> shape);
    /// Filled with 0, 1, 2, ... in storage order; handy for layout tests.
    static DenseTensor iota(std::vector<int64_t> shape);

    [[nodiscard]] int order() const { return static_cast<int>(dims.size()); }
    [[nodiscard]] int64_t numel() const;
    /// Size of 1-indexed mode n.
    [[nodiscard]] int64_t dim(int n) const;

    /// Element access by 0-based multi-index (one entry per mode).
    [[nodiscard]] double at(std::span<const int64_t> idx) const;
    double& at(std::span<const int64_t> idx);
    [[nodiscard]] double at(std::initializer_list<int64_t> idx) const;
    double& at(std::initializer_list<int64_t> idx);
};

[[nodiscard]] int64_t numel_of(std::span<const int64_t> dims);

/// Row-major strides: stride of the last mode is 1.
[[nodiscard]] std::vector<int64_t> strides_of(std::span<const int64_t> dims);

[[nodiscard]] std::string shape_string(std::span<const int64_t> dims);

/// Same data, new shape; element counts must match.
[[nodiscard]] DenseTensor reshape(const DenseTensor& t, std::vector<int64_t> shape);
[[nodiscard]] DenseTensor reshape(DenseTensor&& t, std::vector<int64_t> shape);

/// perm[i] is the 0-based source mode that becomes mode i of the result.
[[nodiscard]] DenseTensor permute(const DenseTensor& t, std::span<const int> perm);

/// Permutation undoing p: inverse_perm(p)[p[i]] == i.
[[nodiscard]] std::vector<int> inverse_perm(const std::vector<int>& p);

/// Drop a size-1 mode (1-indexed).
[[nodiscard]] DenseTensor squeeze_mode(const DenseTensor& t, int n);

/// Replace 1-indexed mode n of size major*minor by two modes (major, minor).
/// Pure relabeling: row-major layout already stores major-then-minor.
[[nodiscard]] DenseTensor split_mode(const DenseTensor& t, int n, int64_t minor);

/// Merge 1-indexed modes n and n+1 into one mode (mode n major, n+1 minor).
[[nodiscard]] DenseTensor merge_adjacent(const DenseTensor& t, int n);

[[nodiscard]] bool same_shape(const DenseTensor& a, const DenseTensor& b);

/// max_i |a_i - b_i| / max(1, max_i |a_i|, max_i |b_i|); shapes must match.
[[nodiscard]] double max_rel_diff(const DenseTensor& a, const DenseTensor& b);

/// max_i |a_i - b_i|.
[[nodiscard]] double max_abs_diff(const DenseTensor& a, const DenseTensor& b);

}  // namespace stpn
