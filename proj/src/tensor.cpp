#include "stpn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "stpn/kernels.hpp"

namespace stpn {

namespace {

void check_dims(std::span<const int64_t> dims) {
    if (dims.empty()) {
        throw std::invalid_argument("tensor shape must have at least one mode");
    }
    for (int64_t d : dims) {
        if (d < 1) {
            throw std::invalid_argument("tensor dims must be >= 1, got " +
                                        shape_string(dims));
        }
    }
}

}  // namespace

int64_t numel_of(std::span<const int64_t> dims) {
    int64_t n = 1;
    for (int64_t d : dims) n *= d;
    return n;
}

std::vector<int64_t> strides_of(std::span<const int64_t> dims) {
    std::vector<int64_t> s(dims.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(dims.size()) - 1; i >= 0; --i) {
        s[static_cast<size_t>(i)] = acc;
        acc *= dims[static_cast<size_t>(i)];
    }
    return s;
}

std::string shape_string(std::span<const int64_t> dims) {
    std::string s = "[";
    for (size_t i = 0; i < dims.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

DenseTensor::DenseTensor(std::vector<int64_t> shape, std::vector<double> values)
    : dims(std::move(shape)), data(std::move(values)) {
    check_dims(dims);
    if (static_cast<int64_t>(data.size()) != numel_of(dims)) {
        throw std::invalid_argument("data size " + std::to_string(data.size()) +
                                    " does not match shape " + shape_string(dims));
    }
}

DenseTensor DenseTensor::zeros(std::vector<int64_t> shape) {
    check_dims(shape);
    const int64_t n = numel_of(shape);
    DenseTensor t;
    t.dims = std::move(shape);
    t.data.assign(static_cast<size_t>(n), 0.0);
    return t;
}

DenseTensor DenseTensor::iota(std::vector<int64_t> shape) {
    DenseTensor t = zeros(std::move(shape));
    std::iota(t.data.begin(), t.data.end(), 0.0);
    return t;
}

int64_t DenseTensor::numel() const { return numel_of(dims); }

int64_t DenseTensor::dim(int n) const {
    if (n < 1 || n > order()) {
        throw std::invalid_argument("mode " + std::to_string(n) +
                                    " out of range for shape " + shape_string(dims));
    }
    return dims[static_cast<size_t>(n - 1)];
}

namespace {

int64_t flat_index(const DenseTensor& t, std::span<const int64_t> idx) {
    if (idx.size() != t.dims.size()) {
        throw std::invalid_argument("index rank does not match tensor order");
    }
    int64_t flat = 0;
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= t.dims[i]) {
            throw std::out_of_range("index out of range at mode " + std::to_string(i + 1));
        }
        flat = flat * t.dims[i] + idx[i];
    }
    return flat;
}

}  // namespace

double DenseTensor::at(std::span<const int64_t> idx) const {
    return data[static_cast<size_t>(flat_index(*this, idx))];
}

double& DenseTensor::at(std::span<const int64_t> idx) {
    return data[static_cast<size_t>(flat_index(*this, idx))];
}

double DenseTensor::at(std::initializer_list<int64_t> idx) const {
    return at(std::span<const int64_t>(idx.begin(), idx.size()));
}

double& DenseTensor::at(std::initializer_list<int64_t> idx) {
    return at(std::span<const int64_t>(idx.begin(), idx.size()));
}

DenseTensor reshape(const DenseTensor& t, std::vector<int64_t> shape) {
    check_dims(shape);
    if (numel_of(shape) != t.numel()) {
        throw std::invalid_argument("reshape " + shape_string(t.dims) + " -> " +
                                    shape_string(shape) + " changes element count");
    }
    DenseTensor out;
    out.dims = std::move(shape);
    out.data = t.data;
    return out;
}

DenseTensor reshape(DenseTensor&& t, std::vector<int64_t> shape) {
    check_dims(shape);
    if (numel_of(shape) != t.numel()) {
        throw std::invalid_argument("reshape " + shape_string(t.dims) + " -> " +
                                    shape_string(shape) + " changes element count");
    }
    DenseTensor out;
    out.dims = std::move(shape);
    out.data = std::move(t.data);
    return out;
}

DenseTensor permute(const DenseTensor& t, std::span<const int> perm) {
    const int n = t.order();
    if (static_cast<int>(perm.size()) != n) {
        throw std::invalid_argument("permutation rank does not match tensor order");
    }
    std::vector<bool> seen(static_cast<size_t>(n), false);
    for (int p : perm) {
        if (p < 0 || p >= n || seen[static_cast<size_t>(p)]) {
            throw std::invalid_argument("invalid permutation");
        }
        seen[static_cast<size_t>(p)] = true;
    }
    std::vector<int64_t> out_dims(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        out_dims[static_cast<size_t>(i)] = t.dims[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    }
    DenseTensor out = DenseTensor::zeros(out_dims);
    const std::vector<int64_t> src_strides = strides_of(t.dims);
    std::vector<int64_t> gather(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        gather[static_cast<size_t>(i)] = src_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    }
    kernels::permute_copy(t.data.data(), out.data.data(), out_dims, gather);
    return out;
}

std::vector<int> inverse_perm(const std::vector<int>& p) {
    std::vector<int> inv(p.size());
    for (size_t i = 0; i < p.size(); ++i) inv[static_cast<size_t>(p[i])] = static_cast<int>(i);
    return inv;
}

DenseTensor squeeze_mode(const DenseTensor& t, int n) {
    if (t.dim(n) != 1) {
        throw std::invalid_argument("cannot squeeze mode " + std::to_string(n) +
                                    " of size " + std::to_string(t.dim(n)));
    }
    if (t.order() == 1) {
        throw std::invalid_argument("cannot squeeze the only mode of a tensor");
    }
    std::vector<int64_t> shape = t.dims;
    shape.erase(shape.begin() + (n - 1));
    return reshape(t, std::move(shape));
}

DenseTensor split_mode(const DenseTensor& t, int n, int64_t minor) {
    const int64_t size = t.dim(n);
    if (minor < 1 || size % minor != 0) {
        throw std::invalid_argument("mode " + std::to_string(n) + " of size " +
                                    std::to_string(size) + " is not divisible by " +
                                    std::to_string(minor));
    }
    std::vector<int64_t> shape = t.dims;
    shape[static_cast<size_t>(n - 1)] = size / minor;
    shape.insert(shape.begin() + n, minor);
    return reshape(t, std::move(shape));
}

DenseTensor merge_adjacent(const DenseTensor& t, int n) {
    if (n < 1 || n >= t.order()) {
        throw std::invalid_argument("merge_adjacent needs two consecutive modes");
    }
    std::vector<int64_t> shape = t.dims;
    shape[static_cast<size_t>(n - 1)] *= shape[static_cast<size_t>(n)];
    shape.erase(shape.begin() + n);
    return reshape(t, std::move(shape));
}

bool same_shape(const DenseTensor& a, const DenseTensor& b) {
    return a.dims == b.dims;
}

double max_rel_diff(const DenseTensor& a, const DenseTensor& b) {
    if (!same_shape(a, b)) {
        throw std::invalid_argument("shape mismatch: " + shape_string(a.dims) +
                                    " vs " + shape_string(b.dims));
    }
    double num = 0.0;
    double scale = 1.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        num = std::max(num, std::abs(a.data[i] - b.data[i]));
        scale = std::max({scale, std::abs(a.data[i]), std::abs(b.data[i])});
    }
    return num / scale;
}

double max_abs_diff(const DenseTensor& a, const DenseTensor& b) {
    if (!same_shape(a, b)) {
        throw std::invalid_argument("shape mismatch: " + shape_string(a.dims) +
                                    " vs " + shape_string(b.dims));
    }
    double num = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        num = std::max(num, std::abs(a.data[i] - b.data[i]));
    }
    return num;
}

}  // namespace stpn
