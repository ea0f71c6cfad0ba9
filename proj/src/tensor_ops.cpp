#include "stpn/tensor_ops.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "stpn/kernels.hpp"

namespace stpn {

namespace {

std::vector<int> mode_first_perm(int order, int n) {
    std::vector<int> perm;
    perm.reserve(static_cast<size_t>(order));
    perm.push_back(n - 1);
    for (int i = 0; i < order; ++i) {
        if (i != n - 1) perm.push_back(i);
    }
    return perm;
}

}  // namespace

DenseTensor unfold(const DenseTensor& t, int n) {
    const int64_t rows = t.dim(n);
    const int64_t cols = t.numel() / rows;
    DenseTensor moved = permute(t, mode_first_perm(t.order(), n));
    return reshape(std::move(moved), {rows, cols});
}

DenseTensor fold(const DenseTensor& m, int n, std::vector<int64_t> full_dims) {
    if (m.order() != 2) {
        throw std::invalid_argument("fold expects a matrix, got " + shape_string(m.dims));
    }
    const int order = static_cast<int>(full_dims.size());
    if (n < 1 || n > order) {
        throw std::invalid_argument("fold mode out of range");
    }
    if (m.dim(1) != full_dims[static_cast<size_t>(n - 1)] ||
        m.numel() != numel_of(full_dims)) {
        throw std::invalid_argument("fold shape mismatch: " + shape_string(m.dims) +
                                    " into " + shape_string(full_dims));
    }
    // Matrix rows currently index mode n; reshape to (mode n, others...) and
    // permute mode n back into place.
    std::vector<int64_t> moved_dims;
    moved_dims.reserve(full_dims.size());
    moved_dims.push_back(full_dims[static_cast<size_t>(n - 1)]);
    for (int i = 0; i < order; ++i) {
        if (i != n - 1) moved_dims.push_back(full_dims[static_cast<size_t>(i)]);
    }
    DenseTensor moved = reshape(m, std::move(moved_dims));
    std::vector<int> inv(static_cast<size_t>(order));
    const std::vector<int> fwd = mode_first_perm(order, n);
    for (int i = 0; i < order; ++i) inv[static_cast<size_t>(fwd[static_cast<size_t>(i)])] = i;
    return permute(moved, inv);
}

DenseTensor contract(const DenseTensor& x, const DenseTensor& y, int n_shared) {
    if (n_shared < 1 || n_shared > x.order() || n_shared > y.order()) {
        throw std::invalid_argument("contract: invalid number of shared modes");
    }
    const int xl = x.order() - n_shared;
    std::vector<int64_t> lead(x.dims.begin(), x.dims.begin() + xl);
    std::vector<int64_t> trail(y.dims.begin() + n_shared, y.dims.end());
    int64_t shared = 1;
    for (int i = 0; i < n_shared; ++i) {
        const int64_t xs = x.dims[static_cast<size_t>(xl + i)];
        const int64_t ys = y.dims[static_cast<size_t>(i)];
        if (xs != ys) {
            throw std::invalid_argument("contract: shared mode " + std::to_string(i + 1) +
                                        " mismatch (" + std::to_string(xs) + " vs " +
                                        std::to_string(ys) + ")");
        }
        shared *= xs;
    }
    const int64_t m = numel_of(lead);
    const int64_t n = numel_of(trail);
    std::vector<int64_t> out_dims = lead;
    out_dims.insert(out_dims.end(), trail.begin(), trail.end());
    if (out_dims.empty()) out_dims.push_back(1);
    DenseTensor z = DenseTensor::zeros(out_dims);
    kernels::matmul(x.data.data(), y.data.data(), z.data.data(), m, shared, n);
    return z;
}

std::pair<DenseTensor, DenseTensor> contract_backward(const DenseTensor& x,
                                                      const DenseTensor& y, int n_shared,
                                                      const DenseTensor& dz) {
    const int xl = x.order() - n_shared;
    int64_t m = 1;
    for (int i = 0; i < xl; ++i) m *= x.dims[static_cast<size_t>(i)];
    const int64_t shared = x.numel() / m;
    const int64_t n = y.numel() / shared;
    if (dz.numel() != m * n) {
        throw std::invalid_argument("contract_backward: upstream gradient shape mismatch");
    }
    DenseTensor dx = DenseTensor::zeros(x.dims);
    DenseTensor dy = DenseTensor::zeros(y.dims);
    // dX = dZ * Y^T, dY = X^T * dZ on the matricized forms.
    kernels::matmul_nt(dz.data.data(), y.data.data(), dx.data.data(), m, n, shared);
    kernels::matmul_tn(x.data.data(), dz.data.data(), dy.data.data(), shared, m, n);
    return {std::move(dx), std::move(dy)};
}

namespace {

struct DiagPlan {
    std::vector<int64_t> out_dims;      // unpaired dims, original order ([1] if none)
    std::vector<int64_t> out_gather;    // stride in t per out mode
    std::vector<int64_t> diag_sizes;    // one per pair
    std::vector<int64_t> diag_strides;  // stride(a) + stride(b) per pair
    int64_t out_total = 1;
    int64_t diag_total = 1;
};

DiagPlan make_diag_plan(const DenseTensor& t, const std::vector<std::pair<int, int>>& pairs) {
    const int order = t.order();
    std::vector<bool> used(static_cast<size_t>(order), false);
    const std::vector<int64_t> strides = strides_of(t.dims);
    DiagPlan plan;
    for (auto [a, b] : pairs) {
        if (a < 1 || a > order || b < 1 || b > order || a == b) {
            throw std::invalid_argument("diag_contract: invalid mode pair");
        }
        if (used[static_cast<size_t>(a - 1)] || used[static_cast<size_t>(b - 1)]) {
            throw std::invalid_argument("diag_contract: mode used in more than one pair");
        }
        if (t.dim(a) != t.dim(b)) {
            throw std::invalid_argument("diag_contract: paired modes differ in size (" +
                                        std::to_string(t.dim(a)) + " vs " +
                                        std::to_string(t.dim(b)) + ")");
        }
        used[static_cast<size_t>(a - 1)] = used[static_cast<size_t>(b - 1)] = true;
        plan.diag_sizes.push_back(t.dim(a));
        plan.diag_strides.push_back(strides[static_cast<size_t>(a - 1)] +
                                    strides[static_cast<size_t>(b - 1)]);
        plan.diag_total *= t.dim(a);
    }
    for (int i = 0; i < order; ++i) {
        if (!used[static_cast<size_t>(i)]) {
            plan.out_dims.push_back(t.dims[static_cast<size_t>(i)]);
            plan.out_gather.push_back(strides[static_cast<size_t>(i)]);
            plan.out_total *= t.dims[static_cast<size_t>(i)];
        }
    }
    if (plan.out_dims.empty()) {
        plan.out_dims.push_back(1);
        plan.out_gather.push_back(0);
    }
    return plan;
}

int64_t gather_base(int64_t flat, std::span<const int64_t> dims, std::span<const int64_t> gather) {
    int64_t base = 0;
    for (int m = static_cast<int>(dims.size()) - 1; m >= 0; --m) {
        const int64_t d = dims[static_cast<size_t>(m)];
        base += (flat % d) * gather[static_cast<size_t>(m)];
        flat /= d;
    }
    return base;
}

}  // namespace

DenseTensor diag_contract(const DenseTensor& t, const std::vector<std::pair<int, int>>& pairs) {
    const DiagPlan plan = make_diag_plan(t, pairs);
    DenseTensor out = DenseTensor::zeros(plan.out_dims);
    const int ndiag = static_cast<int>(plan.diag_sizes.size());
#pragma omp parallel for schedule(static) num_threads(kernels::thread_count()) \
    if (plan.out_total * plan.diag_total > 16384)
    for (int64_t i = 0; i < plan.out_total; ++i) {
        const int64_t base = gather_base(i, plan.out_dims, plan.out_gather);
        double acc = 0.0;
        for (int64_t j = 0; j < plan.diag_total; ++j) {
            int64_t rem = j;
            int64_t pos = base;
            for (int m = ndiag - 1; m >= 0; --m) {
                const int64_t d = plan.diag_sizes[static_cast<size_t>(m)];
                pos += (rem % d) * plan.diag_strides[static_cast<size_t>(m)];
                rem /= d;
            }
            acc += t.data[static_cast<size_t>(pos)];
        }
        out.data[static_cast<size_t>(i)] = acc;
    }
    return out;
}

DenseTensor diag_contract_backward(const DenseTensor& t,
                                   const std::vector<std::pair<int, int>>& pairs,
                                   const DenseTensor& dz) {
    const DiagPlan plan = make_diag_plan(t, pairs);
    if (dz.numel() != plan.out_total) {
        throw std::invalid_argument("diag_contract_backward: gradient shape mismatch");
    }
    DenseTensor dt = DenseTensor::zeros(t.dims);
    const int ndiag = static_cast<int>(plan.diag_sizes.size());
#pragma omp parallel for schedule(static) num_threads(kernels::thread_count()) \
    if (plan.out_total * plan.diag_total > 16384)
    for (int64_t i = 0; i < plan.out_total; ++i) {
        const int64_t base = gather_base(i, plan.out_dims, plan.out_gather);
        const double g = dz.data[static_cast<size_t>(i)];
        for (int64_t j = 0; j < plan.diag_total; ++j) {
            int64_t rem = j;
            int64_t pos = base;
            for (int m = ndiag - 1; m >= 0; --m) {
                const int64_t d = plan.diag_sizes[static_cast<size_t>(m)];
                pos += (rem % d) * plan.diag_strides[static_cast<size_t>(m)];
                rem /= d;
            }
            dt.data[static_cast<size_t>(pos)] += g;
        }
    }
    return dt;
}

DenseTensor self_contract(const DenseTensor& t, int n_pairs) {
    if (t.order() != 2 * n_pairs + 2) {
        throw std::invalid_argument("self_contract expects order 2n+2, got " +
                                    shape_string(t.dims));
    }
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(static_cast<size_t>(n_pairs));
    for (int i = 0; i < n_pairs; ++i) pairs.emplace_back(2 * i + 2, 2 * i + 3);
    return diag_contract(t, pairs);
}

DenseTensor mode_n_product(const DenseTensor& t, const DenseTensor& a, int n) {
    if (a.order() != 2) {
        throw std::invalid_argument("mode_n_product expects a matrix factor");
    }
    if (a.dim(2) != t.dim(n)) {
        throw std::invalid_argument("mode_n_product: factor cols " + std::to_string(a.dim(2)) +
                                    " != mode size " + std::to_string(t.dim(n)));
    }
    DenseTensor unfolded = unfold(t, n);
    DenseTensor prod = contract(a, unfolded, 1);
    std::vector<int64_t> out_dims = t.dims;
    out_dims[static_cast<size_t>(n - 1)] = a.dim(1);
    return fold(prod, n, std::move(out_dims));
}

int64_t conv_out_size(int64_t size, int64_t k, int64_t stride, int64_t pad) {
    const int64_t span = size + 2 * pad - k;
    if (stride < 1 || span < 0) {
        throw std::invalid_argument("convolution does not fit: size " + std::to_string(size) +
                                    ", kernel " + std::to_string(k) + ", stride " +
                                    std::to_string(stride) + ", pad " + std::to_string(pad));
    }
    return span / stride + 1;
}

DenseTensor conv2d(const DenseTensor& x, const DenseTensor& k, int64_t stride, int64_t pad) {
    if (x.order() != 3 || k.order() != 4) {
        throw std::invalid_argument("conv2d expects x (H,W,Cin) and kernel (Kh,Kw,Cin,Cout)");
    }
    if (x.dim(3) != k.dim(3)) {
        throw std::invalid_argument("conv2d: channel mismatch (" + std::to_string(x.dim(3)) +
                                    " vs " + std::to_string(k.dim(3)) + ")");
    }
    const int64_t ho = conv_out_size(x.dim(1), k.dim(1), stride, pad);
    const int64_t wo = conv_out_size(x.dim(2), k.dim(2), stride, pad);
    DenseTensor y = DenseTensor::zeros({ho, wo, k.dim(4)});
    kernels::conv2d(x.data.data(), k.data.data(), y.data.data(), x.dim(1), x.dim(2), x.dim(3),
                    k.dim(1), k.dim(2), k.dim(4), stride, pad, ho, wo);
    return y;
}

std::pair<DenseTensor, DenseTensor> conv2d_backward(const DenseTensor& x, const DenseTensor& k,
                                                    int64_t stride, int64_t pad,
                                                    const DenseTensor& dy) {
    const int64_t ho = conv_out_size(x.dim(1), k.dim(1), stride, pad);
    const int64_t wo = conv_out_size(x.dim(2), k.dim(2), stride, pad);
    if (dy.dims != std::vector<int64_t>{ho, wo, k.dim(4)}) {
        throw std::invalid_argument("conv2d_backward: upstream gradient shape mismatch");
    }
    DenseTensor dx = DenseTensor::zeros(x.dims);
    DenseTensor dk = DenseTensor::zeros(k.dims);
    kernels::conv2d_grad_input(dy.data.data(), k.data.data(), dx.data.data(), x.dim(1), x.dim(2),
                               x.dim(3), k.dim(1), k.dim(2), k.dim(4), stride, pad, ho, wo);
    kernels::conv2d_grad_kernel(x.data.data(), dy.data.data(), dk.data.data(), x.dim(1), x.dim(2),
                                x.dim(3), k.dim(1), k.dim(2), k.dim(4), stride, pad, ho, wo);
    return {std::move(dx), std::move(dk)};
}

}  // namespace stpn
