#include "stpn/stp.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>
#include <utility>

#include "stpn/kernels.hpp"
#include "stpn/tensor_ops.hpp"

namespace stpn {

namespace detail {
bool corrupt_residual_rule = false;
}  // namespace detail

SemiCore::SemiCore(DenseTensor t)
    : tensor(std::move(t)), ratio(1), deficient(static_cast<size_t>(tensor.order()), false) {}

SemiCore::SemiCore(DenseTensor t, int ratio_, std::vector<bool> deficient_flags)
    : tensor(std::move(t)), ratio(ratio_), deficient(std::move(deficient_flags)) {
    if (ratio < 1) throw std::invalid_argument("SemiCore: ratio must be >= 1");
    if (deficient.size() != static_cast<size_t>(tensor.order()))
        throw std::invalid_argument("SemiCore: need one deficiency flag per mode");
    if (ratio == 1)
        for (bool f : deficient)
            if (f) throw std::invalid_argument("SemiCore: deficient mode requires ratio > 1");
}

int64_t SemiCore::logical_dim(int n) const {
    return stored_dim(n) * (is_deficient(n) ? ratio : 1);
}

bool SemiCore::is_deficient(int n) const {
    if (n < 1 || n > order()) throw std::out_of_range("SemiCore: mode index out of range");
    return deficient[static_cast<size_t>(n - 1)];
}

SemiCore transpose(const SemiCore& m) {
    if (m.order() != 2) throw std::invalid_argument("transpose: matrix SemiCore required");
    static constexpr int swap[2] = {1, 0};
    return SemiCore(permute(m.tensor, std::span<const int>(swap)), m.ratio,
                    {m.deficient[1], m.deficient[0]});
}

DenseTensor lstp_vec(const DenseTensor& x, const DenseTensor& w) {
    if (x.order() != 1 || w.order() != 1)
        throw std::invalid_argument("lstp_vec: vector operands required");
    const int64_t len = x.dim(1), p = w.dim(1);
    if (p <= 0 || len % p != 0)
        throw std::invalid_argument("lstp_vec: length " + std::to_string(len) +
                                    " is not a multiple of " + std::to_string(p));
    const int64_t n = len / p;
    DenseTensor y = DenseTensor::zeros({n});
    for (int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int64_t pp = 0; pp < p; ++pp) acc += x.data[static_cast<size_t>(pp * n + i)] * w.data[static_cast<size_t>(pp)];
        y.data[static_cast<size_t>(i)] = acc;
    }
    return y;
}

DenseTensor stp_mat(const DenseTensor& x, const DenseTensor& w) {
    if (x.order() != 2 || w.order() != 2)
        throw std::invalid_argument("stp_mat: matrix operands required");
    const int64_t m = x.dim(1), cols = x.dim(2), p = w.dim(1), q = w.dim(2);
    if (p <= 0 || cols % p != 0)
        throw std::invalid_argument("stp_mat: " + std::to_string(cols) +
                                    " columns not a multiple of " + std::to_string(p) + " rows");
    const int64_t n = cols / p;
    static constexpr int swap_last[3] = {0, 2, 1};
    // Columns are blocked p-major: (m, p, n) -> (m, n, p) exposes p innermost.
    DenseTensor xp = permute(reshape(x, {m, p, n}), std::span<const int>(swap_last));
    DenseTensor z = DenseTensor::zeros({m * n, q});
    kernels::matmul(xp.data.data(), w.data.data(), z.data.data(), m * n, p, q);
    DenseTensor zp = permute(reshape(std::move(z), {m, n, q}), std::span<const int>(swap_last));
    return reshape(std::move(zp), {m, q * n});
}

std::pair<DenseTensor, DenseTensor> stp_mat_backward(const DenseTensor& x,
                                                     const DenseTensor& w,
                                                     const DenseTensor& dy) {
    const int64_t m = x.dim(1), cols = x.dim(2), p = w.dim(1), q = w.dim(2);
    const int64_t n = cols / p;
    if (dy.order() != 2 || dy.dim(1) != m || dy.dim(2) != q * n)
        throw std::invalid_argument("stp_mat_backward: gradient shape " + shape_string(dy.dims) +
                                    " does not match output");
    static constexpr int swap_last[3] = {0, 2, 1};
    DenseTensor xp = permute(reshape(x, {m, p, n}), std::span<const int>(swap_last));
    DenseTensor dyp = permute(reshape(dy, {m, q, n}), std::span<const int>(swap_last));
    DenseTensor dy_mat = reshape(std::move(dyp), {m * n, q});
    DenseTensor dx_mat = DenseTensor::zeros({m * n, p});
    kernels::matmul_nt(dy_mat.data.data(), w.data.data(), dx_mat.data.data(), m * n, q, p);
    DenseTensor dxp = permute(reshape(std::move(dx_mat), {m, n, p}), std::span<const int>(swap_last));
    DenseTensor dx = reshape(std::move(dxp), {m, cols});
    DenseTensor dw = DenseTensor::zeros({p, q});
    kernels::matmul_tn(xp.data.data(), dy_mat.data.data(), dw.data.data(), p, m * n, q);
    return {std::move(dx), std::move(dw)};
}

DenseTensor stp_oracle_kron(const DenseTensor& x, const DenseTensor& w) {
    const bool vec_x = (x.order() == 1);
    if (!vec_x && x.order() != 2)
        throw std::invalid_argument("stp_oracle_kron: left operand must be a vector or matrix");
    const int64_t m = vec_x ? 1 : x.dim(1);
    const int64_t cols = vec_x ? x.dim(1) : x.dim(2);
    const bool vec_w = (w.order() == 1);
    if (!vec_w && w.order() != 2)
        throw std::invalid_argument("stp_oracle_kron: right operand must be a vector or matrix");
    const int64_t p = w.dim(1);
    const int64_t q = vec_w ? 1 : w.dim(2);
    if (p <= 0 || cols % p != 0)
        throw std::invalid_argument("stp_oracle_kron: incompatible operand sizes");
    const int64_t n = cols / p;
    // K = W kron I_n, built explicitly.
    std::vector<double> k(static_cast<size_t>(p * n * q * n), 0.0);
    for (int64_t pp = 0; pp < p; ++pp)
        for (int64_t qq = 0; qq < q; ++qq)
            for (int64_t i = 0; i < n; ++i)
                k[static_cast<size_t>((pp * n + i) * (q * n) + (qq * n + i))] =
                    w.data[static_cast<size_t>(pp * q + qq)];
    std::vector<double> y(static_cast<size_t>(m * q * n), 0.0);
    for (int64_t r = 0; r < m; ++r)
        for (int64_t c = 0; c < q * n; ++c) {
            double acc = 0.0;
            for (int64_t s = 0; s < cols; ++s)
                acc += x.data[static_cast<size_t>(r * cols + s)] * k[static_cast<size_t>(s * (q * n) + c)];
            y[static_cast<size_t>(r * (q * n) + c)] = acc;
        }
    if (vec_x && vec_w) return DenseTensor({n}, std::move(y));
    if (vec_x) return DenseTensor({q * n}, std::move(y));
    return DenseTensor({m, q * n}, std::move(y));
}

DenseTensor semi_mode_n(const DenseTensor& g, const SemiCore& a, int n) {
    if (a.order() != 2) throw std::invalid_argument("semi_mode_n: factor must be a matrix");
    if (n < 1 || n > g.order()) throw std::out_of_range("semi_mode_n: mode index out of range");
    const int64_t rn = g.dim(n), rows = a.stored_dim(1), cols = a.stored_dim(2);
    if (rows <= 0 || rn % rows != 0)
        throw std::invalid_argument("semi_mode_n: mode size " + std::to_string(rn) +
                                    " is not a multiple of factor rows " + std::to_string(rows));
    const int64_t t = rn / rows;
    if (t != 1 && t != a.ratio)
        throw std::invalid_argument("semi_mode_n: link ratio " + std::to_string(t) +
                                    " incompatible with factor ratio " + std::to_string(a.ratio));
    static constexpr int swap[2] = {1, 0};
    DenseTensor gt = permute(unfold(g, n), std::span<const int>(swap));
    DenseTensor yt = stp_mat(gt, a.tensor);
    DenseTensor y = permute(yt, std::span<const int>(swap));
    std::vector<int64_t> out_dims = g.dims;
    out_dims[static_cast<size_t>(n - 1)] = t * cols;
    return fold(y, n, out_dims);
}

std::pair<DenseTensor, DenseTensor> semi_mode_n_backward(const DenseTensor& g, const SemiCore& a,
                                                         int n, const DenseTensor& dout) {
    const int64_t rn = g.dim(n), rows = a.stored_dim(1), cols = a.stored_dim(2);
    const int64_t t = rn / rows;
    std::vector<int64_t> out_dims = g.dims;
    out_dims[static_cast<size_t>(n - 1)] = t * cols;
    if (dout.dims != out_dims)
        throw std::invalid_argument("semi_mode_n_backward: gradient shape " +
                                    shape_string(dout.dims) + " does not match output " +
                                    shape_string(out_dims));
    static constexpr int swap[2] = {1, 0};
    DenseTensor gt = permute(unfold(g, n), std::span<const int>(swap));
    DenseTensor dyt = permute(unfold(dout, n), std::span<const int>(swap));
    auto [dgt, da] = stp_mat_backward(gt, a.tensor, dyt);
    DenseTensor dgu = permute(dgt, std::span<const int>(swap));
    return {fold(dgu, n, g.dims), std::move(da)};
}

namespace {

// Fully resolved layout of one semi contraction. The left operand's linked
// mode splits into (P major, t minor); (P, shared...) contracts as one matmul
// group and the size-t residual merges into the chosen right-side mode.
struct ContractPlan {
    int64_t t_link = 1;
    int64_t p = 1;
    std::vector<int> x_keep;  // 0-based kept modes of X, in order
    std::vector<int> y_keep;  // 0-based kept modes of Y, in order
    int residual_slot = -1;   // index into y_keep taking the residual
    std::vector<int> x_perm;  // on split X: (x_keep..., t, P, shared...)
    std::vector<int> y_perm;  // on Y: (mode_y, shared..., y_keep...)
    std::vector<int64_t> x_split_dims;
    int64_t m_rows = 1, k_inner = 1, n_cols = 1;
    std::vector<int64_t> z_pre_dims;  // (x_keep..., t, y_keep...)
    std::vector<int> z_perm;          // moves t directly after the residual slot
    std::vector<int64_t> out_dims;
    std::vector<bool> out_flags;
    int out_ratio = 1;
};

ContractPlan make_plan(const SemiCore& x, const SemiCore& y, const SemiContractSpec& spec) {
    const int nx = x.order(), ny = y.order();
    auto check_mode = [](int m, int order, const char* side) {
        if (m < 1 || m > order)
            throw std::out_of_range(std::string("semi_contract: mode index out of range on the ") +
                                    side + " operand");
    };
    check_mode(spec.mode_x, nx, "left");
    check_mode(spec.mode_y, ny, "right");
    std::vector<bool> used_x(static_cast<size_t>(nx), false), used_y(static_cast<size_t>(ny), false);
    used_x[static_cast<size_t>(spec.mode_x - 1)] = true;
    used_y[static_cast<size_t>(spec.mode_y - 1)] = true;
    for (auto [sx, sy] : spec.shared) {
        check_mode(sx, nx, "left");
        check_mode(sy, ny, "right");
        if (used_x[static_cast<size_t>(sx - 1)] || used_y[static_cast<size_t>(sy - 1)])
            throw std::invalid_argument("semi_contract: mode used twice in contraction spec");
        used_x[static_cast<size_t>(sx - 1)] = true;
        used_y[static_cast<size_t>(sy - 1)] = true;
        if (x.stored_dim(sx) != y.stored_dim(sy) || x.logical_dim(sx) != y.logical_dim(sy))
            throw std::invalid_argument("semi_contract: shared modes disagree, " +
                                        std::to_string(x.stored_dim(sx)) + " vs " +
                                        std::to_string(y.stored_dim(sy)));
    }

    ContractPlan pl;
    pl.out_ratio = std::max(x.ratio, y.ratio);
    pl.p = y.stored_dim(spec.mode_y);
    const int64_t da = x.stored_dim(spec.mode_x);
    if (pl.p <= 0 || da % pl.p != 0)
        throw std::invalid_argument("semi_contract: linked mode size " + std::to_string(da) +
                                    " is not a multiple of " + std::to_string(pl.p));
    pl.t_link = da / pl.p;
    if (pl.t_link != 1 && pl.t_link != pl.out_ratio)
        throw std::invalid_argument("semi_contract: link ratio " + std::to_string(pl.t_link) +
                                    " incompatible with operand ratio " +
                                    std::to_string(pl.out_ratio));

    for (int i = 0; i < nx; ++i)
        if (!used_x[static_cast<size_t>(i)]) pl.x_keep.push_back(i);
    for (int i = 0; i < ny; ++i)
        if (!used_y[static_cast<size_t>(i)]) pl.y_keep.push_back(i);

    if (pl.t_link > 1) {
        if (pl.y_keep.empty())
            throw std::invalid_argument(
                "semi_contract: residual of size " + std::to_string(pl.t_link) +
                " but the right operand has no remaining mode to take it");
        pl.residual_slot = 0;
        for (size_t i = 0; i < pl.y_keep.size(); ++i)
            if (y.deficient[static_cast<size_t>(pl.y_keep[i])]) {
                pl.residual_slot = static_cast<int>(i);
                break;
            }
        if (detail::corrupt_residual_rule)
            pl.residual_slot = static_cast<int>(pl.y_keep.size()) - 1;
    }

    // Split X at the linked mode: P lands at mode_x-1, t at mode_x (0-based).
    auto split_pos = [&](int orig) { return orig < spec.mode_x - 1 ? orig : orig + 1; };
    pl.x_split_dims = x.tensor.dims;
    pl.x_split_dims[static_cast<size_t>(spec.mode_x - 1)] = pl.p;
    pl.x_split_dims.insert(pl.x_split_dims.begin() + spec.mode_x, pl.t_link);
    for (int m : pl.x_keep) pl.x_perm.push_back(split_pos(m));
    pl.x_perm.push_back(spec.mode_x);
    pl.x_perm.push_back(spec.mode_x - 1);
    for (auto [sx, sy] : spec.shared) {
        (void)sy;
        pl.x_perm.push_back(split_pos(sx - 1));
    }

    pl.y_perm.push_back(spec.mode_y - 1);
    for (auto [sx, sy] : spec.shared) {
        (void)sx;
        pl.y_perm.push_back(sy - 1);
    }
    for (int m : pl.y_keep) pl.y_perm.push_back(m);

    pl.m_rows = pl.t_link;
    for (int m : pl.x_keep) pl.m_rows *= x.stored_dim(m + 1);
    pl.k_inner = pl.p;
    for (auto [sx, sy] : spec.shared) {
        (void)sy;
        pl.k_inner *= x.stored_dim(sx);
    }
    pl.n_cols = 1;
    for (int m : pl.y_keep) pl.n_cols *= y.stored_dim(m + 1);

    for (int m : pl.x_keep) pl.z_pre_dims.push_back(x.stored_dim(m + 1));
    pl.z_pre_dims.push_back(pl.t_link);
    for (int m : pl.y_keep) pl.z_pre_dims.push_back(y.stored_dim(m + 1));

    const int nk = static_cast<int>(pl.x_keep.size());
    if (pl.t_link > 1) {
        // (x_keep..., t, y_keep...) -> (x_keep..., y_keep[0..r], t, y_keep[r+1..])
        for (int i = 0; i < nk; ++i) pl.z_perm.push_back(i);
        for (int i = 0; i <= pl.residual_slot; ++i) pl.z_perm.push_back(nk + 1 + i);
        pl.z_perm.push_back(nk);
        for (int i = pl.residual_slot + 1; i < static_cast<int>(pl.y_keep.size()); ++i)
            pl.z_perm.push_back(nk + 1 + i);
    }

    for (int m : pl.x_keep) {
        pl.out_dims.push_back(x.stored_dim(m + 1));
        pl.out_flags.push_back(x.deficient[static_cast<size_t>(m)]);
    }
    for (size_t i = 0; i < pl.y_keep.size(); ++i) {
        int64_t d = y.stored_dim(pl.y_keep[i] + 1);
        bool flag = y.deficient[static_cast<size_t>(pl.y_keep[i])];
        if (pl.t_link > 1 && static_cast<int>(i) == pl.residual_slot) {
            d *= pl.t_link;
            flag = false;
        }
        pl.out_dims.push_back(d);
        pl.out_flags.push_back(flag);
    }
    if (pl.out_dims.empty()) {
        pl.out_dims.push_back(1);
        pl.out_flags.push_back(false);
    }
    return pl;
}

}  // namespace

SemiCore semi_contract_general(const SemiCore& x, const SemiCore& y,
                               const SemiContractSpec& spec) {
    ContractPlan pl = make_plan(x, y, spec);
    DenseTensor xs = split_mode(x.tensor, spec.mode_x, pl.t_link);
    DenseTensor xp = permute(xs, pl.x_perm);
    DenseTensor yp = permute(y.tensor, pl.y_perm);
    DenseTensor z = DenseTensor::zeros({pl.m_rows, pl.n_cols});
    kernels::matmul(xp.data.data(), yp.data.data(), z.data.data(), pl.m_rows, pl.k_inner,
                    pl.n_cols);
    DenseTensor zt = reshape(std::move(z), pl.z_pre_dims);
    if (pl.t_link > 1) zt = permute(zt, pl.z_perm);
    return SemiCore(reshape(std::move(zt), pl.out_dims), pl.out_ratio, pl.out_flags);
}

SemiCore semi_contract(const SemiCore& x, int mode_x, const SemiCore& y, int mode_y) {
    return semi_contract_general(x, y, SemiContractSpec{mode_x, mode_y, {}});
}

std::pair<DenseTensor, DenseTensor> semi_contract_general_backward(const SemiCore& x,
                                                                   const SemiCore& y,
                                                                   const SemiContractSpec& spec,
                                                                   const DenseTensor& dz) {
    ContractPlan pl = make_plan(x, y, spec);
    if (dz.dims != pl.out_dims)
        throw std::invalid_argument("semi_contract backward: gradient shape " +
                                    shape_string(dz.dims) + " does not match output " +
                                    shape_string(pl.out_dims));
    DenseTensor dzp{};
    if (pl.t_link > 1) {
        std::vector<int64_t> permed(pl.z_pre_dims.size());
        for (size_t i = 0; i < permed.size(); ++i)
            permed[i] = pl.z_pre_dims[static_cast<size_t>(pl.z_perm[i])];
        dzp = permute(reshape(dz, permed), inverse_perm(pl.z_perm));
    } else {
        dzp = reshape(dz, pl.z_pre_dims);
    }
    DenseTensor dz_mat = reshape(std::move(dzp), {pl.m_rows, pl.n_cols});

    DenseTensor xs = split_mode(x.tensor, spec.mode_x, pl.t_link);
    DenseTensor xp = permute(xs, pl.x_perm);
    DenseTensor yp = permute(y.tensor, pl.y_perm);

    DenseTensor dx_mat = DenseTensor::zeros({pl.m_rows, pl.k_inner});
    kernels::matmul_nt(dz_mat.data.data(), yp.data.data(), dx_mat.data.data(), pl.m_rows,
                       pl.n_cols, pl.k_inner);
    DenseTensor dxp = reshape(std::move(dx_mat), xp.dims);
    DenseTensor dxs = permute(dxp, inverse_perm(pl.x_perm));
    DenseTensor dx = reshape(std::move(dxs), x.tensor.dims);

    DenseTensor dy_mat = DenseTensor::zeros({pl.k_inner, pl.n_cols});
    kernels::matmul_tn(xp.data.data(), dz_mat.data.data(), dy_mat.data.data(), pl.k_inner,
                       pl.m_rows, pl.n_cols);
    DenseTensor dyp = reshape(std::move(dy_mat), yp.dims);
    DenseTensor dy = permute(dyp, inverse_perm(pl.y_perm));
    return {std::move(dx), std::move(dy)};
}

SemiCore ring_close(const SemiCore& chain) {
    const int k = chain.order();
    if (k < 2) throw std::invalid_argument("ring_close: chain of order >= 2 required");
    const int64_t sf = chain.stored_dim(1), sl = chain.stored_dim(k);
    if (sf <= 0 || sl % sf != 0)
        throw std::invalid_argument("ring_close: boundary sizes " + std::to_string(sf) + " and " +
                                    std::to_string(sl) + " are incompatible");
    const int64_t t = sl / sf;
    if (t != 1 && t != chain.ratio)
        throw std::invalid_argument("ring_close: link ratio " + std::to_string(t) +
                                    " incompatible with chain ratio " +
                                    std::to_string(chain.ratio));
    if (t == 1) {
        DenseTensor traced = diag_contract(chain.tensor, {{1, k}});
        std::vector<bool> flags(chain.deficient.begin() + 1, chain.deficient.end() - 1);
        if (flags.empty()) flags.push_back(false);
        return SemiCore(std::move(traced), chain.ratio, std::move(flags));
    }
    if (k < 3)
        throw std::invalid_argument("ring_close: residual of size " + std::to_string(t) +
                                    " but no interior mode to take it");
    // Split the last mode into (sf major, t minor), trace the major part
    // against mode 1; interior modes and the residual survive in order.
    DenseTensor split = split_mode(chain.tensor, k, t);
    DenseTensor traced = diag_contract(split, {{1, k}});  // (mid..., t)
    const int nmid = k - 2;
    int slot = 0;
    for (int i = 0; i < nmid; ++i)
        if (chain.deficient[static_cast<size_t>(i + 1)]) {
            slot = i;
            break;
        }
    if (detail::corrupt_residual_rule) slot = nmid - 1;
    std::vector<int> perm;
    for (int i = 0; i <= slot; ++i) perm.push_back(i);
    perm.push_back(nmid);
    for (int i = slot + 1; i < nmid; ++i) perm.push_back(i);
    DenseTensor moved = permute(traced, perm);
    std::vector<int64_t> out_dims;
    std::vector<bool> out_flags;
    for (int i = 0; i < nmid; ++i) {
        int64_t d = chain.stored_dim(i + 2);
        bool flag = chain.deficient[static_cast<size_t>(i + 1)];
        if (i == slot) {
            d *= t;
            flag = false;
        }
        out_dims.push_back(d);
        out_flags.push_back(flag);
    }
    return SemiCore(reshape(std::move(moved), out_dims), chain.ratio, std::move(out_flags));
}

}  // namespace stpn
