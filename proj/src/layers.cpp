#include "stpn/layers.hpp"

#include <stdexcept>
#include <string>
#include <utility>

#include "stpn/kernels.hpp"
#include "stpn/stp.hpp"
#include "stpn/tensor_ops.hpp"

namespace stpn {

namespace {

int64_t product_of(const std::vector<int64_t>& dims) {
    int64_t p = 1;
    for (int64_t d : dims) p *= d;
    return p;
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

// Bias covers exactly the trailing modes of y.
void check_trailing_bias(const DenseTensor& y, const DenseTensor& bias) {
    require(bias.order() <= y.order(), "bias has more modes than the output");
    const int off = y.order() - bias.order();
    for (int i = 1; i <= bias.order(); ++i)
        require(y.dim(off + i) == bias.dim(i), "bias shape does not match the output");
}

void add_trailing_bias(DenseTensor& y, const DenseTensor& bias) {
    check_trailing_bias(y, bias);
    const int64_t p = bias.numel();
    for (int64_t i = 0; i < y.numel(); ++i) y.data[static_cast<size_t>(i)] +=
        bias.data[static_cast<size_t>(i % p)];
}

DenseTensor trailing_bias_grad(const DenseTensor& dy, const DenseTensor& bias) {
    check_trailing_bias(dy, bias);
    DenseTensor db = DenseTensor::zeros(bias.dims);
    const int64_t p = bias.numel();
    for (int64_t i = 0; i < dy.numel(); ++i)
        db.data[static_cast<size_t>(i % p)] += dy.data[static_cast<size_t>(i)];
    return db;
}

// X carries n_lead leading modes then the layer's logical input dims; the
// merged input chain is (rank, D_1, D_2, ..., D_N, rank). D_1 is the semi
// link, the rest contract classically.
SemiContractSpec ring_in_spec(int n_lead, int n_dims) {
    SemiContractSpec s{n_lead + 1, 2, {}};
    for (int k = 2; k <= n_dims; ++k) s.shared.push_back({n_lead + k, k + 1});
    return s;
}

void check_layer_input(const DenseTensor& x, const FactorizedWeight& w, int n_lead) {
    const auto n = static_cast<int>(w.input_dims.size());
    require(x.order() == n_lead + n, "input order does not match the layer");
    for (int i = 0; i < n; ++i)
        require(x.dim(n_lead + 1 + i) == w.input_dims[static_cast<size_t>(i)],
                "input dims do not match the layer");
}

void check_format(const FactorizedWeight& w, Format a, Format b, LayerKind kind,
                  const char* which) {
    require((w.format == a || w.format == b) && w.kind == kind,
            std::string(which) + ": wrong factorization format for this layer");
}

}  // namespace

DenseTensor dense_forward(const DenseTensor& x, const DenseTensor& w, const DenseTensor& b) {
    require(x.order() == 2 && w.order() == 2, "dense: matrices required");
    const int64_t bs = x.dim(1), in = x.dim(2), out = w.dim(1);
    require(w.dim(2) == in, "dense: weight shape mismatch");
    require(b.numel() == out, "dense: bias shape mismatch");
    DenseTensor y = DenseTensor::zeros({bs, out});
    kernels::matmul_nt(x.data.data(), w.data.data(), y.data.data(), bs, in, out);
    add_trailing_bias(y, b);
    return y;
}

DenseGrads dense_backward(const DenseTensor& x, const DenseTensor& w, const DenseTensor& dy) {
    const int64_t bs = x.dim(1), in = x.dim(2), out = w.dim(1);
    require(dy.order() == 2 && dy.dim(1) == bs && dy.dim(2) == out, "dense: bad upstream shape");
    DenseGrads g;
    g.dx = DenseTensor::zeros({bs, in});
    kernels::matmul(dy.data.data(), w.data.data(), g.dx.data.data(), bs, out, in);
    g.dw = DenseTensor::zeros({out, in});
    kernels::matmul_tn(dy.data.data(), x.data.data(), g.dw.data.data(), out, bs, in);
    g.db = trailing_bias_grad(dy, DenseTensor::zeros({out}));
    return g;
}

DenseTensor stp_dense_forward(const DenseTensor& x, const DenseTensor& w, const DenseTensor& b) {
    DenseTensor y = stp_mat(x, w);
    add_trailing_bias(y, b);
    return y;
}

DenseGrads stp_dense_backward(const DenseTensor& x, const DenseTensor& w, const DenseTensor& dy) {
    auto [dx, dw] = stp_mat_backward(x, w, dy);
    DenseGrads g;
    g.dx = std::move(dx);
    g.dw = std::move(dw);
    g.db = trailing_bias_grad(dy, DenseTensor::zeros({dy.dim(2)}));
    return g;
}

namespace {

// Permutation sending W (O_1..O_M, I_1..I_N) to (I..., O...).
std::vector<int> regression_perm(int n_in, int n_out) {
    std::vector<int> perm(static_cast<size_t>(n_in + n_out));
    for (int i = 0; i < n_in; ++i) perm[static_cast<size_t>(i)] = n_out + i;
    for (int o = 0; o < n_out; ++o) perm[static_cast<size_t>(n_in + o)] = o;
    return perm;
}

}  // namespace

DenseTensor tensor_regression_forward(const DenseTensor& x, const DenseTensor& w,
                                      const DenseTensor& bias) {
    const int n = x.order() - 1;
    const int m = w.order() - n;
    require(n >= 1 && m >= 1, "tensor_regression: shape mismatch");
    for (int i = 1; i <= n; ++i)
        require(w.dim(m + i) == x.dim(1 + i), "tensor_regression: weight/input mismatch");
    DenseTensor y = contract(x, permute(w, regression_perm(n, m)), n);
    add_trailing_bias(y, bias);
    return y;
}

DenseGrads tensor_regression_backward(const DenseTensor& x, const DenseTensor& w,
                                      const DenseTensor& dy) {
    const int n = x.order() - 1;
    const int m = w.order() - n;
    const std::vector<int> perm = regression_perm(n, m);
    DenseTensor wp = permute(w, perm);
    auto [dx, dwp] = contract_backward(x, wp, n, dy);
    DenseGrads g;
    g.dx = std::move(dx);
    g.dw = permute(dwp, inverse_perm(perm));
    std::vector<int64_t> bias_dims(dy.dims.begin() + 1, dy.dims.end());
    g.db = trailing_bias_grad(dy, DenseTensor::zeros(bias_dims));
    return g;
}

DenseTensor str_fcl_forward(const DenseTensor& x, const FactorizedWeight& w,
                            const DenseTensor& bias) {
    check_format(w, Format::TR, Format::STR, LayerKind::Fcl, "str_fcl");
    check_layer_input(x, w, 1);
    const auto n = static_cast<int>(w.input_dims.size());
    const MergedChains mc = merged_chains(w, MergeStrategy::Sequential);
    const SemiCore y = semi_contract_general(SemiCore(x), mc.in, ring_in_spec(1, n));
    const SemiCore z = semi_contract_general(y, *mc.out, SemiContractSpec{3, 1, {}});
    DenseTensor out = diag_contract(z.tensor, {{2, z.order()}});
    add_trailing_bias(out, bias);
    return out;
}

FactorGrads str_fcl_backward(const DenseTensor& x, const FactorizedWeight& w,
                             const DenseTensor& bias, const DenseTensor& dy) {
    check_format(w, Format::TR, Format::STR, LayerKind::Fcl, "str_fcl");
    const auto n = static_cast<int>(w.input_dims.size());
    const MergedChains mc = merged_chains(w, MergeStrategy::Sequential);
    const SemiContractSpec s_in = ring_in_spec(1, n);
    const SemiContractSpec s_out{3, 1, {}};
    const SemiCore xs(x);
    const SemiCore y = semi_contract_general(xs, mc.in, s_in);
    const SemiCore z = semi_contract_general(y, *mc.out, s_out);

    FactorGrads g;
    g.dbias = trailing_bias_grad(dy, bias);
    const DenseTensor dz = diag_contract_backward(z.tensor, {{2, z.order()}}, dy);
    auto [dyy, d_out_chain] = semi_contract_general_backward(y, *mc.out, s_out, dz);
    auto [dx, d_in_chain] = semi_contract_general_backward(xs, mc.in, s_in, dyy);
    g.dx = std::move(dx);
    g.dcores = merged_chains_backward(w, d_in_chain, d_out_chain);
    return g;
}

DenseTensor stt_fcl_forward(const DenseTensor& x, const FactorizedWeight& w,
                            const DenseTensor& bias) {
    check_format(w, Format::TTvec, Format::STTvec, LayerKind::Fcl, "stt_fcl");
    check_layer_input(x, w, 1);
    const auto n = static_cast<int>(w.input_dims.size());
    const MergedChains mc = merged_chains(w, MergeStrategy::Sequential);
    const DenseTensor y = contract(x, mc.in.tensor, n);
    DenseTensor out = stp_mat(y, w.cores.back().tensor);
    add_trailing_bias(out, bias);
    return out;
}

FactorGrads stt_fcl_backward(const DenseTensor& x, const FactorizedWeight& w,
                             const DenseTensor& bias, const DenseTensor& dy) {
    check_format(w, Format::TTvec, Format::STTvec, LayerKind::Fcl, "stt_fcl");
    const auto n = static_cast<int>(w.input_dims.size());
    const MergedChains mc = merged_chains(w, MergeStrategy::Sequential);
    const DenseTensor y = contract(x, mc.in.tensor, n);

    FactorGrads g;
    g.dbias = trailing_bias_grad(dy, bias);
    auto [dyy, d_factor] = stp_mat_backward(y, w.cores.back().tensor, dy);
    auto [dx, d_chain] = contract_backward(x, mc.in.tensor, n, dyy);
    g.dx = std::move(dx);
    g.dcores = merged_chains_backward(w, d_chain, std::nullopt);
    g.dcores.push_back(std::move(d_factor));
    return g;
}

namespace {

// Permutation sending the Tucker core (R_o1..R_oM, R_i1..R_iN) to
// (R_i..., R_o...) for the classical middle contraction.
std::vector<int> tucker_core_perm(int n_in, int n_out) {
    return regression_perm(n_in, n_out);
}

}  // namespace

DenseTensor sttu_fcl_forward(const DenseTensor& x, const FactorizedWeight& w,
                             const DenseTensor& bias) {
    check_format(w, Format::Tucker, Format::STTu, LayerKind::Fcl, "sttu_fcl");
    check_layer_input(x, w, 1);
    const auto n = static_cast<int>(w.input_dims.size());
    const auto m = static_cast<int>(w.output_dims.size());
    SemiCore z(x);
    for (int k = 0; k < n; ++k)
        z = semi_contract(z, 2, w.cores[static_cast<size_t>(1 + m + k)], 2);
    const DenseTensor gp = permute(w.cores[0].tensor, tucker_core_perm(n, m));
    SemiCore ys{contract(z.tensor, gp, n)};
    for (int k = 0; k < m; ++k)
        ys = semi_contract(ys, 2, w.cores[static_cast<size_t>(1 + k)], 1);
    DenseTensor out = std::move(ys.tensor);
    add_trailing_bias(out, bias);
    return out;
}

FactorGrads sttu_fcl_backward(const DenseTensor& x, const FactorizedWeight& w,
                              const DenseTensor& bias, const DenseTensor& dy) {
    check_format(w, Format::Tucker, Format::STTu, LayerKind::Fcl, "sttu_fcl");
    const auto n = static_cast<int>(w.input_dims.size());
    const auto m = static_cast<int>(w.output_dims.size());
    const SemiContractSpec in_spec{2, 2, {}};
    const SemiContractSpec out_spec{2, 1, {}};

    std::vector<SemiCore> z_at;  // operand before each input projection
    z_at.emplace_back(x);
    for (int k = 0; k < n; ++k)
        z_at.push_back(semi_contract(z_at.back(), 2, w.cores[static_cast<size_t>(1 + m + k)], 2));
    const std::vector<int> perm = tucker_core_perm(n, m);
    const DenseTensor gp = permute(w.cores[0].tensor, perm);
    std::vector<SemiCore> y_at;  // operand before each output projection
    y_at.emplace_back(contract(z_at.back().tensor, gp, n));
    for (int k = 0; k < m; ++k)
        y_at.push_back(semi_contract(y_at.back(), 2, w.cores[static_cast<size_t>(1 + k)], 1));

    FactorGrads g;
    g.dbias = trailing_bias_grad(dy, bias);
    std::vector<DenseTensor> d_out_factors(static_cast<size_t>(m));
    DenseTensor up = dy;
    for (int k = m; k-- > 0;) {
        auto [dl, dr] = semi_contract_general_backward(
            y_at[static_cast<size_t>(k)], w.cores[static_cast<size_t>(1 + k)], out_spec, up);
        d_out_factors[static_cast<size_t>(k)] = std::move(dr);
        up = std::move(dl);
    }
    auto [d_z, d_gp] = contract_backward(z_at.back().tensor, gp, n, up);
    DenseTensor d_core = permute(d_gp, inverse_perm(perm));
    std::vector<DenseTensor> d_in_factors(static_cast<size_t>(n));
    up = std::move(d_z);
    for (int k = n; k-- > 0;) {
        auto [dl, dr] = semi_contract_general_backward(
            z_at[static_cast<size_t>(k)], w.cores[static_cast<size_t>(1 + m + k)], in_spec, up);
        d_in_factors[static_cast<size_t>(k)] = std::move(dr);
        up = std::move(dl);
    }
    g.dx = std::move(up);
    g.dcores.push_back(std::move(d_core));
    for (DenseTensor& d : d_out_factors) g.dcores.push_back(std::move(d));
    for (DenseTensor& d : d_in_factors) g.dcores.push_back(std::move(d));
    return g;
}

namespace {

// Gather the (H, W, C) slice of t (B, H, W, J, C) at fixed (b, j).
DenseTensor gather_hwc(const DenseTensor& t, int64_t b, int64_t j) {
    const int64_t h = t.dim(2), w = t.dim(3), jn = t.dim(4), c = t.dim(5);
    DenseTensor s = DenseTensor::zeros({h, w, c});
    for (int64_t i = 0; i < h; ++i)
        for (int64_t k = 0; k < w; ++k) {
            const int64_t base = (((b * h + i) * w + k) * jn + j) * c;
            const int64_t dst = (i * w + k) * c;
            for (int64_t q = 0; q < c; ++q)
                s.data[static_cast<size_t>(dst + q)] = t.data[static_cast<size_t>(base + q)];
        }
    return s;
}

// Scatter-add an (H, W, C) slice into t (B, H, W, J, C) at fixed (b, j).
void scatter_hwc(DenseTensor& t, int64_t b, int64_t j, const DenseTensor& s) {
    const int64_t h = t.dim(2), w = t.dim(3), jn = t.dim(4), c = t.dim(5);
    for (int64_t i = 0; i < h; ++i)
        for (int64_t k = 0; k < w; ++k) {
            const int64_t base = (((b * h + i) * w + k) * jn + j) * c;
            const int64_t src = (i * w + k) * c;
            for (int64_t q = 0; q < c; ++q)
                t.data[static_cast<size_t>(base + q)] += s.data[static_cast<size_t>(src + q)];
        }
}

void accumulate(DenseTensor& into, const DenseTensor& from) {
    for (size_t i = 0; i < into.data.size(); ++i) into.data[i] += from.data[i];
}

}  // namespace

DenseTensor str_conv_forward(const DenseTensor& x, const FactorizedWeight& w, int64_t stride,
                             int64_t pad, const DenseTensor& bias) {
    check_format(w, Format::TR, Format::STR, LayerKind::Conv, "str_conv");
    check_layer_input(x, w, 3);
    const auto n = static_cast<int>(w.input_dims.size());
    const DenseTensor& c = *w.conv_kernel;
    const MergedChains mc = merged_chains(w, MergeStrategy::Sequential);
    const SemiCore y1 = semi_contract_general(SemiCore(x), mc.in, ring_in_spec(3, n));
    const int64_t bs = x.dim(1), r = w.rank;
    const int64_t ho = conv_out_size(x.dim(2), c.dim(1), stride, pad);
    const int64_t wo = conv_out_size(x.dim(3), c.dim(2), stride, pad);
    DenseTensor y2 = DenseTensor::zeros({bs, ho, wo, r, r});
    for (int64_t b = 0; b < bs; ++b)
        for (int64_t ra = 0; ra < r; ++ra) {
            const DenseTensor slice = gather_hwc(y1.tensor, b, ra);
            scatter_hwc(y2, b, ra, conv2d(slice, c, stride, pad));
        }
    const SemiCore z = semi_contract_general(SemiCore(y2), *mc.out, SemiContractSpec{5, 1, {}});
    DenseTensor out = diag_contract(z.tensor, {{4, z.order()}});
    add_trailing_bias(out, bias);
    return out;
}

FactorGrads str_conv_backward(const DenseTensor& x, const FactorizedWeight& w, int64_t stride,
                              int64_t pad, const DenseTensor& bias, const DenseTensor& dy) {
    check_format(w, Format::TR, Format::STR, LayerKind::Conv, "str_conv");
    const auto n = static_cast<int>(w.input_dims.size());
    const DenseTensor& c = *w.conv_kernel;
    const MergedChains mc = merged_chains(w, MergeStrategy::Sequential);
    const SemiContractSpec s_in = ring_in_spec(3, n);
    const SemiContractSpec s_out{5, 1, {}};
    const SemiCore xs(x);
    const SemiCore y1 = semi_contract_general(xs, mc.in, s_in);
    const int64_t bs = x.dim(1), r = w.rank;
    const int64_t ho = conv_out_size(x.dim(2), c.dim(1), stride, pad);
    const int64_t wo = conv_out_size(x.dim(3), c.dim(2), stride, pad);
    DenseTensor y2 = DenseTensor::zeros({bs, ho, wo, r, r});
    for (int64_t b = 0; b < bs; ++b)
        for (int64_t ra = 0; ra < r; ++ra) {
            const DenseTensor slice = gather_hwc(y1.tensor, b, ra);
            scatter_hwc(y2, b, ra, conv2d(slice, c, stride, pad));
        }
    const SemiCore y2s(y2);
    const SemiCore z = semi_contract_general(y2s, *mc.out, s_out);

    FactorGrads g;
    g.dbias = trailing_bias_grad(dy, bias);
    const DenseTensor dz = diag_contract_backward(z.tensor, {{4, z.order()}}, dy);
    auto [d_y2, d_out_chain] = semi_contract_general_backward(y2s, *mc.out, s_out, dz);
    DenseTensor d_y1 = DenseTensor::zeros(y1.tensor.dims);
    DenseTensor d_kernel = DenseTensor::zeros(c.dims);
    const DenseTensor d_y2t = reshape(std::move(d_y2), y2.dims);
    for (int64_t b = 0; b < bs; ++b)
        for (int64_t ra = 0; ra < r; ++ra) {
            const DenseTensor slice = gather_hwc(y1.tensor, b, ra);
            const DenseTensor d_slice = gather_hwc(d_y2t, b, ra);
            auto [d_in_slice, d_kc] = conv2d_backward(slice, c, stride, pad, d_slice);
            scatter_hwc(d_y1, b, ra, d_in_slice);
            accumulate(d_kernel, d_kc);
        }
    auto [dx, d_in_chain] = semi_contract_general_backward(xs, mc.in, s_in, d_y1);
    g.dx = std::move(dx);
    g.dcores = merged_chains_backward(w, d_in_chain, d_out_chain);
    g.dkernel = std::move(d_kernel);
    return g;
}

namespace {

// Gather the (H, W, 1) plane of t (B, H, W, 1, I...) at fixed (b, flat i).
DenseTensor gather_plane(const DenseTensor& t, int64_t b, int64_t p, int64_t n_planes) {
    const int64_t h = t.dim(2), w = t.dim(3);
    DenseTensor s = DenseTensor::zeros({h, w, 1});
    for (int64_t i = 0; i < h; ++i)
        for (int64_t k = 0; k < w; ++k)
            s.data[static_cast<size_t>(i * w + k)] =
                t.data[static_cast<size_t>(((b * h + i) * w + k) * n_planes + p)];
    return s;
}

}  // namespace

DenseTensor stt_conv_forward(const DenseTensor& x, const FactorizedWeight& w, int64_t stride,
                             int64_t pad, const DenseTensor& bias) {
    check_format(w, Format::TTmat, Format::STTmat, LayerKind::Conv, "stt_conv");
    const auto n = static_cast<int>(w.input_dims.size());
    require(x.order() == 4 + n && x.dim(4) == 1, "stt_conv: input must be (B, H, W, 1, I...)");
    for (int i = 0; i < n; ++i)
        require(x.dim(5 + i) == w.input_dims[static_cast<size_t>(i)],
                "stt_conv: input dims do not match the layer");
    const DenseTensor& c = *w.conv_kernel;
    const MergedChains mc = merged_chains(w, MergeStrategy::Sequential);
    const int64_t bs = x.dim(1), r = w.rank, planes = product_of(w.input_dims);
    const int64_t ho = conv_out_size(x.dim(2), c.dim(1), stride, pad);
    const int64_t wo = conv_out_size(x.dim(3), c.dim(2), stride, pad);
    std::vector<int64_t> y1_dims = {bs, ho, wo, r};
    y1_dims.insert(y1_dims.end(), w.input_dims.begin(), w.input_dims.end());
    DenseTensor y1 = DenseTensor::zeros(y1_dims);
    for (int64_t b = 0; b < bs; ++b)
        for (int64_t p = 0; p < planes; ++p) {
            const DenseTensor ys = conv2d(gather_plane(x, b, p, planes), c, stride, pad);
            for (int64_t i = 0; i < ho; ++i)
                for (int64_t k = 0; k < wo; ++k)
                    for (int64_t q = 0; q < r; ++q)
                        y1.data[static_cast<size_t>(
                            (((b * ho + i) * wo + k) * r + q) * planes + p)] =
                            ys.data[static_cast<size_t>((i * wo + k) * r + q)];
        }
    SemiContractSpec s{4, 1, {}};
    for (int k = 1; k <= n; ++k) s.shared.push_back({4 + k, 1 + k});
    const SemiCore z = semi_contract_general(SemiCore(y1), mc.in, s);
    DenseTensor out = z.tensor;
    add_trailing_bias(out, bias);
    return out;
}

FactorGrads stt_conv_backward(const DenseTensor& x, const FactorizedWeight& w, int64_t stride,
                              int64_t pad, const DenseTensor& bias, const DenseTensor& dy) {
    check_format(w, Format::TTmat, Format::STTmat, LayerKind::Conv, "stt_conv");
    const auto n = static_cast<int>(w.input_dims.size());
    const DenseTensor& c = *w.conv_kernel;
    const MergedChains mc = merged_chains(w, MergeStrategy::Sequential);
    const int64_t bs = x.dim(1), r = w.rank, planes = product_of(w.input_dims);
    const int64_t ho = conv_out_size(x.dim(2), c.dim(1), stride, pad);
    const int64_t wo = conv_out_size(x.dim(3), c.dim(2), stride, pad);
    std::vector<int64_t> y1_dims = {bs, ho, wo, r};
    y1_dims.insert(y1_dims.end(), w.input_dims.begin(), w.input_dims.end());
    DenseTensor y1 = DenseTensor::zeros(y1_dims);
    for (int64_t b = 0; b < bs; ++b)
        for (int64_t p = 0; p < planes; ++p) {
            const DenseTensor ys = conv2d(gather_plane(x, b, p, planes), c, stride, pad);
            for (int64_t i = 0; i < ho; ++i)
                for (int64_t k = 0; k < wo; ++k)
                    for (int64_t q = 0; q < r; ++q)
                        y1.data[static_cast<size_t>(
                            (((b * ho + i) * wo + k) * r + q) * planes + p)] =
                            ys.data[static_cast<size_t>((i * wo + k) * r + q)];
        }
    SemiContractSpec s{4, 1, {}};
    for (int k = 1; k <= n; ++k) s.shared.push_back({4 + k, 1 + k});
    const SemiCore y1s(y1);

    FactorGrads g;
    g.dbias = trailing_bias_grad(dy, bias);
    auto [d_y1, d_chain] = semi_contract_general_backward(y1s, mc.in, s, dy);
    DenseTensor d_kernel = DenseTensor::zeros(c.dims);
    DenseTensor dx = DenseTensor::zeros(x.dims);
    for (int64_t b = 0; b < bs; ++b)
        for (int64_t p = 0; p < planes; ++p) {
            DenseTensor d_ys = DenseTensor::zeros({ho, wo, r});
            for (int64_t i = 0; i < ho; ++i)
                for (int64_t k = 0; k < wo; ++k)
                    for (int64_t q = 0; q < r; ++q)
                        d_ys.data[static_cast<size_t>((i * wo + k) * r + q)] =
                            d_y1.data[static_cast<size_t>(
                                (((b * ho + i) * wo + k) * r + q) * planes + p)];
            auto [d_plane, d_kc] = conv2d_backward(gather_plane(x, b, p, planes), c, stride, pad,
                                                   d_ys);
            for (int64_t i = 0; i < x.dim(2); ++i)
                for (int64_t k = 0; k < x.dim(3); ++k)
                    dx.data[static_cast<size_t>(((b * x.dim(2) + i) * x.dim(3) + k) * planes + p)] +=
                        d_plane.data[static_cast<size_t>(i * x.dim(3) + k)];
            accumulate(d_kernel, d_kc);
        }
    g.dx = std::move(dx);
    g.dcores = merged_chains_backward(w, d_chain, std::nullopt);
    g.dkernel = std::move(d_kernel);
    return g;
}

namespace {

// Contiguous (H, W, C) view copy of t (B, H, W, C) at batch b.
DenseTensor batch_slice(const DenseTensor& t, int64_t b) {
    const int64_t n = t.dim(2) * t.dim(3) * t.dim(4);
    DenseTensor s = DenseTensor::zeros({t.dim(2), t.dim(3), t.dim(4)});
    for (int64_t i = 0; i < n; ++i)
        s.data[static_cast<size_t>(i)] = t.data[static_cast<size_t>(b * n + i)];
    return s;
}

void batch_scatter(DenseTensor& t, int64_t b, const DenseTensor& s) {
    const int64_t n = t.dim(2) * t.dim(3) * t.dim(4);
    for (int64_t i = 0; i < n; ++i)
        t.data[static_cast<size_t>(b * n + i)] += s.data[static_cast<size_t>(i)];
}

}  // namespace

DenseTensor sttu_conv_forward(const DenseTensor& x, const FactorizedWeight& w, int64_t stride,
                              int64_t pad, const DenseTensor& bias) {
    check_format(w, Format::Tucker, Format::STTu, LayerKind::Conv, "sttu_conv");
    check_layer_input(x, w, 3);
    const DenseTensor& c = *w.conv_kernel;
    const DenseTensor xr = semi_mode_n(x, transpose(w.cores[0]), 4);
    const int64_t bs = x.dim(1);
    const int64_t ho = conv_out_size(x.dim(2), c.dim(1), stride, pad);
    const int64_t wo = conv_out_size(x.dim(3), c.dim(2), stride, pad);
    DenseTensor y = DenseTensor::zeros({bs, ho, wo, c.dim(4)});
    for (int64_t b = 0; b < bs; ++b)
        batch_scatter(y, b, conv2d(batch_slice(xr, b), c, stride, pad));
    DenseTensor out = semi_mode_n(y, w.cores[1], 4);
    add_trailing_bias(out, bias);
    return out;
}

FactorGrads sttu_conv_backward(const DenseTensor& x, const FactorizedWeight& w, int64_t stride,
                               int64_t pad, const DenseTensor& bias, const DenseTensor& dy) {
    check_format(w, Format::Tucker, Format::STTu, LayerKind::Conv, "sttu_conv");
    const DenseTensor& c = *w.conv_kernel;
    const SemiCore in_t = transpose(w.cores[0]);
    const DenseTensor xr = semi_mode_n(x, in_t, 4);
    const int64_t bs = x.dim(1);
    const int64_t ho = conv_out_size(x.dim(2), c.dim(1), stride, pad);
    const int64_t wo = conv_out_size(x.dim(3), c.dim(2), stride, pad);
    DenseTensor y = DenseTensor::zeros({bs, ho, wo, c.dim(4)});
    for (int64_t b = 0; b < bs; ++b)
        batch_scatter(y, b, conv2d(batch_slice(xr, b), c, stride, pad));

    FactorGrads g;
    g.dbias = trailing_bias_grad(dy, bias);
    auto [d_y, d_out_factor] = semi_mode_n_backward(y, w.cores[1], 4, dy);
    DenseTensor d_xr = DenseTensor::zeros(xr.dims);
    DenseTensor d_kernel = DenseTensor::zeros(c.dims);
    for (int64_t b = 0; b < bs; ++b) {
        auto [d_slice, d_kc] = conv2d_backward(batch_slice(xr, b), c, stride, pad,
                                               batch_slice(d_y, b));
        batch_scatter(d_xr, b, d_slice);
        accumulate(d_kernel, d_kc);
    }
    auto [dx, d_in_t] = semi_mode_n_backward(x, in_t, 4, d_xr);
    g.dx = std::move(dx);
    static constexpr int swap[2] = {1, 0};
    g.dcores.push_back(permute(d_in_t, std::span<const int>(swap)));
    g.dcores.push_back(std::move(d_out_factor));
    g.dkernel = std::move(d_kernel);
    return g;
}

}  // namespace stpn
