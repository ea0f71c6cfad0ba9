#pragma once

// Reference implementations used only by the tests. Everything here is
// written as plain loops so it shares no code path with the library
// routines it validates.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "stpn/factorized.hpp"
#include "stpn/rng.hpp"
#include "stpn/tensor.hpp"
#include "stpn/tensor_ops.hpp"

namespace oracles {

inline stpn::DenseTensor rand_tensor(stpn::Rng& rng, std::vector<int64_t> dims, double lo = -1.0,
                                     double hi = 1.0) {
    stpn::DenseTensor t = stpn::DenseTensor::zeros(std::move(dims));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

/// Visit every multi-index of dims in row-major order.
inline void for_each_index(const std::vector<int64_t>& dims,
                           const std::function<void(const std::vector<int64_t>&)>& fn) {
    std::vector<int64_t> idx(dims.size(), 0);
    while (true) {
        fn(idx);
        int m = static_cast<int>(dims.size()) - 1;
        while (m >= 0) {
            if (++idx[static_cast<size_t>(m)] < dims[static_cast<size_t>(m)]) break;
            idx[static_cast<size_t>(m)] = 0;
            --m;
        }
        if (m < 0) return;
    }
}

/// Plain triple-loop matrix product of (m x k) and (k x n).
inline stpn::DenseTensor naive_matmul(const stpn::DenseTensor& a, const stpn::DenseTensor& b) {
    const int64_t m = a.dims[0], k = a.dims[1], n = b.dims[1];
    if (b.dims[0] != k) throw std::invalid_argument("naive_matmul: inner dims");
    stpn::DenseTensor c = stpn::DenseTensor::zeros({m, n});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < k; ++p)
            for (int64_t j = 0; j < n; ++j)
                c.data[static_cast<size_t>(i * n + j)] +=
                    a.data[static_cast<size_t>(i * k + p)] * b.data[static_cast<size_t>(p * n + j)];
    return c;
}

/// Kronecker product of matrices a (p x q) and b (r x s): (pr x qs).
inline stpn::DenseTensor kron(const stpn::DenseTensor& a, const stpn::DenseTensor& b) {
    const int64_t p = a.dims[0], q = a.dims[1], r = b.dims[0], s = b.dims[1];
    stpn::DenseTensor out = stpn::DenseTensor::zeros({p * r, q * s});
    for (int64_t i = 0; i < p; ++i)
        for (int64_t j = 0; j < q; ++j)
            for (int64_t u = 0; u < r; ++u)
                for (int64_t v = 0; v < s; ++v)
                    out.data[static_cast<size_t>((i * r + u) * q * s + j * s + v)] =
                        a.data[static_cast<size_t>(i * q + j)] *
                        b.data[static_cast<size_t>(u * s + v)];
    return out;
}

inline stpn::DenseTensor identity(int64_t n) {
    stpn::DenseTensor t = stpn::DenseTensor::zeros({n, n});
    for (int64_t i = 0; i < n; ++i) t.data[static_cast<size_t>(i * n + i)] = 1.0;
    return t;
}

/// Semi product by definition: X (m x n*p) times (W kron I_n).
inline stpn::DenseTensor stp_kron(const stpn::DenseTensor& x, const stpn::DenseTensor& w) {
    const int64_t xcols = x.dims[1];
    const int64_t p = w.dims[0];
    if (xcols % p != 0) throw std::invalid_argument("stp_kron: cols not a multiple of rows");
    return naive_matmul(x, kron(w, identity(xcols / p)));
}

/// Direct convolution by quadruple loop: x (h x w x cin), k (kh x kw x cin x cout).
inline stpn::DenseTensor conv_ref(const stpn::DenseTensor& x, const stpn::DenseTensor& k,
                                  int64_t stride, int64_t pad) {
    const int64_t h = x.dims[0], w = x.dims[1], cin = x.dims[2];
    const int64_t kh = k.dims[0], kw = k.dims[1], cout = k.dims[3];
    if (k.dims[2] != cin) throw std::invalid_argument("conv_ref: channel mismatch");
    const int64_t ho = (h + 2 * pad - kh) / stride + 1;
    const int64_t wo = (w + 2 * pad - kw) / stride + 1;
    stpn::DenseTensor y = stpn::DenseTensor::zeros({ho, wo, cout});
    for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox)
            for (int64_t ky = 0; ky < kh; ++ky)
                for (int64_t kx = 0; kx < kw; ++kx) {
                    const int64_t iy = oy * stride + ky - pad;
                    const int64_t ix = ox * stride + kx - pad;
                    if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                    for (int64_t ci = 0; ci < cin; ++ci)
                        for (int64_t co = 0; co < cout; ++co)
                            y.at({oy, ox, co}) += x.at({iy, ix, ci}) *
                                                  k.at({ky, kx, ci, co});
                }
    return y;
}

/// Regression oracle with the weight stored input-modes-first:
/// y(b, o...) = sum_i w(i..., o...) x(b, i...) + bias(o...).
inline stpn::DenseTensor regress_in_first(const stpn::DenseTensor& x, const stpn::DenseTensor& w,
                                          const stpn::DenseTensor& bias) {
    const int64_t batch = x.dims[0];
    const size_t n_in = x.dims.size() - 1;
    std::vector<int64_t> in_dims(x.dims.begin() + 1, x.dims.end());
    std::vector<int64_t> out_dims(w.dims.begin() + static_cast<int64_t>(n_in), w.dims.end());
    const int64_t in_count = stpn::numel_of(in_dims);
    const int64_t out_count = stpn::numel_of(out_dims);
    std::vector<int64_t> ydims = {batch};
    ydims.insert(ydims.end(), out_dims.begin(), out_dims.end());
    stpn::DenseTensor y = stpn::DenseTensor::zeros(ydims);
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t o = 0; o < out_count; ++o) {
            double acc = bias.numel() == out_count ? bias.data[static_cast<size_t>(o)] : 0.0;
            for (int64_t i = 0; i < in_count; ++i)
                acc += w.data[static_cast<size_t>(i * out_count + o)] *
                       x.data[static_cast<size_t>(b * in_count + i)];
            y.data[static_cast<size_t>(b * out_count + o)] = acc;
        }
    return y;
}

/// Reconstructed weight permuted to input-modes-first orientation.
inline stpn::DenseTensor reconstruct_in_first(const stpn::FactorizedWeight& w) {
    stpn::DenseTensor full = stpn::reconstruct(w);
    if (w.format == stpn::Format::TR || w.format == stpn::Format::STR) return full;
    // The train and Tucker forms put output modes first; rotate them back.
    const int n_out = w.format == stpn::Format::TTvec || w.format == stpn::Format::STTvec
                          ? 1
                          : static_cast<int>(w.output_dims.size());
    const int order = full.order();
    std::vector<int> perm;
    for (int i = n_out; i < order; ++i) perm.push_back(i);
    for (int i = 0; i < n_out; ++i) perm.push_back(i);
    return stpn::permute(full, perm);
}

/// Oracle for every fully-connected family: regression on the reconstruction.
inline stpn::DenseTensor fcl_oracle(const stpn::DenseTensor& x, const stpn::FactorizedWeight& w,
                                    const stpn::DenseTensor& bias) {
    return regress_in_first(x, reconstruct_in_first(w), bias);
}

/// Oracle for every conv family: per-sample direct convolution with the
/// reconstructed (K, K, prod I, prod O) kernel, channels flattened.
inline stpn::DenseTensor conv_oracle(const stpn::DenseTensor& x, const stpn::FactorizedWeight& w,
                                     int64_t stride, int64_t pad, const stpn::DenseTensor& bias) {
    const stpn::DenseTensor kernel = stpn::reconstruct(w);
    const int64_t batch = x.dims[0], h = x.dims[1], wd = x.dims[2];
    const int64_t cin = kernel.dims[2], cout = kernel.dims[3];
    std::vector<int64_t> out_dims = w.output_dims;
    stpn::DenseTensor sample = stpn::DenseTensor::zeros({h, wd, cin});
    const int64_t ho = stpn::conv_out_size(h, kernel.dims[0], stride, pad);
    const int64_t wo = stpn::conv_out_size(wd, kernel.dims[1], stride, pad);
    std::vector<int64_t> ydims = {batch, ho, wo};
    ydims.insert(ydims.end(), out_dims.begin(), out_dims.end());
    stpn::DenseTensor y = stpn::DenseTensor::zeros(ydims);
    for (int64_t b = 0; b < batch; ++b) {
        std::copy_n(x.data.begin() + b * h * wd * cin, h * wd * cin, sample.data.begin());
        const stpn::DenseTensor conv = conv_ref(sample, kernel, stride, pad);
        for (int64_t s = 0; s < ho * wo; ++s)
            for (int64_t o = 0; o < cout; ++o)
                y.data[static_cast<size_t>((b * ho * wo + s) * cout + o)] =
                    conv.data[static_cast<size_t>(s * cout + o)] +
                    (bias.numel() == cout ? bias.data[static_cast<size_t>(o)] : 0.0);
    }
    return y;
}

}  // namespace oracles
