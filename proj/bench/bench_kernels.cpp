// Timing comparison of the parallel kernels against their serial references.
#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "stpn/kernels.hpp"
#include "stpn/rng.hpp"
#include "stpn/tensor.hpp"
#include "stpn/tensor_ops.hpp"

namespace {

using stpn::DenseTensor;

double seconds(const std::function<void()>& fn, int reps) {
    // One warm-up, then best of reps.
    fn();
    double best = 1e300;
    for (int i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

DenseTensor randn(stpn::Rng& rng, std::vector<int64_t> dims) {
    DenseTensor t = DenseTensor::zeros(std::move(dims));
    for (double& v : t.data) v = rng.normal(0.0, 1.0);
    return t;
}

void row(const char* name, double par, double ser) {
    std::printf("%-28s %10.4f ms %10.4f ms %8.2fx\n", name, par * 1e3, ser * 1e3, ser / par);
}

}  // namespace

int main() {
    stpn::Rng rng(42);
    std::printf("threads: %d\n", stpn::kernels::thread_count());
    std::printf("%-28s %13s %13s %9s\n", "kernel", "parallel", "serial", "speedup");

    {
        const int64_t m = 384, k = 384, n = 384;
        const DenseTensor a = randn(rng, {m, k}), b = randn(rng, {k, n});
        DenseTensor c = DenseTensor::zeros({m, n});
        row("matmul 384^3",
            seconds([&] { stpn::kernels::matmul(a.data.data(), b.data.data(), c.data.data(), m, k, n); }, 5),
            seconds([&] { stpn::kernels::ref::matmul(a.data.data(), b.data.data(), c.data.data(), m, k, n); }, 5));
    }
    {
        const int64_t h = 64, w = 64, cin = 32, kk = 3, cout = 32, stride = 1, pad = 1;
        const DenseTensor x = randn(rng, {h, w, cin});
        const DenseTensor k = randn(rng, {kk, kk, cin, cout});
        const int64_t ho = stpn::conv_out_size(h, kk, stride, pad);
        const int64_t wo = stpn::conv_out_size(w, kk, stride, pad);
        DenseTensor y = DenseTensor::zeros({ho, wo, cout});
        row("conv2d 64x64x32 -> 32",
            seconds([&] {
                stpn::kernels::conv2d(x.data.data(), k.data.data(), y.data.data(), h, w, cin, kk,
                                      kk, cout, stride, pad, ho, wo);
            }, 5),
            seconds([&] {
                stpn::kernels::ref::conv2d(x.data.data(), k.data.data(), y.data.data(), h, w, cin,
                                           kk, kk, cout, stride, pad, ho, wo);
            }, 5));
    }
    {
        const DenseTensor t = randn(rng, {96, 96, 96});
        // Mode rotation (2, 0, 1) expressed as a gather, the layout permute()
        // uses internally; identical index math on both routes.
        const std::vector<int64_t> out_dims = {96, 96, 96};
        const auto strides = stpn::strides_of(t.dims);
        const std::vector<int64_t> gather = {strides[2], strides[0], strides[1]};
        DenseTensor out = DenseTensor::zeros(out_dims);
        row("permute 96^3 (2,0,1)",
            seconds([&] {
                stpn::kernels::permute_copy(t.data.data(), out.data.data(), out_dims, gather);
            }, 5),
            seconds([&] {
                stpn::kernels::ref::permute_copy(t.data.data(), out.data.data(), out_dims, gather);
            }, 5));
    }
    return 0;
}
