#include "stpn/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace stpn::kernels {

namespace {

std::atomic<int64_t> g_flops{0};

int read_thread_cap() {
#ifdef _OPENMP
    int cap = omp_get_max_threads();
#else
    int cap = 1;
#endif
    if (const char* env = std::getenv("STP_TENSOR_THREADS")) {
        const int requested = std::atoi(env);
        if (requested >= 1 && requested < cap) cap = requested;
        if (requested >= 1 && cap < 1) cap = requested;
    }
    return cap < 1 ? 1 : cap;
}

}  // namespace

int thread_count() {
    static const int cap = read_thread_cap();
    return cap;
}

int64_t flops_performed() { return g_flops.load(std::memory_order_relaxed); }

void reset_flops() { g_flops.store(0, std::memory_order_relaxed); }

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    g_flops.fetch_add(2 * m * k * n, std::memory_order_relaxed);
#pragma omp parallel for schedule(static) num_threads(thread_count()) if (m * n * k > 16384)
    for (int64_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) ci[j] = 0.0;
        const double* ai = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    g_flops.fetch_add(2 * m * k * n, std::memory_order_relaxed);
#pragma omp parallel for schedule(static) num_threads(thread_count()) if (m * n * k > 16384)
    for (int64_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = acc;
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    g_flops.fetch_add(2 * m * k * n, std::memory_order_relaxed);
#pragma omp parallel for schedule(static) num_threads(thread_count()) if (m * n * k > 16384)
    for (int64_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) ci[j] = 0.0;
        for (int64_t p = 0; p < k; ++p) {
            const double av = a[p * m + i];
            const double* bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void conv2d(const double* x, const double* k, double* y,
            int64_t h, int64_t w, int64_t cin, int64_t kh, int64_t kw, int64_t cout,
            int64_t stride, int64_t pad, int64_t ho, int64_t wo) {
    g_flops.fetch_add(2 * ho * wo * cout * kh * kw * cin, std::memory_order_relaxed);
#pragma omp parallel for schedule(static) num_threads(thread_count()) if (ho * wo * cout * kh * kw * cin > 16384)
    for (int64_t oh = 0; oh < ho; ++oh) {
        for (int64_t ow = 0; ow < wo; ++ow) {
            double* yo = y + (oh * wo + ow) * cout;
            for (int64_t c = 0; c < cout; ++c) yo[c] = 0.0;
            for (int64_t r = 0; r < kh; ++r) {
                const int64_t ih = oh * stride + r - pad;
                if (ih < 0 || ih >= h) continue;
                for (int64_t s = 0; s < kw; ++s) {
                    const int64_t iw = ow * stride + s - pad;
                    if (iw < 0 || iw >= w) continue;
                    const double* xi = x + (ih * w + iw) * cin;
                    const double* kr = k + (r * kw + s) * cin * cout;
                    for (int64_t c = 0; c < cin; ++c) {
                        const double xv = xi[c];
                        const double* kc = kr + c * cout;
                        for (int64_t o = 0; o < cout; ++o) yo[o] += xv * kc[o];
                    }
                }
            }
        }
    }
}

void conv2d_grad_input(const double* dy, const double* k, double* dx,
                       int64_t h, int64_t w, int64_t cin, int64_t kh, int64_t kw,
                       int64_t cout, int64_t stride, int64_t pad, int64_t ho, int64_t wo) {
#pragma omp parallel for schedule(static) num_threads(thread_count()) if (h * w * cin * cout > 16384)
    for (int64_t ih = 0; ih < h; ++ih) {
        for (int64_t iw = 0; iw < w; ++iw) {
            double* dxi = dx + (ih * w + iw) * cin;
            for (int64_t c = 0; c < cin; ++c) dxi[c] = 0.0;
            for (int64_t r = 0; r < kh; ++r) {
                const int64_t num = ih + pad - r;
                if (num < 0 || num % stride != 0) continue;
                const int64_t oh = num / stride;
                if (oh >= ho) continue;
                for (int64_t s = 0; s < kw; ++s) {
                    const int64_t numw = iw + pad - s;
                    if (numw < 0 || numw % stride != 0) continue;
                    const int64_t ow = numw / stride;
                    if (ow >= wo) continue;
                    const double* dyo = dy + (oh * wo + ow) * cout;
                    const double* kr = k + (r * kw + s) * cin * cout;
                    for (int64_t c = 0; c < cin; ++c) {
                        const double* kc = kr + c * cout;
                        double acc = 0.0;
                        for (int64_t o = 0; o < cout; ++o) acc += dyo[o] * kc[o];
                        dxi[c] += acc;
                    }
                }
            }
        }
    }
}

void conv2d_grad_kernel(const double* x, const double* dy, double* dk,
                        int64_t h, int64_t w, int64_t cin, int64_t kh, int64_t kw,
                        int64_t cout, int64_t stride, int64_t pad, int64_t ho, int64_t wo) {
#pragma omp parallel for schedule(static) num_threads(thread_count()) if (kh * kw * cin * cout > 4096)
    for (int64_t r = 0; r < kh; ++r) {
        for (int64_t s = 0; s < kw; ++s) {
            double* dkr = dk + (r * kw + s) * cin * cout;
            for (int64_t oh = 0; oh < ho; ++oh) {
                const int64_t ih = oh * stride + r - pad;
                if (ih < 0 || ih >= h) continue;
                for (int64_t ow = 0; ow < wo; ++ow) {
                    const int64_t iw = ow * stride + s - pad;
                    if (iw < 0 || iw >= w) continue;
                    const double* xi = x + (ih * w + iw) * cin;
                    const double* dyo = dy + (oh * wo + ow) * cout;
                    for (int64_t c = 0; c < cin; ++c) {
                        double* dkc = dkr + c * cout;
                        const double xv = xi[c];
                        for (int64_t o = 0; o < cout; ++o) dkc[o] += xv * dyo[o];
                    }
                }
            }
        }
    }
}

void permute_copy(const double* src, double* out,
                  std::span<const int64_t> out_dims, std::span<const int64_t> gather) {
    const int rank = static_cast<int>(out_dims.size());
    int64_t total = 1;
    for (int64_t d : out_dims) total *= d;
    const int64_t inner = out_dims[static_cast<size_t>(rank - 1)];
    const int64_t inner_stride = gather[static_cast<size_t>(rank - 1)];
    const int64_t rows = total / inner;
#pragma omp parallel for schedule(static) num_threads(thread_count()) if (total > 16384)
    for (int64_t row = 0; row < rows; ++row) {
        int64_t rem = row;
        int64_t base = 0;
        for (int m = rank - 2; m >= 0; --m) {
            const int64_t d = out_dims[static_cast<size_t>(m)];
            base += (rem % d) * gather[static_cast<size_t>(m)];
            rem /= d;
        }
        double* o = out + row * inner;
        for (int64_t j = 0; j < inner; ++j) o[j] = src[base + j * inner_stride];
    }
}

namespace ref {

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) ci[j] = 0.0;
        const double* ai = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void conv2d(const double* x, const double* k, double* y,
            int64_t h, int64_t w, int64_t cin, int64_t kh, int64_t kw, int64_t cout,
            int64_t stride, int64_t pad, int64_t ho, int64_t wo) {
    for (int64_t oh = 0; oh < ho; ++oh) {
        for (int64_t ow = 0; ow < wo; ++ow) {
            double* yo = y + (oh * wo + ow) * cout;
            for (int64_t c = 0; c < cout; ++c) yo[c] = 0.0;
            for (int64_t r = 0; r < kh; ++r) {
                const int64_t ih = oh * stride + r - pad;
                if (ih < 0 || ih >= h) continue;
                for (int64_t s = 0; s < kw; ++s) {
                    const int64_t iw = ow * stride + s - pad;
                    if (iw < 0 || iw >= w) continue;
                    const double* xi = x + (ih * w + iw) * cin;
                    const double* kr = k + (r * kw + s) * cin * cout;
                    for (int64_t c = 0; c < cin; ++c) {
                        const double xv = xi[c];
                        const double* kc = kr + c * cout;
                        for (int64_t o = 0; o < cout; ++o) yo[o] += xv * kc[o];
                    }
                }
            }
        }
    }
}

void permute_copy(const double* src, double* out,
                  std::span<const int64_t> out_dims, std::span<const int64_t> gather) {
    const int rank = static_cast<int>(out_dims.size());
    int64_t total = 1;
    for (int64_t d : out_dims) total *= d;
    for (int64_t i = 0; i < total; ++i) {
        int64_t rem = i;
        int64_t pos = 0;
        for (int m = rank - 1; m >= 0; --m) {
            const int64_t d = out_dims[static_cast<size_t>(m)];
            pos += (rem % d) * gather[static_cast<size_t>(m)];
            rem /= d;
        }
        out[i] = src[pos];
    }
}

}  // namespace ref

}  // namespace stpn::kernels
