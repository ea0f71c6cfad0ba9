#pragma once

#include <cstdint>
#include <span>
#include <vector>

/// Low-level numeric kernels. Every kernel has an OpenMP-parallel version here
/// and a serial reference under kernels::ref used to validate it; both produce
/// bit-identical results because parallelism only splits independent outputs.
/// Thread count is capped by the STP_TENSOR_THREADS environment variable.
namespace stpn::kernels {

/// Threads the parallel kernels may use (>= 1).
int thread_count();

/// Scalar multiply-add work performed so far, in FLOPs (2 per multiply-add).
/// Counts matmul and convolution kernels; used for spot-checking cost models.
int64_t flops_performed();
void reset_flops();

/// C (m x n) = A (m x k) * B (k x n).
void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);

/// C (m x n) = A (m x k) * B^T, B stored (n x k).
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);

/// C (m x n) = A^T * B, A stored (k x m), B stored (k x n).
void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);

/// Direct 2-D convolution, channels-last layout.
/// x: (h, w, cin), k: (kh, kw, cin, cout), y: (ho, wo, cout) with
/// ho = (h + 2*pad - kh) / stride + 1 (already validated by the caller).
void conv2d(const double* x, const double* k, double* y,
            int64_t h, int64_t w, int64_t cin, int64_t kh, int64_t kw, int64_t cout,
            int64_t stride, int64_t pad, int64_t ho, int64_t wo);

/// Gradient of conv2d w.r.t. its input; gather form, same shapes as conv2d.
void conv2d_grad_input(const double* dy, const double* k, double* dx,
                       int64_t h, int64_t w, int64_t cin, int64_t kh, int64_t kw,
                       int64_t cout, int64_t stride, int64_t pad, int64_t ho, int64_t wo);

/// Gradient of conv2d w.r.t. the kernel; accumulates into dk (caller zeroes it).
void conv2d_grad_kernel(const double* x, const double* dy, double* dk,
                        int64_t h, int64_t w, int64_t cin, int64_t kh, int64_t kw,
                        int64_t cout, int64_t stride, int64_t pad, int64_t ho, int64_t wo);

/// Gather copy for permutations: out[i] = src[sum_j idx_j(i) * gather[j]]
/// where i enumerates out_dims in row-major order.
void permute_copy(const double* src, double* out,
                  std::span<const int64_t> out_dims, std::span<const int64_t> gather);

/// Serial reference implementations (kept for testing the parallel kernels).
namespace ref {
void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
void conv2d(const double* x, const double* k, double* y,
            int64_t h, int64_t w, int64_t cin, int64_t kh, int64_t kw, int64_t cout,
            int64_t stride, int64_t pad, int64_t ho, int64_t wo);
void permute_copy(const double* src, double* out,
                  std::span<const int64_t> out_dims, std::span<const int64_t> gather);
}  // namespace ref

}  // namespace stpn::kernels
