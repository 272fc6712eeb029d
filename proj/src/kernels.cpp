#include "pollen/kernels.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

namespace pollen::kern {

int64_t conv_out_extent(int64_t in, int64_t k, int64_t stride, Pad pad) {
    if (pad == Pad::same) return (in + stride - 1) / stride;
    return (in - k) / stride + 1;
}

int64_t conv_pad_before(int64_t in, int64_t k, int64_t stride, Pad pad) {
    if (pad == Pad::valid) return 0;
    const int64_t out = conv_out_extent(in, k, stride, pad);
    const int64_t total = std::max<int64_t>((out - 1) * stride + k - in, 0);
    return total / 2;
}

// ---------------------------------------------------------------------------
// GEMM
//
// The microkernel holds an MR x NR accumulator tile in registers and walks k
// in ascending order, so every C element sees the same floating-point
// accumulation sequence as the naive reference regardless of tiling or thread
// count. Threads split the m dimension; no thread shares an output row.

namespace {

template <class T, int MR, int NR>
inline void micro_nn(int64_t kk, const T* a, int64_t lda, const T* b, int64_t ldb, T* c,
                     int64_t ldc) {
    T acc[MR][NR];
    for (int i = 0; i < MR; ++i)
        for (int j = 0; j < NR; ++j) acc[i][j] = c[i * ldc + j];
    for (int64_t k = 0; k < kk; ++k) {
        const T* brow = b + k * ldb;
        for (int i = 0; i < MR; ++i) {
            const T av = a[i * lda + k];
            for (int j = 0; j < NR; ++j) acc[i][j] += av * brow[j];
        }
    }
    for (int i = 0; i < MR; ++i)
        for (int j = 0; j < NR; ++j) c[i * ldc + j] = acc[i][j];
}

template <class T>
inline void edge_nn(int64_t mm, int64_t nn, int64_t kk, const T* a, int64_t lda, const T* b,
                    int64_t ldb, T* c, int64_t ldc) {
    for (int64_t i = 0; i < mm; ++i) {
        T* crow = c + i * ldc;
        for (int64_t k = 0; k < kk; ++k) {
            const T av = a[i * lda + k];
            const T* brow = b + k * ldb;
            for (int64_t j = 0; j < nn; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

template <class T>
void gemm_nn(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
    constexpr int MR = 4;
    constexpr int NR = 32;
    const int64_t mfull = m / MR * MR;
    const int64_t nfull = n / NR * NR;
#pragma omp parallel for schedule(static)
    for (int64_t m0 = 0; m0 < m; m0 += MR) {
        const T* arow = a + m0 * k;
        T* crow = c + m0 * n;
        if (m0 < mfull) {
            int64_t n0 = 0;
            for (; n0 < nfull; n0 += NR) micro_nn<T, MR, NR>(k, arow, k, b + n0, n, crow + n0, n);
            if (n0 < n) edge_nn<T>(MR, n - n0, k, arow, k, b + n0, n, crow + n0, n);
        } else {
            edge_nn<T>(m - m0, n, k, arow, k, b, n, crow, n);
        }
    }
}

template <class T>
void gemm_tn(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
    // C[K x N] += A^T B, computed as (B^T A)^T so the hot loop is the tiled
    // gemm_nn kernel. Accumulation over m stays ascending per element.
    std::vector<T> bt(static_cast<size_t>(n * m));
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) bt[j * m + i] = b[i * n + j];
    std::vector<T> ct(static_cast<size_t>(n * k), T(0));
    gemm_nn<T>(n, k, m, bt.data(), a, ct.data());
#pragma omp parallel for schedule(static)
    for (int64_t krow = 0; krow < k; ++krow)
        for (int64_t j = 0; j < n; ++j) c[krow * n + j] += ct[j * k + krow];
}

template <class T>
void gemm_nt(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
    // C[M x K] += A[M x N] * B[K x N]^T, row dots; threads own disjoint m rows.
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * n;
        T* crow = c + i * k;
        for (int64_t kk = 0; kk < k; ++kk) {
            const T* brow = b + kk * n;
            T s = 0;
            for (int64_t j = 0; j < n; ++j) s += arow[j] * brow[j];
            crow[kk] += s;
        }
    }
}

// ---------------------------------------------------------------------------
// im2col / col2im

template <class T>
void im2col(const T* in, int64_t h, int64_t w, int64_t cin, int64_t k, int64_t stride, Pad pad,
            T* cols) {
    const int64_t oh = conv_out_extent(h, k, stride, pad);
    const int64_t ow = conv_out_extent(w, k, stride, pad);
    const int64_t ph = conv_pad_before(h, k, stride, pad);
    const int64_t pw = conv_pad_before(w, k, stride, pad);
    const int64_t krow = k * k * cin;
#pragma omp parallel for schedule(static)
    for (int64_t oy = 0; oy < oh; ++oy) {
        for (int64_t ox = 0; ox < ow; ++ox) {
            T* dst = cols + (oy * ow + ox) * krow;
            for (int64_t ky = 0; ky < k; ++ky) {
                const int64_t y = oy * stride + ky - ph;
                for (int64_t kx = 0; kx < k; ++kx) {
                    const int64_t x = ox * stride + kx - pw;
                    if (y < 0 || y >= h || x < 0 || x >= w) {
                        std::fill(dst, dst + cin, T(0));
                    } else {
                        std::memcpy(dst, in + (y * w + x) * cin, sizeof(T) * cin);
                    }
                    dst += cin;
                }
            }
        }
    }
}

template <class T>
void col2im_acc(const T* dcols, int64_t h, int64_t w, int64_t cin, int64_t k, int64_t stride,
                Pad pad, T* din) {
    const int64_t oh = conv_out_extent(h, k, stride, pad);
    const int64_t ow = conv_out_extent(w, k, stride, pad);
    const int64_t ph = conv_pad_before(h, k, stride, pad);
    const int64_t pw = conv_pad_before(w, k, stride, pad);
    const int64_t krow = k * k * cin;
    // Gather form: each input pixel sums the column entries that reference it,
    // so rows can run in parallel without atomics.
#pragma omp parallel for schedule(static)
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            T* dst = din + (y * w + x) * cin;
            for (int64_t ky = 0; ky < k; ++ky) {
                const int64_t oyn = y + ph - ky;
                if (oyn < 0 || oyn % stride != 0) continue;
                const int64_t oy = oyn / stride;
                if (oy >= oh) continue;
                for (int64_t kx = 0; kx < k; ++kx) {
                    const int64_t oxn = x + pw - kx;
                    if (oxn < 0 || oxn % stride != 0) continue;
                    const int64_t ox = oxn / stride;
                    if (ox >= ow) continue;
                    const T* src = dcols + (oy * ow + ox) * krow + (ky * k + kx) * cin;
                    for (int64_t c = 0; c < cin; ++c) dst[c] += src[c];
                }
            }
        }
    }
}

template <class T>
void bias_add(int64_t m, int64_t n, const T* bias, T* out) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        T* row = out + i * n;
        for (int64_t j = 0; j < n; ++j) row[j] += bias[j];
    }
}

template <class T>
void bias_grad(int64_t m, int64_t n, const T* dout, T* dbias) {
    for (int64_t i = 0; i < m; ++i) {
        const T* row = dout + i * n;
        for (int64_t j = 0; j < n; ++j) dbias[j] += row[j];
    }
}

// ---------------------------------------------------------------------------
// Convolution

template <class T>
void conv2d_forward(const T* in, int64_t h, int64_t w, int64_t cin, const T* kernel,
                    const T* bias, int64_t k, int64_t cout, int64_t stride, Pad pad, T* out) {
    const int64_t oh = conv_out_extent(h, k, stride, pad);
    const int64_t ow = conv_out_extent(w, k, stride, pad);
    const int64_t m = oh * ow;
    const int64_t kk = k * k * cin;
    std::fill(out, out + m * cout, T(0));
    if (k == 1 && stride == 1) {
        gemm_nn<T>(m, cout, cin, in, kernel, out);
    } else {
        std::vector<T> cols(static_cast<size_t>(m * kk));
        im2col<T>(in, h, w, cin, k, stride, pad, cols.data());
        gemm_nn<T>(m, cout, kk, cols.data(), kernel, out);
    }
    if (bias) bias_add<T>(m, cout, bias, out);
}

template <class T>
void conv2d_backward(const T* in, int64_t h, int64_t w, int64_t cin, const T* kernel, int64_t k,
                     int64_t cout, int64_t stride, Pad pad, const T* dout, T* dkernel, T* dbias,
                     T* din, const T* cols) {
    const int64_t oh = conv_out_extent(h, k, stride, pad);
    const int64_t ow = conv_out_extent(w, k, stride, pad);
    const int64_t m = oh * ow;
    const int64_t kk = k * k * cin;
    if (dbias) bias_grad<T>(m, cout, dout, dbias);
    if (k == 1 && stride == 1) {
        if (dkernel) gemm_tn<T>(m, cout, cin, in, dout, dkernel);
        if (din) gemm_nt<T>(m, cout, cin, dout, kernel, din);
        return;
    }
    if (dkernel) {
        std::vector<T> scratch;
        if (!cols) {
            scratch.resize(static_cast<size_t>(m * kk));
            im2col<T>(in, h, w, cin, k, stride, pad, scratch.data());
            cols = scratch.data();
        }
        gemm_tn<T>(m, cout, kk, cols, dout, dkernel);
    }
    if (din) {
        std::vector<T> dcols(static_cast<size_t>(m * kk), T(0));
        gemm_nt<T>(m, cout, kk, dout, kernel, dcols.data());
        col2im_acc<T>(dcols.data(), h, w, cin, k, stride, pad, din);
    }
}

// ---------------------------------------------------------------------------
// Max pool 2x2 stride 2

template <class T>
void maxpool2_forward(const T* in, int64_t h, int64_t w, int64_t c, T* out, int32_t* argmax) {
    const int64_t oh = h / 2;
    const int64_t ow = w / 2;
#pragma omp parallel for schedule(static)
    for (int64_t oy = 0; oy < oh; ++oy) {
        for (int64_t ox = 0; ox < ow; ++ox) {
            const int64_t base = (oy * ow + ox) * c;
            for (int64_t ch = 0; ch < c; ++ch) {
                T best = -std::numeric_limits<T>::infinity();
                int64_t best_idx = -1;
                for (int64_t dy = 0; dy < 2; ++dy) {
                    for (int64_t dx = 0; dx < 2; ++dx) {
                        const int64_t idx = ((oy * 2 + dy) * w + (ox * 2 + dx)) * c + ch;
                        if (in[idx] > best) {
                            best = in[idx];
                            best_idx = idx;
                        }
                    }
                }
                out[base + ch] = best;
                argmax[base + ch] = static_cast<int32_t>(best_idx);
            }
        }
    }
}

template <class T>
void maxpool2_backward(int64_t out_elems, const T* dout, const int32_t* argmax, T* din) {
    // 2x2/2 windows are disjoint, so each input cell receives at most one add.
    for (int64_t i = 0; i < out_elems; ++i) din[argmax[i]] += dout[i];
}

// ---------------------------------------------------------------------------
// Batch norm (statistics over the spatial positions of one image)

template <class T>
void channel_stats(const T* in, int64_t hw, int64_t c, T* mean, T* var) {
    std::fill(mean, mean + c, T(0));
    std::fill(var, var + c, T(0));
    for (int64_t i = 0; i < hw; ++i) {
        const T* row = in + i * c;
        for (int64_t ch = 0; ch < c; ++ch) mean[ch] += row[ch];
    }
    for (int64_t ch = 0; ch < c; ++ch) mean[ch] /= static_cast<T>(hw);
    for (int64_t i = 0; i < hw; ++i) {
        const T* row = in + i * c;
        for (int64_t ch = 0; ch < c; ++ch) {
            const T d = row[ch] - mean[ch];
            var[ch] += d * d;
        }
    }
    for (int64_t ch = 0; ch < c; ++ch) var[ch] /= static_cast<T>(hw);
}

template <class T>
void bn_forward(const T* in, int64_t hw, int64_t c, const T* mean, const T* var, const T* gamma,
                const T* beta, T eps, T* out) {
    std::vector<T> scale(static_cast<size_t>(c)), shift(static_cast<size_t>(c));
    for (int64_t ch = 0; ch < c; ++ch) {
        scale[ch] = gamma[ch] / std::sqrt(var[ch] + eps);
        shift[ch] = beta[ch] - mean[ch] * scale[ch];
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < hw; ++i) {
        const T* src = in + i * c;
        T* dst = out + i * c;
        for (int64_t ch = 0; ch < c; ++ch) dst[ch] = src[ch] * scale[ch] + shift[ch];
    }
}

template <class T>
void bn_backward(const T* in, int64_t hw, int64_t c, const T* mean, const T* var, const T* gamma,
                 T eps, const T* dout, T* din, T* dgamma, T* dbeta) {
    const T n = static_cast<T>(hw);
    std::vector<T> inv_std(static_cast<size_t>(c));
    std::vector<T> sum_dy(static_cast<size_t>(c), T(0));
    std::vector<T> sum_dy_xhat(static_cast<size_t>(c), T(0));
    for (int64_t ch = 0; ch < c; ++ch) inv_std[ch] = T(1) / std::sqrt(var[ch] + eps);
    for (int64_t i = 0; i < hw; ++i) {
        const T* x = in + i * c;
        const T* dy = dout + i * c;
        for (int64_t ch = 0; ch < c; ++ch) {
            const T xhat = (x[ch] - mean[ch]) * inv_std[ch];
            sum_dy[ch] += dy[ch];
            sum_dy_xhat[ch] += dy[ch] * xhat;
        }
    }
    for (int64_t ch = 0; ch < c; ++ch) {
        dgamma[ch] += sum_dy_xhat[ch];
        dbeta[ch] += sum_dy[ch];
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < hw; ++i) {
        const T* x = in + i * c;
        const T* dy = dout + i * c;
        T* dx = din + i * c;
        for (int64_t ch = 0; ch < c; ++ch) {
            const T xhat = (x[ch] - mean[ch]) * inv_std[ch];
            dx[ch] += gamma[ch] * inv_std[ch] *
                      (dy[ch] - sum_dy[ch] / n - xhat * sum_dy_xhat[ch] / n);
        }
    }
}

template <class T>
void bn_backward_frozen(int64_t hw, int64_t c, const T* var, const T* gamma, T eps, const T* dout,
                        T* din, T* dgamma, T* dbeta, const T* in, const T* mean) {
    std::vector<T> inv_std(static_cast<size_t>(c));
    for (int64_t ch = 0; ch < c; ++ch) inv_std[ch] = T(1) / std::sqrt(var[ch] + eps);
    for (int64_t i = 0; i < hw; ++i) {
        const T* dy = dout + i * c;
        const T* x = in + i * c;
        for (int64_t ch = 0; ch < c; ++ch) {
            dgamma[ch] += dy[ch] * (x[ch] - mean[ch]) * inv_std[ch];
            dbeta[ch] += dy[ch];
        }
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < hw; ++i) {
        const T* dy = dout + i * c;
        T* dx = din + i * c;
        for (int64_t ch = 0; ch < c; ++ch) dx[ch] += dy[ch] * gamma[ch] * inv_std[ch];
    }
}

// ---------------------------------------------------------------------------
// Elementwise / layout

template <class T>
void leaky_relu_forward(const T* in, int64_t n, T slope, T* out) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = in[i] >= T(0) ? in[i] : slope * in[i];
}

template <class T>
void leaky_relu_backward(const T* in, const T* dout, int64_t n, T slope, T* din) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) din[i] += dout[i] * (in[i] >= T(0) ? T(1) : slope);
}

template <class T>
void space_to_depth(const T* in, int64_t h, int64_t w, int64_t c, int64_t block, T* out) {
    const int64_t oh = h / block;
    const int64_t ow = w / block;
    const int64_t oc = c * block * block;
#pragma omp parallel for schedule(static)
    for (int64_t oy = 0; oy < oh; ++oy) {
        for (int64_t ox = 0; ox < ow; ++ox) {
            T* dst = out + (oy * ow + ox) * oc;
            for (int64_t by = 0; by < block; ++by) {
                for (int64_t bx = 0; bx < block; ++bx) {
                    const T* src = in + ((oy * block + by) * w + (ox * block + bx)) * c;
                    std::memcpy(dst, src, sizeof(T) * c);
                    dst += c;
                }
            }
        }
    }
}

template <class T>
void depth_to_space(const T* in, int64_t oh, int64_t ow, int64_t oc, int64_t block, T* out) {
    // Inverse of space_to_depth given the output geometry (oh*block, ow*block, oc).
    const int64_t w = ow * block;
    const int64_t ic = oc * block * block;
#pragma omp parallel for schedule(static)
    for (int64_t oy = 0; oy < oh; ++oy) {
        for (int64_t ox = 0; ox < ow; ++ox) {
            const T* src = in + (oy * ow + ox) * ic;
            for (int64_t by = 0; by < block; ++by) {
                for (int64_t bx = 0; bx < block; ++bx) {
                    T* dst = out + ((oy * block + by) * w + (ox * block + bx)) * oc;
                    std::memcpy(dst, src, sizeof(T) * oc);
                    src += oc;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Serial reference implementations

namespace ref {

template <class T>
void gemm_nn(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
    for (int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            const T av = a[i * k + kk];
            const T* brow = b + kk * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class T>
void conv2d_forward(const T* in, int64_t h, int64_t w, int64_t cin, const T* kernel,
                    const T* bias, int64_t k, int64_t cout, int64_t stride, Pad pad, T* out) {
    const int64_t oh = conv_out_extent(h, k, stride, pad);
    const int64_t ow = conv_out_extent(w, k, stride, pad);
    const int64_t ph = conv_pad_before(h, k, stride, pad);
    const int64_t pw = conv_pad_before(w, k, stride, pad);
    for (int64_t oy = 0; oy < oh; ++oy) {
        for (int64_t ox = 0; ox < ow; ++ox) {
            for (int64_t co = 0; co < cout; ++co) {
                T acc = bias ? bias[co] : T(0);
                for (int64_t ky = 0; ky < k; ++ky) {
                    const int64_t y = oy * stride + ky - ph;
                    if (y < 0 || y >= h) continue;
                    for (int64_t kx = 0; kx < k; ++kx) {
                        const int64_t x = ox * stride + kx - pw;
                        if (x < 0 || x >= w) continue;
                        for (int64_t ci = 0; ci < cin; ++ci) {
                            acc += in[(y * w + x) * cin + ci] *
                                   kernel[((ky * k + kx) * cin + ci) * cout + co];
                        }
                    }
                }
                out[(oy * ow + ox) * cout + co] = acc;
            }
        }
    }
}

template <class T>
void maxpool2_forward(const T* in, int64_t h, int64_t w, int64_t c, T* out) {
    const int64_t oh = h / 2;
    const int64_t ow = w / 2;
    for (int64_t oy = 0; oy < oh; ++oy) {
        for (int64_t ox = 0; ox < ow; ++ox) {
            for (int64_t ch = 0; ch < c; ++ch) {
                T best = in[(oy * 2 * w + ox * 2) * c + ch];
                for (int64_t dy = 0; dy < 2; ++dy)
                    for (int64_t dx = 0; dx < 2; ++dx)
                        best = std::max(best, in[((oy * 2 + dy) * w + ox * 2 + dx) * c + ch]);
                out[(oy * ow + ox) * c + ch] = best;
            }
        }
    }
}

}  // namespace ref

// ---------------------------------------------------------------------------
// Explicit instantiations (float for the runtime path, double for grad checks)

#define POLLEN_INSTANTIATE(T)                                                                     \
    template void gemm_nn<T>(int64_t, int64_t, int64_t, const T*, const T*, T*);                  \
    template void gemm_tn<T>(int64_t, int64_t, int64_t, const T*, const T*, T*);                  \
    template void gemm_nt<T>(int64_t, int64_t, int64_t, const T*, const T*, T*);                  \
    template void im2col<T>(const T*, int64_t, int64_t, int64_t, int64_t, int64_t, Pad, T*);      \
    template void col2im_acc<T>(const T*, int64_t, int64_t, int64_t, int64_t, int64_t, Pad, T*);  \
    template void bias_add<T>(int64_t, int64_t, const T*, T*);                                    \
    template void bias_grad<T>(int64_t, int64_t, const T*, T*);                                   \
    template void conv2d_forward<T>(const T*, int64_t, int64_t, int64_t, const T*, const T*,      \
                                    int64_t, int64_t, int64_t, Pad, T*);                          \
    template void conv2d_backward<T>(const T*, int64_t, int64_t, int64_t, const T*, int64_t,      \
                                     int64_t, int64_t, Pad, const T*, T*, T*, T*, const T*);      \
    template void maxpool2_forward<T>(const T*, int64_t, int64_t, int64_t, T*, int32_t*);         \
    template void maxpool2_backward<T>(int64_t, const T*, const int32_t*, T*);                    \
    template void channel_stats<T>(const T*, int64_t, int64_t, T*, T*);                           \
    template void bn_forward<T>(const T*, int64_t, int64_t, const T*, const T*, const T*,         \
                                const T*, T, T*);                                                 \
    template void bn_backward<T>(const T*, int64_t, int64_t, const T*, const T*, const T*, T,     \
                                 const T*, T*, T*, T*);                                           \
    template void bn_backward_frozen<T>(int64_t, int64_t, const T*, const T*, T, const T*, T*,    \
                                        T*, T*, const T*, const T*);                              \
    template void leaky_relu_forward<T>(const T*, int64_t, T, T*);                                \
    template void leaky_relu_backward<T>(const T*, const T*, int64_t, T, T*);                     \
    template void space_to_depth<T>(const T*, int64_t, int64_t, int64_t, int64_t, T*);            \
    template void depth_to_space<T>(const T*, int64_t, int64_t, int64_t, int64_t, T*);            \
    template void ref::gemm_nn<T>(int64_t, int64_t, int64_t, const T*, const T*, T*);             \
    template void ref::conv2d_forward<T>(const T*, int64_t, int64_t, int64_t, const T*, const T*, \
                                         int64_t, int64_t, int64_t, Pad, T*);                     \
    template void ref::maxpool2_forward<T>(const T*, int64_t, int64_t, int64_t, T*);

POLLEN_INSTANTIATE(float)
POLLEN_INSTANTIATE(double)

#undef POLLEN_INSTANTIATE

}  // namespace pollen::kern
