#pragma once

#include <cstdint>

// Dense CPU kernels behind the tensor ops. Everything operates on raw
// contiguous buffers in HWC layout; conv kernels are k x k x Cin x Cout
// row-major, so an im2col row (ky, kx, ci) lines up with a kernel row.
//
// pollen::kern      — OpenMP-parallel kernels used by the library. The
//                     decomposition is owner-computes (each output element is
//                     written by exactly one thread, inner accumulation order
//                     fixed), so results do not depend on the thread count.
// pollen::kern::ref — plain serial loops, kept as the independent oracle for
//                     the tests and the benchmark baseline.

namespace pollen::kern {

enum class Pad { same, valid };

// Output extent of a convolution along one axis.
int64_t conv_out_extent(int64_t in, int64_t k, int64_t stride, Pad pad);
// Leading implicit zero-padding along one axis (0 for valid).
int64_t conv_pad_before(int64_t in, int64_t k, int64_t stride, Pad pad);

// C[M x N] += A[M x K] * B[K x N]
template <class T>
void gemm_nn(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c);

// C[K x N] += A^T * B  with A[M x K], B[M x N]
template <class T>
void gemm_tn(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c);

// C[M x K] += A * B^T  with A[M x N], B[K x N]
template <class T>
void gemm_nt(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c);

// cols[(oh*ow) x (k*k*cin)], zero-filled where the window leaves the image.
template <class T>
void im2col(const T* in, int64_t h, int64_t w, int64_t cin, int64_t k, int64_t stride, Pad pad,
            T* cols);

// Scatter-add transpose of im2col: accumulates dcols into din.
template <class T>
void col2im_acc(const T* dcols, int64_t h, int64_t w, int64_t cin, int64_t k, int64_t stride,
                Pad pad, T* din);

template <class T>
void bias_add(int64_t m, int64_t n, const T* bias, T* out);

template <class T>
void bias_grad(int64_t m, int64_t n, const T* dout, T* dbias);

// out = in (+) kernel, bias; scratch-free wrapper around im2col + gemm.
template <class T>
void conv2d_forward(const T* in, int64_t h, int64_t w, int64_t cin, const T* kernel,
                    const T* bias, int64_t k, int64_t cout, int64_t stride, Pad pad, T* out);

// Accumulates into dkernel/dbias/din; din may be null when the input needs no
// grad. `cols`, when given, is the forward im2col buffer (saves recomputing
// it for the weight gradient).
template <class T>
void conv2d_backward(const T* in, int64_t h, int64_t w, int64_t cin, const T* kernel, int64_t k,
                     int64_t cout, int64_t stride, Pad pad, const T* dout, T* dkernel, T* dbias,
                     T* din, const T* cols = nullptr);

// 2x2/2 max pool; argmax holds the flat input index feeding each output.
template <class T>
void maxpool2_forward(const T* in, int64_t h, int64_t w, int64_t c, T* out, int32_t* argmax);

template <class T>
void maxpool2_backward(int64_t out_elems, const T* dout, const int32_t* argmax, T* din);

// Per-channel mean and (population) variance over the h*w positions.
template <class T>
void channel_stats(const T* in, int64_t hw, int64_t c, T* mean, T* var);

template <class T>
void bn_forward(const T* in, int64_t hw, int64_t c, const T* mean, const T* var, const T* gamma,
                const T* beta, T eps, T* out);

// Backward through normalization with batch statistics (mean/var depend on x).
template <class T>
void bn_backward(const T* in, int64_t hw, int64_t c, const T* mean, const T* var, const T* gamma,
                 T eps, const T* dout, T* din, T* dgamma, T* dbeta);

// Backward when mean/var were constants (inference stats).
template <class T>
void bn_backward_frozen(int64_t hw, int64_t c, const T* var, const T* gamma, T eps, const T* dout,
                        T* din, T* dgamma, T* dbeta, const T* in, const T* mean);

template <class T>
void leaky_relu_forward(const T* in, int64_t n, T slope, T* out);

template <class T>
void leaky_relu_backward(const T* in, const T* dout, int64_t n, T slope, T* din);

// h x w x c -> (h/b) x (w/b) x (c*b*b); channel groups ordered by (by, bx).
template <class T>
void space_to_depth(const T* in, int64_t h, int64_t w, int64_t c, int64_t block, T* out);

template <class T>
void depth_to_space(const T* in, int64_t oh, int64_t ow, int64_t oc, int64_t block, T* out);

namespace ref {

template <class T>
void gemm_nn(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c);

template <class T>
void conv2d_forward(const T* in, int64_t h, int64_t w, int64_t cin, const T* kernel,
                    const T* bias, int64_t k, int64_t cout, int64_t stride, Pad pad, T* out);

template <class T>
void maxpool2_forward(const T* in, int64_t h, int64_t w, int64_t c, T* out);

}  // namespace ref

}  // namespace pollen::kern
