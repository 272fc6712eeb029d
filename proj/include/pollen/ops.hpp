#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <vector>

#include "pollen/kernels.hpp"
#include "pollen/tensor.hpp"

// Differentiable ops. Forward work is delegated to the dense kernels; each op
// records a closure that accumulates into its parents' grad buffers.

namespace pollen::ops {

using kern::Pad;

namespace detail {

template <class T>
TensorT<T> result(const char* op, std::vector<int64_t> shape, std::vector<T> value,
                  std::vector<TensorT<T>> parents,
                  std::function<void(TensorNode<T>&)> backward_fn) {
    auto out = TensorT<T>::from_data(std::move(shape), std::move(value));
    bool needs_grad = false;
    if (grad_enabled()) {
        for (const auto& p : parents) needs_grad = needs_grad || p.requires_grad();
    }
    if (needs_grad) {
        auto& n = out.node();
        n.requires_grad = true;
        n.op = op;
        n.parents.reserve(parents.size());
        for (auto& p : parents) n.parents.push_back(p.ptr());
        n.backward_fn = std::move(backward_fn);
    }
    check_finite(out, op);
    return out;
}

template <class T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " +
                         TensorT<T>::shape_str(a.shape()) + " vs " +
                         TensorT<T>::shape_str(b.shape()));
}

}  // namespace detail

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<T> v(a.data());
    for (size_t i = 0; i < v.size(); ++i) v[i] += b.data()[i];
    return detail::result<T>("add", a.shape(), std::move(v), {a, b}, [](TensorNode<T>& n) {
        for (int side = 0; side < 2; ++side) {
            auto& p = *n.parents[side];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
        }
    });
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<T> v(a.data());
    for (size_t i = 0; i < v.size(); ++i) v[i] -= b.data()[i];
    return detail::result<T>("sub", a.shape(), std::move(v), {a, b}, [](TensorNode<T>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] -= n.grad[i];
        }
    });
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<T> v(a.data());
    for (size_t i = 0; i < v.size(); ++i) v[i] *= b.data()[i];
    return detail::result<T>("mul", a.shape(), std::move(v), {a, b}, [](TensorNode<T>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i] * pa.value[i];
        }
    });
}

template <class T>
TensorT<T> scale(const TensorT<T>& a, T s) {
    std::vector<T> v(a.data());
    for (auto& x : v) x *= s;
    return detail::result<T>("scale", a.shape(), std::move(v), {a}, [s](TensorNode<T>& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * s;
    });
}

template <class T>
TensorT<T> sum(const TensorT<T>& a) {
    T s = 0;
    for (const T v : a.data()) s += v;
    return detail::result<T>("sum", {1}, {s}, {a}, [](TensorNode<T>& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        const T g = n.grad[0];
        for (auto& gi : p.grad) gi += g;
    });
}

template <class T>
TensorT<T> mean(const TensorT<T>& a) {
    T s = 0;
    for (const T v : a.data()) s += v;
    const T inv = T(1) / static_cast<T>(a.numel());
    return detail::result<T>("mean", {1}, {s * inv}, {a}, [inv](TensorNode<T>& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        const T g = n.grad[0] * inv;
        for (auto& gi : p.grad) gi += g;
    });
}

template <class T>
TensorT<T> square(const TensorT<T>& a) {
    std::vector<T> v(a.data());
    for (auto& x : v) x *= x;
    return detail::result<T>("square", a.shape(), std::move(v), {a}, [](TensorNode<T>& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += T(2) * p.value[i] * n.grad[i];
    });
}

template <class T>
inline T sigmoid_scalar(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <class T>
TensorT<T> sigmoid(const TensorT<T>& a) {
    std::vector<T> v(a.data());
    for (auto& x : v) x = sigmoid_scalar(x);
    return detail::result<T>("sigmoid", a.shape(), std::move(v), {a}, [](TensorNode<T>& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) {
            const T y = n.value[i];
            p.grad[i] += n.grad[i] * y * (T(1) - y);
        }
    });
}

template <class T>
TensorT<T> tanh_op(const TensorT<T>& a) {
    std::vector<T> v(a.data());
    for (auto& x : v) x = std::tanh(x);
    return detail::result<T>("tanh", a.shape(), std::move(v), {a}, [](TensorNode<T>& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) {
            const T y = n.value[i];
            p.grad[i] += n.grad[i] * (T(1) - y * y);
        }
    });
}

template <class T>
TensorT<T> leaky_relu(const TensorT<T>& a, T slope) {
    std::vector<T> v(static_cast<size_t>(a.numel()));
    kern::leaky_relu_forward(a.raw(), a.numel(), slope, v.data());
    return detail::result<T>("leaky_relu", a.shape(), std::move(v), {a}, [slope](TensorNode<T>& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        kern::leaky_relu_backward(p.value.data(), n.grad.data(),
                                  static_cast<int64_t>(n.grad.size()), slope, p.grad.data());
    });
}

// input H x W x Cin, kernel k x k x Cin x Cout, bias Cout (may be undefined)
template <class T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernel, const TensorT<T>& bias,
                  int64_t stride, Pad pad) {
    if (input.shape().size() != 3 || kernel.shape().size() != 4)
        throw ShapeError("conv2d: input must be HxWxC and kernel kxkxCinxCout");
    const int64_t h = input.extent(0), w = input.extent(1), cin = input.extent(2);
    const int64_t k = kernel.extent(0), cout = kernel.extent(3);
    if (kernel.extent(1) != k) throw ShapeError("conv2d: kernel must be square");
    if (kernel.extent(2) != cin)
        throw ShapeError("conv2d: input has " + std::to_string(cin) + " channels, kernel expects " +
                         std::to_string(kernel.extent(2)));
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    if (pad == Pad::valid && (h < k || w < k))
        throw ShapeError("conv2d: input smaller than kernel with valid padding");
    if (bias.defined() && bias.numel() != cout)
        throw ShapeError("conv2d: bias length must equal Cout");

    const int64_t oh = kern::conv_out_extent(h, k, stride, pad);
    const int64_t ow = kern::conv_out_extent(w, k, stride, pad);
    std::vector<T> v(static_cast<size_t>(oh * ow * cout));

    // When the result will be differentiated, keep the im2col patches for the
    // weight-gradient GEMM instead of rebuilding them in backward.
    std::shared_ptr<std::vector<T>> cols;
    const bool recording =
        grad_enabled() && (input.requires_grad() || kernel.requires_grad() ||
                           (bias.defined() && bias.requires_grad()));
    if (recording && k > 1 && kernel.requires_grad()) {
        cols = std::make_shared<std::vector<T>>(static_cast<size_t>(oh * ow * k * k * cin));
        kern::im2col(input.raw(), h, w, cin, k, stride, pad, cols->data());
        std::fill(v.begin(), v.end(), T(0));
        kern::gemm_nn<T>(oh * ow, cout, k * k * cin, cols->data(), kernel.raw(), v.data());
        if (bias.defined()) kern::bias_add<T>(oh * ow, cout, bias.raw(), v.data());
    } else {
        kern::conv2d_forward(input.raw(), h, w, cin, kernel.raw(),
                             bias.defined() ? bias.raw() : nullptr, k, cout, stride, pad,
                             v.data());
    }

    std::vector<TensorT<T>> parents = {input, kernel};
    if (bias.defined()) parents.push_back(bias);
    const bool has_bias = bias.defined();
    return detail::result<T>(
        "conv2d", {oh, ow, cout}, std::move(v), std::move(parents),
        [h, w, cin, k, cout, stride, pad, has_bias, cols](TensorNode<T>& n) {
            auto& in = *n.parents[0];
            auto& ker = *n.parents[1];
            TensorNode<T>* b = has_bias ? n.parents[2].get() : nullptr;
            T* din = nullptr;
            T* dker = nullptr;
            T* dbias = nullptr;
            if (in.requires_grad) {
                in.ensure_grad();
                din = in.grad.data();
            }
            if (ker.requires_grad) {
                ker.ensure_grad();
                dker = ker.grad.data();
            }
            if (b && b->requires_grad) {
                b->ensure_grad();
                dbias = b->grad.data();
            }
            kern::conv2d_backward(in.value.data(), h, w, cin, ker.value.data(), k, cout, stride,
                                  pad, n.grad.data(), dker, dbias, din,
                                  cols ? cols->data() : nullptr);
        });
}

template <class T>
TensorT<T> maxpool2(const TensorT<T>& input) {
    if (input.shape().size() != 3) throw ShapeError("maxpool2: input must be HxWxC");
    const int64_t h = input.extent(0), w = input.extent(1), c = input.extent(2);
    if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("maxpool2: odd spatial extent " + TensorT<T>::shape_str(input.shape()));
    const int64_t oh = h / 2, ow = w / 2;
    std::vector<T> v(static_cast<size_t>(oh * ow * c));
    auto argmax = std::make_shared<std::vector<int32_t>>(v.size());
    kern::maxpool2_forward(input.raw(), h, w, c, v.data(), argmax->data());
    return detail::result<T>("maxpool2", {oh, ow, c}, std::move(v), {input},
                             [argmax](TensorNode<T>& n) {
                                 auto& p = *n.parents[0];
                                 p.ensure_grad();
                                 kern::maxpool2_backward(static_cast<int64_t>(n.grad.size()),
                                                         n.grad.data(), argmax->data(),
                                                         p.grad.data());
                             });
}

// Batch norm over the spatial positions of a single H x W x C activation.
// `running_mean`/`running_var` are module state: updated in train mode, read
// in infer mode. Gradients flow through the batch statistics in train mode.
template <class T>
TensorT<T> batch_norm(const TensorT<T>& input, const TensorT<T>& gamma, const TensorT<T>& beta,
                      std::vector<T>& running_mean, std::vector<T>& running_var, bool train,
                      T momentum, T eps) {
    if (input.shape().size() != 3) throw ShapeError("batch_norm: input must be HxWxC");
    const int64_t c = input.extent(2);
    const int64_t hw = input.extent(0) * input.extent(1);
    if (gamma.numel() != c || beta.numel() != c ||
        static_cast<int64_t>(running_mean.size()) != c ||
        static_cast<int64_t>(running_var.size()) != c)
        throw ShapeError("batch_norm: per-channel parameter length must equal C");

    auto mean = std::make_shared<std::vector<T>>(static_cast<size_t>(c));
    auto var = std::make_shared<std::vector<T>>(static_cast<size_t>(c));
    if (train) {
        kern::channel_stats(input.raw(), hw, c, mean->data(), var->data());
        for (int64_t ch = 0; ch < c; ++ch) {
            running_mean[ch] = momentum * running_mean[ch] + (T(1) - momentum) * (*mean)[ch];
            running_var[ch] = momentum * running_var[ch] + (T(1) - momentum) * (*var)[ch];
        }
    } else {
        *mean = running_mean;
        *var = running_var;
    }
    std::vector<T> v(static_cast<size_t>(hw * c));
    kern::bn_forward(input.raw(), hw, c, mean->data(), var->data(), gamma.raw(), beta.raw(), eps,
                     v.data());
    return detail::result<T>(
        "batch_norm", input.shape(), std::move(v), {input, gamma, beta},
        [hw, c, eps, train, mean, var](TensorNode<T>& n) {
            auto& in = *n.parents[0];
            auto& g = *n.parents[1];
            auto& b = *n.parents[2];
            in.ensure_grad();
            g.ensure_grad();
            b.ensure_grad();
            if (train) {
                kern::bn_backward(in.value.data(), hw, c, mean->data(), var->data(),
                                  g.value.data(), eps, n.grad.data(), in.grad.data(),
                                  g.grad.data(), b.grad.data());
            } else {
                kern::bn_backward_frozen(hw, c, var->data(), g.value.data(), eps, n.grad.data(),
                                         in.grad.data(), g.grad.data(), b.grad.data(),
                                         in.value.data(), mean->data());
            }
        });
}

template <class T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape().size() != 3 || b.shape().size() != 3)
        throw ShapeError("concat_channels: inputs must be HxWxC");
    if (a.extent(0) != b.extent(0) || a.extent(1) != b.extent(1))
        throw ShapeError("concat_channels: spatial mismatch " +
                         TensorT<T>::shape_str(a.shape()) + " vs " +
                         TensorT<T>::shape_str(b.shape()));
    const int64_t hw = a.extent(0) * a.extent(1);
    const int64_t ca = a.extent(2), cb = b.extent(2);
    std::vector<T> v(static_cast<size_t>(hw * (ca + cb)));
    for (int64_t i = 0; i < hw; ++i) {
        std::memcpy(v.data() + i * (ca + cb), a.raw() + i * ca, sizeof(T) * ca);
        std::memcpy(v.data() + i * (ca + cb) + ca, b.raw() + i * cb, sizeof(T) * cb);
    }
    return detail::result<T>(
        "concat_channels", {a.extent(0), a.extent(1), ca + cb}, std::move(v), {a, b},
        [hw, ca, cb](TensorNode<T>& n) {
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            if (pa.requires_grad) pa.ensure_grad();
            if (pb.requires_grad) pb.ensure_grad();
            for (int64_t i = 0; i < hw; ++i) {
                const T* g = n.grad.data() + i * (ca + cb);
                if (pa.requires_grad)
                    for (int64_t ch = 0; ch < ca; ++ch) pa.grad[i * ca + ch] += g[ch];
                if (pb.requires_grad)
                    for (int64_t ch = 0; ch < cb; ++ch) pb.grad[i * cb + ch] += g[ca + ch];
            }
        });
}

template <class T>
TensorT<T> space_to_depth(const TensorT<T>& input, int64_t block) {
    if (input.shape().size() != 3) throw ShapeError("space_to_depth: input must be HxWxC");
    const int64_t h = input.extent(0), w = input.extent(1), c = input.extent(2);
    if (block < 1 || h % block != 0 || w % block != 0)
        throw ShapeError("space_to_depth: extents " + TensorT<T>::shape_str(input.shape()) +
                         " not divisible by block " + std::to_string(block));
    const int64_t oh = h / block, ow = w / block, oc = c * block * block;
    std::vector<T> v(static_cast<size_t>(oh * ow * oc));
    kern::space_to_depth(input.raw(), h, w, c, block, v.data());
    return detail::result<T>("space_to_depth", {oh, ow, oc}, std::move(v), {input},
                             [oh, ow, c, block](TensorNode<T>& n) {
                                 auto& p = *n.parents[0];
                                 p.ensure_grad();
                                 // scatter grads back: depth_to_space of dout, accumulated
                                 std::vector<T> tmp(p.grad.size());
                                 kern::depth_to_space(n.grad.data(), oh, ow, c, block, tmp.data());
                                 for (size_t i = 0; i < tmp.size(); ++i) p.grad[i] += tmp[i];
                             });
}

template <class T>
TensorT<T> depth_to_space(const TensorT<T>& input, int64_t block) {
    if (input.shape().size() != 3) throw ShapeError("depth_to_space: input must be HxWxC");
    const int64_t h = input.extent(0), w = input.extent(1), c = input.extent(2);
    if (block < 1 || c % (block * block) != 0)
        throw ShapeError("depth_to_space: channels not divisible by block^2");
    const int64_t oc = c / (block * block);
    std::vector<T> v(static_cast<size_t>(h * w * c));
    kern::depth_to_space(input.raw(), h, w, oc, block, v.data());
    return detail::result<T>("depth_to_space", {h * block, w * block, oc}, std::move(v), {input},
                             [h, w, oc, block](TensorNode<T>& n) {
                                 auto& p = *n.parents[0];
                                 p.ensure_grad();
                                 std::vector<T> tmp(p.grad.size());
                                 kern::space_to_depth(n.grad.data(), h * block, w * block, oc,
                                                      block, tmp.data());
                                 for (size_t i = 0; i < tmp.size(); ++i) p.grad[i] += tmp[i];
                             });
}

template <class T>
TensorT<T> reshape(const TensorT<T>& input, std::vector<int64_t> shape) {
    if (TensorT<T>::numel_of(shape) != input.numel())
        throw ShapeError("reshape: cannot view " + TensorT<T>::shape_str(input.shape()) + " as " +
                         TensorT<T>::shape_str(shape));
    std::vector<T> v(input.data());
    return detail::result<T>("reshape", std::move(shape), std::move(v), {input},
                             [](TensorNode<T>& n) {
                                 auto& p = *n.parents[0];
                                 p.ensure_grad();
                                 for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
                             });
}

// x [N x F] * w [F x H] + b[H] broadcast over rows.
template <class T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    if (x.shape().size() != 2 || w.shape().size() != 2)
        throw ShapeError("linear: x and w must be rank-2");
    const int64_t n = x.extent(0), f = x.extent(1), hdim = w.extent(1);
    if (w.extent(0) != f) throw ShapeError("linear: inner extents disagree");
    if (b.defined() && b.numel() != hdim) throw ShapeError("linear: bias length mismatch");
    std::vector<T> v(static_cast<size_t>(n * hdim), T(0));
    kern::gemm_nn(n, hdim, f, x.raw(), w.raw(), v.data());
    if (b.defined()) kern::bias_add(n, hdim, b.raw(), v.data());
    std::vector<TensorT<T>> parents = {x, w};
    if (b.defined()) parents.push_back(b);
    const bool has_bias = b.defined();
    return detail::result<T>("linear", {n, hdim}, std::move(v), std::move(parents),
                             [n, f, hdim, has_bias](TensorNode<T>& nd) {
                                 auto& px = *nd.parents[0];
                                 auto& pw = *nd.parents[1];
                                 if (px.requires_grad) {
                                     px.ensure_grad();
                                     kern::gemm_nt(n, hdim, f, nd.grad.data(), pw.value.data(),
                                                   px.grad.data());
                                 }
                                 if (pw.requires_grad) {
                                     pw.ensure_grad();
                                     kern::gemm_tn(n, hdim, f, px.value.data(), nd.grad.data(),
                                                   pw.grad.data());
                                 }
                                 if (has_bias && nd.parents[2]->requires_grad) {
                                     nd.parents[2]->ensure_grad();
                                     kern::bias_grad(n, hdim, nd.grad.data(),
                                                     nd.parents[2]->grad.data());
                                 }
                             });
}

// Mean binary cross-entropy over logits; targets are constants in {0, 1}.
template <class T>
TensorT<T> bce_with_logits(const TensorT<T>& logits, std::vector<T> targets) {
    if (static_cast<int64_t>(targets.size()) != logits.numel())
        throw ShapeError("bce_with_logits: target count mismatch");
    const int64_t n = logits.numel();
    T loss = 0;
    for (int64_t i = 0; i < n; ++i) {
        const T z = logits.data()[i];
        const T y = targets[i];
        loss += std::max(z, T(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    loss /= static_cast<T>(n);
    auto tgt = std::make_shared<std::vector<T>>(std::move(targets));
    return detail::result<T>("bce_with_logits", {1}, {loss}, {logits}, [tgt, n](TensorNode<T>& nd) {
        auto& p = *nd.parents[0];
        p.ensure_grad();
        const T g = nd.grad[0] / static_cast<T>(n);
        for (int64_t i = 0; i < n; ++i)
            p.grad[i] += g * (sigmoid_scalar(p.value[i]) - (*tgt)[i]);
    });
}

}  // namespace pollen::ops
