#pragma once

// Neural-network primitives on Tensor<T> with reverse-mode gradients.
//
// Every op is a pure function of its inputs plus explicit RNG/state
// arguments. Passing a Tape records the op; passing nullptr runs plain
// inference. All kernels partition work so each output element is owned
// by one thread and accumulated in a fixed order, which keeps results
// bitwise reproducible for any thread count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "blastoseg/errors.hpp"
#include "blastoseg/tensor.hpp"
#include "blastoseg/threading.hpp"

namespace blastoseg {

enum class Padding { kSame, kValid };

namespace detail {

constexpr index_t kElementwiseParallelCutoff = 1 << 14;

inline void require_rank(const char* op, const Shape& s, int rank) {
    if (static_cast<int>(s.size()) != rank)
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                             " tensor, got shape " + shape_str(s));
}

template <typename T, typename Fn>
void elementwise_parallel(index_t n, Fn&& fn) {
    if (n < kElementwiseParallelCutoff) {
        for (index_t i = 0; i < n; ++i) fn(i);
    } else {
        parallel_for(0, n, fn);
    }
}

struct ConvGeom {
    index_t out_h = 0, out_w = 0;
    index_t pad_h = 0, pad_w = 0; // leading pad only; trailing is implied
};

inline ConvGeom conv2d_geometry(const char* op, index_t h, index_t w, index_t kh, index_t kw,
                                index_t stride, index_t dilation, Padding padding) {
    const index_t ext_h = (kh - 1) * dilation + 1;
    const index_t ext_w = (kw - 1) * dilation + 1;
    ConvGeom g;
    if (padding == Padding::kSame) {
        g.out_h = (h + stride - 1) / stride;
        g.out_w = (w + stride - 1) / stride;
        g.pad_h = std::max<index_t>(0, (g.out_h - 1) * stride + ext_h - h) / 2;
        g.pad_w = std::max<index_t>(0, (g.out_w - 1) * stride + ext_w - w) / 2;
    } else {
        if (h < ext_h || w < ext_w)
            throw DimensionError(std::string(op) + ": effective kernel extent " +
                                 std::to_string(ext_h) + "x" + std::to_string(ext_w) +
                                 " exceeds input " + std::to_string(h) + "x" + std::to_string(w));
        g.out_h = (h - ext_h) / stride + 1;
        g.out_w = (w - ext_w) / stride + 1;
    }
    return g;
}

// Eight-lane dot product with a fixed combine order. The explicit
// accumulator fan-out is what lets the compiler vectorize the reduction
// without reassociating under -ffast-math, so results stay bitwise
// reproducible.
template <typename T>
T dot_lanes(const T* __restrict__ a, const T* __restrict__ b, index_t n) {
    T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
    index_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (int k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
    for (; i < n; ++i) acc[0] += a[i] * b[i];
    const T s0 = acc[0] + acc[1], s1 = acc[2] + acc[3];
    const T s2 = acc[4] + acc[5], s3 = acc[6] + acc[7];
    return (s0 + s1) + (s2 + s3);
}

template <typename T>
T dot_strided(const T* __restrict__ a, const T* __restrict__ b, index_t n, index_t stride_b) {
    T acc = T(0);
    for (index_t i = 0; i < n; ++i) acc += a[i] * b[i * stride_b];
    return acc;
}

template <typename T>
T sum_lanes(const T* __restrict__ a, index_t n) {
    T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
    index_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (int k = 0; k < 8; ++k) acc[k] += a[i + k];
    for (; i < n; ++i) acc[0] += a[i];
    const T s0 = acc[0] + acc[1], s1 = acc[2] + acc[3];
    const T s2 = acc[4] + acc[5], s3 = acc[6] + acc[7];
    return (s0 + s1) + (s2 + s3);
}

// y[i] += w * x[i]
template <typename T>
void axpy(T w, const T* __restrict__ x, T* __restrict__ y, index_t n) {
    for (index_t i = 0; i < n; ++i) y[i] += w * x[i];
}

// Valid output-column range for one kernel tap: all ow with
// iw = ow*stride - q in [0, w), where q = pad - tap*dilation.
struct TapRange {
    index_t lo = 0, hi = 0, q = 0;
};

inline TapRange tap_range(index_t in_extent, index_t out_extent, index_t stride, index_t pad,
                          index_t tap, index_t dilation) {
    TapRange r;
    r.q = pad - tap * dilation;
    r.lo = r.q <= 0 ? 0 : (r.q + stride - 1) / stride;
    const index_t last = in_extent - 1 + r.q;
    r.hi = last < 0 ? 0 : std::min(out_extent, last / stride + 1);
    return r;
}

template <typename T>
void conv2d_forward_kernel(const T* in, const T* w, const T* bias, T* out, index_t batch,
                           index_t ci, index_t h, index_t wd, index_t co, index_t kh, index_t kw,
                           const ConvGeom& g, index_t stride, index_t dilation) {
    const index_t oh = g.out_h, ow = g.out_w;
    parallel_for(0, batch * co, [&](index_t bc) {
        const index_t b = bc / co;
        const index_t c = bc % co;
        T* outp = out + bc * oh * ow;
        const T bv = bias ? bias[c] : T(0);
        for (index_t i = 0; i < oh * ow; ++i) outp[i] = bv;
        const T* inb = in + b * ci * h * wd;
        const T* wc = w + c * ci * kh * kw;
        for (index_t ic = 0; ic < ci; ++ic) {
            const T* inc = inb + ic * h * wd;
            const T* wk = wc + ic * kh * kw;
            for (index_t ki = 0; ki < kh; ++ki) {
                const TapRange rh = tap_range(h, oh, stride, g.pad_h, ki, dilation);
                for (index_t kj = 0; kj < kw; ++kj) {
                    const TapRange rw = tap_range(wd, ow, stride, g.pad_w, kj, dilation);
                    const T wv = wk[ki * kw + kj];
                    for (index_t r = rh.lo; r < rh.hi; ++r) {
                        const index_t ih = r * stride - rh.q;
                        T* orow = outp + r * ow;
                        const T* irow = inc + ih * wd - rw.q;
                        if (stride == 1) {
                            axpy(wv, irow + rw.lo, orow + rw.lo, rw.hi - rw.lo);
                        } else {
                            for (index_t cpos = rw.lo; cpos < rw.hi; ++cpos)
                                orow[cpos] += wv * irow[cpos * stride];
                        }
                    }
                }
            }
        }
    });
}

template <typename T>
void conv2d_backward_input_kernel(const T* gout, const T* w, T* gin, index_t batch, index_t ci,
                                  index_t h, index_t wd, index_t co, index_t kh, index_t kw,
                                  const ConvGeom& g, index_t stride, index_t dilation) {
    const index_t oh = g.out_h, ow = g.out_w;
    parallel_for(0, batch * ci, [&](index_t bc) {
        const index_t b = bc / ci;
        const index_t ic = bc % ci;
        T* ginc = gin + bc * h * wd;
        for (index_t c = 0; c < co; ++c) {
            const T* goutp = gout + (b * co + c) * oh * ow;
            const T* wk = w + (c * ci + ic) * kh * kw;
            for (index_t ki = 0; ki < kh; ++ki) {
                const TapRange rh = tap_range(h, oh, stride, g.pad_h, ki, dilation);
                for (index_t kj = 0; kj < kw; ++kj) {
                    const TapRange rw = tap_range(wd, ow, stride, g.pad_w, kj, dilation);
                    const T wv = wk[ki * kw + kj];
                    for (index_t r = rh.lo; r < rh.hi; ++r) {
                        const index_t ih = r * stride - rh.q;
                        const T* grow = goutp + r * ow;
                        T* girow = ginc + ih * wd - rw.q;
                        if (stride == 1) {
                            axpy(wv, grow + rw.lo, girow + rw.lo, rw.hi - rw.lo);
                        } else {
                            for (index_t cpos = rw.lo; cpos < rw.hi; ++cpos)
                                girow[cpos * stride] += wv * grow[cpos];
                        }
                    }
                }
            }
        }
    });
}

template <typename T>
void conv2d_backward_weight_kernel(const T* gout, const T* in, T* gw, index_t batch, index_t ci,
                                   index_t h, index_t wd, index_t co, index_t kh, index_t kw,
                                   const ConvGeom& g, index_t stride, index_t dilation) {
    const index_t oh = g.out_h, ow = g.out_w;
    parallel_for(0, co * ci, [&](index_t cc) {
        const index_t c = cc / ci;
        const index_t ic = cc % ci;
        T* gwk = gw + cc * kh * kw;
        for (index_t ki = 0; ki < kh; ++ki) {
            const TapRange rh = tap_range(h, oh, stride, g.pad_h, ki, dilation);
            for (index_t kj = 0; kj < kw; ++kj) {
                const TapRange rw = tap_range(wd, ow, stride, g.pad_w, kj, dilation);
                T acc = T(0);
                for (index_t b = 0; b < batch; ++b) {
                    const T* goutp = gout + (b * co + c) * oh * ow;
                    const T* inc = in + (b * ci + ic) * h * wd;
                    for (index_t r = rh.lo; r < rh.hi; ++r) {
                        const index_t ih = r * stride - rh.q;
                        const T* grow = goutp + r * ow;
                        const T* irow = inc + ih * wd - rw.q;
                        if (stride == 1) {
                            acc += dot_lanes(grow + rw.lo, irow + rw.lo, rw.hi - rw.lo);
                        } else {
                            acc += dot_strided(grow + rw.lo, irow + rw.lo * stride, rw.hi - rw.lo,
                                               stride);
                        }
                    }
                }
                gwk[ki * kw + kj] += acc;
            }
        }
    });
}

template <typename T>
void conv2d_backward_bias_kernel(const T* gout, T* gb, index_t batch, index_t co, index_t plane) {
    parallel_for(0, co, [&](index_t c) {
        T acc = T(0);
        for (index_t b = 0; b < batch; ++b) acc += sum_lanes(gout + (b * co + c) * plane, plane);
        gb[c] += acc;
    });
}

} // namespace detail

// ---------------------------------------------------------------------
// conv2d: cross-correlation with holes. input [B,Ci,H,W], weight
// [Co,Ci,kh,kw], bias [Co]. With same padding and stride 1 the spatial
// size is preserved for any dilation.
// ---------------------------------------------------------------------
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 index_t stride = 1, index_t dilation = 1, Padding padding = Padding::kSame,
                 Tape<T>* tape = nullptr) {
    detail::require_rank("conv2d", input.shape(), 4);
    detail::require_rank("conv2d", weight.shape(), 4);
    detail::require_rank("conv2d", bias.shape(), 1);
    if (stride < 1) throw ParameterError("conv2d: stride must be >= 1");
    if (dilation < 1) throw ParameterError("conv2d: dilation must be >= 1");
    const index_t batch = input.dim(0), ci = input.dim(1), h = input.dim(2), w = input.dim(3);
    const index_t co = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != ci)
        throw DimensionError("conv2d: input has " + std::to_string(ci) +
                             " channels but weight expects " + std::to_string(weight.dim(1)));
    if (bias.dim(0) != co)
        throw DimensionError("conv2d: bias size " + std::to_string(bias.dim(0)) +
                             " != output channels " + std::to_string(co));
    const detail::ConvGeom g = detail::conv2d_geometry("conv2d", h, w, kh, kw, stride, dilation, padding);

    Tensor<T> out({batch, co, g.out_h, g.out_w});
    detail::conv2d_forward_kernel(input.data(), weight.data(), bias.data(), out.data(), batch, ci,
                                  h, w, co, kh, kw, g, stride, dilation);
    if (tape) {
        const int in_id = tape->track(input);
        const int w_id = tape->track(weight);
        const int b_id = tape->track(bias);
        if (in_id >= 0 || w_id >= 0 || b_id >= 0) {
            tape->record(out, {in_id, w_id, b_id},
                         [=, in = input, wt = weight](const T* gout, Tape<T>& t) {
                             if (in_id >= 0)
                                 detail::conv2d_backward_input_kernel(gout, wt.data(), t.grad_buffer(in_id),
                                                                      batch, ci, h, w, co, kh, kw, g,
                                                                      stride, dilation);
                             if (w_id >= 0)
                                 detail::conv2d_backward_weight_kernel(gout, in.data(), t.grad_buffer(w_id),
                                                                       batch, ci, h, w, co, kh, kw, g,
                                                                       stride, dilation);
                             if (b_id >= 0)
                                 detail::conv2d_backward_bias_kernel(gout, t.grad_buffer(b_id), batch, co,
                                                                     g.out_h * g.out_w);
                         });
        }
    }
    return out;
}

// ---------------------------------------------------------------------
// conv2d_transpose: fractionally strided convolution. input [B,Ci,H,W],
// weight [Ci,Co,kh,kw], no padding, output [(H-1)*s+kh, (W-1)*s+kw].
// Forward here is the adjoint of conv2d's backward-input with the same
// kernel, which the decoder uses to exactly double spatial dims (k=s=2).
// ---------------------------------------------------------------------
template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& input, const Tensor<T>& weight, index_t stride = 2,
                           Tape<T>* tape = nullptr) {
    detail::require_rank("conv2d_transpose", input.shape(), 4);
    detail::require_rank("conv2d_transpose", weight.shape(), 4);
    if (stride < 1) throw ParameterError("conv2d_transpose: stride must be >= 1");
    const index_t batch = input.dim(0), ci = input.dim(1), h = input.dim(2), w = input.dim(3);
    const index_t co = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(0) != ci)
        throw DimensionError("conv2d_transpose: input has " + std::to_string(ci) +
                             " channels but weight expects " + std::to_string(weight.dim(0)));
    const index_t oh = (h - 1) * stride + kh;
    const index_t ow = (w - 1) * stride + kw;

    Tensor<T> out({batch, co, oh, ow});
    T* outd = out.data();
    const T* ind = input.data();
    const T* wd = weight.data();
    parallel_for(0, batch * co, [&](index_t bc) {
        const index_t b = bc / co;
        const index_t c = bc % co;
        T* outp = outd + bc * oh * ow;
        std::fill(outp, outp + oh * ow, T(0));
        for (index_t ic = 0; ic < ci; ++ic) {
            const T* inc = ind + (b * ci + ic) * h * w;
            const T* wk = wd + (ic * co + c) * kh * kw;
            for (index_t ki = 0; ki < kh; ++ki) {
                for (index_t kj = 0; kj < kw; ++kj) {
                    const T wv = wk[ki * kw + kj];
                    for (index_t ih = 0; ih < h; ++ih) {
                        T* orow = outp + (ih * stride + ki) * ow + kj;
                        const T* irow = inc + ih * w;
                        for (index_t iw = 0; iw < w; ++iw) orow[iw * stride] += wv * irow[iw];
                    }
                }
            }
        }
    });

    if (tape) {
        const int in_id = tape->track(input);
        const int w_id = tape->track(weight);
        if (in_id >= 0 || w_id >= 0) {
            tape->record(out, {in_id, w_id},
                         [=, in = input, wt = weight](const T* gout, Tape<T>& t) {
                             if (in_id >= 0) {
                                 T* gin = t.grad_buffer(in_id);
                                 const T* wdl = wt.data();
                                 parallel_for(0, batch * ci, [&](index_t bc) {
                                     const index_t b = bc / ci;
                                     const index_t ic = bc % ci;
                                     T* ginc = gin + bc * h * w;
                                     for (index_t c = 0; c < co; ++c) {
                                         const T* goutp = gout + (b * co + c) * oh * ow;
                                         const T* wk = wdl + (ic * co + c) * kh * kw;
                                         for (index_t ki = 0; ki < kh; ++ki) {
                                             for (index_t kj = 0; kj < kw; ++kj) {
                                                 const T wv = wk[ki * kw + kj];
                                                 for (index_t ih = 0; ih < h; ++ih) {
                                                     const T* grow = goutp + (ih * stride + ki) * ow + kj;
                                                     T* girow = ginc + ih * w;
                                                     for (index_t iw = 0; iw < w; ++iw)
                                                         girow[iw] += wv * grow[iw * stride];
                                                 }
                                             }
                                         }
                                     }
                                 });
                             }
                             if (w_id >= 0) {
                                 T* gw = t.grad_buffer(w_id);
                                 const T* indl = in.data();
                                 parallel_for(0, ci * co, [&](index_t cc) {
                                     const index_t ic = cc / co;
                                     const index_t c = cc % co;
                                     T* gwk = gw + cc * kh * kw;
                                     for (index_t ki = 0; ki < kh; ++ki) {
                                         for (index_t kj = 0; kj < kw; ++kj) {
                                             T acc = T(0);
                                             for (index_t b = 0; b < batch; ++b) {
                                                 const T* inc = indl + (b * ci + ic) * h * w;
                                                 const T* goutp = gout + (b * co + c) * oh * ow;
                                                 for (index_t ih = 0; ih < h; ++ih) {
                                                     const T* irow = inc + ih * w;
                                                     const T* grow = goutp + (ih * stride + ki) * ow + kj;
                                                     for (index_t iw = 0; iw < w; ++iw)
                                                         acc += irow[iw] * grow[iw * stride];
                                                 }
                                             }
                                             gwk[ki * kw + kj] += acc;
                                         }
                                     }
                                 });
                             }
                         });
        }
    }
    return out;
}

// ---------------------------------------------------------------------
// maxpool2d: 2x2 window, stride 2. Ties go to the first element in
// row-major window order; backward routes all gradient to the argmax.
// ---------------------------------------------------------------------
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, Tape<T>* tape = nullptr) {
    detail::require_rank("maxpool2d", input.shape(), 4);
    const index_t batch = input.dim(0), ch = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (h % 2 != 0 || w % 2 != 0)
        throw DimensionError("maxpool2d: spatial dims must be even, got " + std::to_string(h) +
                             "x" + std::to_string(w));
    const index_t oh = h / 2, ow = w / 2;
    Tensor<T> out({batch, ch, oh, ow});
    auto argmax = std::make_shared<std::vector<std::uint8_t>>(static_cast<std::size_t>(out.numel()));
    const T* ind = input.data();
    T* outd = out.data();
    std::uint8_t* amd = argmax->data();
    parallel_for(0, batch * ch, [&](index_t bc) {
        const T* inp = ind + bc * h * w;
        T* outp = outd + bc * oh * ow;
        std::uint8_t* amp = amd + bc * oh * ow;
        for (index_t r = 0; r < oh; ++r) {
            const T* r0 = inp + 2 * r * w;
            const T* r1 = r0 + w;
            for (index_t c = 0; c < ow; ++c) {
                const T v[4] = {r0[2 * c], r0[2 * c + 1], r1[2 * c], r1[2 * c + 1]};
                int best = 0;
                for (int k = 1; k < 4; ++k)
                    if (v[k] > v[best]) best = k;
                outp[r * ow + c] = v[best];
                amp[r * ow + c] = static_cast<std::uint8_t>(best);
            }
        }
    });

    if (tape) {
        const int in_id = tape->track(input);
        if (in_id >= 0) {
            tape->record(out, {in_id}, [=](const T* gout, Tape<T>& t) {
                T* gin = t.grad_buffer(in_id);
                const std::uint8_t* amp = argmax->data();
                parallel_for(0, batch * ch, [&](index_t bc) {
                    T* ginp = gin + bc * h * w;
                    const T* goutp = gout + bc * oh * ow;
                    const std::uint8_t* am = amp + bc * oh * ow;
                    for (index_t r = 0; r < oh; ++r) {
                        for (index_t c = 0; c < ow; ++c) {
                            const int k = am[r * ow + c];
                            const index_t ih = 2 * r + k / 2;
                            const index_t iw = 2 * c + k % 2;
                            ginp[ih * w + iw] += goutp[r * ow + c];
                        }
                    }
                });
            });
        }
    }
    return out;
}

// ---------------------------------------------------------------------
// Batch normalization over [B,C,H,W], statistics per channel.
// ---------------------------------------------------------------------
template <typename T>
struct BatchNormState {
    Tensor<T> gamma;
    Tensor<T> beta;
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T momentum = T(0.9);
    T epsilon = T(1e-5);

    explicit BatchNormState(index_t channels = 0) {
        if (channels > 0) {
            gamma = Tensor<T>({channels}, T(1), true);
            beta = Tensor<T>({channels}, T(0), true);
            running_mean.assign(static_cast<std::size_t>(channels), T(0));
            running_var.assign(static_cast<std::size_t>(channels), T(1));
        }
    }

    index_t channels() const { return gamma.defined() ? gamma.dim(0) : 0; }
};

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, BatchNormState<T>& state, bool training,
                      Tape<T>* tape = nullptr) {
    detail::require_rank("batchnorm2d", input.shape(), 4);
    const index_t batch = input.dim(0), ch = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (ch != state.channels())
        throw DimensionError("batchnorm2d: input has " + std::to_string(ch) +
                             " channels, state has " + std::to_string(state.channels()));
    const index_t plane = h * w;
    const index_t n = batch * plane;
    if (training && n == 1)
        throw ParameterError("batchnorm2d: batch*H*W == 1 has undefined variance in training mode");

    Tensor<T> out(input.shape());
    auto mean = std::make_shared<std::vector<T>>(static_cast<std::size_t>(ch));
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(ch));
    const T* ind = input.data();
    T* outd = out.data();
    const T* gm = state.gamma.data();
    const T* bt = state.beta.data();
    const T eps = state.epsilon;

    if (training) {
        parallel_for(0, ch, [&](index_t c) {
            T s = T(0);
            for (index_t b = 0; b < batch; ++b) {
                const T* p = ind + (b * ch + c) * plane;
                for (index_t i = 0; i < plane; ++i) s += p[i];
            }
            const T m = s / static_cast<T>(n);
            T v = T(0);
            for (index_t b = 0; b < batch; ++b) {
                const T* p = ind + (b * ch + c) * plane;
                for (index_t i = 0; i < plane; ++i) {
                    const T d = p[i] - m;
                    v += d * d;
                }
            }
            v /= static_cast<T>(n);
            (*mean)[static_cast<std::size_t>(c)] = m;
            const T is = T(1) / std::sqrt(v + eps);
            (*inv_std)[static_cast<std::size_t>(c)] = is;
            const T a = gm[c] * is;
            const T shift = bt[c] - m * a;
            for (index_t b = 0; b < batch; ++b) {
                const T* p = ind + (b * ch + c) * plane;
                T* q = outd + (b * ch + c) * plane;
                for (index_t i = 0; i < plane; ++i) q[i] = a * p[i] + shift;
            }
            state.running_mean[static_cast<std::size_t>(c)] =
                state.momentum * state.running_mean[static_cast<std::size_t>(c)] + (T(1) - state.momentum) * m;
            state.running_var[static_cast<std::size_t>(c)] =
                state.momentum * state.running_var[static_cast<std::size_t>(c)] + (T(1) - state.momentum) * v;
        });
    } else {
        parallel_for(0, ch, [&](index_t c) {
            const T m = state.running_mean[static_cast<std::size_t>(c)];
            const T is = T(1) / std::sqrt(state.running_var[static_cast<std::size_t>(c)] + eps);
            (*mean)[static_cast<std::size_t>(c)] = m;
            (*inv_std)[static_cast<std::size_t>(c)] = is;
            const T a = gm[c] * is;
            const T shift = bt[c] - m * a;
            for (index_t b = 0; b < batch; ++b) {
                const T* p = ind + (b * ch + c) * plane;
                T* q = outd + (b * ch + c) * plane;
                for (index_t i = 0; i < plane; ++i) q[i] = a * p[i] + shift;
            }
        });
    }

    if (tape) {
        const int in_id = tape->track(input);
        const int g_id = tape->track(state.gamma);
        const int b_id = tape->track(state.beta);
        if (in_id >= 0 || g_id >= 0 || b_id >= 0) {
            tape->record(out, {in_id, g_id, b_id},
                         [=, in = input, gamma = state.gamma](const T* gout, Tape<T>& t) {
                             const T* x = in.data();
                             const T* gmv = gamma.data();
                             T* gin = in_id >= 0 ? t.grad_buffer(in_id) : nullptr;
                             T* gg = g_id >= 0 ? t.grad_buffer(g_id) : nullptr;
                             T* gb = b_id >= 0 ? t.grad_buffer(b_id) : nullptr;
                             parallel_for(0, ch, [&](index_t c) {
                                 const T m = (*mean)[static_cast<std::size_t>(c)];
                                 const T is = (*inv_std)[static_cast<std::size_t>(c)];
                                 T sum_dy = T(0), sum_dy_xhat = T(0);
                                 for (index_t b = 0; b < batch; ++b) {
                                     const T* dy = gout + (b * ch + c) * plane;
                                     const T* xp = x + (b * ch + c) * plane;
                                     for (index_t i = 0; i < plane; ++i) {
                                         sum_dy += dy[i];
                                         sum_dy_xhat += dy[i] * (xp[i] - m) * is;
                                     }
                                 }
                                 if (gg) gg[c] += sum_dy_xhat;
                                 if (gb) gb[c] += sum_dy;
                                 if (gin) {
                                     const T a = gmv[c] * is;
                                     if (training) {
                                         const T mean_dy = sum_dy / static_cast<T>(n);
                                         const T mean_dy_xhat = sum_dy_xhat / static_cast<T>(n);
                                         for (index_t b = 0; b < batch; ++b) {
                                             const T* dy = gout + (b * ch + c) * plane;
                                             const T* xp = x + (b * ch + c) * plane;
                                             T* gi = gin + (b * ch + c) * plane;
                                             for (index_t i = 0; i < plane; ++i) {
                                                 const T xhat = (xp[i] - m) * is;
                                                 gi[i] += a * (dy[i] - mean_dy - xhat * mean_dy_xhat);
                                             }
                                         }
                                     } else {
                                         for (index_t b = 0; b < batch; ++b) {
                                             const T* dy = gout + (b * ch + c) * plane;
                                             T* gi = gin + (b * ch + c) * plane;
                                             for (index_t i = 0; i < plane; ++i) gi[i] += a * dy[i];
                                         }
                                     }
                                 }
                             });
                         });
        }
    }
    return out;
}

// ---------------------------------------------------------------------
// Inverted dropout: zero with probability `rate`, scale survivors by
// 1/(1-rate). Inference is the identity.
// ---------------------------------------------------------------------
template <typename T>
Tensor<T> dropout(const Tensor<T>& input, double rate, bool training, Rng& rng,
                  Tape<T>* tape = nullptr) {
    if (rate < 0.0 || rate >= 1.0)
        throw ParameterError("dropout: rate must be in [0,1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return input;

    const index_t n = input.numel();
    auto mask = std::make_shared<std::vector<std::uint8_t>>(static_cast<std::size_t>(n));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (index_t i = 0; i < n; ++i) (*mask)[static_cast<std::size_t>(i)] = uni(rng) >= rate ? 1 : 0;

    const T scale = static_cast<T>(1.0 / (1.0 - rate));
    Tensor<T> out(input.shape());
    const T* ind = input.data();
    T* outd = out.data();
    const std::uint8_t* md = mask->data();
    detail::elementwise_parallel<T>(n, [&](index_t i) { outd[i] = md[i] ? ind[i] * scale : T(0); });

    if (tape) {
        const int in_id = tape->track(input);
        if (in_id >= 0) {
            tape->record(out, {in_id}, [=](const T* gout, Tape<T>& t) {
                T* gin = t.grad_buffer(in_id);
                const std::uint8_t* m = mask->data();
                detail::elementwise_parallel<T>(n, [&](index_t i) {
                    if (m[i]) gin[i] += gout[i] * scale;
                });
            });
        }
    }
    return out;
}

// ---------------------------------------------------------------------
// Elementwise ops and reductions.
// ---------------------------------------------------------------------
template <typename T>
Tensor<T> relu(const Tensor<T>& input, Tape<T>* tape = nullptr) {
    Tensor<T> out(input.shape());
    const index_t n = input.numel();
    const T* ind = input.data();
    T* outd = out.data();
    detail::elementwise_parallel<T>(n, [&](index_t i) { outd[i] = ind[i] > T(0) ? ind[i] : T(0); });
    if (tape) {
        const int in_id = tape->track(input);
        if (in_id >= 0) {
            tape->record(out, {in_id}, [=, in = input](const T* gout, Tape<T>& t) {
                T* gin = t.grad_buffer(in_id);
                const T* x = in.data();
                detail::elementwise_parallel<T>(n, [&](index_t i) {
                    if (x[i] > T(0)) gin[i] += gout[i];
                });
            });
        }
    }
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input, Tape<T>* tape = nullptr) {
    Tensor<T> out(input.shape());
    const index_t n = input.numel();
    const T* ind = input.data();
    T* outd = out.data();
    // saturated logits are pinned to the nearest representable values
    // strictly inside (0,1)
    const T lo = std::numeric_limits<T>::min();
    const T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
    detail::elementwise_parallel<T>(n, [&](index_t i) {
        const T s = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(ind[i]))));
        outd[i] = std::min(std::max(s, lo), hi);
    });
    if (tape) {
        const int in_id = tape->track(input);
        if (in_id >= 0) {
            tape->record(out, {in_id}, [=, sv = out](const T* gout, Tape<T>& t) {
                T* gin = t.grad_buffer(in_id);
                const T* s = sv.data();
                detail::elementwise_parallel<T>(n, [&](index_t i) {
                    gin[i] += gout[i] * s[i] * (T(1) - s[i]);
                });
            });
        }
    }
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    if (!a.same_shape(b))
        throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    const index_t n = a.numel();
    const T* ad = a.data();
    const T* bd = b.data();
    T* outd = out.data();
    detail::elementwise_parallel<T>(n, [&](index_t i) { outd[i] = ad[i] + bd[i]; });
    if (tape) {
        const int a_id = tape->track(a);
        const int b_id = tape->track(b);
        if (a_id >= 0 || b_id >= 0) {
            tape->record(out, {a_id, b_id}, [=](const T* gout, Tape<T>& t) {
                if (a_id >= 0) {
                    T* ga = t.grad_buffer(a_id);
                    detail::elementwise_parallel<T>(n, [&](index_t i) { ga[i] += gout[i]; });
                }
                if (b_id >= 0) {
                    T* gb = t.grad_buffer(b_id);
                    detail::elementwise_parallel<T>(n, [&](index_t i) { gb[i] += gout[i]; });
                }
            });
        }
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    if (!a.same_shape(b))
        throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    const index_t n = a.numel();
    const T* ad = a.data();
    const T* bd = b.data();
    T* outd = out.data();
    detail::elementwise_parallel<T>(n, [&](index_t i) { outd[i] = ad[i] * bd[i]; });
    if (tape) {
        const int a_id = tape->track(a);
        const int b_id = tape->track(b);
        if (a_id >= 0 || b_id >= 0) {
            tape->record(out, {a_id, b_id}, [=, av = a, bv = b](const T* gout, Tape<T>& t) {
                if (a_id >= 0) {
                    T* ga = t.grad_buffer(a_id);
                    const T* bp = bv.data();
                    detail::elementwise_parallel<T>(n, [&](index_t i) { ga[i] += gout[i] * bp[i]; });
                }
                if (b_id >= 0) {
                    T* gb = t.grad_buffer(b_id);
                    const T* ap = av.data();
                    detail::elementwise_parallel<T>(n, [&](index_t i) { gb[i] += gout[i] * ap[i]; });
                }
            });
        }
    }
    return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    detail::require_rank("concat_channels", a.shape(), 4);
    detail::require_rank("concat_channels", b.shape(), 4);
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw DimensionError("concat_channels: non-channel dims differ, " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    const index_t batch = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
    Tensor<T> out({batch, ca + cb, a.dim(2), a.dim(3)});
    const T* ad = a.data();
    const T* bd = b.data();
    T* outd = out.data();
    parallel_for(0, batch, [&](index_t bi) {
        std::copy(ad + bi * ca * plane, ad + (bi + 1) * ca * plane, outd + bi * (ca + cb) * plane);
        std::copy(bd + bi * cb * plane, bd + (bi + 1) * cb * plane,
                  outd + (bi * (ca + cb) + ca) * plane);
    });
    if (tape) {
        const int a_id = tape->track(a);
        const int b_id = tape->track(b);
        if (a_id >= 0 || b_id >= 0) {
            tape->record(out, {a_id, b_id}, [=](const T* gout, Tape<T>& t) {
                if (a_id >= 0) {
                    T* ga = t.grad_buffer(a_id);
                    parallel_for(0, batch, [&](index_t bi) {
                        const T* src = gout + bi * (ca + cb) * plane;
                        T* dst = ga + bi * ca * plane;
                        for (index_t i = 0; i < ca * plane; ++i) dst[i] += src[i];
                    });
                }
                if (b_id >= 0) {
                    T* gb = t.grad_buffer(b_id);
                    parallel_for(0, batch, [&](index_t bi) {
                        const T* src = gout + (bi * (ca + cb) + ca) * plane;
                        T* dst = gb + bi * cb * plane;
                        for (index_t i = 0; i < cb * plane; ++i) dst[i] += src[i];
                    });
                }
            });
        }
    }
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& input, Tape<T>* tape = nullptr) {
    T acc = T(0);
    const T* ind = input.data();
    const index_t n = input.numel();
    for (index_t i = 0; i < n; ++i) acc += ind[i];
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (tape) {
        const int in_id = tape->track(input);
        if (in_id >= 0) {
            tape->record(out, {in_id}, [=](const T* gout, Tape<T>& t) {
                T* gin = t.grad_buffer(in_id);
                const T g = gout[0];
                detail::elementwise_parallel<T>(n, [&](index_t i) { gin[i] += g; });
            });
        }
    }
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& input, Tape<T>* tape = nullptr) {
    T acc = T(0);
    const T* ind = input.data();
    const index_t n = input.numel();
    for (index_t i = 0; i < n; ++i) acc += ind[i];
    Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(n));
    if (tape) {
        const int in_id = tape->track(input);
        if (in_id >= 0) {
            tape->record(out, {in_id}, [=](const T* gout, Tape<T>& t) {
                T* gin = t.grad_buffer(in_id);
                const T g = gout[0] / static_cast<T>(n);
                detail::elementwise_parallel<T>(n, [&](index_t i) { gin[i] += g; });
            });
        }
    }
    return out;
}

} // namespace blastoseg
