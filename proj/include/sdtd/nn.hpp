#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "sdtd/common.hpp"
#include "sdtd/tensor.hpp"

namespace sdtd::nn {

// ---------------------------------------------------------------------------
// nonlinearities

// sigma(x) = 1/(1+e^-x), stable across the double range.
template <typename T>
T sigmoid(T x) {
    if (x >= T(0)) {
        const T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

// phi(x) = tanh(x) = 2*sigma(2x)-1
template <typename T>
T tanh_phi(T x) {
    return std::tanh(x);
}

// ---------------------------------------------------------------------------
// convolution

template <typename T>
struct Conv2dCache {
    Tensor<T> input;
    int stride = 1;
    int pad = 0;
};

inline int conv_out_extent(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// x: [N,C,H,W], w: [O,I,kh,kw], b: [O]
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                         int stride, int pad, Conv2dCache<T>* cache = nullptr) {
    if (x.shape.size() != 4 || w.shape.size() != 4)
        throw DataError("conv2d: expected NCHW input and OIHW kernels");
    const int n = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3];
    const int co = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    if (w.shape[1] != ci) throw DataError("conv2d: channel mismatch");
    if (b.numel() != static_cast<std::size_t>(co)) throw DataError("conv2d: bias size mismatch");
    const int oh = conv_out_extent(h, kh, stride, pad);
    const int ow = conv_out_extent(wd, kw, stride, pad);
    if (oh < 1 || ow < 1) throw DataError("conv2d: kernel larger than padded input");

    Tensor<T> y({n, co, oh, ow});
    for (int in = 0; in < n; ++in)
        for (int o = 0; o < co; ++o) {
            T* yb = y.ptr() + ((static_cast<std::size_t>(in) * co + o) * oh) * ow;
            const T bias = b[o];
            for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i) yb[i] = bias;
            for (int ic = 0; ic < ci; ++ic) {
                const T* xb = x.ptr() + ((static_cast<std::size_t>(in) * ci + ic) * h) * wd;
                const T* wb = w.ptr() + ((static_cast<std::size_t>(o) * ci + ic) * kh) * kw;
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const T wv = wb[ky * kw + kx];
                        // hoist the in-bounds ranges so the inner loop is branch-free
                        int ox_lo = 0, ox_hi = ow;
                        if (stride == 1) {
                            ox_lo = std::max(0, pad - kx);
                            ox_hi = std::min(ow, wd + pad - kx);
                        }
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= h) continue;
                            T* yrow = yb + static_cast<std::size_t>(oy) * ow;
                            const T* xrow = xb + static_cast<std::size_t>(iy) * wd;
                            if (stride == 1) {
                                const T* __restrict xoff = xrow - pad + kx;
                                T* __restrict yr = yrow;
                                for (int ox = ox_lo; ox < ox_hi; ++ox)
                                    yr[ox] += wv * xoff[ox];
                            } else {
                                for (int ox = 0; ox < ow; ++ox) {
                                    const int ix = ox * stride - pad + kx;
                                    if (ix < 0 || ix >= wd) continue;
                                    yrow[ox] += wv * xrow[ix];
                                }
                            }
                        }
                    }
            }
        }
    if (cache) {
        cache->input = x;
        cache->stride = stride;
        cache->pad = pad;
    }
    return y;
}

// Returns dx; accumulates into dw, db.
template <typename T>
Tensor<T> conv2d_backward(const Conv2dCache<T>& cache, const Tensor<T>& w,
                          const Tensor<T>& dy, Tensor<T>& dw, Tensor<T>& db) {
    const Tensor<T>& x = cache.input;
    const int stride = cache.stride, pad = cache.pad;
    const int n = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3];
    const int co = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    const int oh = dy.shape[2], ow = dy.shape[3];

    Tensor<T> dx(x.shape);
    for (int in = 0; in < n; ++in)
        for (int o = 0; o < co; ++o) {
            const T* dyb = dy.ptr() + ((static_cast<std::size_t>(in) * co + o) * oh) * ow;
            T acc = T(0);
            for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i) acc += dyb[i];
            db[o] += acc;
            for (int ic = 0; ic < ci; ++ic) {
                const T* xb = x.ptr() + ((static_cast<std::size_t>(in) * ci + ic) * h) * wd;
                T* dxb = dx.ptr() + ((static_cast<std::size_t>(in) * ci + ic) * h) * wd;
                T* dwb = dw.ptr() + ((static_cast<std::size_t>(o) * ci + ic) * kh) * kw;
                const T* wb = w.ptr() + ((static_cast<std::size_t>(o) * ci + ic) * kh) * kw;
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        T wgrad = T(0);
                        const T wv = wb[ky * kw + kx];
                        int ox_lo = 0, ox_hi = ow;
                        if (stride == 1) {
                            ox_lo = std::max(0, pad - kx);
                            ox_hi = std::min(ow, wd + pad - kx);
                        }
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= h) continue;
                            const T* dyrow = dyb + static_cast<std::size_t>(oy) * ow;
                            const T* xrow = xb + static_cast<std::size_t>(iy) * wd;
                            T* dxrow = dxb + static_cast<std::size_t>(iy) * wd;
                            if (stride == 1) {
                                const T* __restrict xoff = xrow - pad + kx;
                                const T* __restrict dyr = dyrow;
                                T* __restrict dxoff = dxrow - pad + kx;
                                for (int ox = ox_lo; ox < ox_hi; ++ox) {
                                    wgrad += dyr[ox] * xoff[ox];
                                    dxoff[ox] += dyr[ox] * wv;
                                }
                            } else {
                                for (int ox = 0; ox < ow; ++ox) {
                                    const int ix = ox * stride - pad + kx;
                                    if (ix < 0 || ix >= wd) continue;
                                    wgrad += dyrow[ox] * xrow[ix];
                                    dxrow[ix] += dyrow[ox] * wv;
                                }
                            }
                        }
                        dwb[ky * kw + kx] += wgrad;
                    }
            }
        }
    return dx;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2

template <typename T>
struct MaxPoolCache {
    std::vector<int> argmax;  // flat input index per output element
    std::vector<int> in_shape;
};

template <typename T>
Tensor<T> maxpool2x2_forward(const Tensor<T>& x, MaxPoolCache<T>* cache = nullptr) {
    const int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    if (h % 2 != 0 || w % 2 != 0)
        throw DataError("maxpool2x2: spatial dims must be even");
    const int oh = h / 2, ow = w / 2;
    Tensor<T> y({n, c, oh, ow});
    std::vector<int> argmax(y.numel());
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const std::size_t base = (static_cast<std::size_t>(in) * c + ic) * h * w;
            const std::size_t obase = (static_cast<std::size_t>(in) * c + ic) * oh * ow;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    const int iy = oy * 2, ix = ox * 2;
                    std::size_t best = base + static_cast<std::size_t>(iy) * w + ix;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const std::size_t idx =
                                base + static_cast<std::size_t>(iy + dy) * w + (ix + dx);
                            if (x.data[idx] > x.data[best]) best = idx;
                        }
                    y.data[obase + static_cast<std::size_t>(oy) * ow + ox] = x.data[best];
                    argmax[obase + static_cast<std::size_t>(oy) * ow + ox] =
                        static_cast<int>(best);
                }
        }
    if (cache) {
        cache->argmax = std::move(argmax);
        cache->in_shape = x.shape;
    }
    return y;
}

template <typename T>
Tensor<T> maxpool2x2_backward(const MaxPoolCache<T>& cache, const Tensor<T>& dy) {
    Tensor<T> dx(cache.in_shape);
    for (std::size_t i = 0; i < dy.numel(); ++i)
        dx.data[static_cast<std::size_t>(cache.argmax[i])] += dy.data[i];
    return dx;
}

// ---------------------------------------------------------------------------
// fully connected

template <typename T>
struct FcCache {
    Tensor<T> input;  // [N,D]
};

// x: [N,D], w: [O,D], b: [O] -> [N,O]
template <typename T>
Tensor<T> fc_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                     FcCache<T>* cache = nullptr) {
    const int n = x.shape[0];
    const int d = static_cast<int>(x.numel()) / n;
    const int o = w.shape[0];
    if (w.shape[1] != d) throw DataError("fc: weight/input dim mismatch");
    Tensor<T> y({n, o});
    for (int in = 0; in < n; ++in) {
        const T* xr = x.ptr() + static_cast<std::size_t>(in) * d;
        T* yr = y.ptr() + static_cast<std::size_t>(in) * o;
        for (int io = 0; io < o; ++io) {
            const T* wr = w.ptr() + static_cast<std::size_t>(io) * d;
            T acc = b[io];
            for (int k = 0; k < d; ++k) acc += xr[k] * wr[k];
            yr[io] = acc;
        }
    }
    if (cache) {
        cache->input = x;
        if (static_cast<int>(cache->input.shape.size()) != 2)
            cache->input.shape = {n, d};
    }
    return y;
}

template <typename T>
Tensor<T> fc_backward(const FcCache<T>& cache, const Tensor<T>& w, const Tensor<T>& dy,
                      Tensor<T>& dw, Tensor<T>& db) {
    const Tensor<T>& x = cache.input;
    const int n = x.shape[0], d = x.shape[1], o = w.shape[0];
    Tensor<T> dx({n, d});
    for (int in = 0; in < n; ++in) {
        const T* xr = x.ptr() + static_cast<std::size_t>(in) * d;
        const T* dyr = dy.ptr() + static_cast<std::size_t>(in) * o;
        T* dxr = dx.ptr() + static_cast<std::size_t>(in) * d;
        for (int io = 0; io < o; ++io) {
            const T g = dyr[io];
            db[io] += g;
            const T* wr = w.ptr() + static_cast<std::size_t>(io) * d;
            T* dwr = dw.ptr() + static_cast<std::size_t>(io) * d;
            for (int k = 0; k < d; ++k) {
                dwr[k] += g * xr[k];
                dxr[k] += g * wr[k];
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// relu

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x, Tensor<T>* cache_mask = nullptr) {
    Tensor<T> y(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
    if (cache_mask) *cache_mask = x;
    return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& cached_input, const Tensor<T>& dy) {
    Tensor<T> dx(dy.shape);
    for (std::size_t i = 0; i < dy.numel(); ++i)
        dx.data[i] = cached_input.data[i] > T(0) ? dy.data[i] : T(0);
    return dx;
}

// ---------------------------------------------------------------------------
// softmax + cross entropy

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
    const int n = logits.shape[0], c = logits.shape[1];
    Tensor<T> p(logits.shape);
    for (int in = 0; in < n; ++in) {
        const T* lr = logits.ptr() + static_cast<std::size_t>(in) * c;
        T* pr = p.ptr() + static_cast<std::size_t>(in) * c;
        T mx = lr[0];
        for (int k = 1; k < c; ++k) mx = std::max(mx, lr[k]);
        T sum = T(0);
        for (int k = 0; k < c; ++k) {
            pr[k] = std::exp(lr[k] - mx);
            sum += pr[k];
        }
        for (int k = 0; k < c; ++k) pr[k] /= sum;
    }
    return p;
}

// Mean cross-entropy over the batch; dlogits is (p - onehot)/N.
template <typename T>
std::pair<T, Tensor<T>> softmax_cross_entropy(const Tensor<T>& logits,
                                              const std::vector<int>& labels) {
    const int n = logits.shape[0], c = logits.shape[1];
    if (static_cast<int>(labels.size()) != n)
        throw DataError("softmax_cross_entropy: label count mismatch");
    Tensor<T> p = softmax(logits);
    Tensor<T> dlogits = p;
    T loss = T(0);
    for (int in = 0; in < n; ++in) {
        const int lbl = labels[in];
        if (lbl < 0 || lbl >= c)
            throw DataError("softmax_cross_entropy: label out of range");
        const T pi = p.data[static_cast<std::size_t>(in) * c + lbl];
        loss -= std::log(std::max(pi, T(1e-300)));
        dlogits.data[static_cast<std::size_t>(in) * c + lbl] -= T(1);
    }
    loss /= T(n);
    for (T& v : dlogits.data) v /= T(n);
    return {loss, std::move(dlogits)};
}

// ---------------------------------------------------------------------------
// LSTM, the exact five-equation unit (no peepholes)

template <typename T>
struct LstmParams {
    int input_dim = 0;
    int hidden_dim = 0;
    Tensor<T> w_xi, w_hi, b_i;
    Tensor<T> w_xf, w_hf, b_f;
    Tensor<T> w_xc, w_hc, b_c;
    Tensor<T> w_xo, w_ho, b_o;

    LstmParams() = default;
    LstmParams(int in_dim, int hid_dim)
        : input_dim(in_dim), hidden_dim(hid_dim),
          w_xi({hid_dim, in_dim}), w_hi({hid_dim, hid_dim}), b_i({hid_dim}),
          w_xf({hid_dim, in_dim}), w_hf({hid_dim, hid_dim}), b_f({hid_dim}),
          w_xc({hid_dim, in_dim}), w_hc({hid_dim, hid_dim}), b_c({hid_dim}),
          w_xo({hid_dim, in_dim}), w_ho({hid_dim, hid_dim}), b_o({hid_dim}) {}
};

// Batched state: h, c are [N, hidden].
template <typename T>
struct LstmState {
    Tensor<T> h;
    Tensor<T> c;

    LstmState() = default;
    LstmState(int batch, int hidden) : h({batch, hidden}), c({batch, hidden}) {}
};

template <typename T>
struct LstmStepCache {
    Tensor<T> x, h_prev, c_prev;
    Tensor<T> i, f, g, o, c;  // gate activations and new cell
};

namespace detail {

// y [N,H] += x [N,D] * W^T where W is [H,D]
template <typename T>
void add_matvec(const Tensor<T>& x, const Tensor<T>& w, Tensor<T>& y) {
    const int n = x.shape[0], d = x.shape[1], h = w.shape[0];
    for (int in = 0; in < n; ++in) {
        const T* xr = x.ptr() + static_cast<std::size_t>(in) * d;
        T* yr = y.ptr() + static_cast<std::size_t>(in) * h;
        for (int ih = 0; ih < h; ++ih) {
            const T* wr = w.ptr() + static_cast<std::size_t>(ih) * d;
            T acc = T(0);
            for (int k = 0; k < d; ++k) acc += xr[k] * wr[k];
            yr[ih] += acc;
        }
    }
}

// dW [H,D] += dy [N,H]^T * x [N,D];  dx [N,D] += dy [N,H] * W [H,D]
template <typename T>
void matvec_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                     Tensor<T>& dw, Tensor<T>& dx) {
    const int n = x.shape[0], d = x.shape[1], h = w.shape[0];
    for (int in = 0; in < n; ++in) {
        const T* xr = x.ptr() + static_cast<std::size_t>(in) * d;
        const T* dyr = dy.ptr() + static_cast<std::size_t>(in) * h;
        T* dxr = dx.ptr() + static_cast<std::size_t>(in) * d;
        for (int ih = 0; ih < h; ++ih) {
            const T g = dyr[ih];
            const T* wr = w.ptr() + static_cast<std::size_t>(ih) * d;
            T* dwr = dw.ptr() + static_cast<std::size_t>(ih) * d;
            for (int k = 0; k < d; ++k) {
                dwr[k] += g * xr[k];
                dxr[k] += g * wr[k];
            }
        }
    }
}

}  // namespace detail

// i = sig(Wxi x + Whi h + bi); f = sig(Wxf x + Whf h + bf)
// c = f.c_prev + i.phi(Wxc x + Whc h + bc); o = sig(Wxo x + Who h + bo)
// h = o.phi(c)
template <typename T>
LstmState<T> lstm_step(const Tensor<T>& x, const LstmState<T>& prev,
                       const LstmParams<T>& p, LstmStepCache<T>* cache = nullptr) {
    const int n = x.shape[0];
    if (x.shape[1] != p.input_dim) throw DataError("lstm_step: input dim mismatch");
    if (prev.h.shape[1] != p.hidden_dim) throw DataError("lstm_step: hidden dim mismatch");
    const int h = p.hidden_dim;

    auto gate_pre = [&](const Tensor<T>& wx, const Tensor<T>& wh, const Tensor<T>& b) {
        Tensor<T> z({n, h});
        for (int in = 0; in < n; ++in)
            for (int k = 0; k < h; ++k) z.data[static_cast<std::size_t>(in) * h + k] = b[k];
        detail::add_matvec(x, wx, z);
        detail::add_matvec(prev.h, wh, z);
        return z;
    };
    Tensor<T> zi = gate_pre(p.w_xi, p.w_hi, p.b_i);
    Tensor<T> zf = gate_pre(p.w_xf, p.w_hf, p.b_f);
    Tensor<T> zc = gate_pre(p.w_xc, p.w_hc, p.b_c);
    Tensor<T> zo = gate_pre(p.w_xo, p.w_ho, p.b_o);

    LstmState<T> next(n, h);
    Tensor<T> gi(zi.shape), gf(zf.shape), gg(zc.shape), go(zo.shape);
    for (std::size_t k = 0; k < zi.numel(); ++k) {
        gi.data[k] = sigmoid(zi.data[k]);
        gf.data[k] = sigmoid(zf.data[k]);
        gg.data[k] = tanh_phi(zc.data[k]);
        go.data[k] = sigmoid(zo.data[k]);
        next.c.data[k] = gf.data[k] * prev.c.data[k] + gi.data[k] * gg.data[k];
        next.h.data[k] = go.data[k] * tanh_phi(next.c.data[k]);
    }
    if (cache) {
        cache->x = x;
        cache->h_prev = prev.h;
        cache->c_prev = prev.c;
        cache->i = std::move(gi);
        cache->f = std::move(gf);
        cache->g = std::move(gg);
        cache->o = std::move(go);
        cache->c = next.c;
    }
    return next;
}

template <typename T>
struct LstmGrads {
    Tensor<T> w_xi, w_hi, b_i, w_xf, w_hf, b_f, w_xc, w_hc, b_c, w_xo, w_ho, b_o;

    explicit LstmGrads(const LstmParams<T>& p)
        : w_xi(p.w_xi.shape), w_hi(p.w_hi.shape), b_i(p.b_i.shape),
          w_xf(p.w_xf.shape), w_hf(p.w_hf.shape), b_f(p.b_f.shape),
          w_xc(p.w_xc.shape), w_hc(p.w_hc.shape), b_c(p.b_c.shape),
          w_xo(p.w_xo.shape), w_ho(p.w_ho.shape), b_o(p.b_o.shape) {}
};

// One step of backpropagation through time. dh/dc are gradients w.r.t. this
// step's outputs (including any contribution flowing back from step t+1);
// returns gradients w.r.t. x and the previous state.
template <typename T>
void lstm_step_backward(const LstmStepCache<T>& cc, const LstmParams<T>& p,
                        const Tensor<T>& dh, const Tensor<T>& dc_in,
                        LstmGrads<T>& grads, Tensor<T>& dx, Tensor<T>& dh_prev,
                        Tensor<T>& dc_prev) {
    const int n = dh.shape[0], h = p.hidden_dim;
    Tensor<T> dzi({n, h}), dzf({n, h}), dzc({n, h}), dzo({n, h});
    dc_prev = Tensor<T>({n, h});
    for (std::size_t k = 0; k < dh.numel(); ++k) {
        const T tc = tanh_phi(cc.c.data[k]);
        const T do_ = dh.data[k] * tc;
        T dc = dc_in.data[k] + dh.data[k] * cc.o.data[k] * (T(1) - tc * tc);
        dzo.data[k] = do_ * cc.o.data[k] * (T(1) - cc.o.data[k]);
        dzf.data[k] = dc * cc.c_prev.data[k] * cc.f.data[k] * (T(1) - cc.f.data[k]);
        dzi.data[k] = dc * cc.g.data[k] * cc.i.data[k] * (T(1) - cc.i.data[k]);
        dzc.data[k] = dc * cc.i.data[k] * (T(1) - cc.g.data[k] * cc.g.data[k]);
        dc_prev.data[k] = dc * cc.f.data[k];
    }
    dx = Tensor<T>(cc.x.shape);
    dh_prev = Tensor<T>({n, h});
    auto backprop_gate = [&](const Tensor<T>& dz, const Tensor<T>& wx, const Tensor<T>& wh,
                             Tensor<T>& dwx, Tensor<T>& dwh, Tensor<T>& db) {
        for (int in = 0; in < n; ++in)
            for (int k = 0; k < h; ++k) db[k] += dz.data[static_cast<std::size_t>(in) * h + k];
        detail::matvec_backward(cc.x, wx, dz, dwx, dx);
        detail::matvec_backward(cc.h_prev, wh, dz, dwh, dh_prev);
    };
    backprop_gate(dzi, p.w_xi, p.w_hi, grads.w_xi, grads.w_hi, grads.b_i);
    backprop_gate(dzf, p.w_xf, p.w_hf, grads.w_xf, grads.w_hf, grads.b_f);
    backprop_gate(dzc, p.w_xc, p.w_hc, grads.w_xc, grads.w_hc, grads.b_c);
    backprop_gate(dzo, p.w_xo, p.w_ho, grads.w_xo, grads.w_ho, grads.b_o);
}

// ---------------------------------------------------------------------------
// SGD with momentum (heavy-ball): v <- mu v - lr g; theta <- theta + v

template <typename T>
struct SgdState {
    double learning_rate = 1e-3;
    double momentum = 0.9;
    std::vector<Tensor<T>> velocity;
};

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T>* value = nullptr;
    Tensor<T>* grad = nullptr;
};

template <typename T>
void sgd_momentum_update(std::vector<NamedParam<T>>& params, SgdState<T>& state) {
    if (state.velocity.empty()) {
        state.velocity.reserve(params.size());
        for (const NamedParam<T>& p : params) state.velocity.emplace_back(p.value->shape);
    }
    if (state.velocity.size() != params.size())
        throw DataError("sgd: velocity/parameter count mismatch");
    const T mu = static_cast<T>(state.momentum);
    const T lr = static_cast<T>(state.learning_rate);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& v = state.velocity[i];
        Tensor<T>& theta = *params[i].value;
        const Tensor<T>& g = *params[i].grad;
        if (!v.same_shape(theta) || !g.same_shape(theta))
            throw DataError("sgd: shape mismatch for " + params[i].name);
        for (std::size_t k = 0; k < theta.numel(); ++k) {
            if (!is_finite(g.data[k]))
                throw NumericError("sgd: nonfinite gradient in " + params[i].name);
            v.data[k] = mu * v.data[k] - lr * g.data[k];
            theta.data[k] += v.data[k];
        }
    }
}

// ---------------------------------------------------------------------------
// initialization

template <typename T>
void init_uniform_xavier(Tensor<T>& w, int fan_in, int fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (T& v : w.data) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
void init_lstm(LstmParams<T>& p, Rng& rng) {
    const int d = p.input_dim, h = p.hidden_dim;
    init_uniform_xavier(p.w_xi, d, h, rng);
    init_uniform_xavier(p.w_hi, h, h, rng);
    init_uniform_xavier(p.w_xf, d, h, rng);
    init_uniform_xavier(p.w_hf, h, h, rng);
    init_uniform_xavier(p.w_xc, d, h, rng);
    init_uniform_xavier(p.w_hc, h, h, rng);
    init_uniform_xavier(p.w_xo, d, h, rng);
    init_uniform_xavier(p.w_ho, h, h, rng);
    p.b_i.zero();
    p.b_c.zero();
    p.b_o.zero();
    // forget gate open at the start so early training can carry memory
    std::fill(p.b_f.data.begin(), p.b_f.data.end(), T(1));
}

// ---------------------------------------------------------------------------
// finite-difference gradient verification

// Model requirements: params() yielding NamedParam entries whose grad
// pointers are filled by loss_and_gradients(), plus loss() for re-evaluation.
template <typename Model, typename Batch>
double grad_check(Model& model, const Batch& batch, double eps, std::uint64_t seed,
                  int coords_per_tensor = 200) {
    const double loss0 = model.loss_and_gradients(batch);
    (void)loss0;
    auto params = model.params();
    // snapshot analytic grads; subsequent loss() calls must not disturb them
    std::vector<Tensor<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.push_back(*p.grad);

    double max_rel_err = 0.0;
    Rng rng(seed);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<double>& theta = *params[pi].value;
        const std::size_t n = theta.numel();
        std::vector<std::size_t> coords;
        if (n <= static_cast<std::size_t>(coords_per_tensor)) {
            coords.resize(n);
            for (std::size_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            for (int i = 0; i < coords_per_tensor; ++i)
                coords.push_back(static_cast<std::size_t>(rng.below(n)));
        }
        for (std::size_t ci : coords) {
            const double orig = theta.data[ci];
            theta.data[ci] = orig + eps;
            const double lp = model.loss(batch);
            theta.data[ci] = orig - eps;
            const double lm = model.loss(batch);
            theta.data[ci] = orig;
            const double numeric = (lp - lm) / (2.0 * eps);
            const double a = analytic[pi].data[ci];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel_err = std::max(max_rel_err, std::abs(a - numeric) / denom);
        }
    }
    return max_rel_err;
}

}  // namespace sdtd::nn
