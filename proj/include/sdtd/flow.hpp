#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <vector>

#include "sdtd/common.hpp"
#include "sdtd/image.hpp"

namespace sdtd {

// Dense per-pixel displacement field in pixels/frame.
struct FlowField {
    int height = 0;
    int width = 0;
    std::vector<float> u;  // horizontal
    std::vector<float> v;  // vertical

    FlowField() = default;
    FlowField(int h, int w) : height(h), width(w),
        u(static_cast<std::size_t>(h) * w, 0.0f),
        v(static_cast<std::size_t>(h) * w, 0.0f) {}

    std::size_t idx(int y, int x) const {
        return static_cast<std::size_t>(y) * width + x;
    }
    float& u_at(int y, int x) { return u[idx(y, x)]; }
    float& v_at(int y, int x) { return v[idx(y, x)]; }
    float u_at(int y, int x) const { return u[idx(y, x)]; }
    float v_at(int y, int x) const { return v[idx(y, x)]; }
    std::size_t pixel_count() const {
        return static_cast<std::size_t>(height) * width;
    }
};

struct Tvl1Params {
    double lambda = 0.15;       // data-term weight
    double theta = 0.3;         // coupling parameter
    double tau = 0.25;          // dual time step, <= 0.25 for stability
    int warps = 5;
    int inner_iters = 30;
    double pyramid_scale = 0.5;
    int pyramid_levels = 5;
    double stop_eps = 1e-2;

    void validate() const {
        if (!(lambda > 0 && theta > 0 && tau > 0))
            throw UsageError("tvl1: lambda, theta, tau must be positive");
        if (tau > 0.25)
            throw UsageError("tvl1: tau must be <= 0.25");
        if (warps < 1 || inner_iters < 1 || pyramid_levels < 1)
            throw UsageError("tvl1: warps, inner_iters, pyramid_levels must be >= 1");
        if (!(pyramid_scale > 0 && pyramid_scale < 1))
            throw UsageError("tvl1: pyramid_scale must be in (0,1)");
    }
};

// Level 0 is the input; each next level is binomial-smoothed then resampled
// by `scale`. Levels are truncated so the coarsest stays >= 8x8.
inline std::vector<Frame> gaussian_pyramid(const Frame& frame, int levels, double scale) {
    if (levels < 1) throw UsageError("pyramid: levels must be >= 1");
    if (!(scale > 0 && scale < 1)) throw UsageError("pyramid: scale must be in (0,1)");
    if (frame.height < 8 || frame.width < 8)
        throw DataError("pyramid: frame smaller than 8x8");
    std::vector<Frame> pyr;
    pyr.push_back(frame);
    for (int k = 1; k < levels; ++k) {
        const Frame& prev = pyr.back();
        int nw = static_cast<int>(std::lround(prev.width * scale));
        int nh = static_cast<int>(std::lround(prev.height * scale));
        if (nw < 8 || nh < 8) break;
        pyr.push_back(resize_bilinear(binomial_smooth5(prev), nw, nh));
    }
    return pyr;
}

// output(x,y) = bilinear sample of frame at (x+u, y+v), border-clamped.
inline Frame warp_image(const Frame& frame, const FlowField& flow) {
    if (frame.height != flow.height || frame.width != flow.width)
        throw DataError("warp_image: dimension mismatch");
    Frame out(frame.height, frame.width, frame.channels);
    for (int y = 0; y < frame.height; ++y)
        for (int x = 0; x < frame.width; ++x) {
            const float sx = static_cast<float>(x) + flow.u_at(y, x);
            const float sy = static_cast<float>(y) + flow.v_at(y, x);
            for (int c = 0; c < frame.channels; ++c)
                out.at(y, x, c) = bilinear_sample(frame, sx, sy, c);
        }
    return out;
}

namespace detail {

// Central differences with border replication.
inline void central_gradient(const Frame& f, std::vector<float>& gx,
                             std::vector<float>& gy) {
    const int h = f.height, w = f.width;
    gx.assign(static_cast<std::size_t>(h) * w, 0.0f);
    gy.assign(static_cast<std::size_t>(h) * w, 0.0f);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int xm = std::max(x - 1, 0), xp = std::min(x + 1, w - 1);
            const int ym = std::max(y - 1, 0), yp = std::min(y + 1, h - 1);
            gx[f.width * static_cast<std::size_t>(y) + x] = 0.5f * (f.at(y, xp) - f.at(y, xm));
            gy[f.width * static_cast<std::size_t>(y) + x] = 0.5f * (f.at(yp, x) - f.at(ym, x));
        }
}

// Forward differences (Neumann at the far border).
inline void forward_gradient(const std::vector<float>& a, int h, int w,
                             std::vector<float>& gx, std::vector<float>& gy) {
    gx.assign(a.size(), 0.0f);
    gy.assign(a.size(), 0.0f);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            gx[i] = (x < w - 1) ? a[i + 1] - a[i] : 0.0f;
            gy[i] = (y < h - 1) ? a[i + w] - a[i] : 0.0f;
        }
}

// Backward-difference divergence, adjoint of forward_gradient.
inline void divergence(const std::vector<float>& px, const std::vector<float>& py,
                       int h, int w, std::vector<float>& div) {
    div.assign(px.size(), 0.0f);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            float d = 0.0f;
            if (x == 0) d += px[i];
            else if (x == w - 1) d -= px[i - 1];
            else d += px[i] - px[i - 1];
            if (y == 0) d += py[i];
            else if (y == h - 1) d -= py[i - w];
            else d += py[i] - py[i - w];
            div[i] = d;
        }
}

inline FlowField resize_flow(const FlowField& f, int out_w, int out_h) {
    FlowField out(out_h, out_w);
    Frame uf(f.height, f.width, 1), vf(f.height, f.width, 1);
    std::copy(f.u.begin(), f.u.end(), uf.data.begin());
    std::copy(f.v.begin(), f.v.end(), vf.data.begin());
    const float su = static_cast<float>(out_w) / static_cast<float>(f.width);
    const float sv = static_cast<float>(out_h) / static_cast<float>(f.height);
    Frame ur = resize_bilinear(uf, out_w, out_h);
    Frame vr = resize_bilinear(vf, out_w, out_h);
    for (std::size_t i = 0; i < out.pixel_count(); ++i) {
        out.u[i] = ur.data[i] * su;
        out.v[i] = vr.data[i] * sv;
    }
    return out;
}

// One pyramid level of the duality-based TV-L1 scheme: per warp, linearize
// the brightness residual rho, take the thresholding step on rho against
// lambda*theta*|grad I2|^2, then run dual ascent on p (step tau/theta)
// with projection onto the unit ball.
inline void tvl1_level(const Frame& f1, const Frame& f2, FlowField& flow,
                       const Tvl1Params& p) {
    const int h = f1.height, w = f1.width;
    const std::size_t n = static_cast<std::size_t>(h) * w;
    const float l_t = static_cast<float>(p.lambda * p.theta);
    const float step = static_cast<float>(p.tau / p.theta);

    std::vector<float> i2x, i2y;
    central_gradient(f2, i2x, i2y);
    Frame i2xf(h, w, 1), i2yf(h, w, 1);
    std::copy(i2x.begin(), i2x.end(), i2xf.data.begin());
    std::copy(i2y.begin(), i2y.end(), i2yf.data.begin());

    std::vector<float> p11(n, 0.0f), p12(n, 0.0f), p21(n, 0.0f), p22(n, 0.0f);
    std::vector<float> wx(n), wy(n), wv(n), rho_c(n), grad2(n);
    std::vector<float> v1(n), v2(n), div1, div2, gx, gy;

    for (int warp = 0; warp < p.warps; ++warp) {
        Frame f2w = warp_image(f2, flow);
        Frame f2wx = warp_image(i2xf, flow);
        Frame f2wy = warp_image(i2yf, flow);
        for (std::size_t i = 0; i < n; ++i) {
            wv[i] = f2w.data[i];
            wx[i] = f2wx.data[i];
            wy[i] = f2wy.data[i];
            grad2[i] = wx[i] * wx[i] + wy[i] * wy[i];
            rho_c[i] = wv[i] - wx[i] * flow.u[i] - wy[i] * flow.v[i] - f1.data[i];
        }
        for (int it = 0; it < p.inner_iters; ++it) {
            // thresholding step on the linearized residual
            for (std::size_t i = 0; i < n; ++i) {
                const float rho = rho_c[i] + wx[i] * flow.u[i] + wy[i] * flow.v[i];
                float d1, d2;
                if (rho < -l_t * grad2[i]) {
                    d1 = l_t * wx[i];
                    d2 = l_t * wy[i];
                } else if (rho > l_t * grad2[i]) {
                    d1 = -l_t * wx[i];
                    d2 = -l_t * wy[i];
                } else if (grad2[i] > 1e-10f) {
                    const float fi = -rho / grad2[i];
                    d1 = fi * wx[i];
                    d2 = fi * wy[i];
                } else {
                    d1 = d2 = 0.0f;
                }
                v1[i] = flow.u[i] + d1;
                v2[i] = flow.v[i] + d2;
            }
            divergence(p11, p12, h, w, div1);
            divergence(p21, p22, h, w, div2);
            float max_update = 0.0f;
            const float theta_f = static_cast<float>(p.theta);
            for (std::size_t i = 0; i < n; ++i) {
                const float nu = v1[i] + theta_f * div1[i];
                const float nv = v2[i] + theta_f * div2[i];
                max_update = std::max(max_update, std::abs(nu - flow.u[i]));
                max_update = std::max(max_update, std::abs(nv - flow.v[i]));
                flow.u[i] = nu;
                flow.v[i] = nv;
            }
            // dual ascent with exact projection onto ||p|| <= 1
            forward_gradient(flow.u, h, w, gx, gy);
            for (std::size_t i = 0; i < n; ++i) {
                const float a = p11[i] + step * gx[i];
                const float b = p12[i] + step * gy[i];
                const float norm = std::max(1.0f, std::sqrt(a * a + b * b));
                p11[i] = a / norm;
                p12[i] = b / norm;
                assert(p11[i] * p11[i] + p12[i] * p12[i] <= 1.0f + 1e-6f);
            }
            forward_gradient(flow.v, h, w, gx, gy);
            for (std::size_t i = 0; i < n; ++i) {
                const float a = p21[i] + step * gx[i];
                const float b = p22[i] + step * gy[i];
                const float norm = std::max(1.0f, std::sqrt(a * a + b * b));
                p21[i] = a / norm;
                p22[i] = b / norm;
                assert(p21[i] * p21[i] + p22[i] * p22[i] <= 1.0f + 1e-6f);
            }
            if (max_update < static_cast<float>(p.stop_eps)) break;
        }
    }
}

}  // namespace detail

// Coarse-to-fine TV-L1 optical flow (duality method). Deterministic: fixed
// single-threaded iteration order.
inline FlowField tvl1_flow(const Frame& f1_in, const Frame& f2_in, const Tvl1Params& p) {
    p.validate();
    if (f1_in.channels != 1 || f2_in.channels != 1)
        throw DataError("tvl1_flow: grayscale input required");
    if (f1_in.height != f2_in.height || f1_in.width != f2_in.width)
        throw DataError("tvl1_flow: dimension mismatch");

    // lambda follows the 8-bit intensity convention of the cited method, so
    // rescale the [0,1] frames to [0,255] for the solve
    Frame f1 = f1_in, f2 = f2_in;
    for (float& v : f1.data) v *= 255.0f;
    for (float& v : f2.data) v *= 255.0f;

    std::vector<Frame> pyr1 = gaussian_pyramid(f1, p.pyramid_levels, p.pyramid_scale);
    std::vector<Frame> pyr2 = gaussian_pyramid(f2, p.pyramid_levels, p.pyramid_scale);
    const int levels = static_cast<int>(std::min(pyr1.size(), pyr2.size()));

    FlowField flow(pyr1[levels - 1].height, pyr1[levels - 1].width);
    for (int lvl = levels - 1; lvl >= 0; --lvl) {
        detail::tvl1_level(pyr1[lvl], pyr2[lvl], flow, p);
        if (lvl > 0)
            flow = detail::resize_flow(flow, pyr1[lvl - 1].width, pyr1[lvl - 1].height);
    }
    for (std::size_t i = 0; i < flow.pixel_count(); ++i)
        if (!is_finite(flow.u[i]) || !is_finite(flow.v[i]))
            throw NumericError("tvl1_flow: nonfinite flow value");
    return flow;
}

// Classical quadratic model, plain Jacobi iterations. Serves as a fast
// baseline and as a cross-check against tvl1_flow in tests.
inline FlowField horn_schunck(const Frame& f1, const Frame& f2, double alpha, int iters) {
    if (f1.channels != 1 || f2.channels != 1)
        throw DataError("horn_schunck: grayscale input required");
    if (f1.height != f2.height || f1.width != f2.width)
        throw DataError("horn_schunck: dimension mismatch");
    if (!(alpha > 0)) throw UsageError("horn_schunck: alpha must be positive");

    const int h = f1.height, w = f1.width;
    const std::size_t n = static_cast<std::size_t>(h) * w;
    std::vector<float> ix, iy, it(n);
    detail::central_gradient(f2, ix, iy);
    for (std::size_t i = 0; i < n; ++i) it[i] = f2.data[i] - f1.data[i];

    FlowField flow(h, w);
    std::vector<float> ubar(n), vbar(n);
    const float a2 = static_cast<float>(alpha * alpha);
    for (int iter = 0; iter < iters; ++iter) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int xm = std::max(x - 1, 0), xp = std::min(x + 1, w - 1);
                const int ym = std::max(y - 1, 0), yp = std::min(y + 1, h - 1);
                const std::size_t i = static_cast<std::size_t>(y) * w + x;
                ubar[i] = 0.25f * (flow.u_at(y, xm) + flow.u_at(y, xp) +
                                   flow.u_at(ym, x) + flow.u_at(yp, x));
                vbar[i] = 0.25f * (flow.v_at(y, xm) + flow.v_at(y, xp) +
                                   flow.v_at(ym, x) + flow.v_at(yp, x));
            }
        for (std::size_t i = 0; i < n; ++i) {
            const float num = ix[i] * ubar[i] + iy[i] * vbar[i] + it[i];
            const float den = a2 + ix[i] * ix[i] + iy[i] * iy[i];
            flow.u[i] = ubar[i] - ix[i] * num / den;
            flow.v[i] = vbar[i] - iy[i] * num / den;
        }
    }
    return flow;
}

inline double mean_flow_magnitude(const FlowField& f) {
    double s = 0.0;
    for (std::size_t i = 0; i < f.pixel_count(); ++i)
        s += std::sqrt(static_cast<double>(f.u[i]) * f.u[i] +
                       static_cast<double>(f.v[i]) * f.v[i]);
    return f.pixel_count() ? s / static_cast<double>(f.pixel_count()) : 0.0;
}

}  // namespace sdtd
