#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "sdtd/common.hpp"
#include "sdtd/flow.hpp"
#include "sdtd/image.hpp"

namespace sdtd {

struct Homography {
    // row-major 3x3, normalized so h[8] == 1
    std::array<double, 9> h = {1, 0, 0, 0, 1, 0, 0, 0, 1};

    std::pair<double, double> apply(double x, double y) const {
        const double w = h[6] * x + h[7] * y + h[8];
        if (std::abs(w) < 1e-12)
            throw NumericError("homography maps pixel to infinity");
        return {(h[0] * x + h[1] * y + h[2]) / w, (h[3] * x + h[4] * y + h[5]) / w};
    }
};

struct Correspondence {
    float x1 = 0, y1 = 0;  // frame t
    float x2 = 0, y2 = 0;  // frame t+1
};

struct RansacParams {
    int iters = 500;
    double inlier_thresh_px = 1.5;
    int max_corners = 400;
    double quality_ratio = 0.01;
};

namespace detail {

// Harris response map: products of central-difference gradients smoothed by
// a 3x3 binomial window, R = det(M) - 0.04 tr(M)^2.
inline std::vector<double> harris_response(const Frame& gray) {
    const int h = gray.height, w = gray.width;
    std::vector<float> ix, iy;
    central_gradient(gray, ix, iy);
    const std::size_t n = static_cast<std::size_t>(h) * w;
    std::vector<double> xx(n), yy(n), xy(n), resp(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        xx[i] = static_cast<double>(ix[i]) * ix[i];
        yy[i] = static_cast<double>(iy[i]) * iy[i];
        xy[i] = static_cast<double>(ix[i]) * iy[i];
    }
    static const double k[3] = {0.25, 0.5, 0.25};
    auto smooth = [&](std::vector<double>& a) {
        std::vector<double> t(n);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0;
                for (int d = -1; d <= 1; ++d)
                    s += k[d + 1] * a[static_cast<std::size_t>(y) * w +
                                      std::clamp(x + d, 0, w - 1)];
                t[static_cast<std::size_t>(y) * w + x] = s;
            }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0;
                for (int d = -1; d <= 1; ++d)
                    s += k[d + 1] * t[static_cast<std::size_t>(std::clamp(y + d, 0, h - 1)) * w + x];
                a[static_cast<std::size_t>(y) * w + x] = s;
            }
    };
    smooth(xx);
    smooth(yy);
    smooth(xy);
    for (std::size_t i = 0; i < n; ++i) {
        const double det = xx[i] * yy[i] - xy[i] * xy[i];
        const double tr = xx[i] + yy[i];
        resp[i] = det - 0.04 * tr * tr;
    }
    return resp;
}

// Jacobi eigensolver for a symmetric 9x9 matrix; returns the eigenvector of
// the smallest eigenvalue. Plenty accurate for the normalized DLT system.
inline std::array<double, 9> smallest_eigenvector_9(std::array<double, 81> a) {
    std::array<double, 81> v{};
    for (int i = 0; i < 9; ++i) v[i * 9 + i] = 1.0;
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < 9; ++p)
            for (int q = p + 1; q < 9; ++q) off += a[p * 9 + q] * a[p * 9 + q];
        if (off < 1e-24) break;
        for (int p = 0; p < 9; ++p)
            for (int q = p + 1; q < 9; ++q) {
                const double apq = a[p * 9 + q];
                if (std::abs(apq) < 1e-300) continue;
                const double app = a[p * 9 + p], aqq = a[q * 9 + q];
                const double phi = 0.5 * std::atan2(2.0 * apq, aqq - app);
                const double c = std::cos(phi), s = std::sin(phi);
                for (int i = 0; i < 9; ++i) {
                    const double aip = a[i * 9 + p], aiq = a[i * 9 + q];
                    a[i * 9 + p] = c * aip - s * aiq;
                    a[i * 9 + q] = s * aip + c * aiq;
                }
                for (int i = 0; i < 9; ++i) {
                    const double api = a[p * 9 + i], aqi = a[q * 9 + i];
                    a[p * 9 + i] = c * api - s * aqi;
                    a[q * 9 + i] = s * api + c * aqi;
                }
                for (int i = 0; i < 9; ++i) {
                    const double vip = v[i * 9 + p], viq = v[i * 9 + q];
                    v[i * 9 + p] = c * vip - s * viq;
                    v[i * 9 + q] = s * vip + c * viq;
                }
            }
    }
    int best = 0;
    for (int i = 1; i < 9; ++i)
        if (a[i * 9 + i] < a[best * 9 + best]) best = i;
    std::array<double, 9> out{};
    for (int i = 0; i < 9; ++i) out[i] = v[i * 9 + best];
    return out;
}

struct Normalizer {
    double cx = 0, cy = 0, s = 1;  // translate centroid to origin, mean dist -> sqrt(2)
    std::pair<double, double> apply(double x, double y) const {
        return {(x - cx) * s, (y - cy) * s};
    }
};

inline Normalizer make_normalizer(const std::vector<Correspondence>& corrs,
                                  const std::vector<int>& idx, bool second) {
    Normalizer n;
    for (int i : idx) {
        n.cx += second ? corrs[i].x2 : corrs[i].x1;
        n.cy += second ? corrs[i].y2 : corrs[i].y1;
    }
    n.cx /= idx.size();
    n.cy /= idx.size();
    double mean_dist = 0;
    for (int i : idx) {
        const double dx = (second ? corrs[i].x2 : corrs[i].x1) - n.cx;
        const double dy = (second ? corrs[i].y2 : corrs[i].y1) - n.cy;
        mean_dist += std::hypot(dx, dy);
    }
    mean_dist /= idx.size();
    n.s = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;
    return n;
}

// Normalized DLT over the given correspondence subset.
inline Homography dlt(const std::vector<Correspondence>& corrs,
                      const std::vector<int>& idx) {
    const Normalizer n1 = make_normalizer(corrs, idx, false);
    const Normalizer n2 = make_normalizer(corrs, idx, true);
    std::array<double, 81> ata{};
    auto accumulate_row = [&](const std::array<double, 9>& row) {
        for (int i = 0; i < 9; ++i)
            for (int j = 0; j < 9; ++j) ata[i * 9 + j] += row[i] * row[j];
    };
    for (int i : idx) {
        auto [x1, y1] = n1.apply(corrs[i].x1, corrs[i].y1);
        auto [x2, y2] = n2.apply(corrs[i].x2, corrs[i].y2);
        accumulate_row({-x1, -y1, -1, 0, 0, 0, x2 * x1, x2 * y1, x2});
        accumulate_row({0, 0, 0, -x1, -y1, -1, y2 * x1, y2 * y1, y2});
    }
    const std::array<double, 9> hn = smallest_eigenvector_9(ata);
    // denormalize: H = T2^-1 * Hn * T1
    const std::array<double, 9> t1 = {n1.s, 0, -n1.s * n1.cx,
                                      0, n1.s, -n1.s * n1.cy, 0, 0, 1};
    const std::array<double, 9> t2inv = {1 / n2.s, 0, n2.cx,
                                         0, 1 / n2.s, n2.cy, 0, 0, 1};
    auto mul = [](const std::array<double, 9>& a, const std::array<double, 9>& b) {
        std::array<double, 9> c{};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                for (int k = 0; k < 3; ++k)
                    c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
        return c;
    };
    std::array<double, 9> h = mul(t2inv, mul(hn, t1));
    if (std::abs(h[8]) < 1e-12)
        throw NumericError("homography estimation produced singular scale");
    Homography out;
    for (int i = 0; i < 9; ++i) out.h[i] = h[i] / h[8];
    return out;
}

inline std::array<double, 9> invert3x3(const std::array<double, 9>& m) {
    const double det = m[0] * (m[4] * m[8] - m[5] * m[7]) -
                       m[1] * (m[3] * m[8] - m[5] * m[6]) +
                       m[2] * (m[3] * m[7] - m[4] * m[6]);
    if (std::abs(det) < 1e-15)
        throw NumericError("homography not invertible");
    std::array<double, 9> inv;
    inv[0] = (m[4] * m[8] - m[5] * m[7]) / det;
    inv[1] = (m[2] * m[7] - m[1] * m[8]) / det;
    inv[2] = (m[1] * m[5] - m[2] * m[4]) / det;
    inv[3] = (m[5] * m[6] - m[3] * m[8]) / det;
    inv[4] = (m[0] * m[8] - m[2] * m[6]) / det;
    inv[5] = (m[2] * m[3] - m[0] * m[5]) / det;
    inv[6] = (m[3] * m[7] - m[4] * m[6]) / det;
    inv[7] = (m[1] * m[6] - m[0] * m[7]) / det;
    inv[8] = (m[0] * m[4] - m[1] * m[3]) / det;
    return inv;
}

// Symmetric transfer error: the larger of forward and backward residuals.
inline double transfer_error(const Homography& h, const Homography& hinv,
                             const Correspondence& c) {
    auto [fx, fy] = h.apply(c.x1, c.y1);
    auto [bx, by] = hinv.apply(c.x2, c.y2);
    const double fwd = std::hypot(fx - c.x2, fy - c.y2);
    const double bwd = std::hypot(bx - c.x1, by - c.y1);
    return std::max(fwd, bwd);
}

inline bool collinear(double ax, double ay, double bx, double by, double cx,
                      double cy) {
    const double area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
    return std::abs(area) < 1e-6;
}

inline bool degenerate_sample(const std::vector<Correspondence>& corrs,
                              const std::array<int, 4>& s) {
    for (int a = 0; a < 4; ++a)
        for (int b = a + 1; b < 4; ++b)
            for (int c = b + 1; c < 4; ++c) {
                if (collinear(corrs[s[a]].x1, corrs[s[a]].y1, corrs[s[b]].x1,
                              corrs[s[b]].y1, corrs[s[c]].x1, corrs[s[c]].y1))
                    return true;
                if (collinear(corrs[s[a]].x2, corrs[s[a]].y2, corrs[s[b]].x2,
                              corrs[s[b]].y2, corrs[s[c]].x2, corrs[s[c]].y2))
                    return true;
            }
    return false;
}

}  // namespace detail

// Harris corners: threshold at quality_ratio * max response, 3x3
// non-maximum suppression, strongest max_count kept. Ties break by
// row-major position so the result is deterministic.
inline std::vector<std::pair<float, float>> detect_corners(const Frame& gray,
                                                           int max_count,
                                                           double quality_ratio) {
    if (gray.channels != 1) throw DataError("detect_corners: grayscale input required");
    const int h = gray.height, w = gray.width;
    const std::vector<double> resp = detail::harris_response(gray);
    double max_resp = 0.0;
    for (double r : resp) max_resp = std::max(max_resp, r);
    if (max_resp <= 0.0) return {};
    const double thresh = quality_ratio * max_resp;

    struct Candidate { double r; int y; int x; };
    std::vector<Candidate> cands;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double r = resp[static_cast<std::size_t>(y) * w + x];
            if (r <= 0.0 || r < thresh) continue;
            bool is_max = true;
            for (int dy = -1; dy <= 1 && is_max; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    const int yy = std::clamp(y + dy, 0, h - 1);
                    const int xx = std::clamp(x + dx, 0, w - 1);
                    const double rn = resp[static_cast<std::size_t>(yy) * w + xx];
                    if (rn > r || (rn == r && (yy < y || (yy == y && xx < x)))) {
                        is_max = false;
                        break;
                    }
                }
            if (is_max) cands.push_back({r, y, x});
        }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.r != b.r) return a.r > b.r;
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    });
    if (static_cast<int>(cands.size()) > max_count) cands.resize(max_count);
    std::vector<std::pair<float, float>> out;
    out.reserve(cands.size());
    for (const Candidate& c : cands)
        out.emplace_back(static_cast<float>(c.x), static_cast<float>(c.y));
    return out;
}

// p2 = p1 + flow at round(p1); correspondences leaving the frame are dropped.
inline std::vector<Correspondence> match_by_flow(
    const std::vector<std::pair<float, float>>& points, const FlowField& flow) {
    std::vector<Correspondence> out;
    out.reserve(points.size());
    for (auto [x, y] : points) {
        const int cx = std::clamp<int>(static_cast<int>(std::lround(x)), 0, flow.width - 1);
        const int cy = std::clamp<int>(static_cast<int>(std::lround(y)), 0, flow.height - 1);
        const float x2 = x + flow.u_at(cy, cx);
        const float y2 = y + flow.v_at(cy, cx);
        if (x2 < 0 || y2 < 0 || x2 > static_cast<float>(flow.width - 1) ||
            y2 > static_cast<float>(flow.height - 1))
            continue;
        out.push_back({x, y, x2, y2});
    }
    return out;
}

// Seeded RANSAC over 4-point DLT hypotheses, then a DLT refit on the best
// inlier set. The reported mask is recomputed under the refit homography so
// every reported inlier meets the threshold by construction.
inline std::pair<Homography, std::vector<bool>> estimate_homography_ransac(
    const std::vector<Correspondence>& corrs, int iters, double inlier_thresh_px,
    std::uint64_t seed) {
    if (corrs.size() < 4)
        throw DataError("estimate_homography_ransac: need at least 4 correspondences");
    Rng rng(seed);
    const int n = static_cast<int>(corrs.size());
    int best_inliers = -1;
    std::vector<int> best_set;
    bool any_valid_sample = false;

    for (int it = 0; it < iters; ++it) {
        std::array<int, 4> s{};
        for (int k = 0; k < 4; ++k) {
            bool fresh;
            do {
                s[k] = static_cast<int>(rng.below(n));
                fresh = true;
                for (int j = 0; j < k; ++j)
                    if (s[j] == s[k]) fresh = false;
            } while (!fresh);
        }
        if (detail::degenerate_sample(corrs, s)) continue;
        any_valid_sample = true;
        Homography h;
        try {
            h = detail::dlt(corrs, {s.begin(), s.end()});
        } catch (const NumericError&) {
            continue;
        }
        Homography hinv;
        try {
            hinv.h = detail::invert3x3(h.h);
        } catch (const NumericError&) {
            continue;
        }
        std::vector<int> inliers;
        for (int i = 0; i < n; ++i) {
            try {
                if (detail::transfer_error(h, hinv, corrs[i]) < inlier_thresh_px)
                    inliers.push_back(i);
            } catch (const NumericError&) {
            }
        }
        if (static_cast<int>(inliers.size()) > best_inliers) {
            best_inliers = static_cast<int>(inliers.size());
            best_set = std::move(inliers);
        }
    }
    if (!any_valid_sample || best_inliers < 4)
        throw DataError("estimate_homography_ransac: degenerate geometry");

    Homography refined = detail::dlt(corrs, best_set);
    Homography refined_inv;
    refined_inv.h = detail::invert3x3(refined.h);
    std::vector<bool> mask(corrs.size(), false);
    for (int i = 0; i < n; ++i) {
        try {
            if (detail::transfer_error(refined, refined_inv, corrs[i]) <
                inlier_thresh_px)
                mask[i] = true;
        } catch (const NumericError&) {
        }
    }
    return {refined, mask};
}

// Subtract the homography-induced displacement field from the flow.
inline FlowField compensate_flow(const FlowField& flow, const Homography& h) {
    FlowField out(flow.height, flow.width);
    for (int y = 0; y < flow.height; ++y)
        for (int x = 0; x < flow.width; ++x) {
            auto [hx, hy] = h.apply(static_cast<double>(x), static_cast<double>(y));
            out.u_at(y, x) = flow.u_at(y, x) - static_cast<float>(hx - x);
            out.v_at(y, x) = flow.v_at(y, x) - static_cast<float>(hy - y);
        }
    return out;
}

enum class CompensationMode { off, subtract, warp_recompute };

struct CompensationConfig {
    CompensationMode mode = CompensationMode::subtract;
    RansacParams ransac;
    std::uint64_t seed = 7;
    Tvl1Params tvl1;  // used by warp_recompute only
};

struct CompensationReport {
    std::vector<int> failed_pairs;
    int pair_count = 0;
};

// Per frame pair: corners on frame t, flow matching, RANSAC homography,
// then rectification. Pairs where estimation fails keep the raw flow and
// are recorded in the report.
inline std::pair<std::vector<FlowField>, CompensationReport> compensate_sequence(
    const std::vector<Frame>& frames, const std::vector<FlowField>& flows,
    const CompensationConfig& cfg) {
    if (flows.size() + 1 != frames.size())
        throw DataError("compensate_sequence: need |flows| = |frames| - 1");
    CompensationReport report;
    report.pair_count = static_cast<int>(flows.size());
    std::vector<FlowField> out;
    out.reserve(flows.size());
    for (std::size_t t = 0; t < flows.size(); ++t) {
        if (cfg.mode == CompensationMode::off) {
            out.push_back(flows[t]);
            continue;
        }
        const Frame gray = to_luma(frames[t]);
        const auto corners =
            detect_corners(gray, cfg.ransac.max_corners, cfg.ransac.quality_ratio);
        const auto corrs = match_by_flow(corners, flows[t]);
        Homography h;
        bool ok = true;
        try {
            auto [est, mask] = estimate_homography_ransac(
                corrs, cfg.ransac.iters, cfg.ransac.inlier_thresh_px,
                derive_seed(cfg.seed, t));
            h = est;
        } catch (const DataError&) {
            ok = false;
        } catch (const NumericError&) {
            ok = false;
        }
        if (!ok) {
            report.failed_pairs.push_back(static_cast<int>(t));
            out.push_back(flows[t]);
            continue;
        }
        if (cfg.mode == CompensationMode::subtract) {
            out.push_back(compensate_flow(flows[t], h));
        } else {
            // rectify frame t+1 against the camera motion, then re-solve
            FlowField cam(flows[t].height, flows[t].width);
            for (int y = 0; y < cam.height; ++y)
                for (int x = 0; x < cam.width; ++x) {
                    auto [hx, hy] = h.apply(x, y);
                    cam.u_at(y, x) = static_cast<float>(hx - x);
                    cam.v_at(y, x) = static_cast<float>(hy - y);
                }
            const Frame rectified = warp_image(to_luma(frames[t + 1]), cam);
            out.push_back(tvl1_flow(gray, rectified, cfg.tvl1));
        }
    }
    return {out, report};
}

}  // namespace sdtd
