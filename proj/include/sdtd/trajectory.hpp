#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "sdtd/common.hpp"
#include "sdtd/flow.hpp"

namespace sdtd {

struct TrajectoryConfig {
    int grid_step = 5;            // W, sampling grid step in pixels
    int max_length = 15;          // L, maximum displacements per trajectory
    int median_kernel = 3;        // odd side length of the median filter
    double min_mean_step = 0.3;   // prune: mean step magnitude below this
    double max_step = 20.0;       // prune/terminate: any step above this
    int scales = 1;
    double scale_factor = 0.7071067811865476;
    int min_coverage_dist = 2;    // Chebyshev exclusion radius at resampling

    void validate() const {
        if (grid_step < 1) throw UsageError("trajectories: grid_step must be >= 1");
        if (max_length < 2) throw UsageError("trajectories: max_length must be >= 2");
        if (median_kernel < 3 || median_kernel % 2 == 0)
            throw UsageError("trajectories: median_kernel must be odd and >= 3");
        if (!(min_mean_step > 0 && min_mean_step < max_step))
            throw UsageError("trajectories: need 0 < min_mean_step < max_step");
        if (scales < 1) throw UsageError("trajectories: scales must be >= 1");
        if (!(scale_factor > 0 && scale_factor < 1))
            throw UsageError("trajectories: scale_factor must be in (0,1)");
    }
};

// One tracked point: absolute coordinate plus the step taken from it.
// For the last point of a trajectory the step is the one that would have
// been taken, or (0,0) when the track ended at the frame boundary or at
// the end of the video.
struct TrajectoryPoint {
    float x = 0.0f;
    float y = 0.0f;
    float dx = 0.0f;
    float dy = 0.0f;
};

struct Trajectory {
    int start_frame = 0;
    std::vector<TrajectoryPoint> points;

    // Real displacements exclude the annotation on the last point.
    int num_steps() const { return static_cast<int>(points.size()) - 1; }
};

struct TrajectorySet {
    std::vector<Trajectory> trajectories;
    int frame_height = 0;
    int frame_width = 0;
};

// Grid candidates (i*W + W/2, j*W + W/2) inside the frame, keeping only
// those at Chebyshev distance >= coverage_dist from every occupied pixel.
// The mask is row-major height*width. Output is row-major ordered.
inline std::vector<std::pair<float, float>> sample_points(
    const std::vector<bool>& occupied, int height, int width, int grid_step,
    int coverage_dist) {
    std::vector<std::pair<float, float>> out;
    const int half = grid_step / 2;
    for (int gy = half; gy < height; gy += grid_step)
        for (int gx = half; gx < width; gx += grid_step) {
            bool blocked = false;
            for (int dy = -coverage_dist; dy <= coverage_dist && !blocked; ++dy) {
                const int yy = gy + dy;
                if (yy < 0 || yy >= height) continue;
                for (int dx = -coverage_dist; dx <= coverage_dist; ++dx) {
                    const int xx = gx + dx;
                    if (xx < 0 || xx >= width) continue;
                    if (occupied[static_cast<std::size_t>(yy) * width + xx]) {
                        blocked = true;
                        break;
                    }
                }
            }
            if (!blocked)
                out.emplace_back(static_cast<float>(gx), static_cast<float>(gy));
        }
    return out;
}

namespace detail {

inline float median_of(std::vector<float>& vals) {
    std::nth_element(vals.begin(), vals.begin() + vals.size() / 2, vals.end());
    return vals[vals.size() / 2];
}

}  // namespace detail

// Advance a point by the median-filtered flow at its rounded position.
// Median is taken componentwise over the kernel x kernel neighborhood with
// border replication.
inline std::pair<float, float> track_step(float x, float y, const FlowField& flow,
                                          int kernel) {
    const int cx = static_cast<int>(std::lround(x));
    const int cy = static_cast<int>(std::lround(y));
    const int r = kernel / 2;
    std::vector<float> us, vs;
    us.reserve(static_cast<std::size_t>(kernel) * kernel);
    vs.reserve(static_cast<std::size_t>(kernel) * kernel);
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            const int xx = std::clamp(cx + dx, 0, flow.width - 1);
            const int yy = std::clamp(cy + dy, 0, flow.height - 1);
            us.push_back(flow.u_at(yy, xx));
            vs.push_back(flow.v_at(yy, xx));
        }
    return {x + detail::median_of(us), y + detail::median_of(vs)};
}

// Keep iff mean step magnitude >= min_mean_step and no step exceeds
// max_step. Only real displacements count; the last point's annotation
// is rendering metadata.
inline bool prune(const Trajectory& traj, const TrajectoryConfig& cfg) {
    const int n = traj.num_steps();
    if (n < 1) return false;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double mag = std::hypot(static_cast<double>(traj.points[i].dx),
                                      static_cast<double>(traj.points[i].dy));
        if (mag > cfg.max_step) return false;
        total += mag;
    }
    return total / n >= cfg.min_mean_step;
}

// Eq-style normalization: flat (dx1, dy1, ..., dxn, dyn) divided by the sum
// of step magnitudes.
inline std::vector<double> normalize_displacements(const Trajectory& traj) {
    const int n = traj.num_steps();
    double total = 0.0;
    for (int i = 0; i < n; ++i)
        total += std::hypot(static_cast<double>(traj.points[i].dx),
                            static_cast<double>(traj.points[i].dy));
    if (!(total > 0.0))
        throw DataError("normalize_displacements: zero total magnitude");
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(n) * 2);
    for (int i = 0; i < n; ++i) {
        out.push_back(traj.points[i].dx / total);
        out.push_back(traj.points[i].dy / total);
    }
    return out;
}

namespace detail {

struct ActiveTrack {
    int start_frame = 0;
    std::vector<TrajectoryPoint> completed;  // points with real displacements
    float x = 0.0f;                          // current position, original px
    float y = 0.0f;
};

// Position must round to a valid pixel so TTI rasterization and flow
// lookups stay in range.
inline bool inside(float x, float y, int height, int width) {
    return x >= 0.0f && y >= 0.0f &&
           std::lround(x) <= width - 1 && std::lround(y) <= height - 1;
}

struct LevelTracker {
    int level = 0;
    double scale = 1.0;  // level px per original px
    int lvl_h = 0, lvl_w = 0;
    std::vector<ActiveTrack> active;

    void resample(int frame, const TrajectoryConfig& cfg) {
        std::vector<bool> occupied(static_cast<std::size_t>(lvl_h) * lvl_w, false);
        for (const ActiveTrack& t : active) {
            const int lx = std::clamp<int>(static_cast<int>(std::lround(t.x * scale)), 0, lvl_w - 1);
            const int ly = std::clamp<int>(static_cast<int>(std::lround(t.y * scale)), 0, lvl_h - 1);
            occupied[static_cast<std::size_t>(ly) * lvl_w + lx] = true;
        }
        for (auto [gx, gy] : sample_points(occupied, lvl_h, lvl_w, cfg.grid_step,
                                           cfg.min_coverage_dist)) {
            ActiveTrack t;
            t.start_frame = frame;
            t.x = static_cast<float>(gx / scale);
            t.y = static_cast<float>(gy / scale);
            active.push_back(t);
        }
    }
};

inline Trajectory finish(ActiveTrack&& t, float last_dx, float last_dy) {
    Trajectory traj;
    traj.start_frame = t.start_frame;
    traj.points = std::move(t.completed);
    traj.points.push_back({t.x, t.y, last_dx, last_dy});
    return traj;
}

}  // namespace detail

// Full tracking procedure: grid seeding, median-filtered advancement,
// termination at max length / frame exit / oversized step, pruning, and
// per-frame resampling of uncovered grid cells. With scales > 1 the same
// procedure runs on a flow pyramid and coordinates are reported at the
// original resolution.
inline TrajectorySet extract_trajectories(const std::vector<FlowField>& flows,
                                          const TrajectoryConfig& cfg) {
    cfg.validate();
    if (flows.empty()) throw DataError("extract_trajectories: empty flow list");
    const int height = flows[0].height;
    const int width = flows[0].width;
    for (const FlowField& f : flows)
        if (f.height != height || f.width != width)
            throw DataError("extract_trajectories: mixed flow dimensions");

    std::vector<detail::LevelTracker> levels(static_cast<std::size_t>(cfg.scales));
    for (int l = 0; l < cfg.scales; ++l) {
        detail::LevelTracker& lt = levels[l];
        lt.level = l;
        lt.scale = std::pow(cfg.scale_factor, l);
        lt.lvl_w = std::max(8, static_cast<int>(std::lround(width * lt.scale)));
        lt.lvl_h = std::max(8, static_cast<int>(std::lround(height * lt.scale)));
        if (l == 0) { lt.lvl_w = width; lt.lvl_h = height; lt.scale = 1.0; }
        lt.resample(0, cfg);
    }

    TrajectorySet result;
    result.frame_height = height;
    result.frame_width = width;

    const int num_flows = static_cast<int>(flows.size());
    for (int t = 0; t < num_flows; ++t) {
        for (detail::LevelTracker& lt : levels) {
            FlowField lvl_flow =
                lt.level == 0 ? flows[t]
                              : detail::resize_flow(flows[t], lt.lvl_w, lt.lvl_h);
            std::vector<detail::ActiveTrack> survivors;
            survivors.reserve(lt.active.size());
            for (detail::ActiveTrack& tr : lt.active) {
                const float lx = static_cast<float>(tr.x * lt.scale);
                const float ly = static_cast<float>(tr.y * lt.scale);
                auto [nx_l, ny_l] = track_step(lx, ly, lvl_flow, cfg.median_kernel);
                const float dx = static_cast<float>((nx_l - lx) / lt.scale);
                const float dy = static_cast<float>((ny_l - ly) / lt.scale);
                const int steps = static_cast<int>(tr.completed.size());
                if (steps >= cfg.max_length) {
                    // reached L displacements; annotate with the pending step
                    Trajectory traj = detail::finish(std::move(tr), dx, dy);
                    if (prune(traj, cfg)) result.trajectories.push_back(std::move(traj));
                    continue;
                }
                if (std::hypot(static_cast<double>(dx), static_cast<double>(dy)) >
                    cfg.max_step) {
                    Trajectory traj = detail::finish(std::move(tr), dx, dy);
                    if (prune(traj, cfg)) result.trajectories.push_back(std::move(traj));
                    continue;
                }
                const float nx = tr.x + dx;
                const float ny = tr.y + dy;
                if (!detail::inside(nx, ny, height, width)) {
                    Trajectory traj = detail::finish(std::move(tr), 0.0f, 0.0f);
                    if (prune(traj, cfg)) result.trajectories.push_back(std::move(traj));
                    continue;
                }
                tr.completed.push_back({tr.x, tr.y, dx, dy});
                tr.x = nx;
                tr.y = ny;
                survivors.push_back(std::move(tr));
            }
            lt.active = std::move(survivors);
            if (t + 1 < num_flows) lt.resample(t + 1, cfg);
        }
    }
    // flush tracks still alive at the end of the video
    for (detail::LevelTracker& lt : levels)
        for (detail::ActiveTrack& tr : lt.active) {
            if (tr.completed.empty()) continue;
            Trajectory traj = detail::finish(std::move(tr), 0.0f, 0.0f);
            if (prune(traj, cfg)) result.trajectories.push_back(std::move(traj));
        }
    return result;
}

}  // namespace sdtd
