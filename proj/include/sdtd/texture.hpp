#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "sdtd/common.hpp"
#include "sdtd/image.hpp"
#include "sdtd/trajectory.hpp"

namespace sdtd {

enum class TtiMode { one_channel, three_channel };

// Overwrite accounting. pre_write counts a rasterized point only when its
// target pixel already holds a value; literal counts every rasterized
// point (the equations read verbatim, kept for comparison).
enum class OverwriteRule { pre_write, literal };

// Canvas plus overwrite bookkeeping for one in-progress Trajectory Texture
// image. In three-channel mode a written pixel holds (dx, dy, magnitude);
// in one-channel mode it holds the magnitude alone.
struct TtiState {
    Frame canvas;                 // height x width x {1,3}
    std::vector<bool> written;    // the S mask
    long long overwrite_count = 0;  // the O counter
    long long threshold = 1;        // the P threshold
    int images_emitted = 0;
    TtiMode mode = TtiMode::three_channel;
    OverwriteRule rule = OverwriteRule::pre_write;

    TtiState(int height, int width, long long threshold_p,
             TtiMode m = TtiMode::three_channel,
             OverwriteRule r = OverwriteRule::pre_write)
        : canvas(height, width, m == TtiMode::three_channel ? 3 : 1),
          written(static_cast<std::size_t>(height) * width, false),
          threshold(threshold_p), mode(m), rule(r) {
        if (threshold_p < 1) throw UsageError("tti: threshold P must be >= 1");
    }

    void reset() {
        std::fill(canvas.data.begin(), canvas.data.end(), 0.0f);
        std::fill(written.begin(), written.end(), false);
        overwrite_count = 0;
    }

    bool any_written() const {
        return std::find(written.begin(), written.end(), true) != written.end();
    }
};

// Write every trajectory point onto the canvas, last write wins. Points
// with zero displacement are skipped: they cannot produce a nonzero pixel
// (Eq. 6/9 write displacement values), so they neither mark S nor count
// as overwrites.
inline void rasterize_trajectory(TtiState& state, const Trajectory& traj) {
    const int h = state.canvas.height;
    const int w = state.canvas.width;
    for (const TrajectoryPoint& pt : traj.points) {
        if (pt.dx == 0.0f && pt.dy == 0.0f) continue;
        const int px = static_cast<int>(std::lround(pt.x));
        const int py = static_cast<int>(std::lround(pt.y));
        if (px < 0 || px >= w || py < 0 || py >= h)
            throw DataError("tti: trajectory coordinate outside canvas");
        const std::size_t i = static_cast<std::size_t>(py) * w + px;
        if (state.rule == OverwriteRule::literal) {
            state.overwrite_count += 1;
        } else if (state.written[i]) {
            state.overwrite_count += 1;
        }
        const float mag = std::sqrt(pt.dx * pt.dx + pt.dy * pt.dy);
        if (state.mode == TtiMode::three_channel) {
            state.canvas.at(py, px, 0) = pt.dx;
            state.canvas.at(py, px, 1) = pt.dy;
            state.canvas.at(py, px, 2) = mag;
        } else {
            state.canvas.at(py, px, 0) = mag;
        }
        state.written[i] = true;
    }
}

struct TtiSegmentBounds {
    int first_frame = 0;
    int last_frame = 0;
};

struct TtiSequence {
    std::vector<Frame> images;
    std::vector<TtiSegmentBounds> segment_bounds;
};

// Group trajectories by start frame, rasterize group by group, and start a
// new image whenever the overwrite counter exceeds P at a group boundary.
inline TtiSequence build_sequence(const TrajectorySet& set, int height, int width,
                                  long long threshold_p,
                                  TtiMode mode = TtiMode::three_channel,
                                  OverwriteRule rule = OverwriteRule::pre_write) {
    TtiState state(height, width, threshold_p, mode, rule);
    TtiSequence seq;

    std::vector<const Trajectory*> order;
    order.reserve(set.trajectories.size());
    for (const Trajectory& t : set.trajectories) order.push_back(&t);
    std::stable_sort(order.begin(), order.end(),
                     [](const Trajectory* a, const Trajectory* b) {
                         return a->start_frame < b->start_frame;
                     });

    int seg_first = -1;
    int seg_last = -1;
    auto emit = [&]() {
        seq.images.push_back(state.canvas);
        seq.segment_bounds.push_back({seg_first, seg_last});
        state.reset();
        state.images_emitted += 1;
        seg_first = seg_last = -1;
    };

    std::size_t i = 0;
    while (i < order.size()) {
        const int frame = order[i]->start_frame;
        for (; i < order.size() && order[i]->start_frame == frame; ++i) {
            const Trajectory& traj = *order[i];
            rasterize_trajectory(state, traj);
            if (seg_first < 0) seg_first = traj.start_frame;
            seg_last = std::max(seg_last,
                                traj.start_frame + traj.num_steps());
        }
        if (state.overwrite_count > state.threshold) emit();
    }
    if (state.any_written()) emit();
    return seq;
}

struct Image8 {
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<std::uint8_t> data;
};

// Linear quantization for visualization: displacement channels map bound ->
// 255 around a 128 midpoint, the magnitude channel maps [0,bound] -> [0,255].
inline Image8 export_tti_image(const Frame& canvas, double bound) {
    if (!(bound > 0)) throw UsageError("tti export: bound must be positive");
    Image8 out;
    out.height = canvas.height;
    out.width = canvas.width;
    out.channels = canvas.channels;
    out.data.resize(canvas.data.size());
    for (std::size_t i = 0; i < canvas.data.size(); ++i) {
        const float c = canvas.data[i];
        if (!is_finite(c)) throw NumericError("tti export: nonfinite canvas value");
        double q;
        if (canvas.channels == 3 && i % 3 != 2)
            q = std::nearbyint(128.0 + 127.5 * c / bound);
        else
            q = std::nearbyint(255.0 * c / bound);
        out.data[i] = static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
    }
    return out;
}

}  // namespace sdtd
