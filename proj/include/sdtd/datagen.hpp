#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sdtd/common.hpp"
#include "sdtd/flow.hpp"
#include "sdtd/image.hpp"
#include "sdtd/io.hpp"

namespace sdtd {

// Synthetic classes share the same mean speed over a period, so single-frame
// flow statistics cannot separate them; only the long-term path shape can.
enum class MotionClassKind { linear, circular, zigzag, stop_and_go };

inline const char* motion_class_name(MotionClassKind k) {
    switch (k) {
        case MotionClassKind::linear: return "linear";
        case MotionClassKind::circular: return "circular";
        case MotionClassKind::zigzag: return "zigzag";
        case MotionClassKind::stop_and_go: return "stop_and_go";
    }
    return "?";
}

inline MotionClassKind parse_motion_class(const std::string& s) {
    if (s == "linear") return MotionClassKind::linear;
    if (s == "circular") return MotionClassKind::circular;
    if (s == "zigzag") return MotionClassKind::zigzag;
    if (s == "stop_and_go") return MotionClassKind::stop_and_go;
    throw UsageError("unknown motion class: " + s);
}

struct MotionClass {
    MotionClassKind kind = MotionClassKind::linear;
    double speed = 1.0;            // mean px/frame over one period
    double circle_frames = 120;    // circular: frames per revolution
    int zigzag_period = 12;        // frames per zigzag cycle
    double zigzag_half_angle_deg = 70.0;
    int stop_go_period = 60;       // stop_and_go cycle length
    double duty_cycle = 0.25;      // fraction of the cycle spent moving
};

struct SceneSpec {
    int height = 96;
    int width = 96;
    int sprite_size = 14;
    std::uint64_t sprite_seed = 1;
    std::uint64_t background_seed = 2;
    int frames = 60;
    double camera_pan_x = 0.0;  // apparent background shift per frame
    double camera_pan_y = 0.0;
};

namespace detail {

// Band-limited noise grid: white noise smoothed twice, contrast-stretched.
inline Frame noise_texture(int height, int width, int channels, std::uint64_t seed) {
    Rng rng(seed);
    Frame f(height, width, channels);
    for (float& v : f.data) v = static_cast<float>(rng.uniform());
    f = binomial_smooth5(binomial_smooth5(f));
    float lo = 1e9f, hi = -1e9f;
    for (float v : f.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const float span = std::max(hi - lo, 1e-6f);
    for (float& v : f.data) v = 0.1f + 0.8f * (v - lo) / span;
    return f;
}

}  // namespace detail

// Sprite center position (image coordinates) at continuous frame time t.
// The path depends only on the class and scene, never on the texture seed,
// and is laid out so the sprite stays fully inside the frame.
inline std::pair<double, double> sprite_center(const MotionClass& cls,
                                               const SceneSpec& scene, double t) {
    const double cx = (scene.width - 1) / 2.0;
    const double cy = (scene.height - 1) / 2.0;
    const double T = scene.frames;
    switch (cls.kind) {
        case MotionClassKind::linear: {
            const double x = cls.speed * (t - (T - 1) / 2.0);
            return {cx + x, cy};
        }
        case MotionClassKind::circular: {
            const double omega = 2.0 * 3.141592653589793 / cls.circle_frames;
            const double r = cls.speed / omega;
            return {cx + r * std::cos(omega * t), cy + r * std::sin(omega * t)};
        }
        case MotionClassKind::zigzag: {
            // constant speed, direction alternating +/- beta around the x
            // axis each half period; y is a triangle wave, x drifts
            const double beta = cls.zigzag_half_angle_deg * 3.141592653589793 / 180.0;
            const double p = cls.zigzag_period;
            const double half = p / 2.0;
            const double vx = cls.speed * std::cos(beta);
            const double vy = cls.speed * std::sin(beta);
            const double rem = t - std::floor(t / p) * p;
            const double y = (rem <= half) ? vy * rem : vy * (p - rem);
            const double x = vx * t;
            return {cx + x - vx * (T - 1) / 2.0, cy + y - vy * half / 2.0};
        }
        case MotionClassKind::stop_and_go: {
            const double p = cls.stop_go_period;
            const double move_frames = cls.duty_cycle * p;
            const double moving_speed = cls.speed / cls.duty_cycle;
            const double full = std::floor(t / p);
            const double rem = t - full * p;
            const double x = full * p * cls.speed +
                             moving_speed * std::min(rem, move_frames);
            const double span = cls.speed * (T - 1);
            return {cx + x - span / 2.0, cy};
        }
    }
    throw UsageError("unknown motion class");
}

namespace detail {

// Separable box coverage of a pixel cell by the sprite square: 1 in the
// interior, linear falloff across the border.
inline double coverage_1d(double pixel, double lo, double hi) {
    const double a = std::max(lo, pixel - 0.5);
    const double b = std::min(hi, pixel + 0.5);
    return std::max(0.0, b - a);
}

}  // namespace detail

// Textures derive from the video seed; the center path never does, so two
// seeds give different textures over the identical path.
inline FrameSequence generate_video(const MotionClass& cls, const SceneSpec& scene,
                                    std::uint64_t seed) {
    // verify the path fits before rendering anything
    const double margin = scene.sprite_size / 2.0 + 0.5;
    for (int t = 0; t < scene.frames; ++t) {
        const auto [cx, cy] = sprite_center(cls, scene, t);
        if (cx < margin || cy < margin || cx > scene.width - 1 - margin ||
            cy > scene.height - 1 - margin)
            throw DataError(std::string("sprite path exits frame for class ") +
                            motion_class_name(cls.kind));
    }
    const int pan_margin_x =
        static_cast<int>(std::ceil(std::abs(scene.camera_pan_x) * scene.frames)) + 2;
    const int pan_margin_y =
        static_cast<int>(std::ceil(std::abs(scene.camera_pan_y) * scene.frames)) + 2;
    const Frame background = detail::noise_texture(
        scene.height + 2 * pan_margin_y, scene.width + 2 * pan_margin_x, 3,
        derive_seed(seed, scene.background_seed));
    const Frame sprite_tex = detail::noise_texture(
        scene.sprite_size, scene.sprite_size, 3, derive_seed(seed, scene.sprite_seed));

    FrameSequence seq;
    seq.id = std::string(motion_class_name(cls.kind)) + "_" + std::to_string(seed);
    for (int t = 0; t < scene.frames; ++t) {
        // sample with the pan origin at the texture center margin
        Frame frame(scene.height, scene.width, 3);
        const auto [cx, cy] = sprite_center(cls, scene, t);
        const double half = scene.sprite_size / 2.0;
        const double lo_x = cx - half, hi_x = cx + half;
        const double lo_y = cy - half, hi_y = cy + half;
        for (int y = 0; y < scene.height; ++y)
            for (int x = 0; x < scene.width; ++x) {
                const float bx = static_cast<float>(x + pan_margin_x + scene.camera_pan_x * t);
                const float by = static_cast<float>(y + pan_margin_y + scene.camera_pan_y * t);
                const double ax = detail::coverage_1d(x, lo_x, hi_x);
                const double ay = detail::coverage_1d(y, lo_y, hi_y);
                const double alpha = ax * ay;
                for (int c = 0; c < 3; ++c) {
                    const float bg = bilinear_sample(background, bx, by, c);
                    float v = bg;
                    if (alpha > 0.0) {
                        const float sp = bilinear_sample(
                            sprite_tex, static_cast<float>(x - lo_x - 0.5),
                            static_cast<float>(y - lo_y - 0.5), c);
                        v = static_cast<float>(alpha * sp + (1.0 - alpha) * bg);
                    }
                    frame.at(y, x, c) = v;
                }
            }
        seq.frames.push_back(std::move(frame));
    }
    return seq;
}

// Analytic displacement field between frames t and t+1: the path step on
// sprite pixels, the camera pan elsewhere. The sprite support is the
// half-open box [c-half, c+half), which covers the same pixel count at any
// subpixel position, keeping per-class flow statistics exactly comparable.
inline bool on_sprite_support(double cx, double cy, double half, int x, int y) {
    return x >= cx - half && x < cx + half && y >= cy - half && y < cy + half;
}

inline FlowField ground_truth_flow(const MotionClass& cls, const SceneSpec& scene,
                                   int t) {
    if (t < 0 || t + 1 >= scene.frames)
        throw UsageError("ground_truth_flow: t out of range");
    const auto [cx, cy] = sprite_center(cls, scene, t);
    const auto [nx, ny] = sprite_center(cls, scene, t + 1);
    const double dx = nx - cx, dy = ny - cy;
    const double half = scene.sprite_size / 2.0;
    FlowField flow(scene.height, scene.width);
    for (int y = 0; y < scene.height; ++y)
        for (int x = 0; x < scene.width; ++x) {
            const bool on_sprite = on_sprite_support(cx, cy, half, x, y);
            if (on_sprite) {
                flow.u_at(y, x) = static_cast<float>(dx);
                flow.v_at(y, x) = static_cast<float>(dy);
            } else {
                flow.u_at(y, x) = static_cast<float>(scene.camera_pan_x);
                flow.v_at(y, x) = static_cast<float>(scene.camera_pan_y);
            }
        }
    return flow;
}

inline std::vector<MotionClass> default_motion_classes() {
    std::vector<MotionClass> out(4);
    out[0].kind = MotionClassKind::linear;
    out[1].kind = MotionClassKind::circular;
    out[2].kind = MotionClassKind::zigzag;
    out[3].kind = MotionClassKind::stop_and_go;
    return out;
}

// Balanced dataset on disk: videos/<class>_<index>/frames/*.png plus a
// manifest. Byte-for-byte reproducible from the seed.
inline io::DatasetManifest generate_dataset(const std::vector<MotionClass>& classes,
                                            const SceneSpec& scene, int per_class_train,
                                            int per_class_test, std::uint64_t seed,
                                            const std::filesystem::path& out_root) {
    if (per_class_train < 1 || per_class_test < 1)
        throw UsageError("generate_dataset: per-class counts must be >= 1");
    namespace fs = std::filesystem;
    io::DatasetManifest manifest;
    std::uint64_t video_index = 0;
    struct Row {
        std::string path, label, split;
    };
    std::vector<Row> rows;
    for (const MotionClass& cls : classes) {
        const std::string cname = motion_class_name(cls.kind);
        for (int i = 0; i < per_class_train + per_class_test; ++i) {
            const std::string vname = cname + "_" + std::to_string(i);
            const fs::path vdir = out_root / "videos" / vname;
            const FrameSequence seq =
                generate_video(cls, scene, derive_seed(seed, video_index));
            io::write_frames(seq, vdir / "frames");
            rows.push_back({(fs::path("videos") / vname).string(), cname,
                            i < per_class_train ? "train" : "test"});
            ++video_index;
        }
    }
    {
        std::ofstream os(out_root / "manifest.tsv");
        if (!os) throw DataError("cannot write manifest at " + out_root.string());
        for (const Row& r : rows) os << r.path << '\t' << r.label << '\t' << r.split << '\n';
    }
    return io::load_manifest(out_root / "manifest.tsv");
}

}  // namespace sdtd
