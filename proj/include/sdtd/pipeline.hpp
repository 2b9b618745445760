#pragma once

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "sdtd/common.hpp"
#include "sdtd/datagen.hpp"
#include "sdtd/egomotion.hpp"
#include "sdtd/flow.hpp"
#include "sdtd/io.hpp"
#include "sdtd/streams.hpp"
#include "sdtd/texture.hpp"
#include "sdtd/trajectory.hpp"

namespace sdtd {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// key=value configuration with defaults, file loading and flag overrides

class Config {
public:
    Config() : values_(defaults()) {}

    static const std::map<std::string, std::string>& defaults() {
        static const std::map<std::string, std::string> d = {
            {"seed", "7"},
            {"jobs", "1"},
            {"data_root", "data"},
            {"out_root", "out"},
            {"precision", "single"},

            {"datagen.classes", "linear,circular,zigzag,stop_and_go"},
            {"datagen.per_class_train", "8"},
            {"datagen.per_class_test", "4"},
            {"datagen.frames", "60"},
            {"datagen.height", "96"},
            {"datagen.width", "96"},
            {"datagen.sprite_size", "14"},
            {"datagen.speed", "1.0"},
            {"datagen.circle_frames", "120"},
            {"datagen.zigzag_period", "12"},
            {"datagen.zigzag_angle", "70"},
            {"datagen.stop_go_period", "60"},
            {"datagen.duty_cycle", "0.25"},
            {"datagen.camera_pan_x", "0"},
            {"datagen.camera_pan_y", "0"},

            {"flow.solver", "tvl1"},
            {"flow.hs_alpha", "0.5"},
            {"flow.hs_iters", "200"},
            {"tvl1.lambda", "0.15"},
            {"tvl1.theta", "0.3"},
            {"tvl1.tau", "0.25"},
            {"tvl1.warps", "5"},
            {"tvl1.inner_iters", "30"},
            {"tvl1.pyramid_scale", "0.5"},
            {"tvl1.pyramid_levels", "5"},
            {"tvl1.stop_eps", "0.01"},

            {"ego.mode", "subtract"},
            {"ego.iters", "500"},
            {"ego.inlier_thresh", "1.5"},
            {"ego.max_corners", "400"},
            {"ego.quality_ratio", "0.01"},

            {"traj.grid_step", "5"},
            {"traj.max_length", "15"},
            {"traj.median_kernel", "3"},
            {"traj.min_mean_step", "0.3"},
            {"traj.max_step", "20"},
            {"traj.scales", "1"},
            {"traj.scale_factor", "0.7071067811865476"},
            {"traj.min_coverage_dist", "2"},

            {"tti.threshold_ratio", "0.25"},
            {"tti.mode", "three_channel"},
            {"tti.overwrite_rule", "pre_write"},
            {"tti.bound", "20"},
            {"tti.export_png_dir", ""},

            {"norm.flow_scale", "2.0"},

            {"clip.steps", "16"},
            {"clip.stride", "5"},
            {"clip.sdtd_stride", "1"},

            {"prep.resize_w", "85"},
            {"prep.resize_h", "64"},
            {"prep.crop_w", "56"},
            {"prep.crop_h", "56"},

            {"arch.cnn", "conv:16:3 relu pool conv:32:3 relu pool fc:128"},
            {"arch.lstm_hidden", "128"},

            {"train.iters", "400"},
            {"train.batch_size", "8"},
            {"train.lr", "0.001"},
            {"train.momentum", "0.9"},
            {"train.lr_drops", "250,350"},
            {"train.lr_drop_factor", "10"},
            {"train.two_phase", "0"},
            {"train.phase1_iters", "0"},
            {"stream", "sdtd"},

            {"eval.fuse", ""},
            {"eval.shuffle_tti", "0"},
            {"eval.shuffle_seed", "1234"},

            {"in", ""},
            {"out", ""},
            {"manifest", ""},
        };
        return d;
    }

    void load_file(const fs::path& path) {
        std::ifstream is(path);
        if (!is) throw DataError("cannot open config file: " + path.string());
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos) continue;
            const auto last = line.find_last_not_of(" \t\r");
            set_pair(line.substr(first, last - first + 1),
                     path.string() + ":" + std::to_string(lineno));
        }
    }

    void set_pair(const std::string& kv, const std::string& where) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw UsageError("expected key=value at " + where + ": " + kv);
        set(kv.substr(0, eq), kv.substr(eq + 1));
    }

    void set(const std::string& key, const std::string& value) {
        if (!values_.count(key)) throw UsageError("unknown config key: " + key);
        values_[key] = value;
    }

    const std::string& get(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) throw UsageError("unknown config key: " + key);
        return it->second;
    }

    int get_int(const std::string& key) const {
        try {
            return std::stoi(get(key));
        } catch (const std::exception&) {
            throw UsageError("config " + key + " is not an integer: " + get(key));
        }
    }

    double get_double(const std::string& key) const {
        try {
            return std::stod(get(key));
        } catch (const std::exception&) {
            throw UsageError("config " + key + " is not a number: " + get(key));
        }
    }

    bool get_bool(const std::string& key) const {
        const std::string& v = get(key);
        if (v == "1" || v == "true" || v == "on") return true;
        if (v == "0" || v == "false" || v == "off") return false;
        throw UsageError("config " + key + " is not a boolean: " + v);
    }

    std::uint64_t get_u64(const std::string& key) const {
        try {
            return std::stoull(get(key));
        } catch (const std::exception&) {
            throw UsageError("config " + key + " is not an integer: " + get(key));
        }
    }

    std::vector<std::string> get_list(const std::string& key) const {
        std::vector<std::string> out;
        std::istringstream ss(get(key));
        std::string tok;
        while (std::getline(ss, tok, ','))
            if (!tok.empty()) out.push_back(tok);
        return out;
    }

    // Effective configuration, sorted, one key=value per line.
    std::vector<std::string> echo_lines() const {
        std::vector<std::string> lines;
        for (const auto& [k, v] : values_) lines.push_back(k + "=" + v);
        return lines;
    }

    std::string hash() const {
        std::string all;
        for (const std::string& l : echo_lines()) {
            all += l;
            all += '\n';
        }
        char buf[24];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(fnv1a_hash(all)));
        return buf;
    }

private:
    std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// typed views of the configuration

inline Tvl1Params tvl1_params(const Config& cfg) {
    Tvl1Params p;
    p.lambda = cfg.get_double("tvl1.lambda");
    p.theta = cfg.get_double("tvl1.theta");
    p.tau = cfg.get_double("tvl1.tau");
    p.warps = cfg.get_int("tvl1.warps");
    p.inner_iters = cfg.get_int("tvl1.inner_iters");
    p.pyramid_scale = cfg.get_double("tvl1.pyramid_scale");
    p.pyramid_levels = cfg.get_int("tvl1.pyramid_levels");
    p.stop_eps = cfg.get_double("tvl1.stop_eps");
    return p;
}

inline TrajectoryConfig trajectory_config(const Config& cfg) {
    TrajectoryConfig t;
    t.grid_step = cfg.get_int("traj.grid_step");
    t.max_length = cfg.get_int("traj.max_length");
    t.median_kernel = cfg.get_int("traj.median_kernel");
    t.min_mean_step = cfg.get_double("traj.min_mean_step");
    t.max_step = cfg.get_double("traj.max_step");
    t.scales = cfg.get_int("traj.scales");
    t.scale_factor = cfg.get_double("traj.scale_factor");
    t.min_coverage_dist = cfg.get_int("traj.min_coverage_dist");
    return t;
}

inline CompensationConfig compensation_config(const Config& cfg) {
    CompensationConfig c;
    const std::string mode = cfg.get("ego.mode");
    if (mode == "off") c.mode = CompensationMode::off;
    else if (mode == "subtract") c.mode = CompensationMode::subtract;
    else if (mode == "warp-recompute") c.mode = CompensationMode::warp_recompute;
    else throw UsageError("ego.mode must be off|subtract|warp-recompute: " + mode);
    c.ransac.iters = cfg.get_int("ego.iters");
    c.ransac.inlier_thresh_px = cfg.get_double("ego.inlier_thresh");
    c.ransac.max_corners = cfg.get_int("ego.max_corners");
    c.ransac.quality_ratio = cfg.get_double("ego.quality_ratio");
    c.seed = cfg.get_u64("seed");
    c.tvl1 = tvl1_params(cfg);
    return c;
}

inline PreprocessSpec preprocess_spec(const Config& cfg) {
    PreprocessSpec p;
    p.resize_w = cfg.get_int("prep.resize_w");
    p.resize_h = cfg.get_int("prep.resize_h");
    p.crop_w = cfg.get_int("prep.crop_w");
    p.crop_h = cfg.get_int("prep.crop_h");
    p.validate();
    return p;
}

inline ClipSpec clip_spec(const Config& cfg, StreamKind kind) {
    ClipSpec c;
    c.steps = cfg.get_int("clip.steps");
    c.stride = kind == StreamKind::sdtd ? cfg.get_int("clip.sdtd_stride")
                                        : cfg.get_int("clip.stride");
    c.validate();
    return c;
}

inline ArchitectureSpec architecture_spec(const Config& cfg, int num_classes) {
    ArchitectureSpec a;
    a.cnn = cfg.get("arch.cnn");
    a.lstm_hidden = cfg.get_int("arch.lstm_hidden");
    a.num_classes = num_classes;
    a.input_channels = 3;
    a.input_height = cfg.get_int("prep.crop_h");
    a.input_width = cfg.get_int("prep.crop_w");
    return a;
}

inline TrainConfig train_config(const Config& cfg) {
    TrainConfig t;
    t.iters = cfg.get_int("train.iters");
    t.batch_size = cfg.get_int("train.batch_size");
    t.learning_rate = cfg.get_double("train.lr");
    t.momentum = cfg.get_double("train.momentum");
    t.lr_drop_iters.clear();
    for (const std::string& s : cfg.get_list("train.lr_drops"))
        t.lr_drop_iters.push_back(std::stoi(s));
    t.lr_drop_factor = cfg.get_double("train.lr_drop_factor");
    t.seed = cfg.get_u64("seed");
    t.two_phase = cfg.get_bool("train.two_phase");
    t.phase1_iters = cfg.get_int("train.phase1_iters");
    return t;
}

inline TtiMode tti_mode(const Config& cfg) {
    const std::string m = cfg.get("tti.mode");
    if (m == "one_channel") return TtiMode::one_channel;
    if (m == "three_channel") return TtiMode::three_channel;
    throw UsageError("tti.mode must be one_channel|three_channel: " + m);
}

inline OverwriteRule overwrite_rule(const Config& cfg) {
    const std::string r = cfg.get("tti.overwrite_rule");
    if (r == "pre_write") return OverwriteRule::pre_write;
    if (r == "literal") return OverwriteRule::literal;
    throw UsageError("tti.overwrite_rule must be pre_write|literal: " + r);
}

// ---------------------------------------------------------------------------
// run manifest

inline void write_run_manifest(const Config& cfg, const std::string& subcommand,
                               const std::vector<std::string>& inputs,
                               const std::vector<std::string>& outputs,
                               const std::vector<std::string>& warnings,
                               const fs::path& path) {
    json j;
    j["subcommand"] = subcommand;
    j["config"] = cfg.echo_lines();
    j["config_hash"] = cfg.hash();
    j["seed"] = cfg.get_u64("seed");
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["warnings"] = warnings;
    fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream os(path);
    os << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// per-video parallel map with deterministic outputs

template <typename Fn>
void parallel_for_videos(int jobs, std::size_t count, Fn&& fn) {
    if (jobs <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
    for (int t = 0; t < jobs; ++t)
        pool.emplace_back([&, t]() {
            try {
                for (std::size_t i = next++; i < count; i = next++) fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(t)] = std::current_exception();
            }
        });
    for (std::thread& th : pool) th.join();
    for (const std::exception_ptr& e : errors)
        if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// pipeline stages (shared by CLI subcommands and the acceptance experiment)

struct VideoPaths {
    fs::path dir;          // <root>/videos/<name>
    std::string rel_path;  // manifest path column
    int label = 0;
    std::string split;
};

inline std::vector<VideoPaths> manifest_videos(const io::DatasetManifest& manifest,
                                               const fs::path& root) {
    std::vector<VideoPaths> out;
    for (const auto& e : manifest.entries) {
        VideoPaths v;
        v.rel_path = e.path;
        v.dir = root / e.path;
        v.label = e.label;
        v.split = e.split;
        out.push_back(std::move(v));
    }
    return out;
}

inline SceneSpec scene_spec(const Config& cfg) {
    SceneSpec s;
    s.height = cfg.get_int("datagen.height");
    s.width = cfg.get_int("datagen.width");
    s.sprite_size = cfg.get_int("datagen.sprite_size");
    s.frames = cfg.get_int("datagen.frames");
    s.camera_pan_x = cfg.get_double("datagen.camera_pan_x");
    s.camera_pan_y = cfg.get_double("datagen.camera_pan_y");
    return s;
}

inline std::vector<MotionClass> motion_classes(const Config& cfg) {
    std::vector<MotionClass> out;
    for (const std::string& name : cfg.get_list("datagen.classes")) {
        MotionClass c;
        c.kind = parse_motion_class(name);
        c.speed = cfg.get_double("datagen.speed");
        c.circle_frames = cfg.get_double("datagen.circle_frames");
        c.zigzag_period = cfg.get_int("datagen.zigzag_period");
        c.zigzag_half_angle_deg = cfg.get_double("datagen.zigzag_angle");
        c.stop_go_period = cfg.get_int("datagen.stop_go_period");
        c.duty_cycle = cfg.get_double("datagen.duty_cycle");
        out.push_back(c);
    }
    if (out.empty()) throw UsageError("datagen.classes is empty");
    return out;
}

inline io::DatasetManifest stage_datagen(const Config& cfg, const fs::path& root) {
    return generate_dataset(motion_classes(cfg), scene_spec(cfg),
                            cfg.get_int("datagen.per_class_train"),
                            cfg.get_int("datagen.per_class_test"),
                            cfg.get_u64("seed"), root);
}

// frames -> flow/*.flo for one video directory
inline int compute_video_flow(const Config& cfg, const fs::path& video_dir) {
    const FrameSequence seq = io::load_frame_sequence(video_dir / "frames");
    if (seq.frames.size() < 2)
        throw DataError("need at least 2 frames in " + video_dir.string());
    fs::create_directories(video_dir / "flow");
    const std::string solver = cfg.get("flow.solver");
    const Tvl1Params params = tvl1_params(cfg);
    const double hs_alpha = cfg.get_double("flow.hs_alpha");
    const int hs_iters = cfg.get_int("flow.hs_iters");
    char name[32];
    for (std::size_t t = 0; t + 1 < seq.frames.size(); ++t) {
        const Frame a = to_luma(seq.frames[t]);
        const Frame b = to_luma(seq.frames[t + 1]);
        FlowField flow;
        if (solver == "tvl1")
            flow = tvl1_flow(a, b, params);
        else if (solver == "horn_schunck")
            flow = horn_schunck(a, b, hs_alpha, hs_iters);
        else
            throw UsageError("flow.solver must be tvl1|horn_schunck: " + solver);
        std::snprintf(name, sizeof(name), "f_%06zu.flo", t);
        io::write_flo(flow, video_dir / "flow" / name);
    }
    return static_cast<int>(seq.frames.size()) - 1;
}

inline std::vector<fs::path> list_flo_files(const fs::path& flow_dir) {
    std::vector<fs::path> files;
    if (!fs::is_directory(flow_dir))
        throw DataError("no flow directory at " + flow_dir.string());
    for (const auto& e : fs::directory_iterator(flow_dir))
        if (e.path().extension() == ".flo") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no .flo files in " + flow_dir.string());
    return files;
}

// in-place camera-motion compensation for one video; returns warning count
inline int compensate_video(const Config& cfg, const fs::path& video_dir) {
    const FrameSequence seq = io::load_frame_sequence(video_dir / "frames");
    const auto files = list_flo_files(video_dir / "flow");
    if (files.size() + 1 != seq.frames.size())
        throw DataError("frame/flow count mismatch in " + video_dir.string());
    std::vector<FlowField> flows;
    flows.reserve(files.size());
    for (const auto& f : files) flows.push_back(io::read_flo(f));
    const auto [compensated, report] =
        compensate_sequence(seq.frames, flows, compensation_config(cfg));
    for (std::size_t t = 0; t < files.size(); ++t)
        io::write_flo(compensated[t], files[t]);
    json j;
    j["pair_count"] = report.pair_count;
    j["failed_pairs"] = report.failed_pairs;
    j["mode"] = cfg.get("ego.mode");
    std::ofstream os(video_dir / "compensation.json");
    os << j.dump(2) << "\n";
    return static_cast<int>(report.failed_pairs.size());
}

inline int extract_video_trajectories(const Config& cfg, const fs::path& video_dir) {
    std::vector<FlowField> flows;
    for (const auto& f : list_flo_files(video_dir / "flow"))
        flows.push_back(io::read_flo(f));
    const TrajectorySet set = extract_trajectories(flows, trajectory_config(cfg));
    io::write_trajectories(set, video_dir / "trajectories.traj");
    return static_cast<int>(set.trajectories.size());
}

inline int build_video_tti(const Config& cfg, const fs::path& video_dir) {
    const TrajectorySet set = io::read_trajectories(video_dir / "trajectories.traj");
    const int h = set.frame_height, w = set.frame_width;
    const long long p = static_cast<long long>(
        std::ceil(cfg.get_double("tti.threshold_ratio") * h * w));
    const TtiMode mode = tti_mode(cfg);
    const TtiSequence seq =
        build_sequence(set, h, w, std::max<long long>(1, p), mode, overwrite_rule(cfg));
    const int channels = mode == TtiMode::three_channel ? 3 : 1;
    io::write_tti_raw(seq, h, w, channels, video_dir / "tti.ttiraw");

    json j;
    j["threshold"] = p;
    j["images"] = seq.images.size();
    json bounds = json::array();
    json ranges = json::array();
    for (std::size_t i = 0; i < seq.images.size(); ++i) {
        bounds.push_back({seq.segment_bounds[i].first_frame,
                          seq.segment_bounds[i].last_frame});
        float lo = 0, hi = 0;
        for (float v : seq.images[i].data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        ranges.push_back({lo, hi});
    }
    j["segment_bounds"] = bounds;
    j["float_ranges"] = ranges;
    std::ofstream os(video_dir / "tti_meta.json");
    os << j.dump(2) << "\n";

    const std::string png_dir = cfg.get("tti.export_png_dir");
    if (!png_dir.empty()) {
        const fs::path dir = fs::path(png_dir) / video_dir.filename();
        fs::create_directories(dir);
        const double bound = cfg.get_double("tti.bound");
        char name[32];
        for (std::size_t i = 0; i < seq.images.size(); ++i) {
            std::snprintf(name, sizeof(name), "tti_%04zu.png", i);
            io::write_png(dir / name, export_tti_image(seq.images[i], bound));
        }
    }
    return static_cast<int>(seq.images.size());
}

inline InputNorm input_norm(const Config& cfg, StreamKind kind) {
    return default_input_norm(kind, cfg.get_double("norm.flow_scale"));
}

// ---------------------------------------------------------------------------
// training / evaluation stages

struct StreamArtifacts {
    fs::path checkpoint;
    fs::path train_log;
    fs::path predictions;
    fs::path metrics;
};

inline StreamArtifacts stream_artifacts(const fs::path& out_root, StreamKind kind) {
    const std::string n = stream_name(kind);
    return {out_root / ("model_" + n + ".ckpt"), out_root / ("train_log_" + n + ".json"),
            out_root / ("predictions_" + n + ".json"),
            out_root / ("metrics_" + n + ".json")};
}

template <typename T>
void stage_train(const Config& cfg, const fs::path& data_root,
                 const fs::path& out_root, StreamKind kind) {
    const io::DatasetManifest manifest = io::load_manifest(data_root / "manifest.tsv");
    const PreprocessSpec prep = preprocess_spec(cfg);
    std::vector<VideoItems> train_videos;
    for (const auto& e : manifest.entries) {
        if (e.split != "train") continue;
        VideoItems v;
        v.path = e.path;
        v.label = e.label;
        v.split = e.split;
        v.items = load_stream_items(data_root / e.path, kind, prep);
        train_videos.push_back(std::move(v));
    }
    if (train_videos.empty()) throw DataError("manifest train split is empty");

    const ArchitectureSpec arch =
        architecture_spec(cfg, static_cast<int>(manifest.class_names.size()));
    auto [model, log] = train_stream<T>(train_videos, arch, clip_spec(cfg, kind), prep,
                                        input_norm(cfg, kind), train_config(cfg));

    fs::create_directories(out_root);
    const StreamArtifacts art = stream_artifacts(out_root, kind);
    io::save_checkpoint(model.to_checkpoint(), art.checkpoint);
    json jlog = json::array();
    for (const TrainLogEntry& e : log)
        jlog.push_back({{"iter", e.iter}, {"loss", e.loss}, {"lr", e.lr}});
    std::ofstream os(art.train_log);
    os << json{{"stream", stream_name(kind)}, {"entries", jlog}}.dump(2) << "\n";
}

// Per-video predictions for the test split of one stream.
template <typename T>
json stage_eval_stream(const Config& cfg, const fs::path& data_root,
                       const fs::path& out_root, StreamKind kind,
                       bool shuffle_items) {
    const io::DatasetManifest manifest = io::load_manifest(data_root / "manifest.tsv");
    const PreprocessSpec prep = preprocess_spec(cfg);
    const ClipSpec clip = clip_spec(cfg, kind);
    const InputNorm norm = input_norm(cfg, kind);

    const ArchitectureSpec arch =
        architecture_spec(cfg, static_cast<int>(manifest.class_names.size()));
    CnnRnnModel<T> model(arch, cfg.get_u64("seed"));
    const StreamArtifacts art = stream_artifacts(out_root, kind);
    model.from_checkpoint(io::load_checkpoint(art.checkpoint));

    EvalOptions opts;
    opts.shuffle_items = shuffle_items;
    opts.shuffle_seed = cfg.get_u64("eval.shuffle_seed");

    std::vector<VideoPaths> test_videos;
    for (const auto& v : manifest_videos(manifest, data_root))
        if (v.split == "test") test_videos.push_back(v);
    if (test_videos.empty()) throw DataError("manifest test split is empty");

    std::vector<Prediction> preds(test_videos.size());
    const int jobs = cfg.get_int("jobs");
    parallel_for_videos(jobs, test_videos.size(), [&](std::size_t i) {
        VideoItems video;
        video.label = test_videos[i].label;
        video.items = load_stream_items(test_videos[i].dir, kind, prep);
        preds[i] = evaluate_video(model, video, clip, prep, norm, opts,
                                  static_cast<std::uint64_t>(i));
    });

    json out;
    out["stream"] = stream_name(kind);
    out["shuffled"] = shuffle_items;
    out["class_names"] = manifest.class_names;
    json videos = json::array();
    for (std::size_t i = 0; i < test_videos.size(); ++i)
        videos.push_back({{"path", test_videos[i].rel_path},
                          {"label", test_videos[i].label},
                          {"probs", preds[i].probs}});
    out["videos"] = videos;
    return out;
}

inline Metrics metrics_from_predictions(const json& stream_preds, int classes) {
    std::vector<Prediction> preds;
    std::vector<int> labels;
    for (const auto& v : stream_preds.at("videos")) {
        Prediction p;
        p.probs = v.at("probs").get<std::vector<double>>();
        preds.push_back(std::move(p));
        labels.push_back(v.at("label").get<int>());
    }
    return score_predictions(preds, labels, classes);
}

inline json metrics_to_json(const Metrics& m) {
    return json{{"accuracy", m.accuracy},
                {"per_class_accuracy", m.per_class_accuracy},
                {"confusion", m.confusion}};
}

// Weighted late fusion over saved per-stream prediction files; also reports
// the prediction-change accounting of adding sDTD to the spatial+temporal
// fusion when all three streams are present.
inline json fuse_predictions(const std::vector<json>& stream_preds,
                             const std::vector<double>& weights, int classes) {
    if (stream_preds.empty()) throw UsageError("fuse: no stream predictions");
    const std::size_t n_videos = stream_preds[0].at("videos").size();
    std::vector<int> labels;
    for (const auto& v : stream_preds[0].at("videos"))
        labels.push_back(v.at("label").get<int>());
    for (const json& sp : stream_preds)
        if (sp.at("videos").size() != n_videos)
            throw DataError("fuse: prediction files cover different video sets");

    std::vector<Prediction> fused(n_videos);
    for (std::size_t i = 0; i < n_videos; ++i) {
        std::vector<Prediction> per_stream;
        for (const json& sp : stream_preds) {
            Prediction p;
            p.probs = sp.at("videos")[i].at("probs").get<std::vector<double>>();
            per_stream.push_back(std::move(p));
        }
        fused[i] = fuse_streams(per_stream, weights);
    }
    const Metrics m = score_predictions(fused, labels, classes);
    json out;
    out["weights"] = weights;
    json streams = json::array();
    for (const json& sp : stream_preds) {
        const Metrics sm = metrics_from_predictions(sp, classes);
        streams.push_back({{"stream", sp.at("stream")},
                           {"metrics", metrics_to_json(sm)}});
    }
    out["streams"] = streams;
    out["fused"] = metrics_to_json(m);
    json fused_videos = json::array();
    for (std::size_t i = 0; i < n_videos; ++i)
        fused_videos.push_back({{"label", labels[i]}, {"probs", fused[i].probs}});
    out["videos"] = fused_videos;

    if (stream_preds.size() == 3) {
        // spatial+temporal baseline vs full three-stream fusion
        std::vector<Prediction> st(n_videos);
        for (std::size_t i = 0; i < n_videos; ++i) {
            std::vector<Prediction> two;
            std::vector<double> w2 = {weights[0], weights[1]};
            for (int s = 0; s < 2; ++s) {
                Prediction p;
                p.probs =
                    stream_preds[s].at("videos")[i].at("probs").get<std::vector<double>>();
                two.push_back(std::move(p));
            }
            st[i] = fuse_streams(two, w2);
        }
        const PredictionChanges ch = count_prediction_changes(st, fused, labels, classes);
        out["st_fusion"] = metrics_to_json(score_predictions(st, labels, classes));
        out["prediction_changes"] = {{"corrected", ch.corrected},
                                     {"broken", ch.broken}};
    }
    return out;
}

}  // namespace sdtd
