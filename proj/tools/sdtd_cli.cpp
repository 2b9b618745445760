#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "sdtd/pipeline.hpp"

namespace fs = std::filesystem;
using namespace sdtd;

namespace {

constexpr const char* kUsage = R"(usage: sdtd <subcommand> [--config <file>] [--key=value ...]

subcommands:
  datagen       generate the synthetic labeled dataset under <data_root>
  flow          compute dense optical flow (per manifest video, or --in/--out)
  compensate    remove camera motion from stored flows (in place)
  trajectories  extract dense trajectories from stored flows
  tti           build Trajectory Texture image sequences from trajectories
  train         train one stream ( --stream spatial|temporal|sdtd )
  eval          evaluate streams ( --stream X | --fuse s=w,t=w,s=w [--shuffle-tti] )
  fuse          fuse saved per-stream predictions ( --fuse s=w,t=w,s=w )
  selftest      run the built-in oracle battery

common flags: --config <file>, --jobs N, --seed N, --data-root DIR, --out-root DIR,
              --camera-compensation {off,subtract,warp-recompute}
tti flags:    --threshold-ratio R, --mode {one_channel,three_channel},
              --overwrite-rule {pre_write,literal}, --export-png-dir DIR, --bound B
any configuration key can be overridden with --key=value (see README).
)";

struct Cli {
    std::string subcommand;
    Config cfg;
};

// Flag aliases named in the module interfaces; everything else is --key=value.
const std::map<std::string, std::string> kAliases = {
    {"--camera-compensation", "ego.mode"},
    {"--threshold-ratio", "tti.threshold_ratio"},
    {"--mode", "tti.mode"},
    {"--overwrite-rule", "tti.overwrite_rule"},
    {"--export-png-dir", "tti.export_png_dir"},
    {"--bound", "tti.bound"},
    {"--stream", "stream"},
    {"--fuse", "eval.fuse"},
    {"--jobs", "jobs"},
    {"--seed", "seed"},
    {"--data-root", "data_root"},
    {"--out-root", "out_root"},
    {"--manifest", "manifest"},
    {"--in", "in"},
    {"--out", "out"},
};

Cli parse_args(int argc, char** argv) {
    if (argc < 2) throw UsageError("missing subcommand");
    Cli cli;
    cli.subcommand = argv[1];
    std::vector<std::string> args(argv + 2, argv + argc);
    for (std::size_t i = 0; i < args.size(); ++i) {
        const std::string& a = args[i];
        auto next_value = [&](const std::string& flag) -> std::string {
            if (i + 1 >= args.size()) throw UsageError("flag needs a value: " + flag);
            return args[++i];
        };
        if (a == "--config") {
            cli.cfg.load_file(next_value(a));
        } else if (a == "--shuffle-tti") {
            cli.cfg.set("eval.shuffle_tti", "1");
        } else if (a.rfind("--", 0) == 0) {
            const auto eq = a.find('=');
            const std::string flag = eq == std::string::npos ? a : a.substr(0, eq);
            const auto alias = kAliases.find(flag);
            const std::string key =
                alias != kAliases.end() ? alias->second : flag.substr(2);
            const std::string value =
                eq == std::string::npos ? next_value(flag) : a.substr(eq + 1);
            cli.cfg.set(key, value);
        } else {
            throw UsageError("unexpected argument: " + a);
        }
    }
    return cli;
}

std::vector<VideoPaths> videos_for_stage(const Config& cfg, const fs::path& root) {
    const io::DatasetManifest manifest = io::load_manifest(
        cfg.get("manifest").empty() ? root / "manifest.tsv" : fs::path(cfg.get("manifest")));
    return manifest_videos(manifest, root);
}

int cmd_datagen(Config& cfg) {
    const fs::path root = cfg.get("data_root");
    const io::DatasetManifest m = stage_datagen(cfg, root);
    write_run_manifest(cfg, "datagen", {}, {(root / "manifest.tsv").string()},
                       {}, root / "run_datagen.json");
    std::printf("datagen: %zu videos, %zu classes -> %s\n", m.entries.size(),
                m.class_names.size(), root.string().c_str());
    return 0;
}

int cmd_flow(Config& cfg) {
    const fs::path root = cfg.get("data_root");
    std::vector<std::string> outputs;
    if (!cfg.get("in").empty()) {
        // single directory of frames -> directory of .flo files
        const fs::path in = cfg.get("in");
        const fs::path out = cfg.get("out").empty() ? in.parent_path() / "flow"
                                                    : fs::path(cfg.get("out"));
        const FrameSequence seq = io::load_frame_sequence(in);
        if (seq.frames.size() < 2) throw DataError("need at least 2 frames in " + in.string());
        fs::create_directories(out);
        const Tvl1Params params = tvl1_params(cfg);
        char name[32];
        for (std::size_t t = 0; t + 1 < seq.frames.size(); ++t) {
            FlowField flow;
            if (cfg.get("flow.solver") == "horn_schunck")
                flow = horn_schunck(to_luma(seq.frames[t]), to_luma(seq.frames[t + 1]),
                                    cfg.get_double("flow.hs_alpha"),
                                    cfg.get_int("flow.hs_iters"));
            else
                flow = tvl1_flow(to_luma(seq.frames[t]), to_luma(seq.frames[t + 1]), params);
            std::snprintf(name, sizeof(name), "f_%06zu.flo", t);
            io::write_flo(flow, out / name);
            outputs.push_back((out / name).string());
        }
        write_run_manifest(cfg, "flow", {in.string()}, outputs, {},
                           out / "run_flow.json");
        std::printf("flow: %zu fields -> %s\n", outputs.size(), out.string().c_str());
        return 0;
    }
    const auto videos = videos_for_stage(cfg, root);
    std::atomic<long> total{0};
    parallel_for_videos(cfg.get_int("jobs"), videos.size(), [&](std::size_t i) {
        total += compute_video_flow(cfg, videos[i].dir);
    });
    write_run_manifest(cfg, "flow", {(root / "manifest.tsv").string()},
                       {root.string() + "/videos/*/flow"}, {},
                       root / "run_flow.json");
    std::printf("flow: %ld fields across %zu videos\n", total.load(), videos.size());
    return 0;
}

int cmd_compensate(Config& cfg) {
    const fs::path root = cfg.get("data_root");
    const auto videos = videos_for_stage(cfg, root);
    std::vector<std::string> warnings;
    std::vector<int> warn_counts(videos.size(), 0);
    parallel_for_videos(cfg.get_int("jobs"), videos.size(), [&](std::size_t i) {
        warn_counts[i] = compensate_video(cfg, videos[i].dir);
    });
    for (std::size_t i = 0; i < videos.size(); ++i)
        if (warn_counts[i] > 0)
            warnings.push_back(videos[i].rel_path + ": " +
                               std::to_string(warn_counts[i]) + " pairs passed through");
    write_run_manifest(cfg, "compensate", {(root / "manifest.tsv").string()},
                       {root.string() + "/videos/*/flow"}, warnings,
                       root / "run_compensate.json");
    std::printf("compensate: %zu videos, %zu with warnings\n", videos.size(),
                warnings.size());
    return 0;
}

int cmd_trajectories(Config& cfg) {
    const fs::path root = cfg.get("data_root");
    const auto videos = videos_for_stage(cfg, root);
    std::atomic<long> total{0};
    parallel_for_videos(cfg.get_int("jobs"), videos.size(), [&](std::size_t i) {
        total += extract_video_trajectories(cfg, videos[i].dir);
    });
    write_run_manifest(cfg, "trajectories", {(root / "manifest.tsv").string()},
                       {root.string() + "/videos/*/trajectories.traj"}, {},
                       root / "run_trajectories.json");
    std::printf("trajectories: %ld tracks across %zu videos\n", total.load(),
                videos.size());
    return 0;
}

int cmd_tti(Config& cfg) {
    const fs::path root = cfg.get("data_root");
    const auto videos = videos_for_stage(cfg, root);
    std::atomic<long> total{0};
    parallel_for_videos(cfg.get_int("jobs"), videos.size(), [&](std::size_t i) {
        total += build_video_tti(cfg, videos[i].dir);
    });
    write_run_manifest(cfg, "tti", {(root / "manifest.tsv").string()},
                       {root.string() + "/videos/*/tti.ttiraw"}, {},
                       root / "run_tti.json");
    std::printf("tti: %ld images across %zu videos (avg %.1f)\n", total.load(),
                videos.size(), static_cast<double>(total) / videos.size());
    return 0;
}

int cmd_train(Config& cfg) {
    const StreamKind kind = parse_stream(cfg.get("stream"));
    const fs::path data_root = cfg.get("data_root");
    const fs::path out_root = cfg.get("out_root");
    if (cfg.get("precision") == "double")
        stage_train<double>(cfg, data_root, out_root, kind);
    else
        stage_train<float>(cfg, data_root, out_root, kind);
    const StreamArtifacts art = stream_artifacts(out_root, kind);
    write_run_manifest(cfg, "train", {(data_root / "manifest.tsv").string()},
                       {art.checkpoint.string(), art.train_log.string()}, {},
                       out_root / ("run_train_" + std::string(stream_name(kind)) + ".json"));
    std::printf("train: %s -> %s\n", stream_name(kind), art.checkpoint.string().c_str());
    return 0;
}

std::pair<std::vector<StreamKind>, std::vector<double>> parse_fuse_weights(
    const std::string& spec) {
    std::vector<StreamKind> kinds;
    std::vector<double> weights;
    std::istringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos)
            throw UsageError("fuse spec must be stream=weight,...: " + spec);
        kinds.push_back(parse_stream(tok.substr(0, eq)));
        weights.push_back(std::stod(tok.substr(eq + 1)));
    }
    if (kinds.empty()) throw UsageError("empty fuse spec");
    return {kinds, weights};
}

template <typename T>
int eval_with_precision(Config& cfg) {
    const fs::path data_root = cfg.get("data_root");
    const fs::path out_root = cfg.get("out_root");
    const io::DatasetManifest manifest = io::load_manifest(data_root / "manifest.tsv");
    const int classes = static_cast<int>(manifest.class_names.size());
    const bool shuffle = cfg.get_bool("eval.shuffle_tti");
    fs::create_directories(out_root);

    std::vector<std::string> outputs;
    if (cfg.get("eval.fuse").empty()) {
        const StreamKind kind = parse_stream(cfg.get("stream"));
        const json preds = stage_eval_stream<T>(cfg, data_root, out_root, kind,
                                                shuffle && kind == StreamKind::sdtd);
        const StreamArtifacts art = stream_artifacts(out_root, kind);
        const fs::path pred_path =
            shuffle ? out_root / ("predictions_" + std::string(stream_name(kind)) +
                                  "_shuffled.json")
                    : art.predictions;
        const fs::path metr_path =
            shuffle ? out_root / ("metrics_" + std::string(stream_name(kind)) +
                                  "_shuffled.json")
                    : art.metrics;
        std::ofstream(pred_path) << preds.dump(2) << "\n";
        const Metrics m = metrics_from_predictions(preds, classes);
        json jm = metrics_to_json(m);
        jm["stream"] = stream_name(kind);
        jm["shuffled"] = shuffle;
        jm["class_names"] = manifest.class_names;
        std::ofstream(metr_path) << jm.dump(2) << "\n";
        outputs = {pred_path.string(), metr_path.string()};
        std::printf("eval %s%s: accuracy %.4f\n", stream_name(kind),
                    shuffle ? " (shuffled tti)" : "", m.accuracy);
    } else {
        const auto [kinds, weights] = parse_fuse_weights(cfg.get("eval.fuse"));
        std::vector<json> per_stream;
        for (const StreamKind kind : kinds) {
            const json preds = stage_eval_stream<T>(cfg, data_root, out_root, kind,
                                                    shuffle && kind == StreamKind::sdtd);
            const StreamArtifacts art = stream_artifacts(out_root, kind);
            std::ofstream(art.predictions) << preds.dump(2) << "\n";
            outputs.push_back(art.predictions.string());
            per_stream.push_back(preds);
        }
        json fused = fuse_predictions(per_stream, weights, classes);
        fused["class_names"] = manifest.class_names;
        const fs::path path = out_root / "metrics_fused.json";
        std::ofstream(path) << fused.dump(2) << "\n";
        outputs.push_back(path.string());
        std::printf("eval fused: accuracy %.4f\n",
                    fused["fused"]["accuracy"].get<double>());
    }
    write_run_manifest(cfg, "eval", {(data_root / "manifest.tsv").string()}, outputs,
                       {}, out_root / "run_eval.json");
    return 0;
}

int cmd_eval(Config& cfg) {
    if (cfg.get("precision") == "double") return eval_with_precision<double>(cfg);
    return eval_with_precision<float>(cfg);
}

int cmd_fuse(Config& cfg) {
    const fs::path data_root = cfg.get("data_root");
    const fs::path out_root = cfg.get("out_root");
    const io::DatasetManifest manifest = io::load_manifest(data_root / "manifest.tsv");
    const auto [kinds, weights] = parse_fuse_weights(
        cfg.get("eval.fuse").empty() ? "spatial=1,temporal=1,sdtd=1"
                                     : cfg.get("eval.fuse"));
    std::vector<json> per_stream;
    for (const StreamKind kind : kinds) {
        const StreamArtifacts art = stream_artifacts(out_root, kind);
        std::ifstream is(art.predictions);
        if (!is) throw DataError("missing predictions file: " + art.predictions.string() +
                                 " (run eval --stream " + stream_name(kind) + " first)");
        per_stream.push_back(json::parse(is));
    }
    json fused = fuse_predictions(per_stream, weights,
                                  static_cast<int>(manifest.class_names.size()));
    fused["class_names"] = manifest.class_names;
    const fs::path path = out_root / "metrics_fused.json";
    std::ofstream(path) << fused.dump(2) << "\n";
    write_run_manifest(cfg, "fuse", {}, {path.string()}, {}, out_root / "run_fuse.json");
    std::printf("fuse: accuracy %.4f -> %s\n",
                fused["fused"]["accuracy"].get<double>(), path.string().c_str());
    return 0;
}

// Built-in oracle battery: cheap independent checks of each module's core
// contract, runnable on a fresh checkout with no inputs.
int cmd_selftest(Config& cfg) {
    int failures = 0;
    auto check = [&](const char* name, bool ok) {
        std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", name);
        if (!ok) ++failures;
    };

    {
        const fs::path tmp = fs::temp_directory_path() / "sdtd_selftest.flo";
        FlowField f(3, 4);
        Rng rng(1);
        for (std::size_t i = 0; i < f.pixel_count(); ++i) {
            f.u[i] = static_cast<float>(rng.uniform(-5, 5));
            f.v[i] = static_cast<float>(rng.uniform(-5, 5));
        }
        io::write_flo(f, tmp);
        const FlowField g = io::read_flo(tmp);
        check("flo round trip bit-exact", f.u == g.u && f.v == g.v);
        fs::remove(tmp);
    }
    {
        FlowField flow(9, 9);
        Rng rng(2);
        for (std::size_t i = 0; i < flow.pixel_count(); ++i) {
            flow.u[i] = static_cast<float>(rng.uniform(-3, 3));
            flow.v[i] = static_cast<float>(rng.uniform(-3, 3));
        }
        auto [x, y] = track_step(4.0f, 4.0f, flow, 3);
        std::vector<float> us, vs;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                us.push_back(flow.u_at(4 + dy, 4 + dx));
                vs.push_back(flow.v_at(4 + dy, 4 + dx));
            }
        std::sort(us.begin(), us.end());
        std::sort(vs.begin(), vs.end());
        check("median tracking equals sort-based median",
              x == 4.0f + us[4] && y == 4.0f + vs[4]);
    }
    {
        Frame f(16, 16, 1, 0.5f);
        FlowField zero(16, 16);
        check("zero-flow warp is identity", warp_image(f, zero).data == f.data);
    }
    {
        Rng rng(3);
        std::vector<Correspondence> corrs;
        for (int i = 0; i < 20; ++i) {
            const float x = static_cast<float>(rng.uniform(5, 60));
            const float y = static_cast<float>(rng.uniform(5, 60));
            corrs.push_back({x, y, x + 3.0f, y - 2.0f});
        }
        auto [h, mask] = estimate_homography_ransac(corrs, 100, 1.0, 5);
        check("ransac recovers pure translation",
              std::abs(h.h[2] - 3.0) < 1e-5 && std::abs(h.h[5] + 2.0) < 1e-5 &&
                  std::abs(h.h[8] - 1.0) < 1e-12);
    }
    {
        bool ok = true;
        Rng rng(4);
        for (int i = 0; i < 100; ++i) {
            const double v = rng.uniform(-15, 15);
            ok = ok && std::abs(nn::tanh_phi(v) - (2.0 * nn::sigmoid(2.0 * v) - 1.0)) < 1e-12;
        }
        check("phi(x) == 2 sigma(2x) - 1", ok);
    }
    {
        nn::LstmParams<double> p(2, 3);
        nn::LstmState<double> prev(1, 3);
        Tensor<double> x({1, 2});
        x.data = {0.3, -0.8};
        nn::LstmStepCache<double> cache;
        const auto next = nn::lstm_step(x, prev, p, &cache);
        bool ok = true;
        for (int k = 0; k < 3; ++k)
            ok = ok && cache.i.data[k] == 0.5 && cache.f.data[k] == 0.5 &&
                 next.h.data[k] == 0.0;
        check("zero-weight lstm gives half gates and zero output", ok);
    }
    {
        Tensor<double> logits({1, 3});
        const auto [loss, grad] = nn::softmax_cross_entropy(logits, {1});
        check("uniform softmax loss is ln 3", std::abs(loss - std::log(3.0)) < 1e-12);
    }
    {
        TtiState state(8, 8, 10);
        Trajectory t;
        t.start_frame = 0;
        t.points = {{5, 5, 3, 4}, {7, 7, 0, 0}};
        rasterize_trajectory(state, t);
        check("tti rasterization writes (dx, dy, magnitude)",
              state.canvas.at(5, 5, 0) == 3.0f && state.canvas.at(5, 5, 1) == 4.0f &&
                  state.canvas.at(5, 5, 2) == 5.0f && state.overwrite_count == 0);
    }
    {
        ClipSpec spec;
        const auto idx = sample_clip_indices(3, spec, 0);
        check("clip sampling pads by repeating the last item",
              idx.size() == 16 && idx[0] == 0 && idx[1] == 1 && idx[2] == 2 &&
                  idx[15] == 2);
    }
    {
        MotionClass cls;
        SceneSpec scene;
        scene.frames = 8;
        bool ok = true;
        for (int t = 0; t + 1 < scene.frames; ++t) {
            const auto [x0, y0] = sprite_center(cls, scene, t);
            const auto [x1, y1] = sprite_center(cls, scene, t + 1);
            ok = ok && std::abs(std::hypot(x1 - x0, y1 - y0) - cls.speed) < 1e-9;
        }
        check("linear motion class has constant speed", ok);
    }

    write_run_manifest(cfg, "selftest", {}, {}, {},
                       fs::temp_directory_path() / "sdtd_run_selftest.json");
    if (failures) {
        std::fprintf(stderr, "selftest: %d failures\n", failures);
        return 2;
    }
    std::printf("selftest: all checks passed\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        Cli cli = parse_args(argc, argv);
        if (cli.subcommand == "datagen") return cmd_datagen(cli.cfg);
        if (cli.subcommand == "flow") return cmd_flow(cli.cfg);
        if (cli.subcommand == "compensate") return cmd_compensate(cli.cfg);
        if (cli.subcommand == "trajectories") return cmd_trajectories(cli.cfg);
        if (cli.subcommand == "tti") return cmd_tti(cli.cfg);
        if (cli.subcommand == "train") return cmd_train(cli.cfg);
        if (cli.subcommand == "eval") return cmd_eval(cli.cfg);
        if (cli.subcommand == "fuse") return cmd_fuse(cli.cfg);
        if (cli.subcommand == "selftest") return cmd_selftest(cli.cfg);
        throw UsageError("unknown subcommand: " + cli.subcommand);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n%s", e.what(), kUsage);
        return 1;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    }
}
