#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sdtd/common.hpp"
#include "sdtd/flow.hpp"
#include "sdtd/image.hpp"
#include "sdtd/io.hpp"
#include "sdtd/nn.hpp"
#include "sdtd/stream_model.hpp"
#include "sdtd/tensor.hpp"
#include "sdtd/texture.hpp"

namespace sdtd {

enum class StreamKind { spatial, temporal, sdtd };

inline const char* stream_name(StreamKind k) {
    switch (k) {
        case StreamKind::spatial: return "spatial";
        case StreamKind::temporal: return "temporal";
        case StreamKind::sdtd: return "sdtd";
    }
    return "?";
}

inline StreamKind parse_stream(const std::string& s) {
    if (s == "spatial") return StreamKind::spatial;
    if (s == "temporal") return StreamKind::temporal;
    if (s == "sdtd") return StreamKind::sdtd;
    throw UsageError("unknown stream: " + s);
}

struct ClipSpec {
    int steps = 16;
    int stride = 5;  // sdtd uses stride 1 over TTI indices

    void validate() const {
        if (steps < 1 || stride < 1)
            throw UsageError("clip: steps and stride must be >= 1");
    }
};

struct PreprocessSpec {
    int resize_w = 85;
    int resize_h = 64;
    int crop_w = 56;
    int crop_h = 56;

    void validate() const {
        if (crop_w > resize_w || crop_h > resize_h)
            throw UsageError("preprocess: crop larger than resized image");
    }
};

struct Prediction {
    std::vector<double> probs;
};

inline int argmax_class(const Prediction& p) {
    // ties break toward the lowest index so accuracy is deterministic
    int best = 0;
    for (int i = 1; i < static_cast<int>(p.probs.size()); ++i)
        if (p.probs[i] > p.probs[best]) best = i;
    return best;
}

// Eq.-11 style temporal input: (u, v, magnitude) as a float 3-channel frame.
inline Frame build_temporal_input(const FlowField& flow) {
    Frame out(flow.height, flow.width, 3);
    for (int y = 0; y < flow.height; ++y)
        for (int x = 0; x < flow.width; ++x) {
            const float u = flow.u_at(y, x);
            const float v = flow.v_at(y, x);
            out.at(y, x, 0) = u;
            out.at(y, x, 1) = v;
            out.at(y, x, 2) = std::sqrt(u * u + v * v);
        }
    return out;
}

// 8-bit dump of a flow image; the linear [0,255] mapping used when flows
// are saved as images. Shares the TTI quantizer since channels match.
inline Image8 export_flow_image(const FlowField& flow, double bound) {
    return export_tti_image(build_temporal_input(flow), bound);
}

// Clip index schedule: advance by stride while possible, fall back to
// single steps near the end, then repeat the last item.
inline std::vector<int> sample_clip_indices(int n_items, const ClipSpec& spec,
                                            int offset) {
    spec.validate();
    if (n_items < 1) throw DataError("sample_clip: empty sequence");
    std::vector<int> idx;
    idx.reserve(spec.steps);
    int cur = std::min(offset, n_items - 1);
    for (int s = 0; s < spec.steps; ++s) {
        idx.push_back(cur);
        if (cur + spec.stride < n_items)
            cur += spec.stride;
        else if (cur + 1 < n_items)
            cur += 1;
    }
    return idx;
}

struct CropRect {
    int x = 0;
    int y = 0;
    bool flip = false;
};

// One crop position and flip decision per clip; all steps share it.
inline CropRect draw_train_crop(const PreprocessSpec& spec, std::uint64_t clip_id) {
    spec.validate();
    Rng rng(derive_seed(0x5D7Dc20Full, clip_id));
    CropRect r;
    r.x = static_cast<int>(rng.below(spec.resize_w - spec.crop_w + 1));
    r.y = static_cast<int>(rng.below(spec.resize_h - spec.crop_h + 1));
    r.flip = rng.uniform() < 0.5;
    return r;
}

// Deterministic test policy: 4 corners + center, each with and without
// horizontal flip.
inline std::vector<CropRect> test_crop_variants(const PreprocessSpec& spec) {
    spec.validate();
    const int mx = spec.resize_w - spec.crop_w;
    const int my = spec.resize_h - spec.crop_h;
    const std::pair<int, int> pos[5] = {
        {0, 0}, {mx, 0}, {0, my}, {mx, my}, {mx / 2, my / 2}};
    std::vector<CropRect> out;
    for (bool flip : {false, true})
        for (const auto& [x, y] : pos) out.push_back({x, y, flip});
    return out;
}

inline Frame apply_crop(const Frame& resized, const PreprocessSpec& spec,
                        const CropRect& r) {
    Frame out(spec.crop_h, spec.crop_w, resized.channels);
    for (int y = 0; y < spec.crop_h; ++y)
        for (int x = 0; x < spec.crop_w; ++x)
            for (int c = 0; c < resized.channels; ++c) {
                const int sx = r.flip ? (r.x + spec.crop_w - 1 - x) : (r.x + x);
                out.at(y, x, c) = resized.at(r.y + y, sx, c);
            }
    return out;
}

inline Prediction aggregate_clip(const std::vector<Prediction>& steps) {
    if (steps.empty()) throw DataError("aggregate_clip: no predictions");
    Prediction out;
    out.probs.assign(steps[0].probs.size(), 0.0);
    for (const Prediction& p : steps)
        for (std::size_t i = 0; i < p.probs.size(); ++i) out.probs[i] += p.probs[i];
    for (double& v : out.probs) v /= static_cast<double>(steps.size());
    return out;
}

inline Prediction fuse_streams(const std::vector<Prediction>& preds,
                               const std::vector<double>& weights) {
    if (preds.empty()) throw DataError("fuse_streams: no predictions");
    if (weights.size() != preds.size())
        throw DataError("fuse_streams: weight count mismatch");
    const std::size_t classes = preds[0].probs.size();
    Prediction out;
    out.probs.assign(classes, 0.0);
    double total_w = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].probs.size() != classes)
            throw DataError("fuse_streams: class count mismatch");
        if (!(weights[i] > 0)) throw UsageError("fuse_streams: weights must be positive");
        for (std::size_t c = 0; c < classes; ++c)
            out.probs[c] += weights[i] * preds[i].probs[c];
        total_w += weights[i];
    }
    for (double& v : out.probs) v /= total_w;
    return out;
}

// ---------------------------------------------------------------------------
// per-step inference

template <typename T>
Tensor<T> assemble_clip_tensor(const std::vector<const Frame*>& items,
                               double shift, double scale) {
    const int steps = static_cast<int>(items.size());
    const int c = items[0]->channels, h = items[0]->height, w = items[0]->width;
    Tensor<T> out({1, steps, c, h, w});
    std::size_t k = 0;
    for (const Frame* f : items)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < c; ++ch)
                    out.data[k++] = static_cast<T>((f->at(y, x, ch) - shift) / scale);
    return out;
}

// CNN per step, LSTM from zero state, softmax per step.
template <typename T>
std::vector<Prediction> stream_forward(const std::vector<const Frame*>& clip,
                                       const CnnRnnModel<T>& model,
                                       double shift = 0.0, double scale = 1.0) {
    const Tensor<T> inputs = assemble_clip_tensor<T>(clip, shift, scale);
    const auto probs = model.forward_probs(inputs);
    std::vector<Prediction> out;
    out.reserve(probs.size());
    for (const Tensor<T>& p : probs) {
        Prediction pred;
        pred.probs.assign(p.data.begin(), p.data.end());
        out.push_back(std::move(pred));
    }
    return out;
}

// ---------------------------------------------------------------------------
// dataset views and stream input loading

struct VideoItems {
    std::string path;
    int label = 0;
    std::string split;
    std::vector<Frame> items;  // resized to PreprocessSpec::resize
};

// Per-stream input handling when tensors are assembled. Frames live in
// [0,1] and get centered; flow and TTI channels are displacement-valued and
// are brought to roughly unit range. Mirroring a displacement image flips
// the sign of its horizontal component, so those streams negate channel 0
// under horizontal flip.
struct InputNorm {
    double shift = 0.0;
    double scale = 1.0;
    int flip_negate_channel = -1;
};

inline InputNorm default_input_norm(StreamKind kind, double flow_scale) {
    if (kind == StreamKind::spatial) return {0.5, 0.5, -1};
    return {0.0, flow_scale, 0};
}

inline void apply_flip_semantics(Frame& cropped, const CropRect& r,
                                 const InputNorm& norm) {
    if (!r.flip || norm.flip_negate_channel < 0 ||
        norm.flip_negate_channel >= cropped.channels)
        return;
    for (int y = 0; y < cropped.height; ++y)
        for (int x = 0; x < cropped.width; ++x)
            cropped.at(y, x, norm.flip_negate_channel) =
                -cropped.at(y, x, norm.flip_negate_channel);
}

inline Frame ensure_three_channels(const Frame& f) {
    if (f.channels == 3) return f;
    Frame out(f.height, f.width, 3);
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = f.at(y, x, 0);
    return out;
}

// Load one video's per-step stream inputs from the artifact layout:
// <dir>/frames, <dir>/flow/*.flo, <dir>/tti.ttiraw.
inline std::vector<Frame> load_stream_items(const std::filesystem::path& video_dir,
                                            StreamKind kind,
                                            const PreprocessSpec& prep) {
    std::vector<Frame> items;
    switch (kind) {
        case StreamKind::spatial: {
            const FrameSequence seq = io::load_frame_sequence(video_dir / "frames");
            for (const Frame& f : seq.frames)
                items.push_back(
                    resize_bilinear(ensure_three_channels(f), prep.resize_w, prep.resize_h));
            break;
        }
        case StreamKind::temporal: {
            std::vector<std::filesystem::path> files;
            const auto flow_dir = video_dir / "flow";
            if (!std::filesystem::is_directory(flow_dir))
                throw DataError("no flow directory at " + flow_dir.string());
            for (const auto& e : std::filesystem::directory_iterator(flow_dir))
                if (e.path().extension() == ".flo") files.push_back(e.path());
            std::sort(files.begin(), files.end());
            if (files.empty()) throw DataError("no .flo files in " + flow_dir.string());
            for (const auto& f : files)
                items.push_back(resize_bilinear(build_temporal_input(io::read_flo(f)),
                                                prep.resize_w, prep.resize_h));
            break;
        }
        case StreamKind::sdtd: {
            const TtiSequence seq = io::read_tti_raw(video_dir / "tti.ttiraw");
            if (seq.images.empty())
                throw DataError("empty TTI sequence at " + video_dir.string());
            for (const Frame& img : seq.images)
                items.push_back(resize_bilinear(ensure_three_channels(img),
                                                prep.resize_w, prep.resize_h));
            break;
        }
    }
    return items;
}

inline std::vector<VideoItems> load_split(const io::DatasetManifest& manifest,
                                          const std::string& split, StreamKind kind,
                                          const PreprocessSpec& prep) {
    std::vector<VideoItems> out;
    for (const auto& e : manifest.entries) {
        if (e.split != split) continue;
        VideoItems v;
        v.path = e.path;
        v.label = e.label;
        v.split = e.split;
        v.items = load_stream_items(io::resolve_data_path(e.path), kind, prep);
        out.push_back(std::move(v));
    }
    if (out.empty()) throw DataError("manifest split '" + split + "' is empty");
    return out;
}

// ---------------------------------------------------------------------------
// training

struct TrainConfig {
    int iters = 400;
    int batch_size = 8;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    std::vector<int> lr_drop_iters = {250, 350};
    double lr_drop_factor = 10.0;
    std::uint64_t seed = 1;
    bool two_phase = false;  // sDTD: CNN first, then add the RNN
    int phase1_iters = 0;
};

struct TrainLogEntry {
    int iter = 0;
    double loss = 0.0;
    double lr = 0.0;
};

namespace detail {

template <typename T>
ClipBatch<T> sample_train_batch(const std::vector<VideoItems>& videos,
                                const ClipSpec& clip, const PreprocessSpec& prep,
                                const InputNorm& norm, int batch_size,
                                std::uint64_t seed, Rng& rng) {
    ClipBatch<T> batch;
    batch.inputs = Tensor<T>({batch_size, clip.steps, 3, prep.crop_h, prep.crop_w});
    batch.labels.resize(batch_size);
    const std::size_t step_sz =
        static_cast<std::size_t>(3) * prep.crop_h * prep.crop_w;
    for (int b = 0; b < batch_size; ++b) {
        const auto& video = videos[rng.below(videos.size())];
        batch.labels[b] = video.label;
        const int n = static_cast<int>(video.items.size());
        const int span = (clip.steps - 1) * clip.stride + 1;
        const int max_offset = std::max(1, n - span + 1);
        const int offset = static_cast<int>(rng.below(max_offset));
        const CropRect crop = draw_train_crop(prep, derive_seed(seed, rng.next_u64()));
        const std::vector<int> idx = sample_clip_indices(n, clip, offset);
        for (int s = 0; s < clip.steps; ++s) {
            Frame item = apply_crop(video.items[idx[s]], prep, crop);
            apply_flip_semantics(item, crop, norm);
            T* dst = batch.inputs.ptr() +
                     (static_cast<std::size_t>(b) * clip.steps + s) * step_sz;
            for (std::size_t k = 0; k < step_sz; ++k)
                dst[k] = static_cast<T>((item.data[k] - norm.shift) / norm.scale);
        }
    }
    return batch;
}

}  // namespace detail

// Mini-batch SGD with momentum over clip samples; deterministic given seed.
template <typename T>
std::vector<TrainLogEntry> train_model(CnnRnnModel<T>& model,
                                       const std::vector<VideoItems>& train_videos,
                                       const ClipSpec& clip, const PreprocessSpec& prep,
                                       const InputNorm& norm, const TrainConfig& cfg) {
    Rng rng(cfg.seed);
    nn::SgdState<T> sgd;
    sgd.learning_rate = cfg.learning_rate;
    sgd.momentum = cfg.momentum;
    auto params = model.params();
    std::vector<TrainLogEntry> log;
    log.reserve(cfg.iters);
    for (int it = 0; it < cfg.iters; ++it) {
        for (int drop : cfg.lr_drop_iters)
            if (it == drop) sgd.learning_rate /= cfg.lr_drop_factor;
        ClipBatch<T> batch = detail::sample_train_batch<T>(
            train_videos, clip, prep, norm, cfg.batch_size, cfg.seed, rng);
        const double loss = model.loss_and_gradients(batch);
        sgd_momentum_update(params, sgd);
        log.push_back({it, loss, sgd.learning_rate});
    }
    return log;
}

// Full per-stream training including the optional two-phase sDTD schedule.
template <typename T>
std::pair<CnnRnnModel<T>, std::vector<TrainLogEntry>> train_stream(
    const std::vector<VideoItems>& train_videos, const ArchitectureSpec& arch,
    const ClipSpec& clip, const PreprocessSpec& prep, const InputNorm& norm,
    const TrainConfig& cfg) {
    CnnRnnModel<T> model(arch, cfg.seed);
    std::vector<TrainLogEntry> log;
    if (cfg.two_phase && arch.use_lstm) {
        // phase 1: pure-CNN model on single steps
        ArchitectureSpec cnn_arch = arch;
        cnn_arch.use_lstm = false;
        CnnRnnModel<T> cnn_model(cnn_arch, derive_seed(cfg.seed, 1));
        ClipSpec single;
        single.steps = 1;
        single.stride = 1;
        TrainConfig phase1 = cfg;
        phase1.iters = cfg.phase1_iters > 0 ? cfg.phase1_iters : cfg.iters / 2;
        phase1.lr_drop_iters.clear();
        log = train_model(cnn_model, train_videos, single, prep, norm, phase1);
        model.adopt_cnn_weights(cnn_model);
    }
    auto log2 = train_model(model, train_videos, clip, prep, norm, cfg);
    for (auto& e : log2) e.iter += static_cast<int>(log.size());
    log.insert(log.end(), log2.begin(), log2.end());
    return {std::move(model), std::move(log)};
}

// ---------------------------------------------------------------------------
// evaluation

struct EvalOptions {
    int clip_offset = 0;
    bool shuffle_items = false;  // sDTD order-ablation: permute step items
    std::uint64_t shuffle_seed = 0;
};

// Average over the ten test-policy crop variants, then over clip steps.
template <typename T>
Prediction evaluate_video(const CnnRnnModel<T>& model, const VideoItems& video,
                          const ClipSpec& clip, const PreprocessSpec& prep,
                          const InputNorm& norm, const EvalOptions& opts,
                          std::uint64_t video_index) {
    std::vector<int> order(video.items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    if (opts.shuffle_items) {
        Rng rng(derive_seed(opts.shuffle_seed, video_index));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.below(i)]);
    }
    const std::vector<int> idx =
        sample_clip_indices(static_cast<int>(video.items.size()), clip, opts.clip_offset);

    const auto variants = test_crop_variants(prep);
    const int nv = static_cast<int>(variants.size());
    Tensor<T> inputs({nv, clip.steps, 3, prep.crop_h, prep.crop_w});
    const std::size_t step_sz = static_cast<std::size_t>(3) * prep.crop_h * prep.crop_w;
    for (int v = 0; v < nv; ++v)
        for (int s = 0; s < clip.steps; ++s) {
            Frame item = apply_crop(video.items[order[idx[s]]], prep, variants[v]);
            apply_flip_semantics(item, variants[v], norm);
            T* dst = inputs.ptr() + (static_cast<std::size_t>(v) * clip.steps + s) * step_sz;
            for (std::size_t k = 0; k < step_sz; ++k)
                dst[k] = static_cast<T>((item.data[k] - norm.shift) / norm.scale);
        }
    const auto step_probs = model.forward_probs(inputs);  // [steps] of [nv, C]
    const int classes = step_probs[0].shape[1];
    std::vector<Prediction> variant_preds(nv);
    for (int v = 0; v < nv; ++v) {
        std::vector<Prediction> steps;
        for (const Tensor<T>& p : step_probs) {
            Prediction sp;
            sp.probs.assign(p.ptr() + static_cast<std::size_t>(v) * classes,
                            p.ptr() + static_cast<std::size_t>(v + 1) * classes);
            steps.push_back(std::move(sp));
        }
        variant_preds[v] = aggregate_clip(steps);
    }
    return aggregate_clip(variant_preds);
}

struct Metrics {
    double accuracy = 0.0;
    std::vector<double> per_class_accuracy;
    std::vector<std::vector<int>> confusion;  // confusion[true][predicted]
};

inline Metrics score_predictions(const std::vector<Prediction>& preds,
                                 const std::vector<int>& labels, int classes) {
    Metrics m;
    m.confusion.assign(classes, std::vector<int>(classes, 0));
    std::vector<int> class_total(classes, 0), class_correct(classes, 0);
    int correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const int p = argmax_class(preds[i]);
        m.confusion[labels[i]][p] += 1;
        class_total[labels[i]] += 1;
        if (p == labels[i]) {
            ++correct;
            class_correct[labels[i]] += 1;
        }
    }
    m.accuracy = preds.empty() ? 0.0 : static_cast<double>(correct) / preds.size();
    for (int c = 0; c < classes; ++c)
        m.per_class_accuracy.push_back(
            class_total[c] ? static_cast<double>(class_correct[c]) / class_total[c] : 0.0);
    return m;
}

// Fig.-6 style accounting: per category, videos fixed and broken by moving
// from the baseline predictions to the fused ones.
struct PredictionChanges {
    std::vector<int> corrected;  // wrong -> correct
    std::vector<int> broken;     // correct -> wrong
};

inline PredictionChanges count_prediction_changes(
    const std::vector<Prediction>& baseline, const std::vector<Prediction>& fused,
    const std::vector<int>& labels, int classes) {
    PredictionChanges out;
    out.corrected.assign(classes, 0);
    out.broken.assign(classes, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool base_ok = argmax_class(baseline[i]) == labels[i];
        const bool fused_ok = argmax_class(fused[i]) == labels[i];
        if (!base_ok && fused_ok) out.corrected[labels[i]] += 1;
        if (base_ok && !fused_ok) out.broken[labels[i]] += 1;
    }
    return out;
}

}  // namespace sdtd
