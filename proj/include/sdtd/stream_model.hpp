#pragma once

#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sdtd/common.hpp"
#include "sdtd/io.hpp"
#include "sdtd/nn.hpp"
#include "sdtd/tensor.hpp"

namespace sdtd {

// Plain-text layer list for the CNN part, e.g.
//   "conv:16:3 relu pool conv:32:3 relu pool fc:128"
// conv:<out>:<k> is stride 1 with same-padding, pool is 2x2 max pooling,
// fc:<out> flattens its input.
struct ArchitectureSpec {
    std::string cnn = "conv:16:3 relu pool conv:32:3 relu pool fc:128";
    int lstm_hidden = 128;
    int num_classes = 4;
    int input_channels = 3;
    int input_height = 56;
    int input_width = 56;
    bool use_lstm = true;  // false gives the pure-CNN (DTD-style) head
};

namespace detail {

struct CnnLayerCfg {
    enum class Kind { conv, relu, pool, fc } kind;
    int out = 0;
    int ksize = 0;
};

inline std::vector<CnnLayerCfg> parse_cnn_spec(const std::string& s) {
    std::vector<CnnLayerCfg> layers;
    std::istringstream ss(s);
    std::string tok;
    while (ss >> tok) {
        CnnLayerCfg cfg{};
        if (tok.rfind("conv:", 0) == 0) {
            cfg.kind = CnnLayerCfg::Kind::conv;
            if (std::sscanf(tok.c_str(), "conv:%d:%d", &cfg.out, &cfg.ksize) != 2)
                throw UsageError("bad conv layer token: " + tok);
        } else if (tok == "relu") {
            cfg.kind = CnnLayerCfg::Kind::relu;
        } else if (tok == "pool") {
            cfg.kind = CnnLayerCfg::Kind::pool;
        } else if (tok.rfind("fc:", 0) == 0) {
            cfg.kind = CnnLayerCfg::Kind::fc;
            if (std::sscanf(tok.c_str(), "fc:%d", &cfg.out) != 1)
                throw UsageError("bad fc layer token: " + tok);
        } else {
            throw UsageError("unknown layer token: " + tok);
        }
        layers.push_back(cfg);
    }
    if (layers.empty()) throw UsageError("empty cnn architecture");
    return layers;
}

}  // namespace detail

// A clip batch: inputs laid out [batch, steps, channels, height, width],
// one label per clip.
template <typename T>
struct ClipBatch {
    Tensor<T> inputs;
    std::vector<int> labels;

    int batch() const { return inputs.shape[0]; }
    int steps() const { return inputs.shape[1]; }
};

// The joint model of the three-stream framework: a small CNN applied to
// every step, an LSTM over the step features, and a shared softmax
// classifier producing one prediction per step.
template <typename T>
class CnnRnnModel {
public:
    CnnRnnModel(const ArchitectureSpec& spec, std::uint64_t seed) : spec_(spec) {
        layers_ = detail::parse_cnn_spec(spec.cnn);
        Rng rng(seed);
        int c = spec.input_channels, h = spec.input_height, w = spec.input_width;
        bool flattened = false;
        for (std::size_t li = 0; li < layers_.size(); ++li) {
            const auto& cfg = layers_[li];
            switch (cfg.kind) {
                case detail::CnnLayerCfg::Kind::conv: {
                    if (flattened) throw UsageError("conv after fc is not supported");
                    Tensor<T> weight({cfg.out, c, cfg.ksize, cfg.ksize});
                    nn::init_uniform_xavier(weight, c * cfg.ksize * cfg.ksize,
                                            cfg.out * cfg.ksize * cfg.ksize, rng);
                    conv_w_.push_back(std::move(weight));
                    conv_b_.emplace_back(std::vector<int>{cfg.out});
                    c = cfg.out;
                    break;
                }
                case detail::CnnLayerCfg::Kind::pool:
                    if (h % 2 || w % 2)
                        throw UsageError("pool needs even spatial dims, got " +
                                         std::to_string(h) + "x" + std::to_string(w));
                    h /= 2;
                    w /= 2;
                    break;
                case detail::CnnLayerCfg::Kind::relu:
                    break;
                case detail::CnnLayerCfg::Kind::fc: {
                    const int in_dim = flattened ? c : c * h * w;
                    Tensor<T> weight({cfg.out, in_dim});
                    nn::init_uniform_xavier(weight, in_dim, cfg.out, rng);
                    fc_w_.push_back(std::move(weight));
                    fc_b_.emplace_back(std::vector<int>{cfg.out});
                    flattened = true;
                    c = cfg.out;
                    break;
                }
            }
        }
        feature_dim_ = flattened ? c : c * h * w;
        if (spec.use_lstm) {
            lstm_ = nn::LstmParams<T>(feature_dim_, spec.lstm_hidden);
            nn::init_lstm(lstm_, rng);
            head_w_ = Tensor<T>({spec.num_classes, spec.lstm_hidden});
        } else {
            head_w_ = Tensor<T>({spec.num_classes, feature_dim_});
        }
        nn::init_uniform_xavier(head_w_, head_w_.shape[1], spec.num_classes, rng);
        head_b_ = Tensor<T>({spec.num_classes});
        allocate_grads();
    }

    const ArchitectureSpec& spec() const { return spec_; }
    int feature_dim() const { return feature_dim_; }

    std::vector<nn::NamedParam<T>> params() {
        std::vector<nn::NamedParam<T>> out;
        for (std::size_t i = 0; i < conv_w_.size(); ++i) {
            const std::string base = "conv" + std::to_string(i + 1);
            out.push_back({base + ".weight", &conv_w_[i], &g_conv_w_[i]});
            out.push_back({base + ".bias", &conv_b_[i], &g_conv_b_[i]});
        }
        for (std::size_t i = 0; i < fc_w_.size(); ++i) {
            const std::string base = "fc" + std::to_string(i + 1);
            out.push_back({base + ".weight", &fc_w_[i], &g_fc_w_[i]});
            out.push_back({base + ".bias", &fc_b_[i], &g_fc_b_[i]});
        }
        if (spec_.use_lstm) {
            auto add = [&](const char* name, Tensor<T>& v, Tensor<T>& g) {
                out.push_back({std::string("lstm.") + name, &v, &g});
            };
            add("w_xi", lstm_.w_xi, g_lstm_->w_xi);
            add("w_hi", lstm_.w_hi, g_lstm_->w_hi);
            add("b_i", lstm_.b_i, g_lstm_->b_i);
            add("w_xf", lstm_.w_xf, g_lstm_->w_xf);
            add("w_hf", lstm_.w_hf, g_lstm_->w_hf);
            add("b_f", lstm_.b_f, g_lstm_->b_f);
            add("w_xc", lstm_.w_xc, g_lstm_->w_xc);
            add("w_hc", lstm_.w_hc, g_lstm_->w_hc);
            add("b_c", lstm_.b_c, g_lstm_->b_c);
            add("w_xo", lstm_.w_xo, g_lstm_->w_xo);
            add("w_ho", lstm_.w_ho, g_lstm_->w_ho);
            add("b_o", lstm_.b_o, g_lstm_->b_o);
        }
        out.push_back({"head.weight", &head_w_, &g_head_w_});
        out.push_back({"head.bias", &head_b_, &g_head_b_});
        return out;
    }

    // Per-step class probabilities, shape [steps] of [batch, classes].
    std::vector<Tensor<T>> forward_probs(const Tensor<T>& clips) const {
        Forward fwd;
        run_forward(clips, fwd, /*keep_caches=*/false);
        std::vector<Tensor<T>> probs;
        probs.reserve(fwd.logits.size());
        for (const Tensor<T>& l : fwd.logits) probs.push_back(nn::softmax(l));
        return probs;
    }

    double loss(const ClipBatch<T>& batch) const {
        Forward fwd;
        run_forward(batch.inputs, fwd, /*keep_caches=*/false);
        double total = 0;
        for (const Tensor<T>& l : fwd.logits)
            total += static_cast<double>(nn::softmax_cross_entropy(l, batch.labels).first);
        return total / static_cast<double>(fwd.logits.size());
    }

    double loss_and_gradients(const ClipBatch<T>& batch) {
        zero_grads();
        Forward fwd;
        run_forward(batch.inputs, fwd, /*keep_caches=*/true);
        const int steps = static_cast<int>(fwd.logits.size());
        const int b = batch.batch();

        double total = 0;
        std::vector<Tensor<T>> dfeat(steps);
        // head + softmax backward per step
        std::vector<Tensor<T>> dh(steps);
        for (int s = 0; s < steps; ++s) {
            auto [l, dlogits] = nn::softmax_cross_entropy(fwd.logits[s], batch.labels);
            total += static_cast<double>(l);
            for (T& v : dlogits.data) v /= static_cast<T>(steps);
            dh[s] = nn::fc_backward(fwd.head_cache[s], head_w_, dlogits, g_head_w_,
                                    g_head_b_);
        }
        if (spec_.use_lstm) {
            // backpropagation through time
            Tensor<T> dc({b, spec_.lstm_hidden});
            Tensor<T> dh_carry({b, spec_.lstm_hidden});
            for (int s = steps - 1; s >= 0; --s) {
                Tensor<T> dh_total = dh[s];
                for (std::size_t k = 0; k < dh_total.numel(); ++k)
                    dh_total.data[k] += dh_carry.data[k];
                Tensor<T> dx, dh_prev, dc_prev;
                nn::lstm_step_backward(fwd.lstm_cache[s], lstm_, dh_total, dc, *g_lstm_,
                                       dx, dh_prev, dc_prev);
                dfeat[s] = std::move(dx);
                dh_carry = std::move(dh_prev);
                dc = std::move(dc_prev);
            }
        } else {
            for (int s = 0; s < steps; ++s) dfeat[s] = std::move(dh[s]);
        }
        // CNN backward per step
        for (int s = 0; s < steps; ++s) cnn_backward(fwd.step_caches[s], dfeat[s]);
        return total / steps;
    }

    io::Checkpoint to_checkpoint() {
        io::Checkpoint ckpt;
        for (const auto& p : params()) {
            io::CheckpointTensor t;
            t.shape = p.value->shape;
            t.data.reserve(p.value->numel());
            for (const T& v : p.value->data) t.data.push_back(static_cast<float>(v));
            ckpt.emplace(p.name, std::move(t));
        }
        return ckpt;
    }

    void from_checkpoint(const io::Checkpoint& ckpt) {
        auto ps = params();
        if (ckpt.size() != ps.size())
            throw DataError("checkpoint has " + std::to_string(ckpt.size()) +
                            " tensors, model expects " + std::to_string(ps.size()));
        for (auto& p : ps) {
            const auto it = ckpt.find(p.name);
            if (it == ckpt.end())
                throw DataError("checkpoint missing tensor " + p.name);
            if (it->second.shape != p.value->shape)
                throw DataError("checkpoint shape mismatch for " + p.name +
                                ": file " + std::to_string(it->second.data.size()) +
                                " values, model " + shape_string(*p.value));
            for (std::size_t i = 0; i < p.value->numel(); ++i)
                p.value->data[i] = static_cast<T>(it->second.data[i]);
        }
    }

    // Copy CNN weights from another model (two-phase sDTD training).
    void adopt_cnn_weights(CnnRnnModel<T>& other) {
        if (other.conv_w_.size() != conv_w_.size() || other.fc_w_.size() != fc_w_.size())
            throw DataError("cnn topology mismatch when adopting weights");
        conv_w_ = other.conv_w_;
        conv_b_ = other.conv_b_;
        fc_w_ = other.fc_w_;
        fc_b_ = other.fc_b_;
    }

private:
    struct StepCache {
        std::vector<nn::Conv2dCache<T>> conv;
        std::vector<nn::MaxPoolCache<T>> pool;
        std::vector<Tensor<T>> relu_in;
        std::vector<nn::FcCache<T>> fc;
    };
    struct Forward {
        std::vector<StepCache> step_caches;
        std::vector<nn::LstmStepCache<T>> lstm_cache;
        std::vector<nn::FcCache<T>> head_cache;
        std::vector<Tensor<T>> logits;  // per step [B, classes]
    };

    void allocate_grads() {
        for (const Tensor<T>& w : conv_w_) g_conv_w_.emplace_back(w.shape);
        for (const Tensor<T>& b : conv_b_) g_conv_b_.emplace_back(b.shape);
        for (const Tensor<T>& w : fc_w_) g_fc_w_.emplace_back(w.shape);
        for (const Tensor<T>& b : fc_b_) g_fc_b_.emplace_back(b.shape);
        if (spec_.use_lstm) g_lstm_ = std::make_unique<nn::LstmGrads<T>>(lstm_);
        g_head_w_ = Tensor<T>(head_w_.shape);
        g_head_b_ = Tensor<T>(head_b_.shape);
    }

    void zero_grads() {
        for (auto& g : g_conv_w_) g.zero();
        for (auto& g : g_conv_b_) g.zero();
        for (auto& g : g_fc_w_) g.zero();
        for (auto& g : g_fc_b_) g.zero();
        if (g_lstm_) {
            g_lstm_->w_xi.zero(); g_lstm_->w_hi.zero(); g_lstm_->b_i.zero();
            g_lstm_->w_xf.zero(); g_lstm_->w_hf.zero(); g_lstm_->b_f.zero();
            g_lstm_->w_xc.zero(); g_lstm_->w_hc.zero(); g_lstm_->b_c.zero();
            g_lstm_->w_xo.zero(); g_lstm_->w_ho.zero(); g_lstm_->b_o.zero();
        }
        g_head_w_.zero();
        g_head_b_.zero();
    }

    Tensor<T> cnn_forward(const Tensor<T>& x0, StepCache* cache) const {
        Tensor<T> x = x0;
        std::size_t ci = 0, pi = 0, ri = 0, fi = 0;
        for (const auto& cfg : layers_) {
            switch (cfg.kind) {
                case detail::CnnLayerCfg::Kind::conv: {
                    nn::Conv2dCache<T>* cc = nullptr;
                    if (cache) {
                        cache->conv.resize(ci + 1);
                        cc = &cache->conv[ci];
                    }
                    x = nn::conv2d_forward(x, conv_w_[ci], conv_b_[ci], 1,
                                           cfg.ksize / 2, cc);
                    ++ci;
                    break;
                }
                case detail::CnnLayerCfg::Kind::relu: {
                    Tensor<T>* rc = nullptr;
                    if (cache) {
                        cache->relu_in.resize(ri + 1);
                        rc = &cache->relu_in[ri];
                    }
                    x = nn::relu_forward(x, rc);
                    ++ri;
                    break;
                }
                case detail::CnnLayerCfg::Kind::pool: {
                    nn::MaxPoolCache<T>* pc = nullptr;
                    if (cache) {
                        cache->pool.resize(pi + 1);
                        pc = &cache->pool[pi];
                    }
                    x = nn::maxpool2x2_forward(x, pc);
                    ++pi;
                    break;
                }
                case detail::CnnLayerCfg::Kind::fc: {
                    const int n = x.shape[0];
                    x.shape = {n, static_cast<int>(x.numel()) / n};
                    nn::FcCache<T>* fc = nullptr;
                    if (cache) {
                        cache->fc.resize(fi + 1);
                        fc = &cache->fc[fi];
                    }
                    x = nn::fc_forward(x, fc_w_[fi], fc_b_[fi], fc);
                    ++fi;
                    break;
                }
            }
        }
        const int n = x.shape[0];
        x.shape = {n, static_cast<int>(x.numel()) / n};
        return x;
    }

    void cnn_backward(StepCache& cache, const Tensor<T>& dfeat) {
        Tensor<T> dx = dfeat;
        int ci = static_cast<int>(cache.conv.size());
        int pi = static_cast<int>(cache.pool.size());
        int ri = static_cast<int>(cache.relu_in.size());
        int fi = static_cast<int>(cache.fc.size());
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
            switch (it->kind) {
                case detail::CnnLayerCfg::Kind::conv:
                    --ci;
                    dx.shape = cache.conv[ci].input.shape;
                    dx.shape[1] = conv_w_[ci].shape[0];
                    dx.shape[2] = nn::conv_out_extent(cache.conv[ci].input.shape[2],
                                                      it->ksize, 1, it->ksize / 2);
                    dx.shape[3] = nn::conv_out_extent(cache.conv[ci].input.shape[3],
                                                      it->ksize, 1, it->ksize / 2);
                    dx = nn::conv2d_backward(cache.conv[ci], conv_w_[ci], dx,
                                             g_conv_w_[ci], g_conv_b_[ci]);
                    break;
                case detail::CnnLayerCfg::Kind::relu:
                    --ri;
                    dx.shape = cache.relu_in[ri].shape;
                    dx = nn::relu_backward(cache.relu_in[ri], dx);
                    break;
                case detail::CnnLayerCfg::Kind::pool: {
                    --pi;
                    std::vector<int> out_shape = cache.pool[pi].in_shape;
                    out_shape[2] /= 2;
                    out_shape[3] /= 2;
                    dx.shape = out_shape;
                    dx = nn::maxpool2x2_backward(cache.pool[pi], dx);
                    break;
                }
                case detail::CnnLayerCfg::Kind::fc:
                    --fi;
                    dx = nn::fc_backward(cache.fc[fi], fc_w_[fi], dx, g_fc_w_[fi],
                                         g_fc_b_[fi]);
                    break;
            }
        }
    }

    void run_forward(const Tensor<T>& clips, Forward& fwd, bool keep_caches) const {
        if (clips.shape.size() != 5)
            throw DataError("model input must be [batch, steps, c, h, w]");
        const int b = clips.shape[0], steps = clips.shape[1];
        const int c = clips.shape[2], h = clips.shape[3], w = clips.shape[4];
        if (c != spec_.input_channels || h != spec_.input_height || w != spec_.input_width)
            throw DataError("model input geometry mismatch: got " +
                            std::to_string(c) + "x" + std::to_string(h) + "x" +
                            std::to_string(w));
        if (keep_caches) fwd.step_caches.resize(steps);

        nn::LstmState<T> state(b, spec_.use_lstm ? spec_.lstm_hidden : 1);
        const std::size_t step_sz = static_cast<std::size_t>(c) * h * w;
        for (int s = 0; s < steps; ++s) {
            Tensor<T> x({b, c, h, w});
            for (int ib = 0; ib < b; ++ib) {
                const T* src = clips.ptr() +
                               (static_cast<std::size_t>(ib) * steps + s) * step_sz;
                std::copy(src, src + step_sz, x.ptr() + static_cast<std::size_t>(ib) * step_sz);
            }
            Tensor<T> feat = cnn_forward(x, keep_caches ? &fwd.step_caches[s] : nullptr);
            Tensor<T> head_in;
            if (spec_.use_lstm) {
                nn::LstmStepCache<T>* lc = nullptr;
                if (keep_caches) {
                    fwd.lstm_cache.resize(s + 1);
                    lc = &fwd.lstm_cache[s];
                }
                state = nn::lstm_step(feat, state, lstm_, lc);
                head_in = state.h;
            } else {
                head_in = std::move(feat);
            }
            nn::FcCache<T>* hc = nullptr;
            if (keep_caches) {
                fwd.head_cache.resize(s + 1);
                hc = &fwd.head_cache[s];
            }
            fwd.logits.push_back(nn::fc_forward(head_in, head_w_, head_b_, hc));
        }
    }

    ArchitectureSpec spec_;
    std::vector<detail::CnnLayerCfg> layers_;
    int feature_dim_ = 0;

    std::vector<Tensor<T>> conv_w_, conv_b_, fc_w_, fc_b_;
    nn::LstmParams<T> lstm_;
    Tensor<T> head_w_, head_b_;

    std::vector<Tensor<T>> g_conv_w_, g_conv_b_, g_fc_w_, g_fc_b_;
    std::unique_ptr<nn::LstmGrads<T>> g_lstm_;
    Tensor<T> g_head_w_, g_head_b_;
};

}  // namespace sdtd
