#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sdtd/common.hpp"

namespace sdtd {

// Row-major float image, values nominally in [0,1] after load.
struct Frame {
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<float> data;

    Frame() = default;
    Frame(int h, int w, int c, float fill = 0.0f)
        : height(h), width(w), channels(c),
          data(static_cast<std::size_t>(h) * w * c, fill) {}

    float& at(int y, int x, int c = 0) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    float at(int y, int x, int c = 0) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    bool same_size(const Frame& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
    std::size_t pixel_count() const {
        return static_cast<std::size_t>(height) * width;
    }
};

struct FrameSequence {
    std::vector<Frame> frames;
    double fps = 25.0;
    std::string id;
};

inline Frame to_luma(const Frame& f) {
    if (f.channels == 1) return f;
    Frame g(f.height, f.width, 1);
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x)
            g.at(y, x) = 0.299f * f.at(y, x, 0) + 0.587f * f.at(y, x, 1) +
                         0.114f * f.at(y, x, 2);
    return g;
}

// Bilinear sample with border clamp; (x,y) in pixel coordinates.
inline float bilinear_sample(const Frame& f, float x, float y, int c = 0) {
    const float xc = std::clamp(x, 0.0f, static_cast<float>(f.width - 1));
    const float yc = std::clamp(y, 0.0f, static_cast<float>(f.height - 1));
    const int x0 = static_cast<int>(std::floor(xc));
    const int y0 = static_cast<int>(std::floor(yc));
    const int x1 = std::min(x0 + 1, f.width - 1);
    const int y1 = std::min(y0 + 1, f.height - 1);
    const float fx = xc - static_cast<float>(x0);
    const float fy = yc - static_cast<float>(y0);
    const float top = f.at(y0, x0, c) * (1.0f - fx) + f.at(y0, x1, c) * fx;
    const float bot = f.at(y1, x0, c) * (1.0f - fx) + f.at(y1, x1, c) * fx;
    return top * (1.0f - fy) + bot * fy;
}

inline Frame resize_bilinear(const Frame& f, int out_w, int out_h) {
    Frame out(out_h, out_w, f.channels);
    if (out_w == f.width && out_h == f.height) return f;
    const float sx = static_cast<float>(f.width) / static_cast<float>(out_w);
    const float sy = static_cast<float>(f.height) / static_cast<float>(out_h);
    for (int y = 0; y < out_h; ++y) {
        const float src_y = (static_cast<float>(y) + 0.5f) * sy - 0.5f;
        for (int x = 0; x < out_w; ++x) {
            const float src_x = (static_cast<float>(x) + 0.5f) * sx - 0.5f;
            for (int c = 0; c < f.channels; ++c)
                out.at(y, x, c) = bilinear_sample(f, src_x, src_y, c);
        }
    }
    return out;
}

// Separable 5-tap binomial smoothing [1 4 6 4 1]/16 with border replication.
inline Frame binomial_smooth5(const Frame& f) {
    static const float k[5] = {1.f / 16, 4.f / 16, 6.f / 16, 4.f / 16, 1.f / 16};
    Frame tmp(f.height, f.width, f.channels);
    Frame out(f.height, f.width, f.channels);
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x)
            for (int c = 0; c < f.channels; ++c) {
                float s = 0.0f;
                for (int t = -2; t <= 2; ++t) {
                    int xx = std::clamp(x + t, 0, f.width - 1);
                    s += k[t + 2] * f.at(y, xx, c);
                }
                tmp.at(y, x, c) = s;
            }
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x)
            for (int c = 0; c < f.channels; ++c) {
                float s = 0.0f;
                for (int t = -2; t <= 2; ++t) {
                    int yy = std::clamp(y + t, 0, f.height - 1);
                    s += k[t + 2] * tmp.at(yy, x, c);
                }
                out.at(y, x, c) = s;
            }
    return out;
}

}  // namespace sdtd
