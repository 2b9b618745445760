#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "sdtd/flow.hpp"

using namespace sdtd;

namespace {

Frame constant_frame(int h, int w, float v) {
    Frame f(h, w, 1, v);
    return f;
}

double interior_aee(const FlowField& flow, double gt_u, double gt_v, int border) {
    double sum = 0.0;
    long count = 0;
    for (int y = border; y < flow.height - border; ++y)
        for (int x = border; x < flow.width - border; ++x) {
            const double du = flow.u_at(y, x) - gt_u;
            const double dv = flow.v_at(y, x) - gt_v;
            sum += std::sqrt(du * du + dv * dv);
            ++count;
        }
    return sum / count;
}

TEST(Pyramid, SingleLevelIsIdentity) {
    oracle::SinusoidTexture tex(1);
    const Frame f = tex.render(16, 16);
    const auto pyr = gaussian_pyramid(f, 1, 0.5);
    ASSERT_EQ(pyr.size(), 1u);
    EXPECT_TRUE(pyr[0].data == f.data);
}

TEST(Pyramid, ConstantImageStaysConstant) {
    const Frame f = constant_frame(32, 32, 0.6f);
    const auto pyr = gaussian_pyramid(f, 3, 0.5);
    ASSERT_EQ(pyr.size(), 3u);
    for (const Frame& lvl : pyr)
        for (float v : lvl.data) EXPECT_NEAR(v, 0.6f, 1e-6f);
}

// 64x64 at scale 0.5 supports exactly four levels >= 8x8: 64, 32, 16, 8.
TEST(Pyramid, LevelsTruncatedAtMinimumSize) {
    const Frame f = constant_frame(64, 64, 0.3f);
    const auto pyr = gaussian_pyramid(f, 10, 0.5);
    ASSERT_EQ(pyr.size(), 4u);
    EXPECT_EQ(pyr[3].width, 8);
    EXPECT_EQ(pyr[3].height, 8);
}

TEST(Pyramid, TinyInputRejected) {
    const Frame f = constant_frame(4, 4, 0.0f);
    EXPECT_THROW(gaussian_pyramid(f, 2, 0.5), DataError);
}

TEST(Warp, ZeroFlowIsIdentity) {
    oracle::SinusoidTexture tex(2);
    const Frame f = tex.render(24, 20);
    const FlowField zero(24, 20);
    const Frame w = warp_image(f, zero);
    EXPECT_TRUE(w.data == f.data);
}

TEST(Warp, IntegerShiftOnRamp) {
    Frame ramp(8, 8, 1);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) ramp.at(y, x) = 0.1f * static_cast<float>(x);
    FlowField flow(8, 8);
    std::fill(flow.u.begin(), flow.u.end(), 1.0f);
    const Frame w = warp_image(ramp, flow);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 7; ++x)
            EXPECT_NEAR(w.at(y, x), ramp.at(y, x) + 0.1f, 1e-6f);
}

TEST(Warp, MatchesBilinearOracleOnRandomSubpixelFlow) {
    oracle::SinusoidTexture tex(3);
    const Frame f = tex.render(20, 24);
    Rng rng(11);
    FlowField flow(20, 24);
    for (std::size_t i = 0; i < flow.pixel_count(); ++i) {
        flow.u[i] = static_cast<float>(rng.uniform(-1.5, 1.5));
        flow.v[i] = static_cast<float>(rng.uniform(-1.5, 1.5));
    }
    const Frame w = warp_image(f, flow);
    for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 24; ++x)
            EXPECT_NEAR(w.at(y, x),
                        oracle::bilinear_at(f, x + flow.u_at(y, x), y + flow.v_at(y, x)),
                        1e-6f);
}

TEST(Warp, DimensionMismatchRejected) {
    const Frame f = constant_frame(8, 8, 0.5f);
    const FlowField flow(9, 8);
    EXPECT_THROW(warp_image(f, flow), DataError);
}

TEST(Tvl1, ZeroMotionFixedPoint) {
    oracle::SinusoidTexture tex(4);
    const Frame f = tex.render(64, 64);
    const FlowField flow = tvl1_flow(f, f, Tvl1Params{});
    double mu = 0, mv = 0;
    for (std::size_t i = 0; i < flow.pixel_count(); ++i) {
        mu += std::abs(flow.u[i]);
        mv += std::abs(flow.v[i]);
    }
    mu /= static_cast<double>(flow.pixel_count());
    mv /= static_cast<double>(flow.pixel_count());
    EXPECT_LT(mu, 0.05);
    EXPECT_LT(mv, 0.05);
}

TEST(Tvl1, RecoversGlobalShift) {
    oracle::SinusoidTexture tex(5);
    const Frame f1 = tex.render(64, 64);
    const Frame f2 = tex.render(64, 64, 2.0, 0.0);
    const FlowField flow = tvl1_flow(f1, f2, Tvl1Params{});
    EXPECT_LT(interior_aee(flow, 2.0, 0.0, 8), 0.2);

    // independent cross-check: exhaustive block matching on 16x16 patches
    for (int cy = 16; cy <= 48; cy += 16)
        for (int cx = 16; cx <= 48; cx += 16) {
            const auto [dx, dy] = oracle::block_match(f1, f2, cx, cy, 15, 4);
            EXPECT_EQ(dx, 2);
            EXPECT_EQ(dy, 0);
        }
}

TEST(Tvl1, UntexturedFramesGiveTinyFiniteFlow) {
    const Frame f = constant_frame(32, 32, 0.5f);
    const FlowField flow = tvl1_flow(f, f, Tvl1Params{});
    for (std::size_t i = 0; i < flow.pixel_count(); ++i) {
        ASSERT_TRUE(is_finite(flow.u[i]));
        ASSERT_TRUE(is_finite(flow.v[i]));
        EXPECT_LT(std::abs(flow.u[i]), 1e-3f);
        EXPECT_LT(std::abs(flow.v[i]), 1e-3f);
    }
}

TEST(Tvl1, DeterministicAcrossRuns) {
    oracle::SinusoidTexture tex(6);
    const Frame f1 = tex.render(48, 40);
    const Frame f2 = tex.render(48, 40, 1.0, -1.0);
    const FlowField a = tvl1_flow(f1, f2, Tvl1Params{});
    const FlowField b = tvl1_flow(f1, f2, Tvl1Params{});
    EXPECT_TRUE(a.u == b.u && a.v == b.v);
}

// Shift equivariance on periodic texture: median recovered flow within
// 0.2 px of the integer shift.
TEST(Tvl1, ShiftEquivarianceMedian) {
    oracle::SinusoidTexture tex(7);
    const int shifts[][2] = {{1, 0}, {0, 1}, {2, 1}, {-1, 2}};
    for (const auto& s : shifts) {
        const Frame f1 = tex.render(48, 48);
        const Frame f2 = tex.render(48, 48, s[0], s[1]);
        const FlowField flow = tvl1_flow(f1, f2, Tvl1Params{});
        std::vector<float> us, vs;
        for (int y = 8; y < 40; ++y)
            for (int x = 8; x < 40; ++x) {
                us.push_back(flow.u_at(y, x));
                vs.push_back(flow.v_at(y, x));
            }
        std::nth_element(us.begin(), us.begin() + us.size() / 2, us.end());
        std::nth_element(vs.begin(), vs.begin() + vs.size() / 2, vs.end());
        EXPECT_NEAR(us[us.size() / 2], s[0], 0.2);
        EXPECT_NEAR(vs[vs.size() / 2], s[1], 0.2);
    }
}

TEST(Tvl1, ParamValidation) {
    oracle::SinusoidTexture tex(8);
    const Frame f = tex.render(16, 16);
    Tvl1Params p;
    p.tau = 0.3;
    EXPECT_THROW(tvl1_flow(f, f, p), UsageError);
    Tvl1Params q;
    q.lambda = -1;
    EXPECT_THROW(tvl1_flow(f, f, q), UsageError);
    Frame rgb(16, 16, 3, 0.5f);
    EXPECT_THROW(tvl1_flow(rgb, rgb, Tvl1Params{}), DataError);
}

TEST(HornSchunck, IdenticalFramesGiveExactZero) {
    oracle::SinusoidTexture tex(9);
    const Frame f = tex.render(32, 32);
    const FlowField flow = horn_schunck(f, f, 1.0, 50);
    for (std::size_t i = 0; i < flow.pixel_count(); ++i) {
        EXPECT_EQ(flow.u[i], 0.0f);
        EXPECT_EQ(flow.v[i], 0.0f);
    }
}

TEST(HornSchunck, RecoversSmallShift) {
    oracle::SinusoidTexture tex(10);
    const Frame f1 = tex.render(64, 64);
    const Frame f2 = tex.render(64, 64, 1.0, 0.0);
    const FlowField flow = horn_schunck(f1, f2, 0.5, 400);
    EXPECT_LT(interior_aee(flow, 1.0, 0.0, 8), 0.4);
}

TEST(HornSchunck, BitwiseDeterministic) {
    oracle::SinusoidTexture tex(11);
    const Frame f1 = tex.render(32, 32);
    const Frame f2 = tex.render(32, 32, 0.5, 0.5);
    const FlowField a = horn_schunck(f1, f2, 1.0, 100);
    const FlowField b = horn_schunck(f1, f2, 1.0, 100);
    EXPECT_TRUE(a.u == b.u && a.v == b.v);
}

}  // namespace
