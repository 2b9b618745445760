#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "sdtd/trajectory.hpp"

using namespace sdtd;

namespace {

TEST(SamplePoints, GridArithmeticOnEmptyMask) {
    const std::vector<bool> mask(100, false);
    const auto pts = sample_points(mask, 10, 10, 5, 2);
    ASSERT_EQ(pts.size(), 4u);
    EXPECT_EQ(pts[0], std::make_pair(2.0f, 2.0f));
    EXPECT_EQ(pts[1], std::make_pair(7.0f, 2.0f));
    EXPECT_EQ(pts[2], std::make_pair(2.0f, 7.0f));
    EXPECT_EQ(pts[3], std::make_pair(7.0f, 7.0f));
}

TEST(SamplePoints, FullyOccupiedMaskGivesNothing) {
    const std::vector<bool> mask(100, true);
    EXPECT_TRUE(sample_points(mask, 10, 10, 5, 2).empty());
}

// Brute-force oracle: filter the full grid by scanning every occupied pixel.
TEST(SamplePoints, MatchesBruteForceOnRandomMasks) {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        const int h = 8 + static_cast<int>(rng.below(40));
        const int w = 8 + static_cast<int>(rng.below(40));
        const int step = 2 + static_cast<int>(rng.below(6));
        const int dist = 1 + static_cast<int>(rng.below(4));
        std::vector<bool> mask(static_cast<std::size_t>(h) * w, false);
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < 0.05;

        std::vector<std::pair<float, float>> expected;
        for (int gy = step / 2; gy < h; gy += step)
            for (int gx = step / 2; gx < w; gx += step) {
                bool blocked = false;
                for (int y = 0; y < h && !blocked; ++y)
                    for (int x = 0; x < w; ++x)
                        if (mask[static_cast<std::size_t>(y) * w + x] &&
                            std::max(std::abs(y - gy), std::abs(x - gx)) <= dist) {
                            blocked = true;
                            break;
                        }
                if (!blocked) expected.emplace_back(gx, gy);
            }
        EXPECT_EQ(sample_points(mask, h, w, step, dist), expected);
    }
}

TEST(TrackStep, UniformFlowMovesByItsValue) {
    FlowField flow(10, 10);
    std::fill(flow.u.begin(), flow.u.end(), 1.5f);
    std::fill(flow.v.begin(), flow.v.end(), -0.5f);
    const auto [x, y] = track_step(4.2f, 3.7f, flow, 3);
    EXPECT_FLOAT_EQ(x, 4.2f + 1.5f);
    EXPECT_FLOAT_EQ(y, 3.7f - 0.5f);
}

TEST(TrackStep, MedianSuppressesSingleOutlier) {
    FlowField flow(9, 9);
    std::fill(flow.u.begin(), flow.u.end(), 2.0f);
    std::fill(flow.v.begin(), flow.v.end(), 1.0f);
    flow.u_at(4, 4) = 500.0f;
    flow.v_at(4, 4) = -500.0f;
    const auto [x, y] = track_step(4.0f, 4.0f, flow, 3);
    EXPECT_FLOAT_EQ(x, 6.0f);
    EXPECT_FLOAT_EQ(y, 5.0f);
}

TEST(TrackStep, MatchesSortBasedMedianOracle) {
    Rng rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        FlowField flow(12, 12);
        for (std::size_t i = 0; i < flow.pixel_count(); ++i) {
            flow.u[i] = static_cast<float>(rng.uniform(-4, 4));
            flow.v[i] = static_cast<float>(rng.uniform(-4, 4));
        }
        const float px = static_cast<float>(rng.uniform(0, 11));
        const float py = static_cast<float>(rng.uniform(0, 11));
        const int kernel = rng.uniform() < 0.5 ? 3 : 5;
        const auto [x, y] = track_step(px, py, flow, kernel);
        const auto [mu, mv] = oracle::median_flow_at(
            flow, static_cast<int>(std::lround(px)), static_cast<int>(std::lround(py)),
            kernel);
        EXPECT_FLOAT_EQ(x, px + mu);
        EXPECT_FLOAT_EQ(y, py + mv);
    }
}

TEST(Prune, StaticTrajectoryDiscarded) {
    TrajectoryConfig cfg;
    Trajectory t;
    t.points = {{2, 2, 0, 0}, {2, 2, 0, 0}, {2, 2, 0, 0}};
    EXPECT_FALSE(prune(t, cfg));
}

TEST(Prune, OversizedStepDiscarded) {
    TrajectoryConfig cfg;  // max_step = 20
    Trajectory t;
    t.points = {{2, 2, 50, 0}, {52, 2, 0, 0}};
    EXPECT_FALSE(prune(t, cfg));
}

TEST(Prune, ModerateStepsKept) {
    TrajectoryConfig cfg;  // min_mean_step = 0.3, max_step = 20
    Trajectory t;
    t.points = {{2, 2, 1, 0}, {3, 2, 2, 0}, {5, 2, 1, 0}, {6, 2, 2, 0}, {8, 2, 0, 0}};
    EXPECT_TRUE(prune(t, cfg));
}

TEST(Normalize, ThreeFourFive) {
    Trajectory t;
    t.points = {{0, 0, 3, 4}, {3, 4, 0, 0}};
    const auto v = normalize_displacements(t);
    ASSERT_EQ(v.size(), 2u);
    EXPECT_NEAR(v[0], 0.6, 1e-12);
    EXPECT_NEAR(v[1], 0.8, 1e-12);
}

TEST(Normalize, TwoEqualSteps) {
    Trajectory t;
    t.points = {{0, 0, 1, 0}, {1, 0, 1, 0}, {2, 0, 0, 0}};
    const auto v = normalize_displacements(t);
    ASSERT_EQ(v.size(), 4u);
    EXPECT_NEAR(v[0], 0.5, 1e-12);
    EXPECT_NEAR(v[1], 0.0, 1e-12);
    EXPECT_NEAR(v[2], 0.5, 1e-12);
    EXPECT_NEAR(v[3], 0.0, 1e-12);
}

TEST(Normalize, OutputMagnitudesSumToOne) {
    Rng rng(41);
    for (int trial = 0; trial < 50; ++trial) {
        Trajectory t;
        const int steps = 1 + static_cast<int>(rng.below(15));
        float x = 50, y = 50;
        for (int i = 0; i < steps; ++i) {
            const float dx = static_cast<float>(rng.uniform(-3, 3));
            const float dy = static_cast<float>(rng.uniform(-3, 3));
            t.points.push_back({x, y, dx, dy});
            x += dx;
            y += dy;
        }
        t.points.push_back({x, y, 0, 0});
        const auto v = normalize_displacements(t);
        double total = 0;
        for (std::size_t i = 0; i + 1 < v.size(); i += 2)
            total += std::hypot(v[i], v[i + 1]);
        EXPECT_NEAR(total, 1.0, 1e-9);
    }
}

TEST(Normalize, ZeroTotalMagnitudeRejected) {
    Trajectory t;
    t.points = {{0, 0, 0, 0}, {0, 0, 0, 0}};
    EXPECT_THROW(normalize_displacements(t), DataError);
}

TEST(Extract, ConstantFlowIntegratesSingleSeed) {
    std::vector<FlowField> flows(4, FlowField(7, 7));
    for (FlowField& f : flows) {
        std::fill(f.u.begin(), f.u.end(), 1.0f);
        std::fill(f.v.begin(), f.v.end(), 1.0f);
    }
    TrajectoryConfig cfg;
    cfg.min_coverage_dist = 4;
    const TrajectorySet set = extract_trajectories(flows, cfg);
    ASSERT_EQ(set.trajectories.size(), 1u);
    const Trajectory& t = set.trajectories[0];
    EXPECT_EQ(t.start_frame, 0);
    ASSERT_EQ(t.points.size(), 5u);
    const float expected[5][2] = {{2, 2}, {3, 3}, {4, 4}, {5, 5}, {6, 6}};
    for (int i = 0; i < 5; ++i) {
        EXPECT_FLOAT_EQ(t.points[i].x, expected[i][0]);
        EXPECT_FLOAT_EQ(t.points[i].y, expected[i][1]);
    }
    for (int i = 0; i < 4; ++i) {
        EXPECT_FLOAT_EQ(t.points[i].dx, 1.0f);
        EXPECT_FLOAT_EQ(t.points[i].dy, 1.0f);
    }
    EXPECT_FLOAT_EQ(t.points[4].dx, 0.0f);
    EXPECT_FLOAT_EQ(t.points[4].dy, 0.0f);
}

TEST(Extract, ZeroFlowYieldsNoTrajectories) {
    std::vector<FlowField> flows(6, FlowField(32, 32));
    const TrajectorySet set = extract_trajectories(flows, TrajectoryConfig{});
    EXPECT_TRUE(set.trajectories.empty());
}

FlowField rotation_flow(int h, int w, double omega) {
    FlowField f(h, w);
    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            f.u_at(y, x) = static_cast<float>(-omega * (y - cy));
            f.v_at(y, x) = static_cast<float>(omega * (x - cx));
        }
    return f;
}

// Replay oracle: every stored displacement equals track_step recomputed at
// the stored coordinate on the stored flow, bitwise; the chain identity is
// exact by construction.
TEST(Extract, ReplayAndChainIdentityOnRotationField) {
    std::vector<FlowField> flows;
    for (int t = 0; t < 10; ++t) flows.push_back(rotation_flow(48, 48, 0.05));
    TrajectoryConfig cfg;
    const TrajectorySet set = extract_trajectories(flows, cfg);
    ASSERT_GT(set.trajectories.size(), 10u);
    for (const Trajectory& traj : set.trajectories) {
        for (int l = 0; l + 1 < static_cast<int>(traj.points.size()); ++l) {
            const TrajectoryPoint& p = traj.points[l];
            const TrajectoryPoint& q = traj.points[l + 1];
            // chain identity, bitwise
            ASSERT_EQ(q.x, p.x + p.dx);
            ASSERT_EQ(q.y, p.y + p.dy);
            // replay equivalence, bitwise
            const auto [nx, ny] =
                track_step(p.x, p.y, flows[traj.start_frame + l], cfg.median_kernel);
            ASSERT_EQ(p.dx, nx - p.x);
            ASSERT_EQ(p.dy, ny - p.y);
        }
    }
}

TEST(Extract, RespectsLengthCapAndBounds) {
    std::vector<FlowField> flows;
    for (int t = 0; t < 40; ++t) {
        FlowField f(32, 32);
        std::fill(f.u.begin(), f.u.end(), 1.0f);
        std::fill(f.v.begin(), f.v.end(), 0.5f);
        flows.push_back(std::move(f));
    }
    TrajectoryConfig cfg;
    const TrajectorySet set = extract_trajectories(flows, cfg);
    ASSERT_FALSE(set.trajectories.empty());
    for (const Trajectory& traj : set.trajectories) {
        EXPECT_LE(traj.num_steps(), cfg.max_length);
        EXPECT_GE(traj.num_steps(), 1);
        for (const TrajectoryPoint& p : traj.points) {
            EXPECT_GE(p.x, 0.0f);
            EXPECT_GE(p.y, 0.0f);
            EXPECT_LT(p.x, 32.0f);
            EXPECT_LT(p.y, 32.0f);
        }
    }
}

TEST(Extract, OversizedStepTerminatesAndAnnotates) {
    // second flow jumps beyond max_step
    FlowField calm(24, 24), wild(24, 24);
    std::fill(calm.u.begin(), calm.u.end(), 2.0f);
    std::fill(wild.u.begin(), wild.u.end(), 21.0f);
    const std::vector<FlowField> flows = {calm, wild};
    TrajectoryConfig cfg;
    const TrajectorySet set = extract_trajectories(flows, cfg);
    ASSERT_FALSE(set.trajectories.empty());
    for (const Trajectory& traj : set.trajectories) {
        if (traj.start_frame != 0) continue;
        ASSERT_EQ(traj.points.size(), 2u);
        EXPECT_FLOAT_EQ(traj.points[0].dx, 2.0f);
        // the attempted oversized step is kept as the last annotation
        EXPECT_FLOAT_EQ(traj.points[1].dx, 21.0f);
    }
}

TEST(Extract, DeterministicAcrossRuns) {
    std::vector<FlowField> flows;
    Rng rng(77);
    for (int t = 0; t < 8; ++t) {
        FlowField f(40, 40);
        for (std::size_t i = 0; i < f.pixel_count(); ++i) {
            f.u[i] = static_cast<float>(rng.uniform(-2, 2));
            f.v[i] = static_cast<float>(rng.uniform(-2, 2));
        }
        flows.push_back(std::move(f));
    }
    const TrajectorySet a = extract_trajectories(flows, TrajectoryConfig{});
    const TrajectorySet b = extract_trajectories(flows, TrajectoryConfig{});
    ASSERT_EQ(a.trajectories.size(), b.trajectories.size());
    for (std::size_t i = 0; i < a.trajectories.size(); ++i) {
        ASSERT_EQ(a.trajectories[i].points.size(), b.trajectories[i].points.size());
        for (std::size_t j = 0; j < a.trajectories[i].points.size(); ++j) {
            EXPECT_EQ(a.trajectories[i].points[j].x, b.trajectories[i].points[j].x);
            EXPECT_EQ(a.trajectories[i].points[j].dx, b.trajectories[i].points[j].dx);
        }
    }
}

TEST(Extract, MultiScaleReportsOriginalResolution) {
    std::vector<FlowField> flows;
    for (int t = 0; t < 6; ++t) {
        FlowField f(64, 64);
        std::fill(f.u.begin(), f.u.end(), 1.0f);
        std::fill(f.v.begin(), f.v.end(), 1.0f);
        flows.push_back(std::move(f));
    }
    TrajectoryConfig cfg;
    cfg.scales = 3;
    const TrajectorySet set = extract_trajectories(flows, cfg);
    ASSERT_FALSE(set.trajectories.empty());
    for (const Trajectory& traj : set.trajectories) {
        for (const TrajectoryPoint& p : traj.points) {
            EXPECT_GE(p.x, 0.0f);
            EXPECT_LT(p.x, 64.0f);
            EXPECT_GE(p.y, 0.0f);
            EXPECT_LT(p.y, 64.0f);
        }
        // uniform flow: every real step close to (1,1) regardless of level
        for (int l = 0; l < traj.num_steps(); ++l) {
            EXPECT_NEAR(traj.points[l].dx, 1.0f, 0.15f);
            EXPECT_NEAR(traj.points[l].dy, 1.0f, 0.15f);
        }
        // chain identity still bitwise in original coordinates
        for (int l = 0; l + 1 < static_cast<int>(traj.points.size()); ++l) {
            ASSERT_EQ(traj.points[l + 1].x, traj.points[l].x + traj.points[l].dx);
            ASSERT_EQ(traj.points[l + 1].y, traj.points[l].y + traj.points[l].dy);
        }
    }
}

TEST(Extract, EmptyFlowListRejected) {
    EXPECT_THROW(extract_trajectories({}, TrajectoryConfig{}), DataError);
}

TEST(Extract, ConfigValidation) {
    std::vector<FlowField> flows(2, FlowField(16, 16));
    TrajectoryConfig cfg;
    cfg.median_kernel = 4;
    EXPECT_THROW(extract_trajectories(flows, cfg), UsageError);
    TrajectoryConfig cfg2;
    cfg2.min_mean_step = 30.0;
    EXPECT_THROW(extract_trajectories(flows, cfg2), UsageError);
}

}  // namespace
