#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "qmarket/net_sim.hpp"
#include "qmarket/rng.hpp"

namespace qm = qmarket;

namespace {

qm::BinSpec good_bin() {
    qm::BinSpec b;
    b.channel = qm::Channel::good;
    b.high = {14.0, 20.0, 0.0};
    b.low = {10.0, 20.0, 0.0};
    return b;
}

qm::Simulator make_sim(int n, const qm::PlaybackParams& pp, const qm::SessionPlan& plan,
                       std::uint64_t seed = 1) {
    return qm::Simulator({good_bin()}, n, std::vector<qm::Channel>(n, qm::Channel::good), pp,
                         qm::DqsParams{}, plan, qm::Rng(qm::derive_seed(seed, "net-sim-test")));
}

qm::Assignment promote(const std::vector<int>& winners, int n) {
    qm::Assignment a;
    for (int i = 0; i < n; ++i) {
        qm::ClientAssignment ca;
        ca.client_id = i;
        ca.bin = qm::Channel::good;
        ca.action = qm::ClientAction::lose;
        for (int w : winners)
            if (w == i) ca.action = qm::ClientAction::win;
        a.push_back(ca);
    }
    return a;
}

}  // namespace

TEST(Allocation, EqualSplitAfterLoss) {
    EXPECT_DOUBLE_EQ(qm::allocate_goodput({10.0, 20.0, 0.0}, 2), 5.0);
    EXPECT_DOUBLE_EQ(qm::allocate_goodput({8.0, 20.0, 0.25}, 1), 6.0);
    EXPECT_DOUBLE_EQ(qm::allocate_goodput({10.0, 20.0, 0.0}, 0), 0.0);
    EXPECT_THROW(qm::allocate_goodput({10.0, 20.0, 0.0}, -1), std::invalid_argument);
}

TEST(Allocation, BadChannelDeratesService) {
    const qm::QueueSpec good{10.0, 20.0, 0.0};
    const auto bad = qm::emulate_channel(good, qm::Channel::bad);
    EXPECT_DOUBLE_EQ(bad.rate_mbps, 5.0);
    EXPECT_DOUBLE_EQ(bad.base_rtt_ms, 60.0);
    EXPECT_DOUBLE_EQ(bad.loss, 0.02);
    const auto same = qm::emulate_channel(good, qm::Channel::good);
    EXPECT_DOUBLE_EQ(same.rate_mbps, good.rate_mbps);
}

TEST(Ramp, MeanFractionMatchesQuadrature) {
    const double ramp = 1.8;
    for (double elapsed : {0.0, 0.3, 1.0, 1.7, 2.5}) {
        for (double dt : {0.1, 0.5, 1.0, 3.0}) {
            const int steps = 20000;
            double acc = 0.0;
            for (int i = 0; i < steps; ++i) {
                const double t = elapsed + (i + 0.5) * dt / steps;
                acc += std::min(t / ramp, 1.0);
            }
            EXPECT_NEAR(qm::ramp_mean_fraction(elapsed, dt, ramp), acc / steps, 1e-6)
                << "elapsed " << elapsed << " dt " << dt;
        }
    }
    EXPECT_DOUBLE_EQ(qm::ramp_mean_fraction(0.0, 1.0, 0.0), 1.0);
    EXPECT_DOUBLE_EQ(qm::ramp_mean_fraction(5.0, 1.0, 2.0), 1.0);
}

TEST(Playback, StallAndResumeFollowThresholds) {
    const qm::PlaybackParams pp;
    const qm::DqsParams dp;
    qm::VideoClient c;
    c.dqs = qm::fresh_session(dp);
    c.state.buffer_s = 1.5;
    c.playing = true;

    // No download: the buffer drains one content second per wall second.
    auto ev = qm::step_playback(c, 0.0, 1.0, pp, dp);
    ASSERT_TRUE(ev.has_value());
    EXPECT_EQ(*ev, qm::PlaybackEvent::playing);
    EXPECT_DOUBLE_EQ(c.state.buffer_s, 0.5);

    ev = qm::step_playback(c, 0.0, 1.0, pp, dp);
    ASSERT_TRUE(ev.has_value());
    EXPECT_EQ(*ev, qm::PlaybackEvent::stall_begin);
    EXPECT_FALSE(c.playing);
    EXPECT_EQ(c.state.stalls, 1);

    // Half the resume threshold arrives: still stalled.
    ev = qm::step_playback(c, pp.bitrate_mbps, 1.0, pp, dp);
    ASSERT_TRUE(ev.has_value());
    EXPECT_EQ(*ev, qm::PlaybackEvent::stalling);
    EXPECT_FALSE(c.playing);

    // The second threshold second arrives: playback resumes.
    ev = qm::step_playback(c, pp.bitrate_mbps, 1.0, pp, dp);
    ASSERT_TRUE(ev.has_value());
    EXPECT_EQ(*ev, qm::PlaybackEvent::playing);
    EXPECT_TRUE(c.playing);
    EXPECT_DOUBLE_EQ(c.stall_accum_s, 2.0);
}

TEST(Playback, PrebufferingIsNotAStall) {
    const qm::PlaybackParams pp;
    const qm::DqsParams dp;
    qm::VideoClient c;
    c.dqs = qm::fresh_session(dp);
    const auto ev = qm::step_playback(c, pp.bitrate_mbps * 0.2, 1.0, pp, dp);
    EXPECT_FALSE(ev.has_value());
    EXPECT_EQ(c.state.stalls, 0);
    EXPECT_DOUBLE_EQ(c.state.qoe, 5.0);
}

TEST(Simulator, GoodputConservesQueueCapacity) {
    qm::PlaybackParams pp;
    pp.ramp_base_s = 0.0;
    pp.ramp_rtt_factor = 0.0;
    qm::SessionPlan plan;
    plan.initial_buffer_s = 50.0;
    auto sim = make_sim(6, pp, plan);
    sim.apply_assignment(promote({0, 1}, 6), false);
    for (int t = 0; t < 20; ++t) {
        std::vector<qm::TickRow> rows;
        sim.tick(1.0, &rows);
        double high = 0.0, low = 0.0;
        for (const auto& r : rows)
            (r.queue == qm::QueueKind::high ? high : low) += r.goodput_mbps;
        EXPECT_LE(high, 14.0 + 1e-9);
        EXPECT_LE(low, 10.0 + 1e-9);
    }
}

TEST(Simulator, HighQueueMembersOutpaceLowQueueMembers) {
    qm::PlaybackParams pp;
    pp.ramp_base_s = 0.0;
    pp.ramp_rtt_factor = 0.0;
    qm::SessionPlan plan;
    plan.initial_buffer_s = 50.0;
    auto sim = make_sim(4, pp, plan);
    sim.apply_assignment(promote({0, 1}, 4), false);
    std::vector<qm::TickRow> rows;
    sim.tick(1.0, &rows);
    EXPECT_DOUBLE_EQ(rows[0].goodput_mbps, 7.0);
    EXPECT_DOUBLE_EQ(rows[2].goodput_mbps, 5.0);
    EXPECT_GT(rows[0].goodput_mbps, rows[2].goodput_mbps);
}

TEST(Simulator, VanillaMergesBinIntoOneSharedQueue) {
    qm::PlaybackParams pp;
    pp.ramp_base_s = 0.0;
    pp.ramp_rtt_factor = 0.0;
    qm::SessionPlan plan;
    plan.initial_buffer_s = 50.0;
    auto sim = make_sim(6, pp, plan);
    sim.apply_assignment(promote({}, 6), true);
    std::vector<qm::TickRow> rows;
    sim.tick(1.0, &rows);
    for (const auto& r : rows) {
        EXPECT_EQ(r.queue, qm::QueueKind::shared);
        EXPECT_DOUBLE_EQ(r.goodput_mbps, 24.0 / 6.0);
    }
}

TEST(Simulator, PromotionRampsUpGradually) {
    qm::PlaybackParams pp;  // ramp = 1 + 4 * 0.02 = 1.08 s
    qm::SessionPlan plan;
    plan.initial_buffer_s = 50.0;
    auto sim = make_sim(2, pp, plan);
    sim.apply_assignment(promote({}, 2), false);
    sim.tick(1.0);
    sim.tick(1.0);  // past the initial ramp, both settled at 5 Mbps in low

    sim.apply_assignment(promote({0}, 2), false);
    std::vector<qm::TickRow> rows;
    sim.tick(1.0, &rows);
    // Client 0 now owns the 14 Mbps queue but converges from 5 upward.
    EXPECT_GT(rows[0].goodput_mbps, 5.0);
    EXPECT_LT(rows[0].goodput_mbps, 14.0);
    // Client 1 was not reassigned, so its larger share arrives at once.
    EXPECT_DOUBLE_EQ(rows[1].goodput_mbps, 10.0);

    sim.tick(1.0);
    sim.tick(1.0, &rows);  // the 1.08 s ramp has fully converged by now
    EXPECT_DOUBLE_EQ(rows[2].goodput_mbps, 14.0);
    EXPECT_DOUBLE_EQ(rows[3].goodput_mbps, 10.0);
}

TEST(Simulator, DemotionShedsRateImmediately) {
    qm::PlaybackParams pp;
    qm::SessionPlan plan;
    plan.initial_buffer_s = 50.0;
    auto sim = make_sim(2, pp, plan);
    sim.apply_assignment(promote({0}, 2), false);
    for (int t = 0; t < 3; ++t) sim.tick(1.0);

    sim.apply_assignment(promote({1}, 2), false);
    std::vector<qm::TickRow> rows;
    sim.tick(1.0, &rows);
    // The demoted client drops to the low-queue share at once.
    EXPECT_DOUBLE_EQ(rows[0].goodput_mbps, 10.0);
}

TEST(Simulator, SessionRollResetsScoreAndBuffer) {
    qm::PlaybackParams pp;
    qm::SessionPlan plan;
    plan.video_length_s = 5.0;
    plan.length_jitter = 0.0;
    plan.initial_buffer_s = 10.0;
    plan.startup_stagger = 1.0;
    auto sim = make_sim(1, pp, plan);
    sim.apply_assignment(promote({0}, 1), false);
    std::vector<qm::TickRow> rows;
    bool saw_reset = false;
    for (int t = 0; t < 12 && !saw_reset; ++t) {
        rows.clear();
        sim.tick(1.0, &rows);
        // A fresh session restarts from an empty buffer and a perfect score.
        if (rows[0].buffer_s < plan.initial_buffer_s - 5.0) saw_reset = true;
    }
    EXPECT_TRUE(saw_reset);
    EXPECT_DOUBLE_EQ(rows[0].qoe, 5.0);
}

TEST(Simulator, StallEpisodesAreRecordedWithDurations) {
    qm::PlaybackParams pp;
    pp.resume_threshold_s = 2.0;
    qm::BinSpec bin = good_bin();
    bin.high = {1.0, 20.0, 0.0};  // starved: 1 Mbps against a 5 Mbps bitrate
    bin.low = {1.0, 20.0, 0.0};
    qm::SessionPlan plan;
    plan.initial_buffer_s = 3.0;
    qm::Simulator sim({bin}, 1, {qm::Channel::good}, pp, qm::DqsParams{}, plan,
                      qm::Rng(qm::derive_seed(3, "episodes")));
    sim.apply_assignment(promote({0}, 1), false);
    for (int t = 0; t < 60; ++t) sim.tick(1.0);
    ASSERT_FALSE(sim.stall_episodes().empty());
    for (double d : sim.stall_episodes()) EXPECT_GT(d, 0.0);
}

TEST(Simulator, JointLabelListsMembersInIdOrder) {
    qm::PlaybackParams pp;
    qm::SessionPlan plan;
    plan.initial_buffer_s = 25.0;
    auto sim = make_sim(3, pp, plan);
    const qm::DiscretizationConfig disc;
    const auto jl = sim.joint_label(qm::Channel::good, disc);
    ASSERT_EQ(jl.size(), 3u);
    for (int l : jl) EXPECT_EQ(l, qm::discretize({25.0, 5.0, 0}, disc).label);
    EXPECT_TRUE(sim.joint_label(qm::Channel::bad, disc).empty());
    EXPECT_EQ(sim.members_of(qm::Channel::good), (std::vector<int>{0, 1, 2}));
}

TEST(Simulator, IdenticalSeedsProduceIdenticalRuns) {
    qm::PlaybackParams pp;
    qm::SessionPlan plan;
    plan.video_length_s = 7.0;
    plan.length_jitter = 0.3;
    plan.initial_buffer_s = 4.0;
    std::vector<qm::TickRow> a, b;
    for (auto* out : {&a, &b}) {
        auto sim = make_sim(3, pp, plan, 42);
        sim.apply_assignment(promote({0}, 3), false);
        for (int t = 0; t < 40; ++t) sim.tick(1.0, out);
    }
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_DOUBLE_EQ(a[i].buffer_s, b[i].buffer_s);
        EXPECT_DOUBLE_EQ(a[i].qoe, b[i].qoe);
        EXPECT_DOUBLE_EQ(a[i].goodput_mbps, b[i].goodput_mbps);
        EXPECT_EQ(a[i].stalled, b[i].stalled);
    }
}

TEST(Simulator, ValidatesConstruction) {
    qm::PlaybackParams pp;
    EXPECT_THROW(qm::Simulator({good_bin()}, 0, {}, pp, qm::DqsParams{}, qm::SessionPlan{},
                               qm::Rng(1)),
                 std::invalid_argument);
    EXPECT_THROW(qm::Simulator({good_bin()}, 2, {qm::Channel::good}, pp, qm::DqsParams{},
                               qm::SessionPlan{}, qm::Rng(1)),
                 std::invalid_argument);
    qm::BinSpec inverted = good_bin();
    inverted.high.rate_mbps = 1.0;
    EXPECT_THROW(qm::Simulator({inverted}, 1, {qm::Channel::good}, pp, qm::DqsParams{},
                               qm::SessionPlan{}, qm::Rng(1)),
                 std::invalid_argument);
}
