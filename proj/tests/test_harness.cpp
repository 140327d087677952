#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "qmarket/harness.hpp"

namespace qm = qmarket;
namespace fs = std::filesystem;

namespace {

// Two small scenarios, short runs, light training. Everything an experiment
// touches is exercised; nothing takes more than a few seconds.
qm::ExperimentConfig tiny_config(const fs::path& out) {
    qm::ExperimentConfig c;
    c.scenarios = {{"duo", 2, 0, 60.0}, {"trio", 3, 0, 60.0}};
    c.training.trace_dps = 45;
    c.training.equilibrium_rounds = 1;
    c.training.equilibrium_dps = 15;
    c.planner.popular_states = 40;
    c.planner.system_samples = 60;
    c.seeds = 2;
    c.out_dir = out.string();
    return c;
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file())
            files[fs::relative(e.path(), root).string()] = qm::read_text_file(e.path());
    return files;
}

qm::TickRow tick_row(double t, int client, double qoe, int stalled, double accum) {
    qm::TickRow r;
    r.time_s = t;
    r.client = client;
    r.qoe = qoe;
    r.stalled = stalled;
    r.stall_accum_s = accum;
    return r;
}

class Experiment : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        base_ = fs::path(::testing::TempDir()) / "qmarket_harness";
        fs::remove_all(base_);
        cfg_ = tiny_config(base_ / "out_a");
        qm::run_experiment(cfg_, qm::Verb::all, 0);

        qm::ExperimentConfig again = tiny_config(base_ / "out_b");
        qm::run_experiment(again, qm::Verb::all, 0);
    }

    static fs::path out() { return base_ / "out_a"; }

    static fs::path base_;
    static qm::ExperimentConfig cfg_;
};

fs::path Experiment::base_;
qm::ExperimentConfig Experiment::cfg_;

}  // namespace

TEST_F(Experiment, TrainingWritesOneArtifactSetPerKey) {
    for (const char* key : {"2_good", "3_good"}) {
        const fs::path dir = out() / "artifacts" / key;
        EXPECT_TRUE(qm::artifacts_present(dir)) << dir;
        EXPECT_TRUE(fs::exists(dir / "traces.csv"));
    }
    EXPECT_FALSE(qm::artifacts_present(out() / "artifacts" / "9_good"));
}

TEST_F(Experiment, SavedArtifactsLoadBackVerbatim) {
    const auto store = qm::load_all(cfg_, out());
    ASSERT_EQ(store.size(), 2u);
    const qm::BidSet bids = cfg_.market.bid_set();
    for (const auto& [key, art] : store) {
        const fs::path dir = out() / "artifacts" / qm::key_name(key);
        EXPECT_EQ(qm::serialize_kernel(art.kernel), qm::read_text_file(dir / "kernel.txt"));
        EXPECT_EQ(qm::serialize_value_table(art.value), qm::read_text_file(dir / "value.txt"));
        EXPECT_EQ(qm::serialize_bid_policy(art.bid_policy, bids),
                  qm::read_text_file(dir / "bid_policy.txt"));
        EXPECT_EQ(qm::serialize_belief(art.belief, bids), qm::read_text_file(dir / "belief.txt"));
        EXPECT_EQ(qm::serialize_index_map(art.index), qm::read_text_file(dir / "index.txt"));
        EXPECT_EQ(qm::serialize_system_policy(art.system),
                  qm::read_text_file(dir / "system_policy.txt"));
    }
}

TEST_F(Experiment, RunsHaveOneRowPerClientTickAndRound) {
    for (const auto& sc : cfg_.scenarios) {
        const int n = sc.total_clients();
        for (const qm::PolicyKind p : cfg_.policies) {
            const std::string stem = qm::run_file_stem(qm::policy_name(p), sc.name, 1);
            const auto rows =
                qm::parse_metrics_csv(qm::read_lines(out() / "runs" / (stem + "_metrics.csv")));
            const auto auction = qm::parse_assignments_csv(
                qm::read_lines(out() / "runs" / (stem + "_assignments.csv")));
            EXPECT_EQ(rows.size(), static_cast<std::size_t>(60 * n)) << stem;
            EXPECT_EQ(auction.size(), static_cast<std::size_t>(6 * n)) << stem;
        }
    }
}

TEST_F(Experiment, RunCsvsReserializeToTheSameBytes) {
    const std::string stem = qm::run_file_stem("auction", "trio", 2);
    const fs::path mpath = out() / "runs" / (stem + "_metrics.csv");
    const fs::path apath = out() / "runs" / (stem + "_assignments.csv");
    EXPECT_EQ(qm::metrics_csv(qm::parse_metrics_csv(qm::read_lines(mpath))),
              qm::read_text_file(mpath));
    EXPECT_EQ(qm::assignments_csv(qm::parse_assignments_csv(qm::read_lines(apath))),
              qm::read_text_file(apath));
}

TEST_F(Experiment, ReportCoversEveryPolicyScenarioPair) {
    const fs::path rep = out() / "report";
    const auto comparison = qm::read_lines(rep / "comparison.txt");
    ASSERT_FALSE(comparison.empty());
    EXPECT_EQ(comparison[0],
              "policy scenario mean_qoe ci95_lo ci95_hi qoe5_fraction mean_bid stall_events");
    std::size_t data_lines = 0;
    for (std::size_t i = 1; i < comparison.size(); ++i)
        if (!comparison[i].empty()) ++data_lines;
    EXPECT_EQ(data_lines, cfg_.policies.size() * cfg_.scenarios.size());

    for (const auto& sc : cfg_.scenarios)
        for (const qm::PolicyKind p : cfg_.policies) {
            const std::string ps = std::string(qm::policy_name(p)) + "_" + sc.name;
            const auto summary = qm::read_lines(rep / (ps + "_summary.csv"));
            ASSERT_GE(summary.size(), 3u) << ps;
            EXPECT_EQ(summary[0],
                      "seed,mean_qoe,qoe5_fraction,mean_bid,total_payment,stall_events,"
                      "stall_seconds");
            EXPECT_TRUE(fs::exists(rep / (ps + "_cdf_qoe.csv")));
            EXPECT_TRUE(fs::exists(rep / (ps + "_cdf_buffer.csv")));
            EXPECT_TRUE(fs::exists(rep / (ps + "_qoe_timeseries.csv")));
        }

    EXPECT_TRUE(fs::exists(rep / "bid_histogram_duo.csv"));
    EXPECT_TRUE(fs::exists(rep / "bid_shift.txt"));
    const auto shift = qm::read_lines(rep / "bid_shift.txt");
    EXPECT_EQ(shift[0], "scenario_a scenario_b mean_bid_a mean_bid_b welch_one_sided_p");
}

TEST_F(Experiment, BidHistogramFractionsSumToOne) {
    const auto lines = qm::read_lines(out() / "report" / "bid_histogram_duo.csv");
    ASSERT_GE(lines.size(), 2u);
    EXPECT_EQ(lines[0], "bid,count,fraction");
    double total = 0.0;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = qm::split(lines[i], ',');
        ASSERT_EQ(f.size(), 3u);
        total += qm::parse_double(f[2]);
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
}

TEST_F(Experiment, CdfFilesMatchIndependentRecomputation) {
    // Pool the qoe column across seeds exactly as the report does, then
    // recompute the distribution from scratch.
    std::vector<double> pooled;
    for (const std::uint64_t seed : qm::seed_values(cfg_, 0)) {
        const std::string stem = qm::run_file_stem("vanilla", "duo", seed);
        for (const auto& r :
             qm::parse_metrics_csv(qm::read_lines(out() / "runs" / (stem + "_metrics.csv"))))
            pooled.push_back(r.qoe);
    }
    const auto expected = qm::cdf_points(pooled);
    const auto lines = qm::read_lines(out() / "report" / "vanilla_duo_cdf_qoe.csv");
    ASSERT_EQ(lines.size(), expected.size() + 1);
    EXPECT_EQ(lines[0], "value,fraction");
    for (std::size_t i = 0; i < expected.size(); ++i) {
        const auto f = qm::split(lines[i + 1], ',');
        ASSERT_EQ(f.size(), 2u);
        EXPECT_NEAR(qm::parse_double(f[0]), expected[i].first, 1e-12);
        EXPECT_NEAR(qm::parse_double(f[1]), expected[i].second, 1e-12);
    }
}

TEST_F(Experiment, SummaryLinesMatchRecomputedSummaries) {
    const std::string stem = qm::run_file_stem("round_robin", "trio", 1);
    const auto rows =
        qm::parse_metrics_csv(qm::read_lines(out() / "runs" / (stem + "_metrics.csv")));
    const auto auction =
        qm::parse_assignments_csv(qm::read_lines(out() / "runs" / (stem + "_assignments.csv")));
    const qm::RunSummary s = qm::summarize_run(rows, auction);

    const auto lines = qm::read_lines(out() / "report" / "round_robin_trio_summary.csv");
    ASSERT_GE(lines.size(), 2u);
    const auto f = qm::split(lines[1], ',');  // first data line is seed 1
    ASSERT_EQ(f.size(), 7u);
    EXPECT_EQ(qm::parse_long(f[0]), 1);
    EXPECT_NEAR(qm::parse_double(f[1]), s.mean_qoe, 1e-12);
    EXPECT_NEAR(qm::parse_double(f[2]), s.qoe5_fraction, 1e-12);
    EXPECT_NEAR(qm::parse_double(f[3]), s.mean_bid, 1e-12);
    EXPECT_NEAR(qm::parse_double(f[4]), s.total_payment, 1e-12);
    EXPECT_EQ(qm::parse_long(f[5]), s.stall_events);
    EXPECT_NEAR(qm::parse_double(f[6]), s.stall_seconds, 1e-12);
}

TEST_F(Experiment, QoeTimeseriesAveragesAcrossSeedsAndClients) {
    std::map<long, std::pair<double, long>> acc;
    for (const std::uint64_t seed : qm::seed_values(cfg_, 0)) {
        const std::string stem = qm::run_file_stem("index", "duo", seed);
        for (const auto& r :
             qm::parse_metrics_csv(qm::read_lines(out() / "runs" / (stem + "_metrics.csv")))) {
            auto& a = acc[std::lround(r.time_s * 1000.0)];
            a.first += r.qoe;
            a.second += 1;
        }
    }
    const auto lines = qm::read_lines(out() / "report" / "index_duo_qoe_timeseries.csv");
    ASSERT_EQ(lines.size(), acc.size() + 1);
    auto it = acc.begin();
    for (std::size_t i = 1; i < lines.size(); ++i, ++it) {
        const auto f = qm::split(lines[i], ',');
        ASSERT_EQ(f.size(), 2u);
        EXPECT_NEAR(qm::parse_double(f[0]), it->first / 1000.0, 1e-9);
        EXPECT_NEAR(qm::parse_double(f[1]),
                    it->second.first / static_cast<double>(it->second.second), 1e-12);
    }
}

TEST_F(Experiment, IndexConsistencyComparesLargerToSmallerKey) {
    const auto lines = qm::read_lines(out() / "report" / "index_consistency.txt");
    ASSERT_EQ(lines.size() >= 2, true);
    EXPECT_EQ(lines[0], "base_key other_key top_k kendall_tau");
    const auto f = qm::split(lines[1], ' ');
    ASSERT_EQ(f.size(), 4u);
    EXPECT_EQ(f[0], "3_good");
    EXPECT_EQ(f[1], "2_good");
    EXPECT_EQ(f[2], "50");
    const double tau = qm::parse_double(f[3]);
    EXPECT_GE(tau, -1.0);
    EXPECT_LE(tau, 1.0);
}

TEST_F(Experiment, RepeatedExperimentIsByteIdentical) {
    const auto a = read_tree(base_ / "out_a");
    const auto b = read_tree(base_ / "out_b");
    ASSERT_EQ(a.size(), b.size());
    for (const auto& [rel, content] : a) {
        if (rel == "config_used.json") continue;  // differs in out_dir only
        EXPECT_EQ(content, b.at(rel)) << rel;
    }
}

TEST_F(Experiment, AddingSeedsDoesNotDisturbEarlierOnes) {
    qm::ExperimentConfig wider = tiny_config(base_ / "out_c");
    wider.seeds = 3;
    qm::run_experiment(wider, qm::Verb::all, 0);
    for (const auto& sc : cfg_.scenarios)
        for (const qm::PolicyKind p : cfg_.policies)
            for (const std::uint64_t seed : qm::seed_values(cfg_, 0))
                for (const char* suffix : {"_metrics.csv", "_assignments.csv"}) {
                    const std::string name =
                        qm::run_file_stem(qm::policy_name(p), sc.name, seed) + suffix;
                    EXPECT_EQ(qm::read_text_file(base_ / "out_a" / "runs" / name),
                              qm::read_text_file(base_ / "out_c" / "runs" / name))
                        << name;
                }
}

TEST_F(Experiment, RunVerbWithoutArtifactsSaysToTrainFirst) {
    qm::ExperimentConfig untrained = tiny_config(base_ / "out_untrained");
    try {
        qm::run_experiment(untrained, qm::Verb::run, 0);
        FAIL() << "run succeeded without artifacts";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("train"), std::string::npos);
    }
}

TEST(HarnessHelpers, TrainingKeysAreDeduplicatedAndSorted) {
    qm::ExperimentConfig c;
    c.scenarios = {{"a", 6, 0, 60.0}, {"b", 4, 2, 60.0}, {"c", 6, 0, 60.0}};
    const auto keys = qm::training_keys(c);
    ASSERT_EQ(keys.size(), 3u);
    EXPECT_EQ(keys[0], (qm::ScenarioKey{2, qm::Channel::bad}));
    EXPECT_EQ(keys[1], (qm::ScenarioKey{4, qm::Channel::good}));
    EXPECT_EQ(keys[2], (qm::ScenarioKey{6, qm::Channel::good}));
    EXPECT_EQ(qm::key_name(keys[0]), "2_bad");
    EXPECT_EQ(qm::key_name(keys[2]), "6_good");
}

TEST(HarnessHelpers, JointVisitsSkipIncompleteRoundsAndOrderById) {
    std::vector<qm::TransitionRecord> traces;
    auto rec = [](double t, int id, int s) {
        qm::TransitionRecord r;
        r.t = t;
        r.client_id = id;
        r.s = s;
        return r;
    };
    traces.push_back(rec(0, 1, 11));
    traces.push_back(rec(0, 0, 10));
    traces.push_back(rec(1, 0, 20));  // round 1 misses client 1
    traces.push_back(rec(2, 0, 30));
    traces.push_back(rec(2, 1, 31));
    const auto visits = qm::joint_visits(traces, 2);
    ASSERT_EQ(visits.size(), 2u);
    EXPECT_EQ(visits[0], (qm::JointLabel{10, 11}));
    EXPECT_EQ(visits[1], (qm::JointLabel{30, 31}));
}

TEST(HarnessHelpers, SummarizeRunMatchesHandComputation) {
    std::vector<qm::TickRow> rows;
    rows.push_back(tick_row(1.0, 0, 5.0, 0, 0.0));
    rows.push_back(tick_row(1.0, 1, 4.0, 1, 1.0));
    rows.push_back(tick_row(2.0, 0, 3.0, 0, 0.0));
    rows.push_back(tick_row(2.0, 1, 5.0, 0, 1.0));
    rows.push_back(tick_row(3.0, 0, 2.0, 1, 1.0));
    rows.push_back(tick_row(3.0, 1, 5.0, 1, 2.0));

    std::vector<qm::AuctionRow> auction(2);
    auction[0].bid = 2.0;
    auction[0].price = 1.5;
    auction[1].bid = 3.0;
    auction[1].price = 0.0;

    const auto s = qm::summarize_run(rows, auction);
    EXPECT_NEAR(s.mean_qoe, 24.0 / 6.0, 1e-12);
    EXPECT_NEAR(s.qoe5_fraction, 3.0 / 6.0, 1e-12);
    EXPECT_EQ(s.stall_events, 3);          // client 0 once, client 1 twice
    EXPECT_NEAR(s.stall_seconds, 3.0, 1e-12);  // final accums 1 + 2
    EXPECT_NEAR(s.mean_bid, 2.5, 1e-12);
    EXPECT_NEAR(s.total_payment, 1.5, 1e-12);

    const auto empty = qm::summarize_run({}, {});
    EXPECT_DOUBLE_EQ(empty.mean_qoe, 0.0);
    EXPECT_EQ(empty.stall_events, 0);
}

TEST(HarnessHelpers, StallDurationsSplitRunsAndCloseTrailingOnes) {
    std::vector<qm::TickRow> rows;
    // Client 0 stalls for two ticks, recovers, then stalls through the end.
    rows.push_back(tick_row(1.0, 0, 4, 1, 1));
    rows.push_back(tick_row(2.0, 0, 4, 1, 2));
    rows.push_back(tick_row(3.0, 0, 4, 0, 2));
    rows.push_back(tick_row(4.0, 0, 4, 1, 3));
    // Client 1 never stalls.
    rows.push_back(tick_row(1.0, 1, 5, 0, 0));
    const auto d = qm::stall_durations_from_rows(rows, 1.0);
    ASSERT_EQ(d.size(), 2u);
    EXPECT_DOUBLE_EQ(d[0], 2.0);
    EXPECT_DOUBLE_EQ(d[1], 1.0);
    EXPECT_TRUE(qm::stall_durations_from_rows({}, 1.0).empty());
}

TEST(HarnessHelpers, CsvRoundTripsPreserveEveryField) {
    std::vector<qm::TickRow> rows;
    qm::TickRow r;
    r.time_s = 12.5;
    r.client = 3;
    r.buffer_s = 7.25;
    r.qoe = 3.875;
    r.stalled = 1;
    r.stall_accum_s = 2.5;
    r.goodput_mbps = 6.125;
    r.queue = qm::QueueKind::shared;
    r.bin = qm::Channel::bad;
    rows.push_back(r);
    const std::string text = qm::metrics_csv(rows);
    const auto back = qm::parse_metrics_csv(qm::split(text, '\n'));
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(qm::metrics_csv(back), text);
    EXPECT_EQ(back[0].queue, qm::QueueKind::shared);
    EXPECT_EQ(back[0].bin, qm::Channel::bad);
    EXPECT_DOUBLE_EQ(back[0].qoe, 3.875);

    std::vector<qm::AuctionRow> arows(1);
    arows[0].round = 4;
    arows[0].client_id = 2;
    arows[0].bin = qm::Channel::good;
    arows[0].queue = qm::QueueKind::high;
    arows[0].bid = 1.75;
    arows[0].price = 0.5;
    const std::string atext = qm::assignments_csv(arows);
    const auto aback = qm::parse_assignments_csv(qm::split(atext, '\n'));
    ASSERT_EQ(aback.size(), 1u);
    EXPECT_EQ(qm::assignments_csv(aback), atext);

    EXPECT_THROW(qm::parse_metrics_csv({"header", "1,2,3"}), std::runtime_error);
    EXPECT_THROW(qm::parse_assignments_csv({"header", "1,2"}), std::runtime_error);
}

TEST(HarnessHelpers, ArtifactsRoundTripThroughDisk) {
    const fs::path dir = fs::path(::testing::TempDir()) / "qmarket_artifact_roundtrip";
    fs::remove_all(dir);
    const qm::BidSet bids = qm::BidSet::default_set();

    qm::TrainOutput t;
    std::vector<qm::TransitionRecord> recs;
    qm::TransitionRecord rec;
    rec.t = 0;
    rec.client_id = 0;
    rec.s = 1;
    rec.a = 1;
    rec.s_next = 2;
    recs.push_back(rec);
    rec.t = 1;
    rec.s = 2;
    rec.a = 0;
    rec.s_next = 1;
    recs.push_back(rec);
    t.traces = recs;
    t.art.kernel = qm::fit_kernel(recs, 4);
    t.art.value.v = {1.0, 2.5, 0.25, 4.0};
    t.art.value.converged = true;
    t.art.bid_policy.bid_index = {0, 5, 20, 7};
    t.art.belief = qm::BidDistribution::uniform(bids.values.size());
    t.art.index = qm::index_of(t.art.value);
    t.art.system.pop.states = {{0, 1}, {2, 3}};
    t.art.system.winner_mask = {1u, 2u};

    qm::save_artifacts(dir, t, bids);
    ASSERT_TRUE(qm::artifacts_present(dir));
    const auto back = qm::load_artifacts(dir, bids);
    EXPECT_EQ(qm::serialize_kernel(back.kernel), qm::serialize_kernel(t.art.kernel));
    EXPECT_EQ(back.value.v, t.art.value.v);
    EXPECT_TRUE(back.value.converged);
    EXPECT_EQ(back.bid_policy.bid_index, t.art.bid_policy.bid_index);
    EXPECT_EQ(back.belief.pmf, t.art.belief.pmf);
    EXPECT_EQ(back.index.rank, t.art.index.rank);
    EXPECT_EQ(back.system.pop.states, t.art.system.pop.states);
    EXPECT_EQ(back.system.winner_mask, t.art.system.winner_mask);
}

TEST(HarnessHelpers, IndexConsistencyTauHandCases) {
    qm::IndexMap base, reversed, same;
    base.rank = {0, 1, 2, 3, 4};
    same.rank = base.rank;
    reversed.rank = {4, 3, 2, 1, 0};
    EXPECT_DOUBLE_EQ(qm::index_consistency_tau(base, same, 3), 1.0);
    EXPECT_DOUBLE_EQ(qm::index_consistency_tau(base, reversed, 3), -1.0);
    EXPECT_DOUBLE_EQ(qm::index_consistency_tau(base, same, 50), 1.0);  // top_k clamps
    qm::IndexMap small;
    small.rank = {0, 1};
    EXPECT_THROW(qm::index_consistency_tau(base, small, 3), std::invalid_argument);
}

TEST(HarnessHelpers, SeedValuesApplyBaseAndOffset) {
    qm::ExperimentConfig c;
    c.seeds = 3;
    c.base_seed = 5;
    EXPECT_EQ(qm::seed_values(c, 0), (std::vector<std::uint64_t>{5, 6, 7}));
    EXPECT_EQ(qm::seed_values(c, 100), (std::vector<std::uint64_t>{105, 106, 107}));
}

TEST(HarnessHelpers, NameParsersRejectUnknownTokens) {
    EXPECT_EQ(qm::parse_channel("good"), qm::Channel::good);
    EXPECT_EQ(qm::parse_queue_kind("shared"), qm::QueueKind::shared);
    EXPECT_EQ(qm::parse_verb("report"), qm::Verb::report);
    EXPECT_THROW(qm::parse_channel("ugly"), std::invalid_argument);
    EXPECT_THROW(qm::parse_queue_kind("middle"), std::invalid_argument);
    EXPECT_THROW(qm::parse_verb("launch"), std::invalid_argument);
    EXPECT_EQ(qm::run_file_stem("auction", "duo", 7), "auction_duo_7");
}
