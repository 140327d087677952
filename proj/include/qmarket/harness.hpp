#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qmarket/config.hpp"
#include "qmarket/controller.hpp"
#include "qmarket/io.hpp"
#include "qmarket/kernel.hpp"
#include "qmarket/market.hpp"
#include "qmarket/net_sim.hpp"
#include "qmarket/planner.hpp"
#include "qmarket/rng.hpp"
#include "qmarket/stats.hpp"

namespace qmarket {

namespace fs = std::filesystem;

inline Channel parse_channel(const std::string& s) {
    if (s == "good") return Channel::good;
    if (s == "bad") return Channel::bad;
    throw std::invalid_argument("unknown channel '" + s + "'");
}

inline QueueKind parse_queue_kind(const std::string& s) {
    if (s == "high") return QueueKind::high;
    if (s == "low") return QueueKind::low;
    if (s == "shared") return QueueKind::shared;
    throw std::invalid_argument("unknown queue '" + s + "'");
}

// Everything trained offline for one (client count, channel) pairing.
struct TrainedArtifacts {
    TransitionKernel kernel{1};
    ValueFunction value;
    BidPolicy bid_policy;
    BidDistribution belief;
    IndexMap index;
    SystemPolicyTable system;
};

using ArtifactStore = std::map<ScenarioKey, TrainedArtifacts>;

inline std::string key_name(const ScenarioKey& k) {
    return std::to_string(k.num_clients) + "_" + channel_name(k.channel);
}

// Each (count, channel) pairing that appears in some scenario bin needs its
// own trained tables.
inline std::vector<ScenarioKey> training_keys(const ExperimentConfig& cfg) {
    std::set<ScenarioKey> keys;
    for (const auto& sc : cfg.scenarios) {
        if (sc.clients_good > 0) keys.insert({sc.clients_good, Channel::good});
        if (sc.clients_bad > 0) keys.insert({sc.clients_bad, Channel::bad});
    }
    return {keys.begin(), keys.end()};
}

inline Simulator make_simulator(const ExperimentConfig& cfg, const ScenarioConfig& sc, Rng rng) {
    std::vector<BinSpec> bins;
    std::vector<Channel> client_bins;
    if (sc.clients_good > 0) {
        bins.push_back(cfg.bins.bin_for(Channel::good));
        client_bins.insert(client_bins.end(), sc.clients_good, Channel::good);
    }
    if (sc.clients_bad > 0) {
        bins.push_back(cfg.bins.bin_for(Channel::bad));
        client_bins.insert(client_bins.end(), sc.clients_bad, Channel::bad);
    }
    return Simulator(std::move(bins), sc.total_clients(), client_bins, cfg.playback, cfg.dqs,
                     cfg.session, std::move(rng));
}

inline ScenarioConfig training_scenario(const ScenarioKey& key, double duration_s) {
    ScenarioConfig sc;
    sc.name = "train";
    sc.clients_good = key.channel == Channel::good ? key.num_clients : 0;
    sc.clients_bad = key.channel == Channel::bad ? key.num_clients : 0;
    sc.duration_s = duration_s;
    return sc;
}

// Joint labels (clients in id order) per decision period, reconstructed from
// the per-round transition records.
inline std::vector<JointLabel> joint_visits(const std::vector<TransitionRecord>& traces,
                                            int num_clients) {
    std::map<long, std::map<int, int>> by_round;
    for (const auto& r : traces) by_round[r.t][r.client_id] = r.s;
    std::vector<JointLabel> out;
    out.reserve(by_round.size());
    for (const auto& [t, m] : by_round) {
        if (static_cast<int>(m.size()) != num_clients) continue;
        JointLabel jl;
        jl.reserve(m.size());
        for (const auto& [id, s] : m) jl.push_back(s);
        out.push_back(std::move(jl));
    }
    return out;
}

struct TrainOutput {
    TrainedArtifacts art;
    std::vector<TransitionRecord> traces;
};

// Offline pipeline for one key: explore under three simple policies, fit the
// shared kernel, iterate belief and bid policy to a fixed point, then solve
// the projected system MDP and extract the index table.
inline TrainOutput train_key(const ExperimentConfig& cfg, const ScenarioKey& key) {
    const auto& disc = cfg.discretization;
    const double dp = cfg.control.decision_period_s;
    const double tick = cfg.playback.tick_s;
    const int n_slots = cfg.control.admission_limit;
    const std::string name = key_name(key);

    TrainOutput out;
    std::vector<JointLabel> visits;
    const std::array<PolicyKind, 3> explorers{PolicyKind::vanilla, PolicyKind::round_robin,
                                              PolicyKind::greedy_buffer};
    const int per_policy = cfg.training.trace_dps / 3;
    for (std::size_t i = 0; i < explorers.size(); ++i) {
        const int dps = per_policy + (i == 0 ? cfg.training.trace_dps - 3 * per_policy : 0);
        if (dps < 1) continue;
        const std::string pname = policy_name(explorers[i]);
        Simulator sim = make_simulator(
            cfg, training_scenario(key, dps * dp),
            Rng(derive_seed(cfg.base_seed, "trace-sim/" + name + "/" + pname)));
        Rng ctl_rng(derive_seed(cfg.base_seed, "trace-ctl/" + name + "/" + pname));
        Controller ctl(explorers[i], n_slots, PolicyArtifacts{}, disc,
                       cfg.market.belief_lambda);
        EpisodeResult ep = run_episode(sim, ctl, dps * dp, dp, tick, disc, ctl_rng, false, true);
        const auto jv = joint_visits(ep.traces, key.num_clients);
        visits.insert(visits.end(), jv.begin(), jv.end());
        out.traces.insert(out.traces.end(), ep.traces.begin(), ep.traces.end());
    }

    out.art.kernel = fit_kernel(out.traces, disc.num_labels());

    const BidSet bids = cfg.market.bid_set();
    BidDistribution rho = BidDistribution::uniform(bids.values.size());
    ClientPlan plan;
    for (int round = 0; round <= cfg.training.equilibrium_rounds; ++round) {
        const MarketCurves curves = build_market_curves(bids, rho, key.num_clients, n_slots);
        plan = value_iteration_client(out.art.kernel, curves, bids, disc, cfg.planner.vi());
        if (!plan.value.converged)
            throw std::runtime_error("train " + name + ": client value iteration did not converge");
        if (round == cfg.training.equilibrium_rounds) break;
        PolicyArtifacts pa;
        pa.bids = bids;
        pa.bid_policy = plan.policy;
        Simulator sim = make_simulator(
            cfg, training_scenario(key, cfg.training.equilibrium_dps * dp),
            Rng(derive_seed(cfg.base_seed, "equil-sim/" + name + "/" + std::to_string(round))));
        Rng ctl_rng(
            derive_seed(cfg.base_seed, "equil-ctl/" + name + "/" + std::to_string(round)));
        Controller ctl(PolicyKind::auction_based, n_slots, pa, disc, cfg.market.belief_lambda);
        run_episode(sim, ctl, cfg.training.equilibrium_dps * dp, dp, tick, disc, ctl_rng, false,
                    false);
        rho = ctl.belief(key.channel);
    }
    out.art.value = plan.value;
    out.art.bid_policy = plan.policy;
    out.art.belief = rho;
    out.art.index = index_of(plan.value);

    const PopularStateSet pop = select_popular_states(visits, cfg.planner.popular_states);
    Rng sys_rng(derive_seed(cfg.base_seed, "system/" + name));
    const SystemMdp mdp =
        build_system_mdp(out.art.kernel, pop, n_slots, disc, cfg.planner.system_samples, sys_rng);
    const SystemPlan splan = value_iteration_system(mdp, cfg.planner.vi());
    if (!splan.value.converged)
        throw std::runtime_error("train " + name + ": system value iteration did not converge");
    out.art.system.pop = mdp.pop;
    out.art.system.winner_mask.clear();
    for (std::size_t i = 0; i < mdp.pop.states.size(); ++i)
        out.art.system.winner_mask.push_back(mdp.actions[splan.best_action[i]]);
    return out;
}

inline void save_artifacts(const fs::path& dir, const TrainOutput& t, const BidSet& bids) {
    fs::create_directories(dir);
    write_text_file(dir / "traces.csv", serialize_traces(t.traces));
    write_text_file(dir / "kernel.txt", serialize_kernel(t.art.kernel));
    write_text_file(dir / "value.txt", serialize_value_table(t.art.value));
    write_text_file(dir / "bid_policy.txt", serialize_bid_policy(t.art.bid_policy, bids));
    write_text_file(dir / "belief.txt", serialize_belief(t.art.belief, bids));
    write_text_file(dir / "index.txt", serialize_index_map(t.art.index));
    write_text_file(dir / "system_policy.txt", serialize_system_policy(t.art.system));
}

inline bool artifacts_present(const fs::path& dir) {
    for (const char* f :
         {"kernel.txt", "value.txt", "bid_policy.txt", "belief.txt", "index.txt",
          "system_policy.txt"})
        if (!fs::exists(dir / f)) return false;
    return true;
}

inline TrainedArtifacts load_artifacts(const fs::path& dir, const BidSet& bids) {
    TrainedArtifacts a;
    a.kernel = parse_kernel(read_lines(dir / "kernel.txt"));
    a.value.v = parse_value_table(read_lines(dir / "value.txt"));
    a.value.converged = true;
    a.bid_policy = parse_bid_policy(read_lines(dir / "bid_policy.txt"));
    a.belief = parse_belief(read_lines(dir / "belief.txt"), bids);
    a.index = parse_index_map(read_lines(dir / "index.txt"));
    a.system = parse_system_policy(read_lines(dir / "system_policy.txt"));
    return a;
}

// ---- evaluation ----

struct RunSummary {
    std::string policy;
    std::string scenario;
    std::uint64_t seed = 0;
    double mean_qoe = 0.0;
    double qoe5_fraction = 0.0;
    double mean_bid = 0.0;
    double total_payment = 0.0;
    long stall_events = 0;
    double stall_seconds = 0.0;
    long coverage_misses = 0;
};

struct MetricsLog {
    std::vector<TickRow> rows;
    std::vector<AuctionRow> auction;
    RunSummary summary;
};

// Durations of maximal stalled runs per client, from the per-second rows.
inline std::vector<double> stall_durations_from_rows(const std::vector<TickRow>& rows,
                                                     double tick_s) {
    std::map<int, int> open;
    std::vector<double> durations;
    for (const auto& r : rows) {
        int& run = open[r.client];
        if (r.stalled) {
            run += 1;
        } else if (run > 0) {
            durations.push_back(run * tick_s);
            run = 0;
        }
    }
    for (const auto& [id, run] : open)
        if (run > 0) durations.push_back(run * tick_s);
    return durations;
}

inline RunSummary summarize_run(const std::vector<TickRow>& rows,
                                const std::vector<AuctionRow>& auction) {
    RunSummary s;
    if (!rows.empty()) {
        double q = 0.0, q5 = 0.0;
        std::map<int, int> last_stalled;
        std::map<int, double> last_accum;
        for (const auto& r : rows) {
            q += r.qoe;
            if (r.qoe >= 4.995) q5 += 1.0;
            auto [it, inserted] = last_stalled.try_emplace(r.client, 0);
            if (r.stalled && !it->second) s.stall_events += 1;
            it->second = r.stalled;
            last_accum[r.client] = r.stall_accum_s;
        }
        s.mean_qoe = q / static_cast<double>(rows.size());
        s.qoe5_fraction = q5 / static_cast<double>(rows.size());
        for (const auto& [id, acc] : last_accum) s.stall_seconds += acc;
    }
    if (!auction.empty()) {
        double b = 0.0;
        for (const auto& a : auction) {
            b += a.bid;
            s.total_payment += a.price;
        }
        s.mean_bid = b / static_cast<double>(auction.size());
    }
    return s;
}

inline std::string metrics_csv(const std::vector<TickRow>& rows) {
    std::string out = "time_s,client,buffer_s,qoe,stalled,stall_accum_s,goodput_mbps,queue,bin\n";
    for (const auto& r : rows) {
        out += fmt_double(r.time_s);
        out += ',';
        out += std::to_string(r.client);
        out += ',';
        out += fmt_double(r.buffer_s);
        out += ',';
        out += fmt_double(r.qoe);
        out += ',';
        out += std::to_string(r.stalled);
        out += ',';
        out += fmt_double(r.stall_accum_s);
        out += ',';
        out += fmt_double(r.goodput_mbps);
        out += ',';
        out += queue_kind_name(r.queue);
        out += ',';
        out += channel_name(r.bin);
        out += '\n';
    }
    return out;
}

inline std::vector<TickRow> parse_metrics_csv(const std::vector<std::string>& lines) {
    std::vector<TickRow> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = split(lines[i], ',');
        if (f.size() != 9) throw std::runtime_error("metrics csv: bad line '" + lines[i] + "'");
        TickRow r;
        r.time_s = parse_double(f[0]);
        r.client = static_cast<int>(parse_long(f[1]));
        r.buffer_s = parse_double(f[2]);
        r.qoe = parse_double(f[3]);
        r.stalled = static_cast<int>(parse_long(f[4]));
        r.stall_accum_s = parse_double(f[5]);
        r.goodput_mbps = parse_double(f[6]);
        r.queue = parse_queue_kind(f[7]);
        r.bin = parse_channel(f[8]);
        rows.push_back(r);
    }
    return rows;
}

inline std::string assignments_csv(const std::vector<AuctionRow>& rows) {
    std::string out = "round,client_id,bin,queue,bid,price\n";
    for (const auto& r : rows) {
        out += std::to_string(r.round);
        out += ',';
        out += std::to_string(r.client_id);
        out += ',';
        out += channel_name(r.bin);
        out += ',';
        out += queue_kind_name(r.queue);
        out += ',';
        out += fmt_double(r.bid);
        out += ',';
        out += fmt_double(r.price);
        out += '\n';
    }
    return out;
}

inline std::vector<AuctionRow> parse_assignments_csv(const std::vector<std::string>& lines) {
    std::vector<AuctionRow> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = split(lines[i], ',');
        if (f.size() != 6) throw std::runtime_error("assignments csv: bad line '" + lines[i] + "'");
        AuctionRow r;
        r.round = static_cast<int>(parse_long(f[0]));
        r.client_id = static_cast<int>(parse_long(f[1]));
        r.bin = parse_channel(f[2]);
        r.queue = parse_queue_kind(f[3]);
        r.bid = parse_double(f[4]);
        r.price = parse_double(f[5]);
        rows.push_back(r);
    }
    return rows;
}

inline std::string run_file_stem(const std::string& policy, const std::string& scenario,
                                 std::uint64_t seed) {
    return policy + "_" + scenario + "_" + std::to_string(seed);
}

// Build the per-channel artifact tables a policy needs for this scenario.
inline std::map<Channel, PolicyArtifacts> scenario_artifacts(const ExperimentConfig& cfg,
                                                             const ScenarioConfig& sc,
                                                             const ArtifactStore& store) {
    std::map<Channel, PolicyArtifacts> arts;
    const BidSet bids = cfg.market.bid_set();
    auto fill = [&](int count, Channel ch) {
        if (count <= 0) return;
        const auto it = store.find({count, ch});
        if (it == store.end())
            throw std::runtime_error("missing trained artifacts for " +
                                     key_name({count, ch}) + "; run train first");
        PolicyArtifacts pa;
        pa.bids = bids;
        pa.bid_policy = it->second.bid_policy;
        pa.system = it->second.system;
        pa.index = it->second.index;
        arts[ch] = std::move(pa);
    };
    fill(sc.clients_good, Channel::good);
    fill(sc.clients_bad, Channel::bad);
    return arts;
}

// One evaluation run; writes the per-run CSVs when runs_dir is non-empty.
inline MetricsLog run_one(const ExperimentConfig& cfg, const ScenarioConfig& sc, PolicyKind policy,
                          std::uint64_t seed, const ArtifactStore& store,
                          const fs::path& runs_dir = {}) {
    const auto& disc = cfg.discretization;
    const std::string pname = policy_name(policy);
    Simulator sim = make_simulator(
        cfg, sc, Rng(derive_seed(seed, "sim/" + pname + "/" + sc.name)));
    Rng ctl_rng(derive_seed(seed, "ctl/" + pname + "/" + sc.name));
    Controller ctl(policy, cfg.control.admission_limit, scenario_artifacts(cfg, sc, store), disc,
                   cfg.market.belief_lambda);
    MetricsLog log;
    EpisodeResult ep = run_episode(sim, ctl, sc.duration_s, cfg.control.decision_period_s,
                                   cfg.playback.tick_s, disc, ctl_rng, true, false);
    log.rows = std::move(ep.rows);
    log.auction = std::move(ep.auction);
    log.summary = summarize_run(log.rows, log.auction);
    log.summary.policy = pname;
    log.summary.scenario = sc.name;
    log.summary.seed = seed;
    log.summary.coverage_misses = ctl.coverage_misses();
    if (!runs_dir.empty()) {
        const std::string stem = run_file_stem(pname, sc.name, seed);
        write_text_file(runs_dir / (stem + "_metrics.csv"), metrics_csv(log.rows));
        write_text_file(runs_dir / (stem + "_assignments.csv"), assignments_csv(log.auction));
    }
    return log;
}

// ---- report ----

inline std::string cdf_csv(const std::vector<std::pair<double, double>>& points) {
    std::string out = "value,fraction\n";
    for (const auto& [v, f] : points) {
        out += fmt_double(v);
        out += ',';
        out += fmt_double(f);
        out += '\n';
    }
    return out;
}

inline std::vector<std::uint64_t> seed_values(const ExperimentConfig& cfg, int seed_offset) {
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < cfg.seeds; ++i)
        seeds.push_back(cfg.base_seed + static_cast<std::uint64_t>(seed_offset) + i);
    return seeds;
}

// Aggregates the per-run CSVs under runs_dir into per-policy summaries, CDF
// tables, bid histograms, QoE time series, and a comparison table.
inline void emit_report(const ExperimentConfig& cfg, int seed_offset, const fs::path& out_dir) {
    const fs::path runs_dir = out_dir / "runs";
    const fs::path rep_dir = out_dir / "report";
    fs::create_directories(rep_dir);
    const auto seeds = seed_values(cfg, seed_offset);

    std::ostringstream comparison;
    comparison << "policy scenario mean_qoe ci95_lo ci95_hi qoe5_fraction mean_bid stall_events\n";

    std::map<std::pair<std::string, std::string>, std::vector<double>> qoe_by_ps;
    std::map<std::string, std::vector<double>> auction_bids_by_scenario;
    std::map<std::string, std::vector<double>> mean_bid_by_scenario;  // auction policy, per seed

    for (const auto& sc : cfg.scenarios) {
        for (const PolicyKind policy : cfg.policies) {
            const std::string pname = policy_name(policy);
            std::vector<double> mean_qoes, qoe5s, mean_bids;
            std::vector<double> pooled_qoe, pooled_buffer, pooled_stall;
            std::map<long, std::pair<double, long>> qoe_by_time;
            long stall_events = 0;
            std::string summary_csv =
                "seed,mean_qoe,qoe5_fraction,mean_bid,total_payment,stall_events,stall_seconds\n";
            for (const std::uint64_t seed : seeds) {
                const std::string stem = run_file_stem(pname, sc.name, seed);
                const auto rows = parse_metrics_csv(read_lines(runs_dir / (stem + "_metrics.csv")));
                const auto auction =
                    parse_assignments_csv(read_lines(runs_dir / (stem + "_assignments.csv")));
                RunSummary s = summarize_run(rows, auction);
                mean_qoes.push_back(s.mean_qoe);
                qoe5s.push_back(s.qoe5_fraction);
                mean_bids.push_back(s.mean_bid);
                stall_events += s.stall_events;
                summary_csv += std::to_string(seed) + ',' + fmt_double(s.mean_qoe) + ',' +
                               fmt_double(s.qoe5_fraction) + ',' + fmt_double(s.mean_bid) + ',' +
                               fmt_double(s.total_payment) + ',' + std::to_string(s.stall_events) +
                               ',' + fmt_double(s.stall_seconds) + '\n';
                for (const auto& r : rows) {
                    pooled_qoe.push_back(r.qoe);
                    pooled_buffer.push_back(r.buffer_s);
                    auto& acc = qoe_by_time[std::lround(r.time_s * 1000.0)];
                    acc.first += r.qoe;
                    acc.second += 1;
                }
                const auto stalls = stall_durations_from_rows(rows, cfg.playback.tick_s);
                pooled_stall.insert(pooled_stall.end(), stalls.begin(), stalls.end());
                if (policy == PolicyKind::auction_based) {
                    for (const auto& a : auction) auction_bids_by_scenario[sc.name].push_back(a.bid);
                }
            }
            const std::string ps = pname + "_" + sc.name;
            write_text_file(rep_dir / (ps + "_summary.csv"), summary_csv);
            write_text_file(rep_dir / (ps + "_cdf_qoe.csv"), cdf_csv(cdf_points(pooled_qoe)));
            write_text_file(rep_dir / (ps + "_cdf_buffer.csv"), cdf_csv(cdf_points(pooled_buffer)));
            if (!pooled_stall.empty())
                write_text_file(rep_dir / (ps + "_cdf_stall_duration.csv"),
                                cdf_csv(cdf_points(pooled_stall)));
            std::string ts = "time_s,mean_qoe\n";
            for (const auto& [tms, acc] : qoe_by_time)
                ts += fmt_double(tms / 1000.0) + ',' +
                      fmt_double(acc.first / static_cast<double>(acc.second)) + '\n';
            write_text_file(rep_dir / (ps + "_qoe_timeseries.csv"), ts);

            const MeanCi ci = mean_ci(mean_qoes);
            comparison << pname << " " << sc.name << " " << fmt_double(ci.mean) << " "
                       << fmt_double(ci.lo) << " " << fmt_double(ci.hi) << " "
                       << fmt_double(mean(qoe5s)) << " " << fmt_double(mean(mean_bids)) << " "
                       << stall_events << "\n";
            qoe_by_ps[{pname, sc.name}] = mean_qoes;
            if (policy == PolicyKind::auction_based) mean_bid_by_scenario[sc.name] = mean_bids;
        }
    }
    write_text_file(rep_dir / "comparison.txt", comparison.str());

    for (const auto& [scen, bids] : auction_bids_by_scenario) {
        std::map<double, long> hist;
        for (double b : bids) hist[b] += 1;
        std::string h = "bid,count,fraction\n";
        for (const auto& [b, c] : hist)
            h += fmt_double(b) + ',' + std::to_string(c) + ',' +
                 fmt_double(static_cast<double>(c) / static_cast<double>(bids.size())) + '\n';
        write_text_file(rep_dir / ("bid_histogram_" + scen + ".csv"), h);
    }

    // Mean-bid shift between scenarios that differ only in client count.
    if (!mean_bid_by_scenario.empty()) {
        std::ostringstream shift;
        shift << "scenario_a scenario_b mean_bid_a mean_bid_b welch_one_sided_p\n";
        for (auto a = mean_bid_by_scenario.begin(); a != mean_bid_by_scenario.end(); ++a)
            for (auto b = std::next(a); b != mean_bid_by_scenario.end(); ++b) {
                if (a->second.size() < 2 || b->second.size() < 2) continue;
                const bool a_higher = mean(a->second) > mean(b->second);
                const auto& hi = a_higher ? a->second : b->second;
                const auto& lo = a_higher ? b->second : a->second;
                shift << (a_higher ? a->first : b->first) << " "
                      << (a_higher ? b->first : a->first) << " " << fmt_double(mean(hi)) << " "
                      << fmt_double(mean(lo)) << " " << fmt_double(welch_one_sided_p(hi, lo))
                      << "\n";
            }
        write_text_file(rep_dir / "bid_shift.txt", shift.str());
    }
}

// Kendall tau between the top-k ranked labels of a base index map and their
// ranks under another configuration's map.
inline double index_consistency_tau(const IndexMap& base, const IndexMap& other, int top_k) {
    if (base.rank.size() != other.rank.size())
        throw std::invalid_argument("index_consistency_tau: size mismatch");
    const int n = static_cast<int>(base.rank.size());
    const int k = std::min(top_k, n);
    std::vector<double> x, y;
    for (int label = 0; label < n; ++label)
        if (base.rank[label] >= n - k) {
            x.push_back(base.rank[label]);
            y.push_back(other.rank[label]);
        }
    return kendall_tau(x, y);
}

inline void emit_index_consistency(const ArtifactStore& store, const fs::path& rep_dir) {
    std::ostringstream out;
    out << "base_key other_key top_k kendall_tau\n";
    for (auto a = store.begin(); a != store.end(); ++a)
        for (auto b = store.begin(); b != store.end(); ++b) {
            if (a == b || a->first.channel != b->first.channel) continue;
            if (a->first.num_clients <= b->first.num_clients) continue;
            out << key_name(a->first) << " " << key_name(b->first) << " 50 "
                << fmt_double(index_consistency_tau(a->second.index, b->second.index, 50)) << "\n";
        }
    write_text_file(rep_dir / "index_consistency.txt", out.str());
}

// ---- verbs ----

enum class Verb { train, run, report, all };

inline Verb parse_verb(const std::string& s) {
    if (s == "train") return Verb::train;
    if (s == "run") return Verb::run;
    if (s == "report") return Verb::report;
    if (s == "all") return Verb::all;
    throw std::invalid_argument("unknown verb '" + s + "'");
}

inline ArtifactStore train_all(const ExperimentConfig& cfg, const fs::path& out_dir,
                               bool force_retrain) {
    ArtifactStore store;
    const BidSet bids = cfg.market.bid_set();
    for (const ScenarioKey& key : training_keys(cfg)) {
        const fs::path dir = out_dir / "artifacts" / key_name(key);
        if (!force_retrain && artifacts_present(dir)) {
            store.emplace(key, load_artifacts(dir, bids));
            continue;
        }
        TrainOutput t = train_key(cfg, key);
        save_artifacts(dir, t, bids);
        store.emplace(key, std::move(t.art));
    }
    return store;
}

inline ArtifactStore load_all(const ExperimentConfig& cfg, const fs::path& out_dir) {
    ArtifactStore store;
    const BidSet bids = cfg.market.bid_set();
    for (const ScenarioKey& key : training_keys(cfg)) {
        const fs::path dir = out_dir / "artifacts" / key_name(key);
        if (!artifacts_present(dir))
            throw std::runtime_error("missing trained artifacts in " + dir.string() +
                                     "; run train first");
        store.emplace(key, load_artifacts(dir, bids));
    }
    return store;
}

inline void run_all(const ExperimentConfig& cfg, int seed_offset, const ArtifactStore& store,
                    const fs::path& out_dir) {
    const fs::path runs_dir = out_dir / "runs";
    fs::create_directories(runs_dir);
    for (const auto& sc : cfg.scenarios)
        for (const PolicyKind policy : cfg.policies)
            for (const std::uint64_t seed : seed_values(cfg, seed_offset))
                run_one(cfg, sc, policy, seed, store, runs_dir);
}

inline void write_run_info(const ExperimentConfig& cfg, int seed_offset, const fs::path& out_dir) {
    std::ostringstream info;
    info << "base_seed " << cfg.base_seed << "\n";
    info << "seed_offset " << seed_offset << "\n";
    info << "seeds";
    for (const std::uint64_t s : seed_values(cfg, seed_offset)) info << " " << s;
    info << "\n";
    info << "generator mt19937_64, streams derived per (seed, role, policy, scenario)\n";
    write_text_file(out_dir / "run_info.txt", info.str());
}

inline void run_experiment(const ExperimentConfig& cfg, Verb verb, int seed_offset) {
    const fs::path out_dir = cfg.out_dir;
    fs::create_directories(out_dir);
    write_text_file(out_dir / "config_used.json", serialize_config(cfg));
    write_run_info(cfg, seed_offset, out_dir);

    ArtifactStore store;
    if (verb == Verb::train) {
        train_all(cfg, out_dir, true);
        return;
    }
    if (verb == Verb::all)
        store = train_all(cfg, out_dir, false);
    else if (verb == Verb::run)
        store = load_all(cfg, out_dir);

    if (verb == Verb::run || verb == Verb::all) run_all(cfg, seed_offset, store, out_dir);

    if (verb == Verb::report || verb == Verb::all) {
        emit_report(cfg, seed_offset, out_dir);
        if (verb == Verb::report) store = load_all(cfg, out_dir);
        emit_index_consistency(store, out_dir / "report");
    }
}

}  // namespace qmarket
