#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qmarket/core_model.hpp"
#include "qmarket/kernel.hpp"
#include "qmarket/market.hpp"
#include "qmarket/net_sim.hpp"
#include "qmarket/planner.hpp"
#include "qmarket/rng.hpp"

namespace qmarket {

enum class PolicyKind {
    vanilla,
    round_robin,
    auction_based,
    system_wide,
    index_policy,
    greedy_buffer,  // exploration only: promotes the emptiest buffers
};

inline const char* policy_name(PolicyKind k) {
    switch (k) {
        case PolicyKind::vanilla: return "vanilla";
        case PolicyKind::round_robin: return "round_robin";
        case PolicyKind::auction_based: return "auction";
        case PolicyKind::system_wide: return "system_wide";
        case PolicyKind::index_policy: return "index";
        case PolicyKind::greedy_buffer: return "greedy_buffer";
    }
    return "?";
}

inline PolicyKind parse_policy_kind(const std::string& s) {
    if (s == "vanilla") return PolicyKind::vanilla;
    if (s == "round_robin") return PolicyKind::round_robin;
    if (s == "auction") return PolicyKind::auction_based;
    if (s == "system_wide") return PolicyKind::system_wide;
    if (s == "index") return PolicyKind::index_policy;
    if (s == "greedy_buffer") return PolicyKind::greedy_buffer;
    throw std::invalid_argument("unknown policy '" + s + "'");
}

// One assignment-log line: what each client bid and pays this round.
struct AuctionRow {
    int round = 0;
    int client_id = 0;
    Channel bin = Channel::good;
    QueueKind queue = QueueKind::low;
    double bid = 0.0;
    double price = 0.0;  // payment by this client this round
};

// Tables a policy may consult. Only the fields the active policy needs must be
// populated.
struct PolicyArtifacts {
    BidSet bids = BidSet::default_set();
    BidPolicy bid_policy;       // auction_based
    SystemPolicyTable system;   // system_wide
    IndexMap index;             // index_policy
};

// Produces one Assignment per decision period and tracks the mutable policy
// state (round-robin cursors, mean-field beliefs, tie rotation).
class Controller {
public:
    Controller(PolicyKind kind, int n_slots, std::map<Channel, PolicyArtifacts> arts,
               DiscretizationConfig disc, double belief_lambda = 0.1)
        : kind_(kind),
          n_slots_(n_slots),
          arts_(std::move(arts)),
          disc_(std::move(disc)),
          lambda_(belief_lambda) {
        if (n_slots_ < 1) throw std::invalid_argument("controller: admission limit must be >= 1");
        disc_.validate();
    }

    // Same tables for every bin.
    Controller(PolicyKind kind, int n_slots, PolicyArtifacts art, DiscretizationConfig disc,
               double belief_lambda = 0.1)
        : Controller(kind, n_slots,
                     std::map<Channel, PolicyArtifacts>{{Channel::good, art}, {Channel::bad, art}},
                     std::move(disc), belief_lambda) {}

    PolicyKind kind() const { return kind_; }
    bool vanilla() const { return kind_ == PolicyKind::vanilla; }
    long coverage_misses() const { return coverage_misses_; }

    const BidDistribution& belief(Channel bin) const {
        auto it = beliefs_.find(bin);
        if (it == beliefs_.end()) throw std::out_of_range("controller: no belief for bin");
        return it->second;
    }

    Assignment decide(const Simulator& sim, int round, Rng& rng,
                      std::vector<AuctionRow>* log = nullptr) {
        Assignment out;
        for (const auto& bin : sim.bins()) {
            const auto members = sim.members_of(bin.channel);
            if (members.empty()) continue;
            decide_bin(sim, bin.channel, members, round, rng, out, log);
        }
        return out;
    }

private:
    struct Member {
        int id;
        int label;
        double buffer;
    };

    void decide_bin(const Simulator& sim, Channel bin, const std::vector<int>& ids, int round,
                    Rng& rng, Assignment& out, std::vector<AuctionRow>* log) {
        std::vector<Member> members;
        members.reserve(ids.size());
        for (const auto& c : sim.clients())
            if (c.bin == bin)
                members.push_back({c.id, discretize(c.state, disc_).label, c.state.buffer_s});

        const int m = static_cast<int>(members.size());
        std::vector<bool> winner(m, false);
        std::vector<double> bid(m, 0.0);
        double price = 0.0;

        const auto art_it = arts_.find(bin);
        const PolicyArtifacts* art = art_it == arts_.end() ? nullptr : &art_it->second;
        const bool needs_tables = kind_ == PolicyKind::auction_based ||
                                  kind_ == PolicyKind::system_wide ||
                                  kind_ == PolicyKind::index_policy;
        if (needs_tables && !art) {
            coverage_misses_ += m;
            emit(members, winner, bid, price, round, bin, out, log);
            return;
        }

        switch (kind_) {
            case PolicyKind::vanilla:
                break;
            case PolicyKind::round_robin: {
                int& cur = rr_cursor_[bin];
                for (int i = 0; i < std::min(n_slots_, m); ++i) winner[(cur + i) % m] = true;
                cur = (cur + n_slots_) % m;
                break;
            }
            case PolicyKind::greedy_buffer: {
                std::vector<int> order(m);
                for (int i = 0; i < m; ++i) order[i] = i;
                std::sort(order.begin(), order.end(), [&](int a, int b) {
                    if (members[a].buffer != members[b].buffer)
                        return members[a].buffer < members[b].buffer;
                    return members[a].id < members[b].id;
                });
                for (int i = 0; i < std::min(n_slots_, m); ++i) winner[order[i]] = true;
                break;
            }
            case PolicyKind::auction_based: {
                std::vector<double> bids_in;
                std::vector<int> bidders;
                for (int i = 0; i < m; ++i) {
                    if (members[i].label < 0 ||
                        members[i].label >= static_cast<int>(art->bid_policy.bid_index.size())) {
                        coverage_misses_ += 1;
                        continue;
                    }
                    bid[i] = art->bids.values.at(art->bid_policy.bid_index[members[i].label]);
                    bids_in.push_back(bid[i]);
                    bidders.push_back(i);
                }
                const AuctionResult res = run_auction(bids_in, n_slots_, rng);
                price = res.price;
                for (int w : res.winners) winner[bidders[w]] = true;
                auto [bel, inserted] =
                    beliefs_.try_emplace(bin, BidDistribution::uniform(art->bids.values.size()));
                bel->second = update_belief(bel->second, art->bids, bids_in, lambda_);
                break;
            }
            case PolicyKind::system_wide: {
                if (art->system.pop.states.empty() ||
                    static_cast<int>(art->system.pop.states[0].size()) != m) {
                    coverage_misses_ += m;
                    break;
                }
                if (!centroids_) centroids_.emplace(disc_);
                JointLabel joint(m);
                for (int i = 0; i < m; ++i) joint[i] = members[i].label;
                const int p = project_popular(joint, art->system.pop, *centroids_);
                const std::uint32_t mask = art->system.winner_mask.at(p);
                for (int i = 0; i < m; ++i) winner[i] = (mask >> i) & 1u;
                break;
            }
            case PolicyKind::index_policy: {
                std::vector<int> order;
                for (int i = 0; i < m; ++i) {
                    if (members[i].label < 0 ||
                        members[i].label >= static_cast<int>(art->index.rank.size())) {
                        coverage_misses_ += 1;
                        continue;
                    }
                    order.push_back(i);
                }
                // Equal (rank, label) pairs rotate with the round so identical
                // clients share the high queue over time.
                std::sort(order.begin(), order.end(), [&](int a, int b) {
                    const int ra = art->index.rank[members[a].label];
                    const int rb = art->index.rank[members[b].label];
                    if (ra != rb) return ra > rb;
                    if (members[a].label != members[b].label)
                        return members[a].label < members[b].label;
                    return (a + round) % m < (b + round) % m;
                });
                for (int i = 0; i < std::min<int>(n_slots_, order.size()); ++i)
                    winner[order[i]] = true;
                break;
            }
        }

        emit(members, winner, bid, price, round, bin, out, log);
    }

    void emit(const std::vector<Member>& members, const std::vector<bool>& winner,
              const std::vector<double>& bid, double price, int round, Channel bin, Assignment& out,
              std::vector<AuctionRow>* log) const {
        for (std::size_t i = 0; i < members.size(); ++i) {
            const ClientAction act = winner[i] ? ClientAction::win : ClientAction::lose;
            out.push_back({members[i].id, bin, act});
            if (log) {
                AuctionRow r;
                r.round = round;
                r.client_id = members[i].id;
                r.bin = bin;
                r.queue = vanilla() ? QueueKind::shared
                                    : (winner[i] ? QueueKind::high : QueueKind::low);
                r.bid = bid[i];
                r.price = winner[i] ? price : 0.0;
                log->push_back(r);
            }
        }
    }

    PolicyKind kind_;
    int n_slots_;
    std::map<Channel, PolicyArtifacts> arts_;
    DiscretizationConfig disc_;
    double lambda_;
    std::map<Channel, int> rr_cursor_;
    std::map<Channel, BidDistribution> beliefs_;
    std::optional<CentroidTable> centroids_;
    long coverage_misses_ = 0;
};

struct EpisodeResult {
    std::vector<TickRow> rows;
    std::vector<AuctionRow> auction;
    std::vector<TransitionRecord> traces;
};

// Alternate decide / simulate-one-decision-period / collect for duration_s
// simulated seconds. Transition records label each client's period Win or Lose
// by its actual queue.
inline EpisodeResult run_episode(Simulator& sim, Controller& ctl, double duration_s,
                                 double decision_period_s, double tick_s,
                                 const DiscretizationConfig& disc, Rng& rng,
                                 bool collect_rows = true, bool collect_traces = false) {
    if (!(decision_period_s > 0) || !(tick_s > 0) || duration_s < 0)
        throw std::invalid_argument("run_episode: non-positive timing");
    const double ticks_f = decision_period_s / tick_s;
    const int ticks_per_dp = static_cast<int>(std::lround(ticks_f));
    if (ticks_per_dp < 1 || std::abs(ticks_f - ticks_per_dp) > 1e-9)
        throw std::invalid_argument("run_episode: decision period must be a multiple of the tick");
    const int rounds = static_cast<int>(std::lround(duration_s / decision_period_s));

    EpisodeResult out;
    std::vector<int> s_before(sim.num_clients());
    for (int round = 0; round < rounds; ++round) {
        for (const auto& c : sim.clients()) s_before[c.id] = discretize(c.state, disc).label;
        const Assignment a = ctl.decide(sim, round, rng, &out.auction);
        sim.apply_assignment(a, ctl.vanilla());
        for (int t = 0; t < ticks_per_dp; ++t) sim.tick(tick_s, collect_rows ? &out.rows : nullptr);
        if (collect_traces) {
            for (const auto& ca : a) {
                const auto& c = sim.clients()[ca.client_id];
                TransitionRecord rec;
                rec.t = round;
                rec.client_id = ca.client_id;
                rec.s = s_before[ca.client_id];
                rec.a = (c.queue == QueueKind::high) ? 1 : 0;
                rec.s_next = discretize(c.state, disc).label;
                out.traces.push_back(rec);
            }
        }
    }
    return out;
}

// Composite controller lookup: exact (clients, channel) match, else the
// nearest client count with the same channel, larger count on ties.
struct ScenarioKey {
    int num_clients = 0;
    Channel channel = Channel::good;

    bool operator<(const ScenarioKey& o) const {
        if (num_clients != o.num_clients) return num_clients < o.num_clients;
        return static_cast<int>(channel) < static_cast<int>(o.channel);
    }
    bool operator==(const ScenarioKey& o) const {
        return num_clients == o.num_clients && channel == o.channel;
    }
};

using PolicyLibrary = std::map<ScenarioKey, PolicyKind>;

struct CompositeChoice {
    PolicyKind policy;
    ScenarioKey used_key;
    bool exact = false;
};

inline CompositeChoice composite_select(const ScenarioKey& key, const PolicyLibrary& library) {
    if (library.empty()) throw std::invalid_argument("composite_select: empty policy library");
    auto it = library.find(key);
    if (it != library.end()) return {it->second, it->first, true};
    const ScenarioKey* best = nullptr;
    for (const auto& [k, v] : library) {
        if (k.channel != key.channel) continue;
        if (!best) {
            best = &k;
            continue;
        }
        const int db = std::abs(best->num_clients - key.num_clients);
        const int dk = std::abs(k.num_clients - key.num_clients);
        if (dk < db || (dk == db && k.num_clients > best->num_clients)) best = &k;
    }
    if (!best)
        throw std::invalid_argument("composite_select: no library entry for this channel");
    return {library.at(*best), *best, false};
}

}  // namespace qmarket
