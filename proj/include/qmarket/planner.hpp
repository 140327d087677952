#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "qmarket/core_model.hpp"
#include "qmarket/io.hpp"
#include "qmarket/kernel.hpp"
#include "qmarket/market.hpp"
#include "qmarket/rng.hpp"

namespace qmarket {

struct ViOptions {
    double gamma = 0.9;
    double tol = 1e-6;
    int max_sweeps = 10000;

    void validate() const {
        if (gamma < 0 || gamma >= 1) throw std::invalid_argument("vi: gamma outside [0,1)");
        if (!(tol > 0)) throw std::invalid_argument("vi: tol must be positive");
        if (max_sweeps < 1) throw std::invalid_argument("vi: max_sweeps < 1");
    }
};

struct ValueFunction {
    std::vector<double> v;
    bool converged = false;
    int sweeps = 0;
    std::vector<double> sweep_deltas;  // sup-norm change per sweep
};

// Chosen bid per label, as an index into the bid set.
struct BidPolicy {
    std::vector<int> bid_index;
};

// Expected next-period score: the kernel row's expectation of the quality-bin
// midpoint of the successor label.
inline double expected_reward(const TransitionKernel& k, int s, int a,
                              const DiscretizationConfig& cfg) {
    double e = 0.0;
    for (const auto& [sn, p] : k.row(s, a)) e += p * qoe_midpoint_of_label(sn, cfg);
    return e;
}

struct ClientPlan {
    ValueFunction value;
    BidPolicy policy;
};

// Per-client MDP over labels with the bid as the action. Winning moves the
// client through the win kernel at the posted win probability and expected
// conditional payment; losing moves it through the lose kernel.
inline ClientPlan value_iteration_client(const TransitionKernel& kernel, const MarketCurves& curves,
                                         const BidSet& bids, const DiscretizationConfig& cfg,
                                         const ViOptions& opts) {
    opts.validate();
    const int n = kernel.num_labels();
    const std::size_t nb = bids.values.size();
    if (curves.p_win.size() != nb || curves.pay.size() != nb)
        throw std::invalid_argument("client vi: curve/bid set size mismatch");

    std::vector<double> r_win(n), r_lose(n);
    for (int s = 0; s < n; ++s) {
        r_win[s] = expected_reward(kernel, s, 1, cfg);
        r_lose[s] = expected_reward(kernel, s, 0, cfg);
    }

    ClientPlan plan;
    plan.value.v.assign(n, 0.0);
    plan.policy.bid_index.assign(n, 0);
    std::vector<double> next(n, 0.0);

    for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
        double delta = 0.0;
        for (int s = 0; s < n; ++s) {
            const double ew = kernel.expectation(s, 1, plan.value.v);
            const double el = kernel.expectation(s, 0, plan.value.v);
            const double win_part = r_win[s] + opts.gamma * ew;
            const double lose_part = r_lose[s] + opts.gamma * el;
            double best = -std::numeric_limits<double>::infinity();
            int best_b = 0;
            for (std::size_t b = 0; b < nb; ++b) {
                const double pw = curves.p_win[b];
                const double val = pw * (win_part - curves.pay[b]) + (1.0 - pw) * lose_part;
                if (val > best) {
                    best = val;
                    best_b = static_cast<int>(b);
                }
            }
            next[s] = best;
            plan.policy.bid_index[s] = best_b;
            delta = std::max(delta, std::abs(next[s] - plan.value.v[s]));
        }
        plan.value.v.swap(next);
        plan.value.sweep_deltas.push_back(delta);
        plan.value.sweeps = sweep + 1;
        if (delta <= opts.tol) {
            plan.value.converged = true;
            break;
        }
    }
    return plan;
}

// Ascending-value rank per label; equal values rank in label order. rank[l] is
// the position of label l, so the largest rank marks the most valuable state.
struct IndexMap {
    std::vector<int> rank;
};

inline IndexMap index_of(const ValueFunction& vf) {
    const int n = static_cast<int>(vf.v.size());
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (vf.v[a] != vf.v[b]) return vf.v[a] < vf.v[b];
        return a < b;
    });
    IndexMap m;
    m.rank.assign(n, 0);
    for (int pos = 0; pos < n; ++pos) m.rank[order[pos]] = pos;
    return m;
}

// The K most frequent joint labels; frequency ties keep the earlier first
// appearance. The result order is (count desc, first seen asc).
struct PopularStateSet {
    std::vector<JointLabel> states;

    int clients() const { return states.empty() ? 0 : static_cast<int>(states[0].size()); }

    void validate() const {
        if (states.empty()) throw std::invalid_argument("popular set: empty");
        for (const auto& s : states)
            if (s.size() != states[0].size())
                throw std::invalid_argument("popular set: ragged joint labels");
    }
};

inline PopularStateSet select_popular_states(const std::vector<JointLabel>& visits, int k) {
    if (visits.empty()) throw std::invalid_argument("select_popular_states: no visits");
    if (k < 1) throw std::invalid_argument("select_popular_states: k < 1");
    struct Info {
        long count = 0;
        std::size_t first = 0;
    };
    std::map<JointLabel, Info> freq;
    for (std::size_t i = 0; i < visits.size(); ++i) {
        auto [it, inserted] = freq.try_emplace(visits[i]);
        if (inserted) it->second.first = i;
        it->second.count += 1;
    }
    std::vector<std::pair<const JointLabel*, Info>> items;
    items.reserve(freq.size());
    for (const auto& [jl, info] : freq) items.emplace_back(&jl, info);
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second.count != b.second.count) return a.second.count > b.second.count;
        return a.second.first < b.second.first;
    });
    PopularStateSet out;
    const std::size_t take = std::min<std::size_t>(k, items.size());
    out.states.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.states.push_back(*items[i].first);
    return out;
}

// Pairwise squared distances between label centroids, so joint-state distances
// reduce to table sums per client slot.
class CentroidTable {
public:
    explicit CentroidTable(const DiscretizationConfig& cfg) : n_(cfg.num_labels()) {
        d2_.resize(static_cast<std::size_t>(n_) * n_);
        std::vector<std::array<double, 3>> cs(n_);
        for (int l = 0; l < n_; ++l) cs[l] = centroid_of_label(l, cfg);
        for (int a = 0; a < n_; ++a)
            for (int b = 0; b < n_; ++b) {
                double acc = 0.0;
                for (int i = 0; i < 3; ++i) {
                    const double d = cs[a][i] - cs[b][i];
                    acc += d * d;
                }
                d2_[static_cast<std::size_t>(a) * n_ + b] = acc;
            }
    }

    double distance2(int a, int b) const { return d2_[static_cast<std::size_t>(a) * n_ + b]; }
    int num_labels() const { return n_; }

private:
    int n_;
    std::vector<double> d2_;
};

// Nearest popular state by L2 over concatenated per-client centroids; exact
// ties resolve to the lowest popular index.
inline int project_popular(const JointLabel& joint, const PopularStateSet& pop,
                           const CentroidTable& table) {
    pop.validate();
    if (joint.size() != pop.states[0].size())
        throw std::invalid_argument("project_popular: client count mismatch");
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < pop.states.size(); ++j) {
        double d = 0.0;
        const auto& cand = pop.states[j];
        for (std::size_t c = 0; c < joint.size(); ++c) {
            d += table.distance2(joint[c], cand[c]);
            if (d >= best_d) break;
        }
        if (d < best_d - 1e-15) {
            best_d = d;
            best = static_cast<int>(j);
        }
    }
    return best;
}

namespace detail {

struct JointHash {
    std::size_t operator()(const JointLabel& v) const {
        std::uint64_t h = 1469598103934665603ULL;
        for (int x : v) {
            h ^= static_cast<std::uint64_t>(x) + 0x9e3779b97f4a7c15ULL;
            h *= 1099511628211ULL;
        }
        return static_cast<std::size_t>(h);
    }
};

}  // namespace detail

// Joint MDP over the popular states. Actions are winner subsets of the client
// slots (at most n_slots bits set), enumerated in increasing mask order.
struct SystemMdp {
    PopularStateSet pop;
    std::vector<std::uint32_t> actions;                          // winner bitmasks
    std::vector<std::vector<std::vector<std::pair<int, double>>>> rows;  // [state][action] -> pop dist
    std::vector<std::vector<double>> rewards;                    // [state][action]
};

inline std::vector<std::uint32_t> enumerate_winner_masks(int clients, int n_slots) {
    if (clients < 1 || clients > 20) throw std::invalid_argument("winner masks: bad client count");
    std::vector<std::uint32_t> masks;
    for (std::uint32_t m = 0; m < (1u << clients); ++m)
        if (__builtin_popcount(m) <= n_slots) masks.push_back(m);
    return masks;
}

// Build the projected system MDP. samples_per_row > 0 draws that many product
// transitions per (state, action) and projects each sample; samples_per_row == 0
// expands the product kernel exactly (micro scale only) and projects the exact
// support.
inline SystemMdp build_system_mdp(const TransitionKernel& kernel, const PopularStateSet& pop,
                                  int n_slots, const DiscretizationConfig& cfg, int samples_per_row,
                                  Rng& rng) {
    pop.validate();
    const int nc = pop.clients();
    SystemMdp mdp;
    mdp.pop = pop;
    mdp.actions = enumerate_winner_masks(nc, n_slots);
    const std::size_t ns = pop.states.size();
    const std::size_t na = mdp.actions.size();
    mdp.rows.assign(ns, std::vector<std::vector<std::pair<int, double>>>(na));
    mdp.rewards.assign(ns, std::vector<double>(na, 0.0));

    CentroidTable table(cfg);
    std::unordered_map<JointLabel, int, detail::JointHash> proj_memo;
    auto project = [&](const JointLabel& j) {
        auto it = proj_memo.find(j);
        if (it != proj_memo.end()) return it->second;
        const int p = project_popular(j, pop, table);
        proj_memo.emplace(j, p);
        return p;
    };

    for (std::size_t si = 0; si < ns; ++si) {
        const JointLabel& s = pop.states[si];
        for (std::size_t ai = 0; ai < na; ++ai) {
            const std::uint32_t mask = mdp.actions[ai];
            double rew = 0.0;
            for (int c = 0; c < nc; ++c)
                rew += expected_reward(kernel, s[c], (mask >> c) & 1u, cfg);
            mdp.rewards[si][ai] = rew;

            std::map<int, double> dist;
            if (samples_per_row > 0) {
                std::vector<std::vector<int>> labels(nc);
                std::vector<std::vector<double>> cums(nc);
                for (int c = 0; c < nc; ++c) {
                    const auto& row = kernel.row(s[c], (mask >> c) & 1u);
                    double acc = 0.0;
                    labels[c].reserve(row.size());
                    cums[c].reserve(row.size());
                    for (const auto& [sn, p] : row) {
                        acc += p;
                        labels[c].push_back(sn);
                        cums[c].push_back(acc);
                    }
                }
                JointLabel nxt(nc);
                const double w = 1.0 / samples_per_row;
                for (int m = 0; m < samples_per_row; ++m) {
                    for (int c = 0; c < nc; ++c) {
                        const double u = rng.uniform01();
                        auto it = std::upper_bound(cums[c].begin(), cums[c].end(), u);
                        const std::size_t idx =
                            std::min<std::size_t>(it - cums[c].begin(), cums[c].size() - 1);
                        nxt[c] = labels[c][idx];
                    }
                    dist[project(nxt)] += w;
                }
            } else {
                // Exact product expansion with projection of every support point.
                std::vector<std::pair<JointLabel, double>> frontier{{JointLabel{}, 1.0}};
                for (int c = 0; c < nc; ++c) {
                    const auto& row = kernel.row(s[c], (mask >> c) & 1u);
                    std::vector<std::pair<JointLabel, double>> next;
                    next.reserve(frontier.size() * row.size());
                    if (frontier.size() * row.size() > 2000000)
                        throw std::runtime_error(
                            "build_system_mdp: exact expansion too large; use sampling");
                    for (const auto& [prefix, pp] : frontier)
                        for (const auto& [sn, p] : row) {
                            JointLabel ext = prefix;
                            ext.push_back(sn);
                            next.emplace_back(std::move(ext), pp * p);
                        }
                    frontier.swap(next);
                }
                for (const auto& [joint, p] : frontier) dist[project(joint)] += p;
            }
            auto& row = mdp.rows[si][ai];
            row.assign(dist.begin(), dist.end());
        }
    }
    return mdp;
}

struct SystemPlan {
    ValueFunction value;
    std::vector<int> best_action;  // per popular state, index into mdp.actions
};

inline SystemPlan value_iteration_system(const SystemMdp& mdp, const ViOptions& opts) {
    opts.validate();
    const std::size_t ns = mdp.pop.states.size();
    const std::size_t na = mdp.actions.size();
    SystemPlan plan;
    plan.value.v.assign(ns, 0.0);
    plan.best_action.assign(ns, 0);
    std::vector<double> next(ns, 0.0);
    for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
        double delta = 0.0;
        for (std::size_t si = 0; si < ns; ++si) {
            double best = -std::numeric_limits<double>::infinity();
            int best_a = 0;
            for (std::size_t ai = 0; ai < na; ++ai) {
                double ev = 0.0;
                for (const auto& [pn, p] : mdp.rows[si][ai]) ev += p * plan.value.v[pn];
                const double val = mdp.rewards[si][ai] + opts.gamma * ev;
                if (val > best) {
                    best = val;
                    best_a = static_cast<int>(ai);
                }
            }
            next[si] = best;
            plan.best_action[si] = best_a;
            delta = std::max(delta, std::abs(next[si] - plan.value.v[si]));
        }
        plan.value.v.swap(next);
        plan.value.sweep_deltas.push_back(delta);
        plan.value.sweeps = sweep + 1;
        if (delta <= opts.tol) {
            plan.value.converged = true;
            break;
        }
    }
    return plan;
}

// ---- artifact serialization (text tables) ----

inline std::string serialize_value_table(const ValueFunction& vf) {
    std::ostringstream out;
    out << "# label value\n";
    for (std::size_t l = 0; l < vf.v.size(); ++l) out << l << " " << fmt_double(vf.v[l]) << "\n";
    return out.str();
}

inline std::vector<double> parse_value_table(const std::vector<std::string>& lines) {
    std::vector<double> v;
    for (const auto& line : lines) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        long l;
        std::string x;
        if (!(ss >> l >> x)) throw std::runtime_error("value table: malformed line '" + line + "'");
        if (static_cast<std::size_t>(l) != v.size())
            throw std::runtime_error("value table: labels out of order");
        v.push_back(parse_double(x));
    }
    return v;
}

inline std::string serialize_bid_policy(const BidPolicy& bp, const BidSet& bids) {
    std::ostringstream out;
    out << "# label bid_index bid\n";
    for (std::size_t l = 0; l < bp.bid_index.size(); ++l)
        out << l << " " << bp.bid_index[l] << " " << fmt_double(bids.values.at(bp.bid_index[l]))
            << "\n";
    return out.str();
}

inline BidPolicy parse_bid_policy(const std::vector<std::string>& lines) {
    BidPolicy bp;
    for (const auto& line : lines) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        long l, bi;
        std::string bid;
        if (!(ss >> l >> bi >> bid))
            throw std::runtime_error("bid policy: malformed line '" + line + "'");
        if (static_cast<std::size_t>(l) != bp.bid_index.size())
            throw std::runtime_error("bid policy: labels out of order");
        bp.bid_index.push_back(static_cast<int>(bi));
    }
    return bp;
}

inline std::string serialize_index_map(const IndexMap& m) {
    std::ostringstream out;
    out << "# label rank\n";
    for (std::size_t l = 0; l < m.rank.size(); ++l) out << l << " " << m.rank[l] << "\n";
    return out.str();
}

inline IndexMap parse_index_map(const std::vector<std::string>& lines) {
    IndexMap m;
    for (const auto& line : lines) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        long l, r;
        if (!(ss >> l >> r)) throw std::runtime_error("index map: malformed line '" + line + "'");
        if (static_cast<std::size_t>(l) != m.rank.size())
            throw std::runtime_error("index map: labels out of order");
        m.rank.push_back(static_cast<int>(r));
    }
    return m;
}

// System policy: popular states with their chosen winner masks.
struct SystemPolicyTable {
    PopularStateSet pop;
    std::vector<std::uint32_t> winner_mask;  // per popular state
};

inline std::string serialize_system_policy(const SystemPolicyTable& t) {
    std::ostringstream out;
    out << "# state <labels...> mask\n";
    out << "clients " << (t.pop.states.empty() ? 0 : t.pop.states[0].size()) << "\n";
    out << "states " << t.pop.states.size() << "\n";
    for (std::size_t i = 0; i < t.pop.states.size(); ++i) {
        out << "state";
        for (int l : t.pop.states[i]) out << " " << l;
        out << " mask " << t.winner_mask[i] << "\n";
    }
    return out.str();
}

inline SystemPolicyTable parse_system_policy(const std::vector<std::string>& lines) {
    SystemPolicyTable t;
    std::size_t clients = 0;
    for (const auto& line : lines) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string head;
        ss >> head;
        if (head == "clients") {
            ss >> clients;
        } else if (head == "states") {
            continue;
        } else if (head == "state") {
            JointLabel jl;
            std::string tok;
            std::uint32_t mask = 0;
            while (ss >> tok) {
                if (tok == "mask") {
                    ss >> mask;
                    break;
                }
                jl.push_back(static_cast<int>(parse_long(tok)));
            }
            if (jl.size() != clients)
                throw std::runtime_error("system policy: wrong label count in '" + line + "'");
            t.pop.states.push_back(std::move(jl));
            t.winner_mask.push_back(mask);
        } else {
            throw std::runtime_error("system policy: unknown line '" + line + "'");
        }
    }
    if (t.pop.states.empty()) throw std::runtime_error("system policy: no states");
    return t;
}

}  // namespace qmarket
