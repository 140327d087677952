#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "qmarket/io.hpp"
#include "qmarket/rng.hpp"

namespace qmarket {

// Discrete menu of allowed bids, ascending.
struct BidSet {
    std::vector<double> values;

    static BidSet default_set() {
        BidSet s;
        for (int i = 0; i <= 20; ++i) s.values.push_back(0.25 * i);
        return s;
    }

    std::size_t size() const { return values.size(); }

    void validate() const {
        if (values.empty()) throw std::invalid_argument("bid set: empty");
        for (std::size_t i = 1; i < values.size(); ++i)
            if (!(values[i] > values[i - 1]))
                throw std::invalid_argument("bid set: values must be strictly increasing");
        if (values.front() < 0) throw std::invalid_argument("bid set: negative bid");
    }

    std::size_t index_of(double b) const {
        for (std::size_t i = 0; i < values.size(); ++i)
            if (std::abs(values[i] - b) <= 1e-9) return i;
        throw std::invalid_argument("bid set: value not in set");
    }
};

// Probability mass over the bid set, index-aligned with BidSet::values.
struct BidDistribution {
    std::vector<double> pmf;

    static BidDistribution uniform(std::size_t n) {
        BidDistribution d;
        d.pmf.assign(n, 1.0 / static_cast<double>(n));
        return d;
    }

    static BidDistribution point_mass(std::size_t n, std::size_t at) {
        BidDistribution d;
        d.pmf.assign(n, 0.0);
        d.pmf.at(at) = 1.0;
        return d;
    }

    void validate() const {
        double total = 0.0;
        for (double p : pmf) {
            if (p < -1e-12) throw std::invalid_argument("belief: negative mass");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("belief: mass does not sum to 1");
    }
};

struct AuctionResult {
    std::vector<std::size_t> winners;  // indices into the submitted bid vector
    double price = 0.0;                // charged to every winner
};

// Sealed-bid auction for N identical slots: the N highest bids win and each
// winner pays the (N+1)-th highest bid. Ties at the cutoff are broken uniformly
// at random. With N or fewer bidders everyone wins and the price is zero.
inline AuctionResult run_auction(const std::vector<double>& bids, int n_slots, Rng& rng) {
    AuctionResult res;
    if (n_slots < 1) throw std::invalid_argument("run_auction: n_slots < 1");
    if (bids.empty()) return res;
    const std::size_t m = bids.size();
    if (m <= static_cast<std::size_t>(n_slots)) {
        res.winners.resize(m);
        std::iota(res.winners.begin(), res.winners.end(), std::size_t{0});
        return res;
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    // Stable sort on bid after a uniform shuffle: tied bidders end up in
    // uniformly random relative order.
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return bids[a] > bids[b]; });
    res.winners.assign(order.begin(), order.begin() + n_slots);
    std::sort(res.winners.begin(), res.winners.end());
    res.price = bids[order[n_slots]];
    return res;
}

namespace detail {

inline double binom(int n, int k) {
    if (k < 0 || k > n) return 0.0;
    if (k > n - k) k = n - k;
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

inline double binomial_cdf(int k, int n, double q) {
    if (k < 0) return 0.0;
    if (k >= n) return 1.0;
    double acc = 0.0;
    for (int i = 0; i <= k; ++i)
        acc += binom(n, i) * std::pow(q, i) * std::pow(1.0 - q, n - i);
    return std::min(1.0, acc);
}

struct BidSplit {
    double above = 0.0;  // P(B' > b)
    double eq = 0.0;     // P(B' = b)
    double below = 0.0;  // P(B' < b)
};

inline BidSplit split_at(const BidSet& bids, const BidDistribution& rho, double b) {
    BidSplit s;
    for (std::size_t i = 0; i < bids.values.size(); ++i) {
        const double v = bids.values[i];
        const double p = rho.pmf[i];
        if (v > b + 1e-9)
            s.above += p;
        else if (v < b - 1e-9)
            s.below += p;
        else
            s.eq += p;
    }
    return s;
}

// E[j-th highest of n i.i.d. draws] for a discrete distribution given as
// ascending (value, pmf) pairs. Uses the CDF of the order statistic:
// P(Y_(j) <= v) = P(at most j-1 draws exceed v).
inline double order_stat_expectation_impl(const std::vector<double>& vals,
                                          const std::vector<double>& pmf, int n, int j) {
    double prev_cdf_os = 0.0;
    double cum = 0.0;
    double e = 0.0;
    for (std::size_t k = 0; k < vals.size(); ++k) {
        cum += pmf[k];
        const double f = std::min(1.0, cum);
        double g = 0.0;
        for (int i = 0; i < j; ++i)
            g += binom(n, i) * std::pow(1.0 - f, i) * std::pow(f, n - i);
        g = std::min(1.0, g);
        e += vals[k] * (g - prev_cdf_os);
        prev_cdf_os = g;
    }
    return e;
}

inline double order_stat_expectation(const std::vector<double>& vals,
                                     const std::vector<double>& pmf, int n, int j) {
    if (j < 1 || j > n) throw std::invalid_argument("order statistic: j outside [1, n]");
    return order_stat_expectation_impl(vals, pmf, n, j);
}

}  // namespace detail

// Probability that a bid of b lands in the top N among M participants when the
// other M-1 bids are i.i.d. draws from rho. A tied opponent counts as beating
// the bidder with probability 1/2, independently per opponent, so the count of
// beating opponents is Binomial(M-1, P(B'>b) + P(B'=b)/2).
inline double win_probability(double b, const BidSet& bids, const BidDistribution& rho, int m_clients,
                              int n_slots) {
    if (m_clients < 1 || n_slots < 1) throw std::invalid_argument("win_probability: bad sizes");
    if (rho.pmf.size() != bids.values.size())
        throw std::invalid_argument("win_probability: belief/bid set size mismatch");
    if (m_clients <= n_slots) return 1.0;
    const auto s = detail::split_at(bids, rho, b);
    const double q = s.above + 0.5 * s.eq;
    return detail::binomial_cdf(n_slots - 1, m_clients - 1, q);
}

// Expected price paid conditional on winning with bid b: the expectation of the
// N-th highest opponent bid given that at most N-1 opponents beat the bidder.
// Computed exactly by conditioning on (s, t) = (# opponents strictly above,
// # opponents tied): the tie coins decide the win event, the below-b opponents
// supply the order statistic when s + t < N.
inline double expected_payment(double b, const BidSet& bids, const BidDistribution& rho, int m_clients,
                               int n_slots) {
    if (m_clients < 1 || n_slots < 1) throw std::invalid_argument("expected_payment: bad sizes");
    if (rho.pmf.size() != bids.values.size())
        throw std::invalid_argument("expected_payment: belief/bid set size mismatch");
    if (m_clients <= n_slots) return 0.0;

    const int n_opp = m_clients - 1;
    const auto sp = detail::split_at(bids, rho, b);

    std::vector<double> below_vals;
    std::vector<double> below_pmf;
    if (sp.below > 0) {
        for (std::size_t i = 0; i < bids.values.size(); ++i) {
            if (bids.values[i] < b - 1e-9 && rho.pmf[i] > 0) {
                below_vals.push_back(bids.values[i]);
                below_pmf.push_back(rho.pmf[i] / sp.below);
            }
        }
    }

    double num = 0.0;
    double den = 0.0;
    for (int s = 0; s <= std::min(n_slots - 1, n_opp); ++s) {
        for (int t = 0; t <= n_opp - s; ++t) {
            const int r = n_opp - s - t;
            const double prob = detail::binom(n_opp, s) * detail::binom(n_opp - s, t) *
                                std::pow(sp.above, s) * std::pow(sp.eq, t) * std::pow(sp.below, r);
            if (prob <= 0) continue;
            double win_given = 0.0;
            const int allow = n_slots - 1 - s;
            for (int j = 0; j <= std::min(t, allow); ++j)
                win_given += detail::binom(t, j) * std::pow(0.5, t);
            if (win_given <= 0) continue;
            double pay;
            if (s + t >= n_slots) {
                pay = b;
            } else {
                const int j = n_slots - s - t;
                pay = detail::order_stat_expectation(below_vals, below_pmf, r, j);
            }
            num += prob * win_given * pay;
            den += prob * win_given;
        }
    }
    if (den <= 0) return 0.0;
    return num / den;
}

// Exponentially weighted belief update toward the empirical distribution of
// the observed bids. An empty observation list leaves the belief untouched.
inline BidDistribution update_belief(const BidDistribution& rho, const BidSet& bids,
                                     const std::vector<double>& observed, double lambda) {
    if (lambda < 0 || lambda > 1) throw std::invalid_argument("update_belief: lambda outside [0,1]");
    if (rho.pmf.size() != bids.values.size())
        throw std::invalid_argument("update_belief: belief/bid set size mismatch");
    if (observed.empty()) return rho;
    std::vector<double> emp(bids.values.size(), 0.0);
    for (double b : observed) emp[bids.index_of(b)] += 1.0;
    const double inv = 1.0 / static_cast<double>(observed.size());
    BidDistribution out = rho;
    for (std::size_t i = 0; i < out.pmf.size(); ++i)
        out.pmf[i] = (1.0 - lambda) * rho.pmf[i] + lambda * emp[i] * inv;
    return out;
}

inline std::string serialize_belief(const BidDistribution& rho, const BidSet& bids) {
    if (rho.pmf.size() != bids.values.size())
        throw std::invalid_argument("serialize_belief: belief/bid set size mismatch");
    std::string out = "# bid prob\n";
    for (std::size_t i = 0; i < bids.values.size(); ++i) {
        out += fmt_double(bids.values[i]);
        out += " ";
        out += fmt_double(rho.pmf[i]);
        out += "\n";
    }
    return out;
}

inline BidDistribution parse_belief(const std::vector<std::string>& lines, const BidSet& bids) {
    BidDistribution rho;
    rho.pmf.clear();
    for (const auto& line : lines) {
        if (line.empty() || line[0] == '#') continue;
        const auto parts = split(line, ' ');
        if (parts.size() != 2) throw std::runtime_error("belief: malformed line '" + line + "'");
        const std::size_t i = rho.pmf.size();
        if (i >= bids.values.size() ||
            std::abs(parse_double(parts[0]) - bids.values[i]) > 1e-9)
            throw std::runtime_error("belief: bid grid mismatch at line '" + line + "'");
        rho.pmf.push_back(parse_double(parts[1]));
    }
    rho.validate();
    return rho;
}

// Per-bid win probability and conditional payment under a fixed belief; the
// planner consumes these curves instead of touching the belief directly.
struct MarketCurves {
    std::vector<double> p_win;
    std::vector<double> pay;
};

inline MarketCurves build_market_curves(const BidSet& bids, const BidDistribution& rho, int m_clients,
                                        int n_slots) {
    MarketCurves c;
    c.p_win.reserve(bids.values.size());
    c.pay.reserve(bids.values.size());
    for (double b : bids.values) {
        c.p_win.push_back(win_probability(b, bids, rho, m_clients, n_slots));
        c.pay.push_back(expected_payment(b, bids, rho, m_clients, n_slots));
    }
    return c;
}

}  // namespace qmarket
