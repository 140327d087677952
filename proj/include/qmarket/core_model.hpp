#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace qmarket {

enum class Channel { good = 0, bad = 1 };

inline const char* channel_name(Channel c) { return c == Channel::good ? "good" : "bad"; }

enum class ClientAction { lose = 0, win = 1 };

// Continuous per-client streaming state.
struct ClientState {
    double buffer_s = 0.0;  // seconds of buffered video, >= 0
    double qoe = 5.0;       // DQS score in [qoe_min, qoe_max]
    int stalls = 0;         // stall events so far in the session
};

// Axis binning for the discrete state space. A client state maps to the flat
// label  buffer_bin * (stall_bins * qoe_bins) + qoe_bin * stall_bins + stall_bin.
struct DiscretizationConfig {
    // Upper edges of the finite buffer bins; bin i covers [edges[i-1], edges[i]).
    // One extra overflow bin catches everything at or past the last edge.
    std::vector<double> buffer_edges = {10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
    int qoe_bins = 8;
    double qoe_min = 1.0;
    double qoe_max = 5.0;
    int stall_bins = 4;  // counts 0, 1, 2, >=3

    int buffer_bins() const { return static_cast<int>(buffer_edges.size()) + 1; }
    int num_labels() const { return buffer_bins() * qoe_bins * stall_bins; }

    double qoe_bin_width() const { return (qoe_max - qoe_min) / qoe_bins; }

    // Virtual top of the buffer axis: the overflow bin is given the width of
    // the last finite bin so every bin has a midpoint.
    double buffer_axis_top() const {
        const std::size_t n = buffer_edges.size();
        if (n == 0) throw std::invalid_argument("discretization: no buffer edges");
        const double last = buffer_edges[n - 1];
        const double prev = n >= 2 ? buffer_edges[n - 2] : 0.0;
        return last + (last - prev);
    }

    void validate() const {
        if (buffer_edges.empty()) throw std::invalid_argument("discretization: no buffer edges");
        double prev = 0.0;
        for (double e : buffer_edges) {
            if (!(e > prev)) throw std::invalid_argument("discretization: buffer edges not increasing");
            prev = e;
        }
        if (qoe_bins < 1) throw std::invalid_argument("discretization: qoe_bins < 1");
        if (stall_bins < 1) throw std::invalid_argument("discretization: stall_bins < 1");
        if (!(qoe_max > qoe_min)) throw std::invalid_argument("discretization: qoe range empty");
    }
};

struct DiscreteState {
    int buffer_bin = 0;
    int qoe_bin = 0;
    int stall_bin = 0;
    int label = 0;
};

inline int pack_label(int buffer_bin, int qoe_bin, int stall_bin, const DiscretizationConfig& cfg) {
    return buffer_bin * cfg.stall_bins * cfg.qoe_bins + qoe_bin * cfg.stall_bins + stall_bin;
}

inline DiscreteState discretize(const ClientState& s, const DiscretizationConfig& cfg) {
    DiscreteState d;
    // First edge strictly above the buffer level gives the bin index; running
    // past every edge lands in the overflow bin.
    int b = 0;
    while (b < static_cast<int>(cfg.buffer_edges.size()) && s.buffer_s >= cfg.buffer_edges[b]) ++b;
    d.buffer_bin = b;

    const double w = cfg.qoe_bin_width();
    double q = s.qoe;
    if (q < cfg.qoe_min) q = cfg.qoe_min;
    if (q > cfg.qoe_max) q = cfg.qoe_max;
    int qb = static_cast<int>((q - cfg.qoe_min) / w);
    if (qb > cfg.qoe_bins - 1) qb = cfg.qoe_bins - 1;  // qoe == qoe_max
    if (qb < 0) qb = 0;
    d.qoe_bin = qb;

    d.stall_bin = s.stalls >= cfg.stall_bins - 1 ? cfg.stall_bins - 1 : s.stalls;
    if (d.stall_bin < 0) d.stall_bin = 0;

    d.label = pack_label(d.buffer_bin, d.qoe_bin, d.stall_bin, cfg);
    return d;
}

inline DiscreteState decode(int label, const DiscretizationConfig& cfg) {
    if (label < 0 || label >= cfg.num_labels()) {
        throw std::out_of_range("decode: label " + std::to_string(label) + " outside [0, " +
                                std::to_string(cfg.num_labels()) + ")");
    }
    DiscreteState d;
    d.label = label;
    d.stall_bin = label % cfg.stall_bins;
    label /= cfg.stall_bins;
    d.qoe_bin = label % cfg.qoe_bins;
    d.buffer_bin = label / cfg.qoe_bins;
    return d;
}

// Native-unit bin midpoints.
inline double buffer_midpoint(int buffer_bin, const DiscretizationConfig& cfg) {
    const auto& e = cfg.buffer_edges;
    const double lo = buffer_bin == 0 ? 0.0 : e[buffer_bin - 1];
    const double hi = buffer_bin < static_cast<int>(e.size()) ? e[buffer_bin] : cfg.buffer_axis_top();
    return 0.5 * (lo + hi);
}

inline double qoe_midpoint(int qoe_bin, const DiscretizationConfig& cfg) {
    return cfg.qoe_min + (qoe_bin + 0.5) * cfg.qoe_bin_width();
}

inline double qoe_midpoint_of_label(int label, const DiscretizationConfig& cfg) {
    return qoe_midpoint(decode(label, cfg).qoe_bin, cfg);
}

// Unit-scaled representative point, used for L2 distances between discrete
// states. Each axis is scaled by its full range so no axis dominates.
inline std::array<double, 3> centroid(const DiscreteState& d, const DiscretizationConfig& cfg) {
    std::array<double, 3> c{};
    c[0] = buffer_midpoint(d.buffer_bin, cfg) / cfg.buffer_axis_top();
    c[1] = (qoe_midpoint(d.qoe_bin, cfg) - cfg.qoe_min) / (cfg.qoe_max - cfg.qoe_min);
    c[2] = cfg.stall_bins > 1 ? static_cast<double>(d.stall_bin) / (cfg.stall_bins - 1) : 0.0;
    return c;
}

inline std::array<double, 3> centroid_of_label(int label, const DiscretizationConfig& cfg) {
    return centroid(decode(label, cfg), cfg);
}

inline double centroid_distance2(int label_a, int label_b, const DiscretizationConfig& cfg) {
    const auto a = centroid_of_label(label_a, cfg);
    const auto b = centroid_of_label(label_b, cfg);
    double d2 = 0.0;
    for (int i = 0; i < 3; ++i) {
        const double d = a[i] - b[i];
        d2 += d * d;
    }
    return d2;
}

// One client's slot in a decision round.
struct ClientAssignment {
    int client_id = 0;
    Channel bin = Channel::good;
    ClientAction action = ClientAction::lose;
};

using Assignment = std::vector<ClientAssignment>;

// Joint discrete state of the clients in one bin, in member order.
using JointLabel = std::vector<int>;

}  // namespace qmarket
