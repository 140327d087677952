#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qmarket/controller.hpp"
#include "qmarket/core_model.hpp"
#include "qmarket/dqs.hpp"
#include "qmarket/market.hpp"
#include "qmarket/net_sim.hpp"
#include "qmarket/planner.hpp"

namespace qmarket {

using json = nlohmann::json;

struct MarketConfig {
    double bid_min = 0.0;
    double bid_max = 5.0;
    double bid_step = 0.25;
    double belief_lambda = 0.1;

    BidSet bid_set() const {
        BidSet s;
        s.values.clear();
        for (double b = bid_min; b <= bid_max + 1e-9; b += bid_step) s.values.push_back(b);
        s.validate();
        return s;
    }

    void validate() const {
        if (bid_min < 0) throw std::invalid_argument("market.bid_min: negative");
        if (bid_max <= bid_min) throw std::invalid_argument("market.bid_max: must exceed bid_min");
        if (!(bid_step > 0)) throw std::invalid_argument("market.bid_step: must be positive");
        if (belief_lambda <= 0 || belief_lambda > 1)
            throw std::invalid_argument("market.belief_lambda: outside (0,1]");
    }
};

struct PlannerConfig {
    double gamma = 0.9;
    double tol = 1e-6;
    int max_sweeps = 10000;
    int popular_states = 500;
    int system_samples = 1000;

    ViOptions vi() const { return ViOptions{gamma, tol, max_sweeps}; }

    void validate() const {
        vi().validate();
        if (popular_states < 1) throw std::invalid_argument("planner.popular_states: must be >= 1");
        if (system_samples < 0) throw std::invalid_argument("planner.system_samples: negative");
    }
};

struct ControlConfig {
    double decision_period_s = 10.0;
    int admission_limit = 2;

    void validate() const {
        if (!(decision_period_s > 0))
            throw std::invalid_argument("control.decision_period_s: must be positive");
        if (admission_limit < 1) throw std::invalid_argument("control.admission_limit: must be >= 1");
    }
};

// Good-bin queues are explicit; the bad bin derives from them through channel
// emulation unless overridden.
struct BinsConfig {
    QueueSpec good_high{14.0, 20.0, 0.0};
    QueueSpec good_low{10.0, 20.0, 0.0};
    std::optional<QueueSpec> bad_high;
    std::optional<QueueSpec> bad_low;

    BinSpec bin_for(Channel ch) const {
        BinSpec b;
        b.channel = ch;
        if (ch == Channel::good) {
            b.high = good_high;
            b.low = good_low;
        } else {
            b.high = bad_high ? *bad_high : emulate_channel(good_high, Channel::bad);
            b.low = bad_low ? *bad_low : emulate_channel(good_low, Channel::bad);
        }
        b.validate();
        return b;
    }

    void validate() const {
        bin_for(Channel::good);
        bin_for(Channel::bad);
    }
};

struct TrainingConfig {
    int trace_dps = 3600;        // total exploration decision periods, split over policies
    int equilibrium_rounds = 5;  // belief/VI alternations
    int equilibrium_dps = 360;   // simulated decision periods per alternation

    void validate() const {
        if (trace_dps < 3) throw std::invalid_argument("training.trace_dps: must be >= 3");
        if (equilibrium_rounds < 1)
            throw std::invalid_argument("training.equilibrium_rounds: must be >= 1");
        if (equilibrium_dps < 1) throw std::invalid_argument("training.equilibrium_dps: must be >= 1");
    }
};

struct ScenarioConfig {
    std::string name = "good6";
    int clients_good = 6;
    int clients_bad = 0;
    double duration_s = 1800.0;

    int total_clients() const { return clients_good + clients_bad; }

    void validate() const {
        if (name.empty()) throw std::invalid_argument("scenario.name: empty");
        for (char c : name)
            if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-')
                throw std::invalid_argument("scenario.name: '" + name +
                                            "' may use only letters, digits, '_', '-'");
        if (clients_good < 0 || clients_bad < 0)
            throw std::invalid_argument("scenario.clients: negative count");
        if (total_clients() < 1) throw std::invalid_argument("scenario.clients: none configured");
        if (!(duration_s > 0)) throw std::invalid_argument("scenario.duration_s: must be positive");
    }
};

struct ExperimentConfig {
    DiscretizationConfig discretization;
    DqsParams dqs;
    PlaybackParams playback;
    SessionPlan session{90.0, 0.2, 10.0, 1.0};
    MarketConfig market;
    PlannerConfig planner;
    ControlConfig control;
    BinsConfig bins;
    TrainingConfig training;
    std::vector<ScenarioConfig> scenarios{{"good6", 6, 0, 1800.0}, {"good3", 3, 0, 1800.0}};
    std::vector<PolicyKind> policies{PolicyKind::vanilla, PolicyKind::round_robin,
                                     PolicyKind::auction_based, PolicyKind::system_wide,
                                     PolicyKind::index_policy};
    int seeds = 20;
    std::uint64_t base_seed = 1;
    std::string out_dir = "out";

    void validate() const {
        try {
            discretization.validate();
        } catch (const std::exception& e) {
            throw std::invalid_argument(std::string("discretization: ") + e.what());
        }
        dqs.validate();
        playback.validate();
        market.validate();
        planner.validate();
        control.validate();
        bins.validate();
        training.validate();
        if (scenarios.empty()) throw std::invalid_argument("scenarios: none configured");
        for (const auto& s : scenarios) s.validate();
        for (std::size_t i = 0; i < scenarios.size(); ++i)
            for (std::size_t j = i + 1; j < scenarios.size(); ++j)
                if (scenarios[i].name == scenarios[j].name)
                    throw std::invalid_argument("scenarios: duplicate name '" + scenarios[i].name +
                                                "'");
        if (policies.empty()) throw std::invalid_argument("policies: none configured");
        if (seeds < 1) throw std::invalid_argument("seeds: must be >= 1");
        const double ticks = control.decision_period_s / playback.tick_s;
        if (std::abs(ticks - std::lround(ticks)) > 1e-9)
            throw std::invalid_argument(
                "control.decision_period_s: must be a multiple of playback.tick_s");
        if (session.video_length_s < 0) throw std::invalid_argument("session.video_length_s: negative");
        if (session.length_jitter < 0 || session.length_jitter >= 1)
            throw std::invalid_argument("session.length_jitter: outside [0,1)");
        if (session.initial_buffer_s < 0)
            throw std::invalid_argument("session.initial_buffer_s: negative");
        if (session.startup_stagger < 0 || session.startup_stagger > 1)
            throw std::invalid_argument("session.startup_stagger: outside [0,1]");
    }
};

namespace detail {

inline void get_if(const json& j, const char* key, double& out) {
    if (j.contains(key)) out = j.at(key).get<double>();
}
inline void get_if(const json& j, const char* key, int& out) {
    if (j.contains(key)) out = j.at(key).get<int>();
}
inline void get_if(const json& j, const char* key, std::uint64_t& out) {
    if (j.contains(key)) out = j.at(key).get<std::uint64_t>();
}
inline void get_if(const json& j, const char* key, std::string& out) {
    if (j.contains(key)) out = j.at(key).get<std::string>();
}

inline QueueSpec queue_from_json(const json& j, QueueSpec base) {
    get_if(j, "rate_mbps", base.rate_mbps);
    get_if(j, "rtt_ms", base.base_rtt_ms);
    get_if(j, "loss", base.loss);
    return base;
}

inline json queue_to_json(const QueueSpec& q) {
    return json{{"rate_mbps", q.rate_mbps}, {"rtt_ms", q.base_rtt_ms}, {"loss", q.loss}};
}

}  // namespace detail

inline json config_to_json(const ExperimentConfig& c) {
    json j;
    j["discretization"] = {{"buffer_edges", c.discretization.buffer_edges},
                           {"qoe_bins", c.discretization.qoe_bins},
                           {"qoe_min", c.discretization.qoe_min},
                           {"qoe_max", c.discretization.qoe_max},
                           {"stall_bins", c.discretization.stall_bins}};
    j["dqs"] = {{"first_stall_drop", c.dqs.first_stall_drop},
                {"subsequent_stall_drop", c.dqs.subsequent_stall_drop},
                {"drop_duration_s", c.dqs.drop_duration_s},
                {"recovery_rate_base", c.dqs.recovery_rate_base},
                {"recovery_decay", c.dqs.recovery_decay},
                {"stall_hold_penalty", c.dqs.stall_hold_penalty}};
    j["playback"] = {{"bitrate_mbps", c.playback.bitrate_mbps},
                     {"buffer_cap_s", c.playback.buffer_cap_s},
                     {"resume_threshold_s", c.playback.resume_threshold_s},
                     {"tick_s", c.playback.tick_s},
                     {"ramp_base_s", c.playback.ramp_base_s},
                     {"ramp_rtt_factor", c.playback.ramp_rtt_factor}};
    j["session"] = {{"video_length_s", c.session.video_length_s},
                    {"length_jitter", c.session.length_jitter},
                    {"initial_buffer_s", c.session.initial_buffer_s},
                    {"startup_stagger", c.session.startup_stagger}};
    j["market"] = {{"bid_min", c.market.bid_min},
                   {"bid_max", c.market.bid_max},
                   {"bid_step", c.market.bid_step},
                   {"belief_lambda", c.market.belief_lambda}};
    j["planner"] = {{"gamma", c.planner.gamma},
                    {"tol", c.planner.tol},
                    {"max_sweeps", c.planner.max_sweeps},
                    {"popular_states", c.planner.popular_states},
                    {"system_samples", c.planner.system_samples}};
    j["control"] = {{"decision_period_s", c.control.decision_period_s},
                    {"admission_limit", c.control.admission_limit}};
    json bins;
    bins["good"] = {{"high", detail::queue_to_json(c.bins.good_high)},
                    {"low", detail::queue_to_json(c.bins.good_low)}};
    if (c.bins.bad_high || c.bins.bad_low) {
        json bad;
        if (c.bins.bad_high) bad["high"] = detail::queue_to_json(*c.bins.bad_high);
        if (c.bins.bad_low) bad["low"] = detail::queue_to_json(*c.bins.bad_low);
        bins["bad"] = bad;
    }
    j["bins"] = bins;
    j["training"] = {{"trace_dps", c.training.trace_dps},
                     {"equilibrium_rounds", c.training.equilibrium_rounds},
                     {"equilibrium_dps", c.training.equilibrium_dps}};
    json scen = json::array();
    for (const auto& s : c.scenarios)
        scen.push_back({{"name", s.name},
                        {"clients_good", s.clients_good},
                        {"clients_bad", s.clients_bad},
                        {"duration_s", s.duration_s}});
    j["scenarios"] = scen;
    json pols = json::array();
    for (PolicyKind p : c.policies) pols.push_back(policy_name(p));
    j["policies"] = pols;
    j["seeds"] = c.seeds;
    j["base_seed"] = c.base_seed;
    j["out_dir"] = c.out_dir;
    return j;
}

// Fills an ExperimentConfig from JSON; absent keys keep their defaults.
inline ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    if (j.contains("discretization")) {
        const json& d = j.at("discretization");
        if (d.contains("buffer_edges"))
            c.discretization.buffer_edges = d.at("buffer_edges").get<std::vector<double>>();
        detail::get_if(d, "qoe_bins", c.discretization.qoe_bins);
        detail::get_if(d, "qoe_min", c.discretization.qoe_min);
        detail::get_if(d, "qoe_max", c.discretization.qoe_max);
        detail::get_if(d, "stall_bins", c.discretization.stall_bins);
    }
    if (j.contains("dqs")) {
        const json& d = j.at("dqs");
        detail::get_if(d, "first_stall_drop", c.dqs.first_stall_drop);
        detail::get_if(d, "subsequent_stall_drop", c.dqs.subsequent_stall_drop);
        detail::get_if(d, "drop_duration_s", c.dqs.drop_duration_s);
        detail::get_if(d, "recovery_rate_base", c.dqs.recovery_rate_base);
        detail::get_if(d, "recovery_decay", c.dqs.recovery_decay);
        detail::get_if(d, "stall_hold_penalty", c.dqs.stall_hold_penalty);
    }
    if (j.contains("playback")) {
        const json& d = j.at("playback");
        detail::get_if(d, "bitrate_mbps", c.playback.bitrate_mbps);
        detail::get_if(d, "buffer_cap_s", c.playback.buffer_cap_s);
        detail::get_if(d, "resume_threshold_s", c.playback.resume_threshold_s);
        detail::get_if(d, "tick_s", c.playback.tick_s);
        detail::get_if(d, "ramp_base_s", c.playback.ramp_base_s);
        detail::get_if(d, "ramp_rtt_factor", c.playback.ramp_rtt_factor);
    }
    if (j.contains("session")) {
        const json& d = j.at("session");
        detail::get_if(d, "video_length_s", c.session.video_length_s);
        detail::get_if(d, "length_jitter", c.session.length_jitter);
        detail::get_if(d, "initial_buffer_s", c.session.initial_buffer_s);
        detail::get_if(d, "startup_stagger", c.session.startup_stagger);
    }
    if (j.contains("market")) {
        const json& d = j.at("market");
        detail::get_if(d, "bid_min", c.market.bid_min);
        detail::get_if(d, "bid_max", c.market.bid_max);
        detail::get_if(d, "bid_step", c.market.bid_step);
        detail::get_if(d, "belief_lambda", c.market.belief_lambda);
    }
    if (j.contains("planner")) {
        const json& d = j.at("planner");
        detail::get_if(d, "gamma", c.planner.gamma);
        detail::get_if(d, "tol", c.planner.tol);
        detail::get_if(d, "max_sweeps", c.planner.max_sweeps);
        detail::get_if(d, "popular_states", c.planner.popular_states);
        detail::get_if(d, "system_samples", c.planner.system_samples);
    }
    if (j.contains("control")) {
        const json& d = j.at("control");
        detail::get_if(d, "decision_period_s", c.control.decision_period_s);
        detail::get_if(d, "admission_limit", c.control.admission_limit);
    }
    if (j.contains("bins")) {
        const json& d = j.at("bins");
        if (d.contains("good")) {
            const json& g = d.at("good");
            if (g.contains("high"))
                c.bins.good_high = detail::queue_from_json(g.at("high"), c.bins.good_high);
            if (g.contains("low"))
                c.bins.good_low = detail::queue_from_json(g.at("low"), c.bins.good_low);
        }
        if (d.contains("bad")) {
            const json& g = d.at("bad");
            if (g.contains("high"))
                c.bins.bad_high =
                    detail::queue_from_json(g.at("high"), emulate_channel(c.bins.good_high, Channel::bad));
            if (g.contains("low"))
                c.bins.bad_low =
                    detail::queue_from_json(g.at("low"), emulate_channel(c.bins.good_low, Channel::bad));
        }
    }
    if (j.contains("training")) {
        const json& d = j.at("training");
        detail::get_if(d, "trace_dps", c.training.trace_dps);
        detail::get_if(d, "equilibrium_rounds", c.training.equilibrium_rounds);
        detail::get_if(d, "equilibrium_dps", c.training.equilibrium_dps);
    }
    if (j.contains("scenarios")) {
        c.scenarios.clear();
        for (const json& s : j.at("scenarios")) {
            ScenarioConfig sc;
            detail::get_if(s, "name", sc.name);
            detail::get_if(s, "clients_good", sc.clients_good);
            detail::get_if(s, "clients_bad", sc.clients_bad);
            detail::get_if(s, "duration_s", sc.duration_s);
            c.scenarios.push_back(sc);
        }
    }
    if (j.contains("policies")) {
        c.policies.clear();
        for (const json& p : j.at("policies")) c.policies.push_back(parse_policy_kind(p.get<std::string>()));
    }
    detail::get_if(j, "seeds", c.seeds);
    detail::get_if(j, "base_seed", c.base_seed);
    detail::get_if(j, "out_dir", c.out_dir);
    c.validate();
    return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    return config_from_json(j);
}

inline std::string serialize_config(const ExperimentConfig& c) { return config_to_json(c).dump(2) + "\n"; }

}  // namespace qmarket
