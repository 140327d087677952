#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qmarket/core_model.hpp"
#include "qmarket/dqs.hpp"
#include "qmarket/rng.hpp"

namespace qmarket {

struct QueueSpec {
    double rate_mbps = 0.0;
    double base_rtt_ms = 20.0;
    double loss = 0.0;

    void validate() const {
        if (!(rate_mbps > 0)) throw std::invalid_argument("queue: rate must be positive");
        if (base_rtt_ms < 0) throw std::invalid_argument("queue: negative rtt");
        if (loss < 0 || loss >= 1) throw std::invalid_argument("queue: loss outside [0,1)");
    }
};

// A priority pair serving one channel class.
struct BinSpec {
    Channel channel = Channel::good;
    QueueSpec high;
    QueueSpec low;

    void validate() const {
        high.validate();
        low.validate();
        if (high.rate_mbps < low.rate_mbps)
            throw std::invalid_argument("bin: high-priority queue must not be slower than low");
    }
};

// Bad-channel service is the good-channel queue derated: half the rate, triple
// the RTT, two extra points of loss.
inline QueueSpec emulate_channel(const QueueSpec& q, Channel ch) {
    if (ch == Channel::good) return q;
    QueueSpec out = q;
    out.rate_mbps = q.rate_mbps * 0.5;
    out.base_rtt_ms = q.base_rtt_ms * 3.0;
    out.loss = std::min(0.999, q.loss + 0.02);
    return out;
}

// Equal split of the post-loss queue capacity among its members. An empty
// queue's capacity is wasted, not redistributed.
inline double allocate_goodput(const QueueSpec& q, int members) {
    if (members < 0) throw std::invalid_argument("allocate_goodput: negative membership");
    if (members == 0) return 0.0;
    return q.rate_mbps * (1.0 - q.loss) / members;
}

struct PlaybackParams {
    double bitrate_mbps = 5.0;
    double buffer_cap_s = 120.0;
    double resume_threshold_s = 2.0;
    double tick_s = 1.0;
    double ramp_base_s = 1.0;      // rate convergence time after reassignment
    double ramp_rtt_factor = 4.0;  // extra convergence seconds per second of RTT

    void validate() const {
        if (!(bitrate_mbps > 0)) throw std::invalid_argument("playback: bitrate must be positive");
        if (!(buffer_cap_s > 0)) throw std::invalid_argument("playback: buffer cap must be positive");
        if (resume_threshold_s < 0) throw std::invalid_argument("playback: negative resume threshold");
        if (!(tick_s > 0)) throw std::invalid_argument("playback: tick must be positive");
        if (ramp_base_s < 0 || ramp_rtt_factor < 0) throw std::invalid_argument("playback: negative ramp");
    }
};

// Mean of min(t/ramp, 1) over [elapsed, elapsed+dt): the fraction of the way a
// linearly converging flow has moved toward its target, averaged over a tick.
inline double ramp_mean_fraction(double elapsed, double dt, double ramp) {
    if (!(dt > 0)) throw std::invalid_argument("ramp_mean_fraction: dt must be positive");
    if (ramp <= 0 || elapsed >= ramp) return 1.0;
    const double t1 = elapsed + dt;
    if (t1 <= ramp) return 0.5 * (elapsed + t1) / ramp;
    const double linear_part = (ramp - elapsed) * (0.5 * (elapsed + ramp) / ramp);
    const double flat_part = t1 - ramp;
    return (linear_part + flat_part) / dt;
}

enum class QueueKind { high = 0, low = 1, shared = 2 };

inline const char* queue_kind_name(QueueKind k) {
    switch (k) {
        case QueueKind::high: return "high";
        case QueueKind::low: return "low";
        default: return "shared";
    }
}

// One streaming session endpoint.
struct VideoClient {
    int id = 0;
    ClientState state;
    DqsState dqs;
    Channel bin = Channel::good;
    QueueKind queue = QueueKind::low;

    bool playing = false;
    bool in_stall = false;          // between a stall and the next resume
    double play_position_s = 0.0;   // content seconds played this video
    double video_length_s = 0.0;    // 0 = endless video
    double stall_accum_s = 0.0;     // total stalled seconds this run
    double current_episode_s = 0.0;

    // goodput convergence state
    double ramp_origin_mbps = 0.0;
    double ramp_elapsed_s = std::numeric_limits<double>::infinity();
    double ramp_total_s = 0.0;
    double last_goodput_mbps = 0.0;
};

// Advance one client's playback by dt given its allocated goodput. Returns the
// playback event for the tick, or nothing while a fresh session is still
// prebuffering (initial buffering is not a stall and leaves the score alone).
inline std::optional<PlaybackEvent> step_playback(VideoClient& c, double goodput_mbps, double dt,
                                                  const PlaybackParams& pp, const DqsParams& dp) {
    if (!(dt > 0)) throw std::invalid_argument("step_playback: dt must be positive");
    c.state.buffer_s =
        std::min(c.state.buffer_s + dt * goodput_mbps / pp.bitrate_mbps, pp.buffer_cap_s);

    std::optional<PlaybackEvent> ev;
    if (c.playing) {
        const double drained = std::min(c.state.buffer_s, dt);
        c.state.buffer_s -= drained;
        c.play_position_s += drained;
        if (c.state.buffer_s <= 0.0) {
            c.state.buffer_s = 0.0;
            c.playing = false;
            c.in_stall = true;
            c.state.stalls += 1;
            ev = PlaybackEvent::stall_begin;
        } else {
            ev = PlaybackEvent::playing;
        }
    } else if (c.state.buffer_s >= pp.resume_threshold_s) {
        c.playing = true;
        c.in_stall = false;
        ev = PlaybackEvent::playing;
    } else if (c.in_stall) {
        ev = PlaybackEvent::stalling;
    }

    if (ev == PlaybackEvent::stall_begin || ev == PlaybackEvent::stalling) {
        c.stall_accum_s += dt;
        c.current_episode_s += dt;
    }
    if (ev) {
        c.dqs = dqs_step(c.dqs, *ev, dt, dp);
        c.state.qoe = qoe_of(c.dqs);
        c.state.stalls = c.dqs.stalls_seen;
    }
    return ev;
}

// Per-second metrics row.
struct TickRow {
    double time_s = 0.0;
    int client = 0;
    double buffer_s = 0.0;
    double qoe = 5.0;
    int stalled = 0;
    double stall_accum_s = 0.0;
    double goodput_mbps = 0.0;
    QueueKind queue = QueueKind::low;
    Channel bin = Channel::good;
};

// Session churn: finite videos with per-video length jitter. A base length of
// zero keeps sessions endless.
struct SessionPlan {
    double video_length_s = 0.0;
    double length_jitter = 0.0;  // lengths drawn uniformly in base*(1 +- jitter)
    double initial_buffer_s = 0.0;
    double startup_stagger = 1.0;  // first video lengths scaled by (i+1)/n * this
};

// Fluid-flow model of an access point serving video clients through per-bin
// priority queues. Queue membership is set from outside between ticks; the
// simulator handles downloads, playback, stalls, session churn, and rate
// convergence after reassignment.
class Simulator {
public:
    Simulator(std::vector<BinSpec> bins, int num_clients, const std::vector<Channel>& client_bins,
              const PlaybackParams& pp, const DqsParams& dp, const SessionPlan& plan, Rng rng)
        : bins_(std::move(bins)), pp_(pp), dp_(dp), plan_(plan), rng_(std::move(rng)) {
        pp_.validate();
        dp_.validate();
        if (num_clients <= 0) throw std::invalid_argument("simulator: need at least one client");
        if (client_bins.size() != static_cast<std::size_t>(num_clients))
            throw std::invalid_argument("simulator: client/bin list size mismatch");
        for (const auto& b : bins_) b.validate();
        clients_.resize(num_clients);
        for (int i = 0; i < num_clients; ++i) {
            auto& c = clients_[i];
            c.id = i;
            c.bin = client_bins[i];
            c.queue = QueueKind::low;
            c.dqs = fresh_session(dp_);
            c.state.qoe = qoe_of(c.dqs);
            c.state.buffer_s = plan_.initial_buffer_s;
            c.playing = c.state.buffer_s >= pp_.resume_threshold_s;
            if (plan_.video_length_s > 0) {
                const double frac = plan_.startup_stagger * (i + 1.0) / num_clients;
                c.video_length_s = std::max(pp_.tick_s, plan_.video_length_s * frac);
            }
        }
    }

    int num_clients() const { return static_cast<int>(clients_.size()); }
    const std::vector<VideoClient>& clients() const { return clients_; }
    const std::vector<BinSpec>& bins() const { return bins_; }
    double now() const { return now_; }
    const std::vector<double>& stall_episodes() const { return episodes_; }

    // Queue membership for the coming decision period. Promotions restart the
    // rate ramp; vanilla mode collapses each bin into one shared queue.
    void apply_assignment(const Assignment& a, bool vanilla_mode) {
        vanilla_ = vanilla_mode;
        for (const auto& ca : a) {
            auto& c = client_at(ca.client_id);
            if (c.bin != ca.bin) {
                c.bin = ca.bin;
                begin_ramp(c);
            }
            const QueueKind target = vanilla_mode ? QueueKind::shared
                                  : ca.action == ClientAction::win ? QueueKind::high
                                                                   : QueueKind::low;
            if (c.queue != target) {
                c.queue = target;
                begin_ramp(c);
            }
        }
    }

    void move_client(int id, Channel bin) {
        auto& c = client_at(id);
        if (c.bin != bin) {
            c.bin = bin;
            begin_ramp(c);
        }
    }

    // One fluid step of dt seconds. Appends one row per client when out != nullptr.
    void tick(double dt, std::vector<TickRow>* out = nullptr) {
        for (const auto& bin : bins_) {
            if (vanilla_) {
                QueueSpec merged = bin.low;
                merged.rate_mbps = bin.high.rate_mbps + bin.low.rate_mbps;
                step_queue(bin.channel, QueueKind::shared, merged, dt);
            } else {
                step_queue(bin.channel, QueueKind::high, bin.high, dt);
                step_queue(bin.channel, QueueKind::low, bin.low, dt);
            }
        }
        now_ += dt;
        for (auto& c : clients_) {
            maybe_roll_session(c);
            if (out) {
                TickRow r;
                r.time_s = now_;
                r.client = c.id;
                r.buffer_s = c.state.buffer_s;
                r.qoe = c.state.qoe;
                r.stalled = (c.in_stall && !c.playing) ? 1 : 0;
                r.stall_accum_s = c.stall_accum_s;
                r.goodput_mbps = c.last_goodput_mbps;
                r.queue = c.queue;
                r.bin = c.bin;
                out->push_back(r);
            }
        }
    }

    JointLabel joint_label(Channel bin, const DiscretizationConfig& cfg) const {
        JointLabel l;
        for (const auto& c : clients_)
            if (c.bin == bin) l.push_back(discretize(c.state, cfg).label);
        return l;
    }

    std::vector<int> members_of(Channel bin) const {
        std::vector<int> ids;
        for (const auto& c : clients_)
            if (c.bin == bin) ids.push_back(c.id);
        return ids;
    }

private:
    VideoClient& client_at(int id) {
        for (auto& c : clients_)
            if (c.id == id) return c;
        throw std::out_of_range("simulator: unknown client " + std::to_string(id));
    }

    void begin_ramp(VideoClient& c) {
        c.ramp_origin_mbps = c.last_goodput_mbps;
        c.ramp_elapsed_s = 0.0;
    }

    void step_queue(Channel bin, QueueKind kind, const QueueSpec& q, double dt) {
        std::vector<VideoClient*> members;
        for (auto& c : clients_)
            if (c.bin == bin && c.queue == kind) members.push_back(&c);
        if (members.empty()) return;
        const double share = allocate_goodput(q, static_cast<int>(members.size()));
        for (auto* c : members) {
            if (c->ramp_elapsed_s == 0.0) c->ramp_total_s = ramp_total(q);
            double rate = share;
            // Converge upward gradually after a reassignment; shedding rate is
            // immediate so a queue is never oversubscribed.
            if (c->ramp_elapsed_s < c->ramp_total_s && share > c->ramp_origin_mbps) {
                const double f = ramp_mean_fraction(c->ramp_elapsed_s, dt, c->ramp_total_s);
                rate = c->ramp_origin_mbps + (share - c->ramp_origin_mbps) * f;
            }
            c->ramp_elapsed_s += dt;
            c->last_goodput_mbps = rate;
            const bool was_stalled = c->in_stall && !c->playing;
            step_playback(*c, rate, dt, pp_, dp_);
            const bool now_stalled = c->in_stall && !c->playing;
            if (was_stalled && !now_stalled && c->current_episode_s > 0) {
                episodes_.push_back(c->current_episode_s);
                c->current_episode_s = 0.0;
            }
        }
    }

    double ramp_total(const QueueSpec& q) const {
        return pp_.ramp_base_s + pp_.ramp_rtt_factor * q.base_rtt_ms / 1000.0;
    }

    void maybe_roll_session(VideoClient& c) {
        if (c.video_length_s <= 0) return;
        if (c.play_position_s + 1e-9 < c.video_length_s) return;
        if (c.in_stall && c.current_episode_s > 0) {
            episodes_.push_back(c.current_episode_s);
            c.current_episode_s = 0.0;
        }
        c.play_position_s = 0.0;
        c.state.buffer_s = 0.0;
        c.playing = false;
        c.in_stall = false;
        c.dqs = fresh_session(dp_);
        c.state.qoe = qoe_of(c.dqs);
        c.state.stalls = 0;
        const double jitter = plan_.length_jitter > 0
                                  ? 1.0 + plan_.length_jitter * (2.0 * rng_.uniform01() - 1.0)
                                  : 1.0;
        c.video_length_s = std::max(pp_.tick_s, plan_.video_length_s * jitter);
        // Fresh session, fresh connection: converge up from zero.
        c.last_goodput_mbps = 0.0;
        begin_ramp(c);
    }

    std::vector<BinSpec> bins_;
    std::vector<VideoClient> clients_;
    PlaybackParams pp_;
    DqsParams dp_;
    SessionPlan plan_;
    Rng rng_;
    bool vanilla_ = false;
    double now_ = 0.0;
    std::vector<double> episodes_;
};

}  // namespace qmarket
