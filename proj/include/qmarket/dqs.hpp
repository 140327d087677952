#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qmarket {

// Delivery Quality Score: a bounded per-session score that dives when playback
// stalls and climbs back slowly while playback is smooth. Stall damage lands as
// a raised-cosine descent over drop_duration_s; repeated stalls cost less per
// event but make recovery progressively slower.
struct DqsParams {
    double qoe_min = 1.0;
    double qoe_max = 5.0;
    double first_stall_drop = 1.5;
    double subsequent_stall_drop = 0.75;
    double drop_duration_s = 2.0;
    double recovery_rate_base = 0.1;   // score per second of smooth playback
    double recovery_decay = 0.7;       // recovery rate factor per stall seen
    double stall_hold_penalty = 0.1;   // score per second stalled past the drop

    void validate() const {
        if (!(qoe_max > qoe_min)) throw std::invalid_argument("dqs: qoe range empty");
        if (first_stall_drop < 0 || subsequent_stall_drop < 0)
            throw std::invalid_argument("dqs: negative stall drop");
        if (first_stall_drop < subsequent_stall_drop)
            throw std::invalid_argument("dqs: first stall must cost at least as much as later ones");
        if (!(drop_duration_s > 0)) throw std::invalid_argument("dqs: drop duration must be positive");
        if (recovery_rate_base < 0 || stall_hold_penalty < 0)
            throw std::invalid_argument("dqs: negative rate");
        if (recovery_decay < 0 || recovery_decay > 1)
            throw std::invalid_argument("dqs: recovery decay outside [0,1]");
    }
};

enum class PlaybackEvent { playing = 0, stall_begin = 1, stalling = 2 };

enum class DqsPhase { smooth = 0, dropping = 1, stalled = 2 };

struct DqsState {
    double qoe = 5.0;
    int stalls_seen = 0;
    DqsPhase phase = DqsPhase::smooth;
    double drop_origin = 5.0;   // score when the active descent began
    double drop_target = 5.0;   // score the active descent lands on
    double drop_elapsed = 0.0;  // seconds into the active descent
};

inline DqsState fresh_session(const DqsParams& p) {
    DqsState s;
    s.qoe = p.qoe_max;
    s.drop_origin = p.qoe_max;
    s.drop_target = p.qoe_max;
    return s;
}

inline double qoe_of(const DqsState& s) { return s.qoe; }

inline double current_recovery_rate(const DqsState& s, const DqsParams& p) {
    return p.recovery_rate_base * std::pow(p.recovery_decay, s.stalls_seen);
}

namespace detail {

inline double raised_cosine(double from, double to, double frac) {
    frac = std::clamp(frac, 0.0, 1.0);
    return from + (to - from) * 0.5 * (1.0 - std::cos(M_PI * frac));
}

inline void advance_stall(DqsState& s, double dt, const DqsParams& p) {
    if (s.phase == DqsPhase::dropping) {
        const double total = s.drop_elapsed + dt;
        const double capped = std::min(total, p.drop_duration_s);
        s.qoe = raised_cosine(s.drop_origin, s.drop_target, capped / p.drop_duration_s);
        s.drop_elapsed = capped;
        if (capped >= p.drop_duration_s) {
            s.phase = DqsPhase::stalled;
            const double leftover = total - p.drop_duration_s;
            if (leftover > 0) s.qoe -= p.stall_hold_penalty * leftover;
        }
    } else {
        s.qoe -= p.stall_hold_penalty * dt;
    }
    s.qoe = std::clamp(s.qoe, p.qoe_min, p.qoe_max);
}

}  // namespace detail

// Advance the score by one playback event covering dt seconds. Pure: the input
// state is untouched, so an event log replays to the same trajectory.
inline DqsState dqs_step(DqsState s, PlaybackEvent ev, double dt, const DqsParams& p) {
    if (!(dt >= 0)) throw std::invalid_argument("dqs_step: negative dt");
    switch (ev) {
        case PlaybackEvent::stall_begin: {
            s.stalls_seen += 1;
            const double mag =
                s.stalls_seen == 1 ? p.first_stall_drop : p.subsequent_stall_drop;
            s.phase = DqsPhase::dropping;
            s.drop_origin = s.qoe;
            s.drop_target = std::max(s.qoe - mag, p.qoe_min);
            s.drop_elapsed = 0.0;
            detail::advance_stall(s, dt, p);
            break;
        }
        case PlaybackEvent::stalling:
            if (s.phase == DqsPhase::smooth) {
                // Defensive: a stalling tick without a preceding stall_begin
                // only holds the score down, it does not start a descent.
                s.qoe = std::clamp(s.qoe - p.stall_hold_penalty * dt, p.qoe_min, p.qoe_max);
            } else {
                detail::advance_stall(s, dt, p);
            }
            break;
        case PlaybackEvent::playing:
            s.phase = DqsPhase::smooth;
            s.qoe = std::clamp(s.qoe + current_recovery_rate(s, p) * dt, p.qoe_min, p.qoe_max);
            break;
    }
    return s;
}

}  // namespace qmarket
