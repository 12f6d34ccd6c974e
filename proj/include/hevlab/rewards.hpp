#pragma once

// Per-step rewards: the plain fuel-mass penalty and the five-branch shaping
// function that favours the engine's high-efficiency band.

#include <string>

#include "hevlab/errors.hpp"

namespace hevlab {

enum class RewardKind { FuelOnly, Shaped };

struct RewardSpec {
    RewardKind kind = RewardKind::Shaped;
    double off_bonus = 2.46;   // engine off
    double band_lo = 1.1e5;    // W
    double band_hi = 1.9e5;    // W
    double p_max = 2.75e5;     // W
    double c3_offset = -0.58;  // below band
    double c3_slope = 2e-6;    // per W
    double c4_offset = -0.06;  // above band
    double c4_slope = 6e-6;    // per W
    double floor = -2.0;

    void validate() const {
        if (!(band_lo < band_hi && band_hi < p_max)) throw ConfigError("reward band must satisfy band_lo < band_hi < p_max");
    }
};

inline RewardKind parse_reward_kind(const std::string& s) {
    if (s == "fuel_only") return RewardKind::FuelOnly;
    if (s == "shaped") return RewardKind::Shaped;
    throw ConfigError("unknown reward '" + s + "' (expected fuel_only or shaped)");
}

inline const char* to_string(RewardKind k) { return k == RewardKind::FuelOnly ? "fuel_only" : "shaped"; }

inline double fuel_reward(double fuel_rate, double dt) {
    if (fuel_rate < 0.0 || !(dt > 0.0)) throw DomainError("fuel_reward needs fuel_rate >= 0 and dt > 0");
    return -fuel_rate * dt;
}

// eta is the efficiency at p_eng (0 when the engine is off). Band edges belong
// to the in-band branch; the discontinuities at the edges are intentional.
inline double shaped_reward(const RewardSpec& r, double p_eng, double eta) {
    if (p_eng == 0.0) return r.off_bonus;
    if (p_eng >= r.band_lo && p_eng <= r.band_hi) return eta + 1.0;
    if (p_eng > 0.0 && p_eng < r.band_lo) return r.c3_offset - r.c3_slope * (r.band_lo - p_eng) - eta;
    if (p_eng > r.band_hi && p_eng < r.p_max) return r.c4_offset + r.c4_slope * (r.band_hi - p_eng) - eta;
    return r.floor;
}

inline double shaped_reward(double p_eng, double eta) { return shaped_reward(RewardSpec{}, p_eng, eta); }

// Reward of one simulated step under the chosen spec.
inline double step_reward(const RewardSpec& r, double p_eng, double eta, double fuel_rate, double dt) {
    return r.kind == RewardKind::FuelOnly ? fuel_reward(fuel_rate, dt) : shaped_reward(r, p_eng, eta);
}

}  // namespace hevlab
