#pragma once

// Closed-loop simulation of a policy over a duty cycle and the per-trajectory
// metrics shared by every method: fuel, engine-on efficiency, final SOC and
// high-efficiency band occupancy.

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <functional>
#include <iomanip>
#include <string>
#include <vector>

#include "hevlab/errors.hpp"
#include "hevlab/powertrain.hpp"
#include "hevlab/rewards.hpp"

namespace hevlab {

struct TrajectoryStep {
    std::size_t t = 0;
    double p_dem = 0.0;
    double p_batt = 0.0;
    double p_eng = 0.0;
    double soc = 0.0;       // at the start of the step
    double soc_next = 0.0;
    double fuel_kg = 0.0;
    double eta = 0.0;
    double reward = 0.0;
};

struct Trajectory {
    double initial_soc = 0.0;
    std::vector<TrajectoryStep> steps;
    bool truncated = false;  // the policy hit an infeasible state
    std::string diagnostic;

    double final_soc() const { return steps.empty() ? initial_soc : steps.back().soc_next; }

    double fuel_kg() const {
        double f = 0.0;
        for (const auto& s : steps) f += s.fuel_kg;
        return f;
    }

    double total_reward() const {
        double r = 0.0;
        for (const auto& s : steps) r += s.reward;
        return r;
    }
};

struct TrajectoryMetrics {
    double fuel_kg = 0.0;
    double fuel_gal = 0.0;
    double mean_eta = 0.0;        // arithmetic mean over engine-on steps
    double final_soc = 0.0;
    double band_occupancy = 0.0;  // share of engine-on steps inside [band_lo, band_hi]
    std::size_t engine_on_steps = 0;
    double total_reward = 0.0;
};

inline TrajectoryMetrics measure(const PowertrainConfig& cfg, const Trajectory& tr, double band_lo = 1.1e5,
                                 double band_hi = 1.9e5) {
    TrajectoryMetrics m;
    m.fuel_kg = tr.fuel_kg();
    m.fuel_gal = fuel_gallons(cfg, m.fuel_kg);
    m.final_soc = tr.final_soc();
    m.total_reward = tr.total_reward();
    double eta_sum = 0.0;
    std::size_t in_band = 0;
    for (const auto& s : tr.steps) {
        if (s.p_eng <= 0.0) continue;
        ++m.engine_on_steps;
        eta_sum += s.eta;
        if (s.p_eng >= band_lo && s.p_eng <= band_hi) ++in_band;
    }
    if (m.engine_on_steps > 0) {
        m.mean_eta = eta_sum / static_cast<double>(m.engine_on_steps);
        m.band_occupancy = static_cast<double>(in_band) / static_cast<double>(m.engine_on_steps);
    }
    return m;
}

// Battery power to request in a state.
using PowerPolicy = std::function<double(const EnvState&)>;

inline Trajectory simulate(const PowertrainConfig& cfg, const DutyCycle& cycle, const RewardSpec& reward,
                           double initial_soc, const PowerPolicy& policy) {
    Trajectory tr;
    tr.initial_soc = initial_soc;
    if (cycle.demand.empty()) return tr;
    EnvState s = initial_state(cycle, initial_soc);
    while (true) {
        StepOutcome out;
        double p_batt = 0.0;
        try {
            p_batt = policy(s);
            out = step(cfg, s, p_batt, cycle);
        } catch (const InfeasibleStateError& e) {
            tr.truncated = true;
            tr.diagnostic = e.what();
            break;
        }
        TrajectoryStep ts;
        ts.t = s.step_index;
        ts.p_dem = s.p_dem;
        ts.p_batt = out.p_batt;
        ts.p_eng = out.p_eng;
        ts.soc = s.soc;
        ts.soc_next = out.next_state.soc;
        ts.fuel_kg = out.fuel_mass;
        ts.eta = out.efficiency;
        ts.reward = step_reward(reward, out.p_eng, out.efficiency, out.fuel_rate, cfg.t_s);
        tr.steps.push_back(ts);
        if (out.done) break;
        s = out.next_state;
    }
    return tr;
}

inline void write_trajectory_csv(const std::string& path, const PowertrainConfig& cfg, const Trajectory& tr) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path);
    out << "t_s,p_dem_w,p_batt_w,p_eng_w,soc,soc_next,fuel_kg,eta,reward\n" << std::setprecision(17);
    for (const auto& s : tr.steps)
        out << static_cast<double>(s.t) * cfg.t_s << ',' << s.p_dem << ',' << s.p_batt << ',' << s.p_eng << ','
            << s.soc << ',' << s.soc_next << ',' << s.fuel_kg << ',' << s.eta << ',' << s.reward << '\n';
}

// Engine-on operating points normalised by rated power and peak map efficiency.
inline void write_operating_points_csv(const std::string& path, const PowertrainConfig& cfg, const Trajectory& tr) {
    double eta_peak = 0.0;
    for (const auto& k : cfg.engine_map.knots()) eta_peak = std::max(eta_peak, k.eta);
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path);
    out << "t_s,p_eng_w,eta,p_eng_norm,eta_norm\n" << std::setprecision(17);
    for (const auto& s : tr.steps) {
        if (s.p_eng <= 0.0) continue;
        out << static_cast<double>(s.t) * cfg.t_s << ',' << s.p_eng << ',' << s.eta << ',' << s.p_eng / cfg.p_e_max
            << ',' << (eta_peak > 0.0 ? s.eta / eta_peak : 0.0) << '\n';
    }
}

}  // namespace hevlab
