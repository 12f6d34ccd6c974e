#pragma once

// Expert policies for replay preseeding: a backward-induction DP that
// minimises cumulative fuel mass over a time x SOC grid, and the 110 kW
// engine/battery rule. Both are rolled out into transitions scored with any
// RewardSpec.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hevlab/action_grid.hpp"
#include "hevlab/errors.hpp"
#include "hevlab/powertrain.hpp"
#include "hevlab/replay.hpp"
#include "hevlab/rewards.hpp"
#include "hevlab/rollout.hpp"

namespace hevlab {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct TerminalSoc {
    double target = 0.8;
    double tolerance = 0.0;
};

struct DpGrid {
    std::vector<double> soc_points;  // sorted, spanning [soc_min, soc_max]
    ActionGrid actions;
    std::optional<TerminalSoc> terminal;  // nullopt: free terminal SOC

    static DpGrid uniform(const PowertrainConfig& cfg, std::size_t soc_count = 200, std::size_t action_count = 1600,
                          std::optional<TerminalSoc> terminal = std::nullopt) {
        if (soc_count < 2) throw ConfigError("DP SOC grid needs at least two points");
        DpGrid g;
        g.soc_points.resize(soc_count);
        const double n = static_cast<double>(soc_count - 1);
        for (std::size_t k = 0; k < soc_count; ++k)
            g.soc_points[k] = k + 1 == soc_count ? cfg.soc_max
                                                 : cfg.soc_min + (cfg.soc_max - cfg.soc_min) * static_cast<double>(k) / n;
        g.actions = ActionGrid(cfg.p_b_max, action_count);
        g.terminal = terminal;
        return g;
    }

    void validate(const PowertrainConfig& cfg) const {
        if (soc_points.size() < 2) throw ConfigError("DP SOC grid needs at least two points");
        for (std::size_t k = 1; k < soc_points.size(); ++k)
            if (!(soc_points[k] > soc_points[k - 1])) throw ConfigError("DP SOC grid must be strictly increasing");
        if (soc_points.front() < cfg.soc_min - 1e-12 || soc_points.back() > cfg.soc_max + 1e-12)
            throw ConfigError("DP SOC grid outside the SOC limits");
        if (actions.size() < 2) throw ConfigError("DP action grid is not set");
    }
};

// Cost-to-go in kg of fuel over (time step, SOC grid point). Layer T is the
// terminal cost. Infeasible cells hold +inf and action npos.
struct DpSolution {
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    std::vector<double> soc_points;
    ActionGrid actions;
    std::size_t horizon = 0;
    std::vector<double> cost;         // (horizon + 1) x soc_points
    std::vector<std::size_t> action;  // horizon x soc_points

    std::size_t width() const noexcept { return soc_points.size(); }
    double cost_at_node(std::size_t t, std::size_t k) const { return cost[t * width() + k]; }
    std::size_t action_at_node(std::size_t t, std::size_t k) const { return action[t * width() + k]; }

    // Cost-to-go at an arbitrary SOC, linear in SOC between grid points. A
    // point within 1e-9 of a node (relative to the local spacing) reads that
    // node exactly; interpolating next to an infeasible node gives +inf.
    double cost_at(std::size_t t, double soc) const {
        const double* layer = cost.data() + t * width();
        if (soc < soc_points.front() - 1e-12 || soc > soc_points.back() + 1e-12) return kInf;
        auto it = std::upper_bound(soc_points.begin(), soc_points.end(), soc);
        std::size_t hi = static_cast<std::size_t>(it - soc_points.begin());
        if (hi == 0) return layer[0];
        if (hi == width()) return layer[width() - 1];
        const std::size_t lo = hi - 1;
        const double w = (soc - soc_points[lo]) / (soc_points[hi] - soc_points[lo]);
        if (w < 1e-9) return layer[lo];
        if (w > 1.0 - 1e-9) return layer[hi];
        if (std::isinf(layer[lo]) || std::isinf(layer[hi])) return kInf;
        return (1.0 - w) * layer[lo] + w * layer[hi];
    }

    void write_csv(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw ParseError("cannot write " + path);
        out << "t,soc,cost_kg,action_index\n" << std::setprecision(17);
        for (std::size_t t = 0; t < horizon; ++t)
            for (std::size_t k = 0; k < width(); ++k) {
                out << t << ',' << soc_points[k] << ',';
                const double c = cost_at_node(t, k);
                if (std::isinf(c))
                    out << "inf,-1\n";
                else
                    out << c << ',' << action_at_node(t, k) << '\n';
            }
    }
};

namespace detail {

struct DpCandidate {
    double cost = kInf;
    std::size_t action = DpSolution::npos;
};

// Best action at (t, soc) against cost-to-go layer t + 1. `fuel` holds the
// per-action fuel mass of step t. Ties go to the smaller |p_batt|.
inline DpCandidate dp_best_action(const PowertrainConfig& cfg, const DpSolution& sol, std::size_t t, double soc,
                                  double p_dem, const std::vector<double>& fuel) {
    DpCandidate best;
    PowerBounds b{};
    try {
        b = action_bounds(cfg, EnvState{t, soc, p_dem});
    } catch (const InfeasibleStateError&) {
        return best;
    }
    const double e = cfg.energy_per_soc();
    for (std::size_t i = 0; i < sol.actions.size(); ++i) {
        const double p = sol.actions.value(i);
        if (p < b.lb - kPowerTolW || p > b.ub + kPowerTolW) continue;
        const double soc_next = std::clamp(soc - p * cfg.t_s / e, cfg.soc_min, cfg.soc_max);
        const double tail = sol.cost_at(t + 1, soc_next);
        if (std::isinf(tail)) continue;
        const double c = fuel[i] + tail;
        if (c < best.cost ||
            (c == best.cost && best.action != DpSolution::npos && std::abs(p) < std::abs(sol.actions.value(best.action)))) {
            best.cost = c;
            best.action = i;
        }
    }
    return best;
}

// Fuel mass of every grid action at step t, computed exactly as step() does.
inline std::vector<double> dp_step_fuel(const PowertrainConfig& cfg, const ActionGrid& actions, double p_dem) {
    std::vector<double> fuel(actions.size(), kInf);
    for (std::size_t i = 0; i < actions.size(); ++i) {
        const double p = actions.value(i);
        double p_eng = std::min(std::max(p_dem - p, 0.0), cfg.p_e_max);
        if (p_dem - p > cfg.p_e_max + kPowerTolW) continue;
        fuel[i] = fuel_rate(cfg, p_eng) * cfg.t_s;
    }
    return fuel;
}

}  // namespace detail

inline DpSolution dp_solve(const PowertrainConfig& cfg, const DutyCycle& cycle, const DpGrid& grid) {
    cfg.validate();
    grid.validate(cfg);
    DpSolution sol;
    sol.soc_points = grid.soc_points;
    sol.actions = grid.actions;
    sol.horizon = cycle.size();
    const std::size_t K = sol.width(), T = sol.horizon;
    sol.cost.assign((T + 1) * K, kInf);
    sol.action.assign(T * K, DpSolution::npos);

    for (std::size_t k = 0; k < K; ++k) {
        bool ok = true;
        if (grid.terminal) ok = std::abs(sol.soc_points[k] - grid.terminal->target) <= grid.terminal->tolerance + 1e-12;
        sol.cost[T * K + k] = ok ? 0.0 : kInf;
    }
    for (std::size_t t = T; t-- > 0;) {
        const auto fuel = detail::dp_step_fuel(cfg, sol.actions, cycle.demand[t]);
        for (std::size_t k = 0; k < K; ++k) {
            const auto best = detail::dp_best_action(cfg, sol, t, sol.soc_points[k], cycle.demand[t], fuel);
            sol.cost[t * K + k] = best.cost;
            sol.action[t * K + k] = best.action;
        }
    }
    if (T > 0) {
        bool any = false;
        for (std::size_t k = 0; k < K; ++k) any = any || !std::isinf(sol.cost[k]);
        if (!any) throw InfeasibleStateError("DP: no feasible start state on the SOC grid");
    }
    return sol;
}

// Grid-action policies used for rollouts into transitions.
using ActionPolicy = std::function<std::size_t(const EnvState&)>;

// Greedy DP controller: one-step lookahead on the cost-to-go at the actual SOC.
inline ActionPolicy dp_policy(const PowertrainConfig& cfg, const DutyCycle& cycle, const DpSolution& sol) {
    return [&cfg, &cycle, &sol](const EnvState& s) {
        const auto fuel = detail::dp_step_fuel(cfg, sol.actions, s.p_dem);
        const auto best = detail::dp_best_action(cfg, sol, s.step_index, s.soc, cycle.demand.at(s.step_index), fuel);
        if (best.action == DpSolution::npos)
            throw InfeasibleStateError("DP policy: no finite cost-to-go at step " + std::to_string(s.step_index));
        return best.action;
    };
}

// Engine when p_dem exceeds the threshold, battery otherwise; clamped into
// [lb, ub] and snapped to the nearest feasible grid action.
inline std::size_t rule_based_action(const EnvState& s, const PowertrainConfig& cfg, const ActionGrid& grid,
                                     double threshold_w = 1.1e5) {
    const auto b = action_bounds(cfg, s);
    const double wanted = std::clamp(s.p_dem > threshold_w ? 0.0 : s.p_dem, b.lb, b.ub);
    const auto i = grid.quantize_feasible(wanted, b);
    if (i == grid.size()) throw InfeasibleStateError("rule-based policy: no feasible grid action");
    return i;
}

inline double rule_based_policy(const EnvState& s, const PowertrainConfig& cfg, const ActionGrid& grid,
                                double threshold_w = 1.1e5) {
    return grid.value(rule_based_action(s, cfg, grid, threshold_w));
}

inline ActionPolicy rule_policy(const PowertrainConfig& cfg, const ActionGrid& grid, double threshold_w = 1.1e5) {
    return [&cfg, grid, threshold_w](const EnvState& s) { return rule_based_action(s, cfg, grid, threshold_w); };
}

struct ExpertRollout {
    std::vector<Transition> transitions;
    Trajectory trajectory;
};

// Rolls the policy over the cycle and scores every step with `reward`.
inline ExpertRollout rollout_to_transitions(const ActionPolicy& policy, const PowertrainConfig& cfg,
                                            const DutyCycle& cycle, const RewardSpec& reward, const ActionGrid& grid,
                                            double initial_soc) {
    ExpertRollout out;
    if (cycle.demand.empty()) {
        out.trajectory.initial_soc = initial_soc;
        return out;
    }
    std::vector<std::size_t> chosen;
    out.trajectory = simulate(cfg, cycle, reward, initial_soc, [&](const EnvState& s) {
        const auto a = policy(s);
        chosen.push_back(a);
        return grid.value(a);
    });
    const auto& steps = out.trajectory.steps;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const auto& st = steps[i];
        const bool done = st.t + 1 == cycle.size();
        const double next_p = done ? 0.0 : cycle.demand[st.t + 1];
        out.transitions.push_back({{st.p_dem, st.soc}, chosen[i], st.reward, {next_p, st.soc_next}, done});
    }
    return out;
}

template <class Rng>
std::vector<Transition> mix_and_shuffle(const std::vector<Transition>& a, const std::vector<Transition>& b, Rng& rng) {
    std::vector<Transition> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

}  // namespace hevlab
