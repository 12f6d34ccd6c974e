#pragma once

// Discrete-time series-hybrid powertrain: energy balance, coulomb-counting
// SOC dynamics, feasible battery power bounds and engine fuel use.
//
// Sign convention: p_batt > 0 discharges the battery (SOC falls), p_batt < 0
// charges it. The engine covers the remainder, p_eng = p_dem - p_batt.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hevlab/errors.hpp"

namespace hevlab {

// Slack used when comparing a requested battery power against its bounds.
// Bounds are derived from SOC in floating point, so an action sitting exactly
// on a bound can miss it by a few ulps.
inline constexpr double kPowerTolW = 1e-6;

namespace detail {

inline std::string trim(std::string s) {
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double parse_double(const std::string& cell, std::size_t row) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(cell, &used);
    } catch (const std::exception&) {
        throw ParseError("not a number: '" + cell + "'", row);
    }
    if (used != cell.size() || !std::isfinite(v)) throw ParseError("not a number: '" + cell + "'", row);
    return v;
}

// Reads a two-column numeric CSV with the given header. Blank lines are skipped.
inline std::vector<std::pair<double, double>> read_two_column_csv(const std::string& path,
                                                                  const std::string& col0,
                                                                  const std::string& col1) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");
    auto header = split_csv(trim(line));
    if (header.size() != 2 || header[0] != col0 || header[1] != col1)
        throw ParseError(path + ": expected header '" + col0 + "," + col1 + "'");
    std::vector<std::pair<double, double>> rows;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty()) continue;
        ++row;
        auto cells = split_csv(line);
        if (cells.size() != 2) throw ParseError(path + ": expected 2 columns", row);
        rows.emplace_back(parse_double(cells[0], row), parse_double(cells[1], row));
    }
    return rows;
}

}  // namespace detail

// 1-D engine efficiency curve: piecewise linear in power, clamped outside the
// knot range. Efficiency is undefined at zero power (engine off).
class EngineMap {
public:
    struct Knot {
        double power_w;
        double eta;
    };

    EngineMap() = default;

    explicit EngineMap(std::vector<Knot> knots) : knots_(std::move(knots)) {
        if (knots_.empty()) throw DomainError("engine map needs at least one knot");
        if (knots_.front().power_w <= 0.0) throw DomainError("first engine map knot must be at power > 0");
        for (std::size_t i = 0; i < knots_.size(); ++i) {
            const double eta = knots_[i].eta;
            if (!(eta > 0.0 && eta <= 0.5)) throw DomainError("engine efficiency must lie in (0, 0.5]");
            if (i > 0 && !(knots_[i].power_w > knots_[i - 1].power_w))
                throw DomainError("engine map power knots must be strictly increasing");
        }
    }

    static EngineMap load(const std::string& path) {
        auto rows = detail::read_two_column_csv(path, "p_eng_w", "eta");
        if (rows.empty()) throw ParseError(path + ": engine map has no rows");
        std::vector<Knot> knots;
        knots.reserve(rows.size());
        for (auto [p, eta] : rows) knots.push_back({p, eta});
        try {
            return EngineMap(std::move(knots));
        } catch (const DomainError& e) {
            throw ParseError(path + ": " + e.what());
        }
    }

    const std::vector<Knot>& knots() const noexcept { return knots_; }
    bool empty() const noexcept { return knots_.empty(); }

    // Interpolated efficiency for p > 0; no upper range check here.
    double interpolate(double p) const {
        if (knots_.empty()) throw DomainError("empty engine map");
        if (p <= knots_.front().power_w) return knots_.front().eta;
        if (p >= knots_.back().power_w) return knots_.back().eta;
        auto hi = std::upper_bound(knots_.begin(), knots_.end(), p,
                                   [](double v, const Knot& k) { return v < k.power_w; });
        auto lo = hi - 1;
        const double w = (p - lo->power_w) / (hi->power_w - lo->power_w);
        return lo->eta + w * (hi->eta - lo->eta);
    }

private:
    std::vector<Knot> knots_;
};

struct PowertrainConfig {
    double q_batt = 1.8e5;         // C
    double v_oc = 600.0;           // V
    double soc_min = 0.3;
    double soc_max = 0.9;
    double p_b_max = 1.5e5;        // W
    double p_e_max = 2.75e5;       // W
    double t_s = 1.0;              // s
    double lhv = 4.25e7;           // J/kg
    double fuel_density = 0.832;   // kg/L
    EngineMap engine_map;

    // Usable energy per unit SOC, q_batt * v_oc (J).
    double energy_per_soc() const noexcept { return q_batt * v_oc; }

    void validate() const {
        if (!(0.0 <= soc_min && soc_min < soc_max && soc_max <= 1.0))
            throw ConfigError("SOC limits must satisfy 0 <= soc_min < soc_max <= 1");
        const std::pair<const char*, double> positive[] = {
            {"q_batt", q_batt}, {"v_oc", v_oc}, {"p_b_max", p_b_max}, {"p_e_max", p_e_max},
            {"t_s", t_s}, {"lhv", lhv}, {"fuel_density", fuel_density}};
        for (auto [name, v] : positive)
            if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be > 0");
        if (engine_map.empty()) throw ConfigError("engine map is not set");
    }
};

struct DutyCycle {
    double dt = 1.0;              // s
    std::vector<double> demand;   // W

    std::size_t size() const noexcept { return demand.size(); }

    void validate() const {
        if (!(dt > 0.0)) throw DomainError("duty cycle dt must be > 0");
        if (demand.empty()) throw DomainError("duty cycle is empty");
        for (double d : demand)
            if (!(d >= 0.0) || !std::isfinite(d)) throw DomainError("duty cycle demand must be >= 0");
    }
};

struct EnvState {
    std::size_t step_index = 0;
    double soc = 0.0;
    double p_dem = 0.0;  // W
};

struct StepOutcome {
    EnvState next_state;
    double p_batt = 0.0;      // W
    double p_eng = 0.0;       // W
    double fuel_mass = 0.0;   // kg
    double fuel_rate = 0.0;   // kg/s
    double efficiency = 0.0;  // 0 when the engine is off
    bool done = false;
};

struct PowerBounds {
    double lb;
    double ub;
};

inline double engine_efficiency(const EngineMap& map, double p_eng, double p_e_max) {
    if (!(p_eng > 0.0)) throw DomainError("engine efficiency undefined for p_eng <= 0");
    if (p_eng > p_e_max + kPowerTolW) throw DomainError("p_eng exceeds p_e_max");
    return map.interpolate(p_eng);
}

inline double engine_efficiency(const PowertrainConfig& cfg, double p_eng) {
    return engine_efficiency(cfg.engine_map, p_eng, cfg.p_e_max);
}

// kg/s
inline double fuel_rate(const PowertrainConfig& cfg, double p_eng) {
    if (p_eng < 0.0 || std::isnan(p_eng)) throw DomainError("fuel rate undefined for p_eng < 0");
    if (p_eng == 0.0) return 0.0;
    return p_eng / (engine_efficiency(cfg, p_eng) * cfg.lhv);
}

inline PowerBounds action_bounds(const PowertrainConfig& cfg, const EnvState& s) {
    const double e = cfg.energy_per_soc();
    // Charging limit from the SOC ceiling, discharge limit from the floor.
    const double charge_room = (cfg.soc_max - s.soc) * e / -cfg.t_s;
    const double discharge_room = (cfg.soc_min - s.soc) * e / -cfg.t_s;
    const double lb = std::max({charge_room, -cfg.p_b_max, s.p_dem - cfg.p_e_max});
    const double ub = std::min({discharge_room, cfg.p_b_max, s.p_dem});
    if (lb > ub + kPowerTolW) {
        std::ostringstream msg;
        msg << "no feasible battery power at step " << s.step_index << " (soc=" << s.soc
            << ", p_dem=" << s.p_dem << " W): lb=" << lb << " > ub=" << ub;
        throw InfeasibleStateError(msg.str());
    }
    return {lb, ub};
}

inline EnvState initial_state(const DutyCycle& cycle, double soc) {
    cycle.validate();
    return {0, soc, cycle.demand.front()};
}

inline StepOutcome step(const PowertrainConfig& cfg, const EnvState& s, double p_batt, const DutyCycle& cycle) {
    if (s.step_index >= cycle.size()) throw DomainError("step past the end of the duty cycle");
    const auto [lb, ub] = action_bounds(cfg, s);
    if (p_batt < lb - kPowerTolW || p_batt > ub + kPowerTolW) {
        std::ostringstream msg;
        msg << "battery power " << p_batt << " W outside [" << lb << ", " << ub << "] at step " << s.step_index;
        throw FeasibilityError(msg.str());
    }

    // p_batt is used as given; a request within kPowerTolW of a bound only
    // moves SOC by ~1e-14, which the clamp below absorbs.
    StepOutcome out;
    out.p_batt = p_batt;
    out.p_eng = std::max(s.p_dem - p_batt, 0.0);
    out.p_eng = std::min(out.p_eng, cfg.p_e_max);
    out.fuel_rate = fuel_rate(cfg, out.p_eng);
    out.fuel_mass = out.fuel_rate * cfg.t_s;
    out.efficiency = out.p_eng > 0.0 ? engine_efficiency(cfg, out.p_eng) : 0.0;

    const double soc_next = s.soc - p_batt * cfg.t_s / cfg.energy_per_soc();
    out.next_state.soc = std::clamp(soc_next, cfg.soc_min, cfg.soc_max);
    out.next_state.step_index = s.step_index + 1;
    out.done = out.next_state.step_index == cycle.size();
    out.next_state.p_dem = out.done ? 0.0 : cycle.demand[out.next_state.step_index];
    return out;
}

// Gallons from kilograms of fuel.
inline double fuel_gallons(const PowertrainConfig& cfg, double fuel_kg) {
    constexpr double kLitresPerGallon = 3.78541;
    return fuel_kg / cfg.fuel_density / kLitresPerGallon;
}

// ---- duty cycle I/O -------------------------------------------------------

inline DutyCycle load_duty_cycle(const std::string& path) {
    auto rows = detail::read_two_column_csv(path, "t_s", "p_dem_w");
    if (rows.empty()) throw ParseError(path + ": duty cycle has no samples");
    if (rows.size() < 2) throw ParseError(path + ": need at least two samples to infer the step", 1);
    DutyCycle c;
    c.dt = rows[1].first - rows[0].first;
    if (!(c.dt > 0.0)) throw ParseError(path + ": timestamps must increase", 2);
    c.demand.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto [t, p] = rows[i];
        const double expected = rows[0].first + static_cast<double>(i) * c.dt;
        if (std::abs(t - expected) > 1e-9 * std::max(1.0, std::abs(expected)))
            throw ParseError(path + ": non-uniform timestamps", i + 1);
        if (p < 0.0) throw ParseError(path + ": negative power demand", i + 1);
        c.demand.push_back(p);
    }
    return c;
}

inline void save_duty_cycle(const std::string& path, const DutyCycle& c) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path);
    out << "t_s,p_dem_w\n" << std::setprecision(17);
    for (std::size_t i = 0; i < c.size(); ++i) out << static_cast<double>(i) * c.dt << ',' << c.demand[i] << '\n';
}

// Piecewise-constant demand with uniform noise. Segments split the duration
// evenly; each draws its level uniformly from [level_min_w, level_max_w].
struct CycleGenSpec {
    std::size_t segments = 8;
    double level_min_w = 4.0e4;
    double level_max_w = 2.4e5;
    double noise_w = 0.0;
    double duration_s = 120.0;
    double dt = 1.0;
    double quantum_w = 0.0;  // round samples to this resolution when > 0

    void validate() const {
        if (segments == 0) throw ConfigError("cycle generator needs at least one segment");
        if (!(level_min_w >= 0.0 && level_min_w <= level_max_w)) throw ConfigError("bad cycle level range");
        if (!(noise_w >= 0.0) || !(quantum_w >= 0.0)) throw ConfigError("noise and quantum must be >= 0");
        if (!(dt > 0.0) || !(duration_s >= dt)) throw ConfigError("cycle duration must cover at least one step");
    }
};

template <class Rng>
DutyCycle generate_duty_cycle(const CycleGenSpec& spec, Rng& rng) {
    spec.validate();
    const auto n = static_cast<std::size_t>(std::llround(spec.duration_s / spec.dt));
    DutyCycle c;
    c.dt = spec.dt;
    c.demand.resize(n);
    std::uniform_real_distribution<double> level(spec.level_min_w, spec.level_max_w);
    std::uniform_real_distribution<double> noise(-spec.noise_w, spec.noise_w);
    const std::size_t segs = std::min(spec.segments, n);
    for (std::size_t k = 0; k < segs; ++k) {
        const double lvl = level(rng);
        const std::size_t begin = k * n / segs, end = (k + 1) * n / segs;
        for (std::size_t i = begin; i < end; ++i) {
            double v = lvl + (spec.noise_w > 0.0 ? noise(rng) : 0.0);
            v = std::clamp(v, spec.level_min_w, spec.level_max_w);
            if (spec.quantum_w > 0.0) v = std::round(v / spec.quantum_w) * spec.quantum_w;
            c.demand[i] = std::max(v, 0.0);
        }
    }
    return c;
}

}  // namespace hevlab
