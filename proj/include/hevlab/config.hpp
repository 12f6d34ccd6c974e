#pragma once

// Flat key-value configuration:
//
//   # comment
//   q_batt = 1.8e5
//   engine_map = engine_map.csv      (relative to the config file)
//   reward = shaped
//   agent.algorithm = DDQN
//
// Keys mirror the field names of PowertrainConfig, RewardSpec, AgentConfig,
// TabularConfig and CycleGenSpec (see LabConfig::keys() for the full list).
// Unknown keys are rejected.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hevlab/deep_rl.hpp"
#include "hevlab/errors.hpp"
#include "hevlab/experts.hpp"
#include "hevlab/powertrain.hpp"
#include "hevlab/rewards.hpp"
#include "hevlab/tabular.hpp"

namespace hevlab {

using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(std::istream& in, const std::string& origin = "config") {
    KeyValues kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        auto key = detail::trim(line.substr(0, eq));
        auto value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        if (!kv.emplace(key, value).second)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    return kv;
}

// Terminal-SOC convention for DP and for judging whether a rollout is
// charge-sustaining.
enum class TerminalMode { Initial, Free };

struct DpSettings {
    std::size_t soc_points = 200;
    std::size_t action_bins = 1600;
    TerminalMode terminal = TerminalMode::Initial;
    double terminal_tolerance = 0.005;
};

struct SeedSettings {
    std::vector<std::string> dp_files;    // transition CSVs
    std::vector<std::string> rule_files;
    double dp_fraction = 0.25;
    double mixed_fraction = 0.5;
    double epsilon_start = 0.5;
    std::size_t cycles = 40;             // generated cycles when no files are given
    std::uint64_t cycle_seed_base = 1000;
    double rule_threshold_w = 1.1e5;
};

struct LabConfig {
    PowertrainConfig powertrain;
    std::string engine_map_path;
    double initial_soc = 0.8;
    RewardSpec reward;
    AgentConfig agent;
    TabularConfig tabular;
    CycleGenSpec cycle_gen;
    std::uint64_t cycle_seed = 7;  // generator seed when no cycle file is given
    DpSettings dp;
    SeedSettings seeding;
    std::vector<std::uint64_t> seeds{1};

    std::optional<TerminalSoc> terminal() const {
        if (dp.terminal == TerminalMode::Free) return std::nullopt;
        return TerminalSoc{initial_soc, dp.terminal_tolerance};
    }

    void validate() const {
        powertrain.validate();
        reward.validate();
        agent.validate();
        tabular.disc.validate();
        cycle_gen.validate();
        if (initial_soc < powertrain.soc_min || initial_soc > powertrain.soc_max)
            throw ConfigError("initial_soc outside the SOC limits");
        if (seeds.empty()) throw ConfigError("at least one seed is required");
    }
};

namespace detail {

inline double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double d = std::stod(v, &used);
        if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError("'" + key + "': not a number: '" + v + "'");
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        auto u = std::stoull(v, &used);
        if (used == v.size() && v.find('-') == std::string::npos) return u;
    } catch (const std::exception&) {
    }
    throw ConfigError("'" + key + "': not a non-negative integer: '" + v + "'");
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("'" + key + "': not a boolean: '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    for (auto& s : split_csv(v))
        if (!s.empty()) out.push_back(s);
    return out;
}

using Setter = std::function<void(LabConfig&, const std::string& key, const std::string& value,
                                  const std::filesystem::path& base)>;

inline const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> m;
        auto dbl = [&m](const std::string& k, std::function<double&(LabConfig&)> ref) {
            m[k] = [ref](LabConfig& c, const std::string& key, const std::string& v, const std::filesystem::path&) {
                ref(c) = to_double(key, v);
            };
        };
        auto cnt = [&m](const std::string& k, std::function<std::size_t&(LabConfig&)> ref) {
            m[k] = [ref](LabConfig& c, const std::string& key, const std::string& v, const std::filesystem::path&) {
                ref(c) = static_cast<std::size_t>(to_uint(key, v));
            };
        };
        // powertrain
        dbl("q_batt", [](LabConfig& c) -> double& { return c.powertrain.q_batt; });
        dbl("v_oc", [](LabConfig& c) -> double& { return c.powertrain.v_oc; });
        dbl("soc_min", [](LabConfig& c) -> double& { return c.powertrain.soc_min; });
        dbl("soc_max", [](LabConfig& c) -> double& { return c.powertrain.soc_max; });
        dbl("p_b_max", [](LabConfig& c) -> double& { return c.powertrain.p_b_max; });
        dbl("p_e_max", [](LabConfig& c) -> double& { return c.powertrain.p_e_max; });
        dbl("t_s", [](LabConfig& c) -> double& { return c.powertrain.t_s; });
        dbl("lhv", [](LabConfig& c) -> double& { return c.powertrain.lhv; });
        dbl("fuel_density", [](LabConfig& c) -> double& { return c.powertrain.fuel_density; });
        dbl("initial_soc", [](LabConfig& c) -> double& { return c.initial_soc; });
        m["engine_map"] = [](LabConfig& c, const std::string&, const std::string& v, const std::filesystem::path& base) {
            c.engine_map_path = (base / v).lexically_normal().string();
        };
        // reward
        m["reward"] = [](LabConfig& c, const std::string&, const std::string& v, const std::filesystem::path&) {
            c.reward.kind = parse_reward_kind(v);
        };
        dbl("reward.off_bonus", [](LabConfig& c) -> double& { return c.reward.off_bonus; });
        dbl("reward.band_lo", [](LabConfig& c) -> double& { return c.reward.band_lo; });
        dbl("reward.band_hi", [](LabConfig& c) -> double& { return c.reward.band_hi; });
        dbl("reward.p_max", [](LabConfig& c) -> double& { return c.reward.p_max; });
        dbl("reward.c3_offset", [](LabConfig& c) -> double& { return c.reward.c3_offset; });
        dbl("reward.c3_slope", [](LabConfig& c) -> double& { return c.reward.c3_slope; });
        dbl("reward.c4_offset", [](LabConfig& c) -> double& { return c.reward.c4_offset; });
        dbl("reward.c4_slope", [](LabConfig& c) -> double& { return c.reward.c4_slope; });
        dbl("reward.floor", [](LabConfig& c) -> double& { return c.reward.floor; });
        // agent
        m["agent.algorithm"] = [](LabConfig& c, const std::string& key, const std::string& v, const std::filesystem::path&) {
            if (v == "DQN") c.agent.algorithm = Algorithm::DQN;
            else if (v == "DDQN") c.agent.algorithm = Algorithm::DDQN;
            else throw ConfigError("'" + key + "': expected DQN or DDQN");
        };
        dbl("agent.gamma", [](LabConfig& c) -> double& { return c.agent.gamma; });
        dbl("agent.learning_rate", [](LabConfig& c) -> double& { return c.agent.learning_rate; });
        dbl("agent.epsilon_start", [](LabConfig& c) -> double& { return c.agent.epsilon_start; });
        dbl("agent.epsilon_end", [](LabConfig& c) -> double& { return c.agent.epsilon_end; });
        dbl("agent.epsilon_decay", [](LabConfig& c) -> double& { return c.agent.epsilon_decay; });
        cnt("agent.target_sync", [](LabConfig& c) -> std::size_t& { return c.agent.target_sync; });
        cnt("agent.batch_size", [](LabConfig& c) -> std::size_t& { return c.agent.batch_size; });
        cnt("agent.buffer_capacity", [](LabConfig& c) -> std::size_t& { return c.agent.buffer_capacity; });
        cnt("agent.train_every", [](LabConfig& c) -> std::size_t& { return c.agent.train_every; });
        cnt("agent.max_episodes", [](LabConfig& c) -> std::size_t& { return c.agent.max_episodes; });
        cnt("agent.action_bins", [](LabConfig& c) -> std::size_t& { return c.agent.action_bins; });
        cnt("agent.convergence_window", [](LabConfig& c) -> std::size_t& { return c.agent.convergence_window; });
        m["agent.hidden"] = [](LabConfig& c, const std::string& key, const std::string& v, const std::filesystem::path&) {
            c.agent.hidden.clear();
            for (auto& s : split_list(v)) c.agent.hidden.push_back(static_cast<std::size_t>(to_uint(key, s)));
        };
        m["agent.stop_on_convergence"] = [](LabConfig& c, const std::string& key, const std::string& v,
                                            const std::filesystem::path&) { c.agent.stop_on_convergence = to_bool(key, v); };
        // tabular
        cnt("tabular.p_dem_bins", [](LabConfig& c) -> std::size_t& { return c.tabular.disc.p_dem.count; });
        dbl("tabular.p_dem_max", [](LabConfig& c) -> double& { return c.tabular.disc.p_dem.hi; });
        cnt("tabular.soc_bins", [](LabConfig& c) -> std::size_t& { return c.tabular.disc.soc.count; });
        cnt("tabular.action_bins", [](LabConfig& c) -> std::size_t& { return c.tabular.disc.action_bins; });
        dbl("tabular.alpha", [](LabConfig& c) -> double& { return c.tabular.alpha; });
        dbl("tabular.gamma", [](LabConfig& c) -> double& { return c.tabular.gamma; });
        dbl("tabular.epsilon_start", [](LabConfig& c) -> double& { return c.tabular.epsilon_start; });
        dbl("tabular.epsilon_end", [](LabConfig& c) -> double& { return c.tabular.epsilon_end; });
        dbl("tabular.epsilon_decay", [](LabConfig& c) -> double& { return c.tabular.epsilon_decay; });
        cnt("tabular.episodes", [](LabConfig& c) -> std::size_t& { return c.tabular.episodes; });
        // duty cycle generator
        cnt("cycle.segments", [](LabConfig& c) -> std::size_t& { return c.cycle_gen.segments; });
        dbl("cycle.level_min_w", [](LabConfig& c) -> double& { return c.cycle_gen.level_min_w; });
        dbl("cycle.level_max_w", [](LabConfig& c) -> double& { return c.cycle_gen.level_max_w; });
        dbl("cycle.noise_w", [](LabConfig& c) -> double& { return c.cycle_gen.noise_w; });
        dbl("cycle.duration_s", [](LabConfig& c) -> double& { return c.cycle_gen.duration_s; });
        dbl("cycle.dt", [](LabConfig& c) -> double& { return c.cycle_gen.dt; });
        dbl("cycle.quantum_w", [](LabConfig& c) -> double& { return c.cycle_gen.quantum_w; });
        m["cycle.seed"] = [](LabConfig& c, const std::string& key, const std::string& v, const std::filesystem::path&) {
            c.cycle_seed = to_uint(key, v);
        };
        // DP
        cnt("dp.soc_points", [](LabConfig& c) -> std::size_t& { return c.dp.soc_points; });
        cnt("dp.action_bins", [](LabConfig& c) -> std::size_t& { return c.dp.action_bins; });
        dbl("dp.terminal_tolerance", [](LabConfig& c) -> double& { return c.dp.terminal_tolerance; });
        m["dp.terminal"] = [](LabConfig& c, const std::string& key, const std::string& v, const std::filesystem::path&) {
            if (v == "initial") c.dp.terminal = TerminalMode::Initial;
            else if (v == "free") c.dp.terminal = TerminalMode::Free;
            else throw ConfigError("'" + key + "': expected initial or free");
        };
        // seeding
        m["seed.dp_files"] = [](LabConfig& c, const std::string&, const std::string& v, const std::filesystem::path& base) {
            c.seeding.dp_files.clear();
            for (auto& s : split_list(v)) c.seeding.dp_files.push_back((base / s).lexically_normal().string());
        };
        m["seed.rule_files"] = [](LabConfig& c, const std::string&, const std::string& v, const std::filesystem::path& base) {
            c.seeding.rule_files.clear();
            for (auto& s : split_list(v)) c.seeding.rule_files.push_back((base / s).lexically_normal().string());
        };
        dbl("seed.dp_fraction", [](LabConfig& c) -> double& { return c.seeding.dp_fraction; });
        dbl("seed.mixed_fraction", [](LabConfig& c) -> double& { return c.seeding.mixed_fraction; });
        dbl("seed.epsilon_start", [](LabConfig& c) -> double& { return c.seeding.epsilon_start; });
        dbl("seed.rule_threshold_w", [](LabConfig& c) -> double& { return c.seeding.rule_threshold_w; });
        cnt("seed.cycles", [](LabConfig& c) -> std::size_t& { return c.seeding.cycles; });
        m["seed.cycle_seed_base"] = [](LabConfig& c, const std::string& key, const std::string& v,
                                       const std::filesystem::path&) { c.seeding.cycle_seed_base = to_uint(key, v); };
        // experiment
        m["seeds"] = [](LabConfig& c, const std::string& key, const std::string& v, const std::filesystem::path&) {
            c.seeds.clear();
            for (auto& s : split_list(v)) c.seeds.push_back(to_uint(key, s));
        };
        return m;
    }();
    return table;
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, _] : detail::setters()) keys.push_back(k);
    return keys;
}

// Applies key-values on top of `base`. The engine map is loaded from
// `engine_map` when that key is present.
inline LabConfig apply_config(const KeyValues& kv, LabConfig base = {},
                              const std::filesystem::path& relative_to = std::filesystem::path(".")) {
    const auto& table = detail::setters();
    for (const auto& [k, v] : kv) {
        auto it = table.find(k);
        if (it == table.end()) throw ConfigError("unknown config key '" + k + "'");
        it->second(base, k, v, relative_to);
    }
    if (!base.engine_map_path.empty() && kv.count("engine_map")) {
        try {
            base.powertrain.engine_map = EngineMap::load(base.engine_map_path);
        } catch (const ParseError& e) {
            throw ConfigError(std::string("engine map: ") + e.what());
        }
    }
    base.tabular.initial_soc = base.initial_soc;
    base.agent.initial_soc = base.initial_soc;
    base.tabular.disc.soc.lo = base.powertrain.soc_min;
    base.tabular.disc.soc.hi = base.powertrain.soc_max;
    return base;
}

inline LabConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    const auto kv = parse_key_values(in, path);
    auto cfg = apply_config(kv, LabConfig{}, std::filesystem::path(path).parent_path());
    cfg.validate();
    return cfg;
}

}  // namespace hevlab
