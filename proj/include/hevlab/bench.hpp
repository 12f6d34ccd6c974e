#pragma once

// Experiment orchestration: runs one method over a list of seeds, measures the
// greedy evaluation rollout and writes the artifacts; builds the cross-method
// comparison table.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hevlab/action_grid.hpp"
#include "hevlab/config.hpp"
#include "hevlab/deep_rl.hpp"
#include "hevlab/errors.hpp"
#include "hevlab/experts.hpp"
#include "hevlab/mlp.hpp"
#include "hevlab/powertrain.hpp"
#include "hevlab/replay.hpp"
#include "hevlab/rewards.hpp"
#include "hevlab/rollout.hpp"
#include "hevlab/tabular.hpp"

namespace hevlab {

enum class Method {
    Conventional,
    DP,
    DDQN_fuel,
    DDQN_shaped,
    DDQN_shaped_dp_seed,
    DDQN_shaped_mixed_seed,
    DQN_fuel,
    Tabular_DQL,
};

inline constexpr Method kAllMethods[] = {Method::Conventional,        Method::DP,
                                         Method::DDQN_fuel,           Method::DDQN_shaped,
                                         Method::DDQN_shaped_dp_seed, Method::DDQN_shaped_mixed_seed,
                                         Method::DQN_fuel,            Method::Tabular_DQL};

inline const char* to_string(Method m) {
    switch (m) {
        case Method::Conventional: return "Conventional";
        case Method::DP: return "DP";
        case Method::DDQN_fuel: return "DDQN_fuel";
        case Method::DDQN_shaped: return "DDQN_shaped";
        case Method::DDQN_shaped_dp_seed: return "DDQN_shaped_dp_seed";
        case Method::DDQN_shaped_mixed_seed: return "DDQN_shaped_mixed_seed";
        case Method::DQN_fuel: return "DQN_fuel";
        case Method::Tabular_DQL: return "Tabular_DQL";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    for (auto m : kAllMethods)
        if (s == to_string(m)) return m;
    throw ConfigError("unknown method '" + s + "'");
}

inline bool is_seeded(Method m) { return m == Method::DDQN_shaped_dp_seed || m == Method::DDQN_shaped_mixed_seed; }

inline bool is_deep(Method m) {
    return m == Method::DDQN_fuel || m == Method::DQN_fuel || m == Method::DDQN_shaped || is_seeded(m);
}

inline bool is_stochastic(Method m) { return is_deep(m) || m == Method::Tabular_DQL; }

inline RewardKind method_reward(Method m) {
    switch (m) {
        case Method::DDQN_shaped:
        case Method::DDQN_shaped_dp_seed:
        case Method::DDQN_shaped_mixed_seed: return RewardKind::Shaped;
        default: return RewardKind::FuelOnly;
    }
}

struct SeedingSpec {
    std::vector<Transition> data;  // already mixed and shuffled where applicable
    double fraction = 0.25;
    double epsilon_start = 0.5;
};

struct ExperimentSpec {
    Method method = Method::Conventional;
    LabConfig config;
    DutyCycle cycle;
    std::optional<SeedingSpec> seeding;
    std::vector<std::uint64_t> seeds{1};
    std::filesystem::path out_dir;  // empty: no files written
    // Ablation: run a deep method with the other algorithm (DQN on the
    // shaped reward, say). Unset uses the method's own.
    std::optional<Algorithm> algorithm;

    void validate() const {
        config.validate();
        cycle.validate();
        if (is_seeded(method) != seeding.has_value())
            throw ConfigError(std::string("seeding data must be given exactly for seeded methods (method ") +
                              to_string(method) + ")");
        if (seeding && seeding->data.empty()) throw ConfigError("seeding data is empty");
        if (seeds.empty()) throw ConfigError("at least one seed is required");
        if (algorithm && !is_deep(method)) throw ConfigError("an algorithm override needs a deep method");
    }
};

struct MetricsReport {
    Method method = Method::Conventional;
    std::optional<std::uint64_t> seed;  // nullopt: aggregate or deterministic method
    double fuel_kg = 0.0;
    double fuel_gal = 0.0;
    double mean_eta = 0.0;
    double initial_soc = 0.0;
    double final_soc = 0.0;
    double band_occupancy = 0.0;
    std::optional<std::size_t> convergence_episode;
    std::size_t episodes_run = 0;
    std::size_t converged_runs = 0;
    bool charge_sustaining = false;
    bool truncated = false;
};

struct RunArtifacts {
    MetricsReport metrics;
    Trajectory trajectory;
    std::optional<TrainReport> training;
    std::optional<MlpParams> network;
    std::optional<TabularReport> tabular;
    double wall_time_s = 0.0;
};

struct ExperimentResult {
    std::vector<RunArtifacts> runs;
    MetricsReport aggregate;
};

// ---- expert data ----------------------------------------------------------

enum class ExpertKind { DP, Rule };

// Cycles the expert data is generated from: seeding.cycles draws of the
// configured generator, seeded cycle_seed_base, cycle_seed_base + 1, ...
inline std::vector<DutyCycle> expert_cycles(const LabConfig& cfg) {
    std::vector<DutyCycle> out;
    for (std::size_t i = 0; i < cfg.seeding.cycles; ++i) {
        std::mt19937_64 rng(cfg.seeding.cycle_seed_base + i);
        out.push_back(generate_duty_cycle(cfg.cycle_gen, rng));
    }
    return out;
}

// Expert transitions on the agent's action grid, scored with `reward`.
inline std::vector<Transition> generate_expert_data(const LabConfig& cfg, ExpertKind kind,
                                                    const std::vector<DutyCycle>& cycles, const RewardSpec& reward) {
    const ActionGrid grid(cfg.powertrain.p_b_max, cfg.agent.action_bins);
    std::vector<Transition> out;
    for (const auto& cycle : cycles) {
        ExpertRollout r;
        if (kind == ExpertKind::DP) {
            if (cfg.dp.action_bins != cfg.agent.action_bins)
                throw ConfigError("DP expert data needs dp.action_bins == agent.action_bins");
            const auto grid_dp = DpGrid::uniform(cfg.powertrain, cfg.dp.soc_points, cfg.dp.action_bins, cfg.terminal());
            const auto sol = dp_solve(cfg.powertrain, cycle, grid_dp);
            r = rollout_to_transitions(dp_policy(cfg.powertrain, cycle, sol), cfg.powertrain, cycle, reward, grid,
                                       cfg.initial_soc);
        } else {
            r = rollout_to_transitions(rule_policy(cfg.powertrain, grid, cfg.seeding.rule_threshold_w),
                                       cfg.powertrain, cycle, reward, grid, cfg.initial_soc);
        }
        if (r.trajectory.truncated) throw InfeasibleStateError("expert rollout: " + r.trajectory.diagnostic);
        out.insert(out.end(), r.transitions.begin(), r.transitions.end());
    }
    return out;
}

inline std::vector<Transition> load_transition_files(const std::vector<std::string>& paths) {
    std::vector<Transition> out;
    for (const auto& p : paths) {
        auto part = load_transitions(p);
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

// Seeding for a seeded method: transition files from the config when given,
// otherwise freshly generated expert data. Mixed data is shuffled with a
// generator derived from `shuffle_seed`.
inline std::optional<SeedingSpec> make_seeding(Method m, const LabConfig& cfg, std::uint64_t shuffle_seed = 0) {
    if (!is_seeded(m)) return std::nullopt;
    RewardSpec reward = cfg.reward;
    reward.kind = method_reward(m);
    std::optional<std::vector<DutyCycle>> cycles;
    auto source = [&](ExpertKind k, const std::vector<std::string>& files) {
        if (!files.empty()) return load_transition_files(files);
        if (!cycles) cycles = expert_cycles(cfg);
        return generate_expert_data(cfg, k, *cycles, reward);
    };
    SeedingSpec s;
    s.epsilon_start = cfg.seeding.epsilon_start;
    if (m == Method::DDQN_shaped_dp_seed) {
        s.data = source(ExpertKind::DP, cfg.seeding.dp_files);
        s.fraction = cfg.seeding.dp_fraction;
    } else {
        std::mt19937_64 rng(shuffle_seed ^ 0x5eedULL);
        s.data = mix_and_shuffle(source(ExpertKind::DP, cfg.seeding.dp_files),
                                 source(ExpertKind::Rule, cfg.seeding.rule_files), rng);
        s.fraction = cfg.seeding.mixed_fraction;
    }
    for (const auto& t : s.data)
        if (t.action_index >= cfg.agent.action_bins)
            throw ConfigError("seeding transition action index outside the agent's action grid");
    return s;
}

// ---- single runs ----------------------------------------------------------

namespace detail {

inline MetricsReport metrics_of(Method m, const LabConfig& cfg, const Trajectory& tr) {
    MetricsReport r;
    r.method = m;
    const auto tm = measure(cfg.powertrain, tr, cfg.reward.band_lo, cfg.reward.band_hi);
    r.fuel_kg = tm.fuel_kg;
    r.fuel_gal = tm.fuel_gal;
    r.mean_eta = tm.mean_eta;
    r.initial_soc = tr.initial_soc;
    r.final_soc = tm.final_soc;
    r.band_occupancy = tm.band_occupancy;
    r.truncated = tr.truncated;
    r.charge_sustaining = !tr.truncated && std::abs(r.final_soc - r.initial_soc) <= cfg.dp.terminal_tolerance + 1e-12;
    return r;
}

template <class S>
PowerPolicy tabular_greedy(const PowertrainConfig& cfg, const Discretization& d, const QTable<S>& qa,
                           const QTable<S>& qb, const ActionGrid& grid) {
    return [&cfg, &d, &qa, &qb, grid](const EnvState& s) {
        const auto si = d.state_index(s.p_dem, s.soc);
        const auto ra = qa.row(si);
        const auto rb = qb.row(si);
        std::vector<float> q(ra.size());
        for (std::size_t a = 0; a < q.size(); ++a) q[a] = ra[a] + rb[a];
        return grid.value(masked_argmax(std::span<const float>(q), grid.mask(cfg, s)));
    };
}

}  // namespace detail

inline RunArtifacts run_once(const ExperimentSpec& spec, std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& cfg = spec.config;
    RewardSpec reward = cfg.reward;
    reward.kind = method_reward(spec.method);
    RunArtifacts out;

    switch (spec.method) {
        case Method::Conventional:
            out.trajectory = simulate(cfg.powertrain, spec.cycle, reward, cfg.initial_soc,
                                      [](const EnvState&) { return 0.0; });
            break;
        case Method::DP: {
            const auto grid = DpGrid::uniform(cfg.powertrain, cfg.dp.soc_points, cfg.dp.action_bins, cfg.terminal());
            const auto sol = dp_solve(cfg.powertrain, spec.cycle, grid);
            const auto policy = dp_policy(cfg.powertrain, spec.cycle, sol);
            out.trajectory = simulate(cfg.powertrain, spec.cycle, reward, cfg.initial_soc,
                                      [&](const EnvState& s) { return sol.actions.value(policy(s)); });
            break;
        }
        case Method::Tabular_DQL: {
            TabularConfig tc = cfg.tabular;
            tc.seed = seed;
            tc.initial_soc = cfg.initial_soc;
            QTable<DenseStorage> qa(tc.disc), qb(tc.disc);
            auto rep = train_tabular(cfg.powertrain, spec.cycle, reward, tc, qa, qb);
            const ActionGrid grid(cfg.powertrain.p_b_max, tc.disc.action_bins);
            out.trajectory = simulate(cfg.powertrain, spec.cycle, reward, cfg.initial_soc,
                                      detail::tabular_greedy(cfg.powertrain, tc.disc, qa, qb, grid));
            TrainReport tr;
            tr.reward = reward.kind;
            tr.returns = rep.returns;
            tr.episodes_run = rep.returns.size();
            tr.convergence_episode = detect_convergence(rep.returns, cfg.agent.convergence_window);
            double eps = tc.epsilon_start;
            for (std::size_t i = 0; i < tr.episodes_run; ++i) {
                tr.epsilons.push_back(eps);
                tr.loss_means.push_back(0.0);
                eps = std::max(tc.epsilon_end, eps * tc.epsilon_decay);
            }
            out.training = std::move(tr);
            out.tabular = std::move(rep);
            break;
        }
        default: {
            AgentConfig agent = cfg.agent;
            agent.algorithm = spec.method == Method::DQN_fuel ? Algorithm::DQN : Algorithm::DDQN;
            if (spec.algorithm) agent.algorithm = *spec.algorithm;
            agent.initial_soc = cfg.initial_soc;
            agent.seed = seed;
            ReplayBuffer buffer(agent.buffer_capacity);
            if (spec.seeding) {
                buffer.preseed(spec.seeding->data, spec.seeding->fraction);
                agent.epsilon_start = spec.seeding->epsilon_start;
            }
            std::mt19937_64 rng(seed);
            auto res = train(cfg.powertrain, spec.cycle, reward, agent, buffer, rng);
            out.trajectory = res.report.greedy;
            out.network = std::move(res.online);
            out.training = std::move(res.report);
            break;
        }
    }

    out.metrics = detail::metrics_of(spec.method, cfg, out.trajectory);
    if (is_stochastic(spec.method)) out.metrics.seed = seed;
    if (out.training) {
        out.metrics.convergence_episode = out.training->convergence_episode;
        out.metrics.episodes_run = out.training->episodes_run;
        out.metrics.converged_runs = out.training->convergence_episode ? 1 : 0;
    }
    out.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

// Median of per-seed convergence episodes. A run that never converged counts
// as its episode budget, a lower bound on its true value. nullopt when the
// median itself falls on a non-converged run.
inline std::optional<std::size_t> median_convergence(const std::vector<MetricsReport>& runs) {
    if (runs.empty()) return std::nullopt;
    std::vector<std::pair<std::size_t, bool>> v;
    for (const auto& r : runs)
        v.emplace_back(r.convergence_episode ? *r.convergence_episode : r.episodes_run, r.convergence_episode.has_value());
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    if (n % 2 == 1) {
        const auto& mid = v[n / 2];
        return mid.second ? std::optional<std::size_t>(mid.first) : std::nullopt;
    }
    const auto &a = v[n / 2 - 1], &b = v[n / 2];
    if (!a.second || !b.second) return std::nullopt;
    return (a.first + b.first) / 2;
}

// Mean of fuel, efficiency, SOC and band occupancy; median convergence.
inline MetricsReport aggregate(const std::vector<MetricsReport>& runs) {
    if (runs.empty()) throw DomainError("nothing to aggregate");
    MetricsReport a;
    a.method = runs.front().method;
    a.initial_soc = runs.front().initial_soc;
    a.charge_sustaining = true;
    const double n = static_cast<double>(runs.size());
    for (const auto& r : runs) {
        a.fuel_kg += r.fuel_kg / n;
        a.fuel_gal += r.fuel_gal / n;
        a.mean_eta += r.mean_eta / n;
        a.final_soc += r.final_soc / n;
        a.band_occupancy += r.band_occupancy / n;
        a.episodes_run = std::max(a.episodes_run, r.episodes_run);
        a.converged_runs += r.converged_runs;
        a.charge_sustaining = a.charge_sustaining && r.charge_sustaining;
        a.truncated = a.truncated || r.truncated;
    }
    a.convergence_episode = median_convergence(runs);
    return a;
}

// ---- files ----------------------------------------------------------------

inline constexpr const char* kMetricsHeader =
    "method,seed,fuel_kg,fuel_gal,mean_eta,initial_soc,final_soc,band_occupancy,convergence_episode,episodes_run,"
    "converged_runs,charge_sustaining,truncated";

inline void write_metrics_row(std::ostream& out, const MetricsReport& r, const std::string& seed_label) {
    out << to_string(r.method) << ',' << seed_label << ',' << r.fuel_kg << ',' << r.fuel_gal << ',' << r.mean_eta
        << ',' << r.initial_soc << ',' << r.final_soc << ',' << r.band_occupancy << ',';
    if (r.convergence_episode) out << *r.convergence_episode;
    out << ',' << r.episodes_run << ',' << r.converged_runs << ',' << (r.charge_sustaining ? 1 : 0) << ','
        << (r.truncated ? 1 : 0) << '\n';
}

inline void write_metrics_csv(const std::string& path, const ExperimentResult& res) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path);
    out << kMetricsHeader << '\n' << std::setprecision(17);
    for (const auto& run : res.runs)
        write_metrics_row(out, run.metrics, run.metrics.seed ? std::to_string(*run.metrics.seed) : "-");
    write_metrics_row(out, res.aggregate, "aggregate");
}

// Reads the aggregate row of a metrics CSV.
inline MetricsReport read_aggregate_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || detail::trim(line) != kMetricsHeader)
        throw ParseError(path + ": unexpected metrics header");
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        const auto c = detail::split_csv(detail::trim(line));
        if (c.size() != 13) throw ParseError(path + ": expected 13 columns", row);
        if (c[1] != "aggregate") continue;
        MetricsReport r;
        r.method = parse_method(c[0]);
        r.fuel_kg = detail::parse_double(c[2], row);
        r.fuel_gal = detail::parse_double(c[3], row);
        r.mean_eta = detail::parse_double(c[4], row);
        r.initial_soc = detail::parse_double(c[5], row);
        r.final_soc = detail::parse_double(c[6], row);
        r.band_occupancy = detail::parse_double(c[7], row);
        if (!c[8].empty()) r.convergence_episode = static_cast<std::size_t>(detail::parse_double(c[8], row));
        r.episodes_run = static_cast<std::size_t>(detail::parse_double(c[9], row));
        r.converged_runs = static_cast<std::size_t>(detail::parse_double(c[10], row));
        r.charge_sustaining = c[11] == "1";
        r.truncated = c[12] == "1";
        return r;
    }
    throw ParseError(path + ": no aggregate row");
}

// Reward curve, trajectory, engine operating points and (tabular only) the
// visit heatmap, all prefixed with `prefix`.
inline void emit_plot_data(const RunArtifacts& run, const PowertrainConfig& cfg, const std::filesystem::path& dir,
                           const std::string& prefix) {
    std::filesystem::create_directories(dir);
    auto file = [&](const std::string& name) { return (dir / (prefix + name)).string(); };
    write_trajectory_csv(file("trajectory.csv"), cfg, run.trajectory);
    write_operating_points_csv(file("operating_points.csv"), cfg, run.trajectory);
    if (run.training) write_training_csv(file("training.csv"), *run.training);
    if (run.tabular) run.tabular->heatmap.write_csv(file("heatmap.csv"));
    if (run.network) save_checkpoint(file("network.bin"), *run.network);
}

inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    ExperimentResult res;
    const std::vector<std::uint64_t> seeds =
        is_stochastic(spec.method) ? spec.seeds : std::vector<std::uint64_t>{spec.seeds.front()};
    std::vector<MetricsReport> per_run;
    for (auto seed : seeds) {
        res.runs.push_back(run_once(spec, seed));
        per_run.push_back(res.runs.back().metrics);
    }
    res.aggregate = aggregate(per_run);

    if (!spec.out_dir.empty()) {
        std::filesystem::create_directories(spec.out_dir);
        for (const auto& run : res.runs) {
            const std::string prefix = run.metrics.seed ? "seed" + std::to_string(*run.metrics.seed) + "_" : "";
            emit_plot_data(run, spec.config.powertrain, spec.out_dir, prefix);
        }
        write_metrics_csv((spec.out_dir / "metrics.csv").string(), res);
        std::ofstream timing(spec.out_dir / "timing.txt");
        for (const auto& run : res.runs)
            timing << (run.metrics.seed ? std::to_string(*run.metrics.seed) : "-") << ' ' << run.wall_time_s << " s\n";
    }
    return res;
}

// ---- comparison -----------------------------------------------------------

inline double fc_reduction(double conventional, double x) {
    if (!(conventional > 0.0)) throw DomainError("conventional fuel must be > 0");
    return (conventional - x) / conventional;
}

// Share of the DP benchmark achieved: fuel DP/x, efficiency x/DP.
inline double dp_fuel_share(double dp, double x) {
    if (!(x > 0.0)) throw DomainError("fuel must be > 0 for a DP share");
    return dp / x;
}

inline double dp_eta_share(double dp, double x) {
    if (!(dp > 0.0)) throw DomainError("DP efficiency must be > 0 for a DP share");
    return x / dp;
}

struct ComparisonRow {
    MetricsReport report;
    std::optional<double> fc_reduction;
    std::optional<double> dp_fuel_share;
    std::optional<double> dp_eta_share;
    std::optional<double> convergence_speedup;  // seeded rows, relative to DDQN_shaped
    std::optional<bool> ordering_ok;
};

struct ComparisonTable {
    std::vector<ComparisonRow> rows;

    void write_csv(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw ParseError("cannot write " + path);
        out << "method,fuel_gal,mean_eta,final_soc,convergence_episode,fc_reduction_pct,dp_fuel_pct,dp_eta_pct,"
               "convergence_speedup_pct,ordering_ok\n"
            << std::fixed;
        auto pct = [&out](const std::optional<double>& v) {
            if (v) out << std::setprecision(1) << 100.0 * *v;
        };
        for (const auto& r : rows) {
            const auto& m = r.report;
            out << to_string(m.method) << ',' << std::setprecision(2) << m.fuel_gal << ',' << std::setprecision(4)
                << m.mean_eta << ',' << m.final_soc << ',';
            if (m.convergence_episode) out << *m.convergence_episode;
            out << ',';
            pct(r.fc_reduction);
            out << ',';
            pct(r.dp_fuel_share);
            out << ',';
            pct(r.dp_eta_share);
            out << ',';
            pct(r.convergence_speedup);
            out << ',';
            if (r.ordering_ok) out << (*r.ordering_ok ? "yes" : "no");
            out << '\n';
        }
    }
};

// Needs the Conventional and DP rows. The DP shares are left empty unless
// both the DP row and the compared row are charge-sustaining.
inline ComparisonTable compare(const std::vector<MetricsReport>& reports) {
    auto find = [&](Method m) -> const MetricsReport* {
        for (const auto& r : reports)
            if (r.method == m) return &r;
        return nullptr;
    };
    const auto* conv = find(Method::Conventional);
    const auto* dp = find(Method::DP);
    if (!conv || !dp) throw ConfigError("comparison needs Conventional and DP reports");
    const auto* unseeded = find(Method::DDQN_shaped);
    const auto* dp_seeded = find(Method::DDQN_shaped_dp_seed);

    ComparisonTable t;
    for (auto m : kAllMethods) {
        const auto* r = find(m);
        if (!r) continue;
        ComparisonRow row;
        row.report = *r;
        if (m != Method::Conventional) row.fc_reduction = fc_reduction(conv->fuel_gal, r->fuel_gal);
        if (m != Method::Conventional && dp->charge_sustaining && r->charge_sustaining && r->fuel_gal > 0.0) {
            row.dp_fuel_share = dp_fuel_share(dp->fuel_gal, r->fuel_gal);
            if (dp->mean_eta > 0.0) row.dp_eta_share = dp_eta_share(dp->mean_eta, r->mean_eta);
        }
        if (is_seeded(m) && unseeded && unseeded->convergence_episode && r->convergence_episode) {
            const double u = static_cast<double>(*unseeded->convergence_episode);
            const double s = static_cast<double>(*r->convergence_episode);
            if (u > 0.0) row.convergence_speedup = (u - s) / u;
            bool ok = s <= u;
            if (m == Method::DDQN_shaped_mixed_seed && dp_seeded && dp_seeded->convergence_episode)
                ok = ok && s >= static_cast<double>(*dp_seeded->convergence_episode);
            row.ordering_ok = ok;
        }
        t.rows.push_back(row);
    }
    return t;
}

}  // namespace hevlab
