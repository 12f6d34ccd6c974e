#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hevlab/hevlab.hpp"

namespace hevlab::cli {
namespace {

namespace fs = std::filesystem;

struct Options {
    std::string config;
    std::string cycle;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string method;
    std::optional<std::size_t> episodes;
    std::string kind = "both";
    std::vector<std::string> inputs;
    std::vector<std::string> overrides;  // key=value, applied after the config file
};

LabConfig base_config(const Options& o) {
    LabConfig cfg;
    if (!o.config.empty()) {
        std::ifstream in(o.config);
        if (!in) throw ConfigError("cannot open config " + o.config);
        cfg = apply_config(parse_key_values(in, o.config), LabConfig{}, fs::path(o.config).parent_path());
    }
    if (!o.overrides.empty()) {
        std::string text;
        for (const auto& kv : o.overrides) text += kv + "\n";
        std::istringstream in(text);
        cfg = apply_config(parse_key_values(in, "--set"), cfg, fs::current_path());
    }
    return cfg;
}

LabConfig load(const Options& o) {
    LabConfig cfg = base_config(o);
    if (o.episodes) {
        cfg.agent.max_episodes = *o.episodes;
        cfg.tabular.episodes = *o.episodes;
    }
    if (o.seed) cfg.seeds = {*o.seed};
    if (cfg.powertrain.engine_map.empty()) throw ConfigError("no engine map configured (engine_map = <csv>)");
    cfg.validate();
    return cfg;
}

DutyCycle cycle_of(const Options& o, const LabConfig& cfg) {
    if (!o.cycle.empty()) return load_duty_cycle(o.cycle);
    std::mt19937_64 rng(cfg.cycle_seed);
    return generate_duty_cycle(cfg.cycle_gen, rng);
}

fs::path out_dir(const Options& o) {
    if (o.out.empty()) throw ConfigError("--out is required");
    fs::create_directories(o.out);
    return o.out;
}

void print(const MetricsReport& m) {
    std::cout << to_string(m.method) << ": fuel " << m.fuel_gal << " gal, mean eta " << m.mean_eta << ", soc "
              << m.initial_soc << " -> " << m.final_soc << ", band " << m.band_occupancy;
    if (m.convergence_episode) std::cout << ", converged at episode " << *m.convergence_episode;
    else if (m.episodes_run > 0) std::cout << ", not converged in " << m.episodes_run << " episodes";
    std::cout << '\n';
}

int cmd_cycle_gen(const Options& o) {
    LabConfig cfg = base_config(o);
    std::mt19937_64 rng(o.seed.value_or(cfg.cycle_seed));
    const auto c = generate_duty_cycle(cfg.cycle_gen, rng);
    if (o.out.empty()) throw ConfigError("--out is required");
    save_duty_cycle(o.out, c);
    std::cout << "wrote " << c.size() << " steps to " << o.out << '\n';
    return 0;
}

int cmd_dp(const Options& o) {
    const auto cfg = load(o);
    const auto cycle = cycle_of(o, cfg);
    const auto dir = out_dir(o);
    const auto grid = DpGrid::uniform(cfg.powertrain, cfg.dp.soc_points, cfg.dp.action_bins, cfg.terminal());
    const auto sol = dp_solve(cfg.powertrain, cycle, grid);
    sol.write_csv((dir / "dp_cost.csv").string());

    ExperimentSpec spec;
    spec.method = Method::DP;
    spec.config = cfg;
    spec.cycle = cycle;
    spec.seeds = cfg.seeds;
    spec.out_dir = dir;
    print(run_experiment(spec).aggregate);
    return 0;
}

int cmd_train(const Options& o) {
    const auto cfg = load(o);
    const auto cycle = cycle_of(o, cfg);
    const auto dir = out_dir(o);
    AgentConfig agent = cfg.agent;
    agent.seed = cfg.seeds.front();
    ReplayBuffer buffer(agent.buffer_capacity);
    std::mt19937_64 rng(agent.seed);
    const auto res = train(cfg.powertrain, cycle, cfg.reward, agent, buffer, rng);
    write_training_csv((dir / "training.csv").string(), res.report);
    save_checkpoint((dir / "network.bin").string(), res.online);
    write_trajectory_csv((dir / "trajectory.csv").string(), cfg.powertrain, res.report.greedy);
    write_operating_points_csv((dir / "operating_points.csv").string(), cfg.powertrain, res.report.greedy);
    const auto& m = res.report.metrics;
    std::cout << to_string(agent.algorithm) << '/' << to_string(cfg.reward.kind) << ": " << res.report.episodes_run
              << " episodes, fuel " << m.fuel_gal << " gal, mean eta " << m.mean_eta << ", final soc " << m.final_soc;
    if (res.report.convergence_episode) std::cout << ", converged at episode " << *res.report.convergence_episode;
    std::cout << '\n';
    for (const auto& a : res.report.aborted) std::cerr << "aborted " << a << '\n';
    return 0;
}

int cmd_seed_gen(const Options& o) {
    const auto cfg = load(o);
    const auto dir = out_dir(o);
    if (o.kind != "dp" && o.kind != "rule" && o.kind != "both") throw ConfigError("--kind must be dp, rule or both");
    const auto cycles = expert_cycles(cfg);
    if (o.kind != "rule") {
        const auto d = generate_expert_data(cfg, ExpertKind::DP, cycles, cfg.reward);
        save_transitions((dir / "dp_transitions.csv").string(), d);
        std::cout << "dp: " << d.size() << " transitions\n";
    }
    if (o.kind != "dp") {
        const auto d = generate_expert_data(cfg, ExpertKind::Rule, cycles, cfg.reward);
        save_transitions((dir / "rule_transitions.csv").string(), d);
        std::cout << "rule: " << d.size() << " transitions\n";
    }
    return 0;
}

int cmd_run(const Options& o) {
    const auto cfg = load(o);
    ExperimentSpec spec;
    spec.method = parse_method(o.method);
    spec.config = cfg;
    spec.cycle = cycle_of(o, cfg);
    spec.seeds = cfg.seeds;
    spec.out_dir = out_dir(o);
    spec.seeding = make_seeding(spec.method, cfg, cfg.seeds.front());
    const auto res = run_experiment(spec);
    for (const auto& r : res.runs)
        if (r.metrics.seed) {
            std::cout << "seed " << *r.metrics.seed << ": ";
            print(r.metrics);
        }
    print(res.aggregate);
    return 0;
}

int cmd_compare(const Options& o) {
    std::vector<MetricsReport> reports;
    for (const auto& in : o.inputs) {
        const fs::path p = fs::is_directory(in) ? fs::path(in) / "metrics.csv" : fs::path(in);
        reports.push_back(read_aggregate_metrics(p.string()));
    }
    const auto table = compare(reports);
    if (o.out.empty()) throw ConfigError("--out is required");
    table.write_csv(o.out);
    std::cout << "wrote " << table.rows.size() << " rows to " << o.out << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Series-hybrid tractor energy-management lab"};
    app.require_subcommand(1);
    Options o;

    auto add_common = [&o](CLI::App* c) {
        c->add_option("--config", o.config, "Key-value config file");
        c->add_option("--out", o.out, "Output file or directory");
        c->add_option("--set", o.overrides, "Override a config key (key=value)");
    };

    auto* cycle = app.add_subcommand("cycle", "Duty-cycle utilities");
    cycle->require_subcommand(1);
    auto* gen = cycle->add_subcommand("gen", "Generate a duty cycle from the config's generator settings");
    add_common(gen);
    gen->add_option("--seed", o.seed, "Generator seed");

    auto* dp = app.add_subcommand("dp", "Solve the DP benchmark and roll it out");
    add_common(dp);
    dp->add_option("--cycle", o.cycle, "Duty-cycle CSV");

    auto* tr = app.add_subcommand("train", "Train one agent as configured");
    add_common(tr);
    tr->add_option("--cycle", o.cycle, "Duty-cycle CSV");
    tr->add_option("--seed", o.seed, "Seed");
    tr->add_option("--episodes", o.episodes, "Episode budget");

    auto* sg = app.add_subcommand("seed-gen", "Generate expert transitions for replay seeding");
    add_common(sg);
    sg->add_option("--kind", o.kind, "dp, rule or both");

    auto* run = app.add_subcommand("run", "Run one method over the configured seeds");
    add_common(run);
    run->add_option("--cycle", o.cycle, "Duty-cycle CSV");
    run->add_option("--seed", o.seed, "Run a single seed");
    run->add_option("--method", o.method, "Method name")->required();
    run->add_option("--episodes", o.episodes, "Episode budget");

    auto* cmp = app.add_subcommand("compare", "Build the comparison table from run outputs");
    cmp->add_option("--out", o.out, "Output CSV")->required();
    cmp->add_option("inputs", o.inputs, "Run directories or metrics CSVs")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (*gen) return cmd_cycle_gen(o);
        if (*dp) return cmd_dp(o);
        if (*tr) return cmd_train(o);
        if (*sg) return cmd_seed_gen(o);
        if (*run) return cmd_run(o);
        if (*cmp) return cmd_compare(o);
    } catch (const InfeasibleStateError& e) {
        std::cerr << "infeasible: " << e.what() << '\n';
        return kExitInfeasible;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const DomainError& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitConfig;
}

}  // namespace hevlab::cli
