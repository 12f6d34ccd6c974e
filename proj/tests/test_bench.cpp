#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "hevlab/hevlab.hpp"

using namespace hevlab;
namespace fs = std::filesystem;

namespace {

const std::string kMap = std::string(HEVLAB_DATA_DIR) + "/engine_map.csv";

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("hevlab_bench_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::vector<std::string>> read_rows(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cells.push_back(c);
        rows.push_back(cells);
    }
    return rows;
}

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "hevlab");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    return cli::main(static_cast<int>(argv.size()), argv.data());
}

// Small but complete lab setup: 16-step cycle, 7 actions, tiny tabular grid.
fs::path write_small_config(const fs::path& dir) {
    std::ofstream out(dir / "lab.cfg");
    out << "engine_map = " << kMap << "\n"
        << "q_batt = 6e4\ninitial_soc = 0.5\n"
        << "agent.action_bins = 7\nagent.hidden = 16,16\nagent.batch_size = 16\nagent.buffer_capacity = 2000\n"
        << "agent.target_sync = 50\nagent.max_episodes = 12\nagent.epsilon_decay = 0.8\nagent.convergence_window = 2\n"
        << "tabular.p_dem_bins = 20\ntabular.soc_bins = 10\ntabular.action_bins = 7\ntabular.episodes = 12\n"
        << "dp.soc_points = 121\ndp.action_bins = 7\ndp.terminal = initial\ndp.terminal_tolerance = 0.05\n"
        << "cycle.segments = 4\ncycle.duration_s = 16\ncycle.level_min_w = 4e4\ncycle.level_max_w = 2.4e5\n"
        << "seed.cycles = 2\nseeds = 1,2\n";
    return dir / "lab.cfg";
}

fs::path write_cycle(const fs::path& dir, const std::vector<double>& demand) {
    const auto p = dir / "cycle.csv";
    std::ofstream out(p);
    out << "t_s,p_dem_w\n";
    for (std::size_t i = 0; i < demand.size(); ++i) out << i << ',' << demand[i] << '\n';
    return p;
}

double lerp_map(double p) {
    // independent reading of the default map
    std::ifstream in(kMap);
    std::string line;
    std::getline(in, line);
    std::vector<std::pair<double, double>> k;
    while (std::getline(in, line)) {
        const auto c = line.find(',');
        k.emplace_back(std::stod(line.substr(0, c)), std::stod(line.substr(c + 1)));
    }
    for (std::size_t i = 1; i < k.size(); ++i)
        if (p <= k[i].first) return k[i - 1].second + (p - k[i - 1].first) / (k[i].first - k[i - 1].first) * (k[i].second - k[i - 1].second);
    return k.back().second;
}

MetricsReport report(Method m, double gal, double eta = 0.4, bool sustaining = true) {
    MetricsReport r;
    r.method = m;
    r.fuel_gal = gal;
    r.mean_eta = eta;
    r.charge_sustaining = sustaining;
    return r;
}

LabConfig small_lab(const fs::path& dir) { return load_config(write_small_config(dir).string()); }

}  // namespace

TEST(Methods, NamesRoundTrip) {
    for (auto m : kAllMethods) EXPECT_EQ(parse_method(to_string(m)), m);
    EXPECT_THROW(parse_method("PPO"), ConfigError);
    EXPECT_EQ(method_reward(Method::DDQN_fuel), RewardKind::FuelOnly);
    EXPECT_EQ(method_reward(Method::DDQN_shaped_mixed_seed), RewardKind::Shaped);
}

TEST(RunOnce, ConventionalInBandMatchesClosedForm) {
    const auto dir = scratch("conv");
    ExperimentSpec spec;
    spec.method = Method::Conventional;
    spec.config = small_lab(dir);
    spec.cycle.demand = {1.2e5, 1.5e5, 1.8e5, 1.3e5, 1.6e5};
    const auto r = run_once(spec, 1);
    double kg = 0.0;
    for (double p : spec.cycle.demand) kg += p / (lerp_map(p) * 4.25e7) * 1.0;
    EXPECT_NEAR(r.metrics.fuel_gal, kg / 0.832 / 3.78541, 1e-12);
    EXPECT_GE(r.metrics.mean_eta, 0.42);
    EXPECT_LE(r.metrics.mean_eta, 0.44);
    EXPECT_EQ(r.metrics.band_occupancy, 1.0);
    EXPECT_EQ(r.metrics.final_soc, 0.5);
    EXPECT_TRUE(r.metrics.charge_sustaining);
    EXPECT_FALSE(r.metrics.seed);
}

TEST(RunOnce, DpFreeTerminalLowPowerIsFuelFree) {
    const auto dir = scratch("dpfree");
    ExperimentSpec spec;
    spec.method = Method::DP;
    spec.config = small_lab(dir);
    spec.config.dp.terminal = TerminalMode::Free;
    spec.cycle.demand.assign(10, 5e4);  // on the 50 kW action grid
    const auto r = run_once(spec, 1);
    EXPECT_EQ(r.metrics.fuel_gal, 0.0);
    EXPECT_EQ(r.metrics.mean_eta, 0.0);
    EXPECT_LT(r.metrics.final_soc, 0.5);
}

TEST(RunOnce, AlgorithmOverride) {
    const auto dir = scratch("override");
    ExperimentSpec spec;
    spec.config = small_lab(dir);
    std::mt19937_64 rng(1);
    spec.cycle = generate_duty_cycle(spec.config.cycle_gen, rng);
    spec.method = Method::DP;
    spec.algorithm = Algorithm::DQN;
    EXPECT_THROW(spec.validate(), ConfigError);

    // DDQN_fuel forced to DQN is the DQN_fuel run
    spec.method = Method::DDQN_fuel;
    const auto forced = run_once(spec, 2);
    spec.method = Method::DQN_fuel;
    spec.algorithm.reset();
    const auto plain = run_once(spec, 2);
    ASSERT_TRUE(forced.training && plain.training);
    EXPECT_EQ(forced.training->returns, plain.training->returns);
    EXPECT_EQ(forced.metrics.fuel_gal, plain.metrics.fuel_gal);
    EXPECT_EQ(forced.metrics.method, Method::DDQN_fuel);

    spec.method = Method::DDQN_fuel;
    const auto ddqn = run_once(spec, 2);
    EXPECT_NE(ddqn.training->returns, plain.training->returns);
}

TEST(Aggregate, MeansAndCensoredMedian) {
    std::vector<MetricsReport> runs(3, report(Method::DDQN_shaped, 1.0));
    runs[0].fuel_gal = 1.0;
    runs[1].fuel_gal = 2.0;
    runs[2].fuel_gal = 4.0;
    for (auto& r : runs) r.episodes_run = 100;
    runs[0].convergence_episode = 10;
    runs[1].convergence_episode = 30;
    const auto a = aggregate(runs);
    EXPECT_DOUBLE_EQ(a.fuel_gal, 7.0 / 3.0);
    EXPECT_EQ(a.convergence_episode, 30u);
    // the median lands on a run that never converged
    runs[1].convergence_episode.reset();
    EXPECT_FALSE(aggregate(runs).convergence_episode);
    runs[1].convergence_episode = 50;
    runs[2].convergence_episode = 20;
    EXPECT_EQ(aggregate(runs).convergence_episode, 20u);
}

TEST(Compare, Examples) {
    EXPECT_NEAR(100.0 * fc_reduction(1.95, 1.75), 10.2, 0.1);
    EXPECT_EQ(fc_reduction(1.95, 1.95), 0.0);
    EXPECT_NEAR(100.0 * dp_fuel_share(1.70, 1.75), 97.1, 0.05);
    EXPECT_THROW(fc_reduction(0.0, 1.0), DomainError);
}

TEST(Compare, TableRows) {
    auto shaped = report(Method::DDQN_shaped, 1.75, 0.43);
    shaped.convergence_episode = 400;
    auto dp_seed = report(Method::DDQN_shaped_dp_seed, 1.75, 0.43);
    dp_seed.convergence_episode = 300;
    auto mixed = report(Method::DDQN_shaped_mixed_seed, 1.75, 0.43);
    mixed.convergence_episode = 350;
    const auto t = compare({report(Method::DP, 1.70, 0.45), report(Method::Conventional, 1.95, 0.35), mixed, shaped,
                            dp_seed});
    ASSERT_EQ(t.rows.size(), 5u);
    // rows follow the method order, not the input order
    EXPECT_EQ(t.rows[0].report.method, Method::Conventional);
    EXPECT_EQ(t.rows[1].report.method, Method::DP);
    EXPECT_FALSE(t.rows[0].fc_reduction);
    const auto& s = t.rows[2];
    EXPECT_EQ(s.report.method, Method::DDQN_shaped);
    EXPECT_NEAR(*s.fc_reduction, 0.2 / 1.95, 1e-15);
    EXPECT_NEAR(*s.dp_fuel_share, 1.70 / 1.75, 1e-15);
    EXPECT_NEAR(*s.dp_eta_share, 0.43 / 0.45, 1e-15);
    EXPECT_FALSE(s.ordering_ok);
    EXPECT_DOUBLE_EQ(*t.rows[3].convergence_speedup, 0.25);
    EXPECT_TRUE(*t.rows[3].ordering_ok);
    EXPECT_TRUE(*t.rows[4].ordering_ok);

    // mixed faster than DP-seeded breaks the ordering
    mixed.convergence_episode = 250;
    const auto bad = compare({report(Method::DP, 1.70), report(Method::Conventional, 1.95), shaped, dp_seed, mixed});
    EXPECT_FALSE(*bad.rows.back().ordering_ok);
}

TEST(Compare, RefusesDpSharesWithoutChargeSustaining) {
    const auto t = compare({report(Method::Conventional, 1.95), report(Method::DP, 1.70, 0.45, false),
                            report(Method::DDQN_shaped, 1.75)});
    EXPECT_FALSE(t.rows[2].dp_fuel_share);
    EXPECT_FALSE(t.rows[2].dp_eta_share);
    EXPECT_TRUE(t.rows[2].fc_reduction);
    const auto u = compare({report(Method::Conventional, 1.95), report(Method::DP, 1.70, 0.45),
                            report(Method::DDQN_shaped, 1.60, 0.4, false)});
    EXPECT_FALSE(u.rows[2].dp_fuel_share);
}

TEST(Compare, MissingBaselineThrows) {
    EXPECT_THROW(compare({report(Method::DP, 1.7), report(Method::DDQN_shaped, 1.75)}), ConfigError);
    EXPECT_THROW(compare({report(Method::Conventional, 1.95)}), ConfigError);
}

TEST(Compare, CsvColumns) {
    const auto dir = scratch("cmpcsv");
    const auto t = compare({report(Method::Conventional, 1.95, 0.35), report(Method::DP, 1.70, 0.45),
                            report(Method::DDQN_shaped, 1.75, 0.43)});
    t.write_csv((dir / "t.csv").string());
    std::ifstream in(dir / "t.csv");
    std::string header, conv, dp, shaped;
    std::getline(in, header);
    std::getline(in, conv);
    std::getline(in, dp);
    std::getline(in, shaped);
    EXPECT_EQ(header,
              "method,fuel_gal,mean_eta,final_soc,convergence_episode,fc_reduction_pct,dp_fuel_pct,dp_eta_pct,"
              "convergence_speedup_pct,ordering_ok");
    EXPECT_EQ(shaped, "DDQN_shaped,1.75,0.4300,0.0000,,10.3,97.1,95.6,,");
}

TEST(Config, ParseErrors) {
    auto parse = [](const std::string& text) {
        std::istringstream in(text);
        return apply_config(parse_key_values(in, "t.cfg"), LabConfig{}, ".");
    };
    EXPECT_NO_THROW(parse("q_batt = 6e4\n# comment\n\nagent.hidden = 32, 32\n"));
    EXPECT_THROW(parse("no_such_key = 1\n"), ConfigError);
    EXPECT_THROW(parse("q_batt = 1\nq_batt = 2\n"), ConfigError);
    EXPECT_THROW(parse("q_batt 6e4\n"), ConfigError);
    EXPECT_THROW(parse("q_batt = lots\n"), ConfigError);
    EXPECT_THROW(parse("reward = fancy\n"), ConfigError);
    EXPECT_THROW(parse("agent.algorithm = SARSA\n"), ConfigError);
    EXPECT_THROW(parse("dp.terminal = sometimes\n"), ConfigError);
    EXPECT_THROW(parse("engine_map = /no/such/map.csv\n"), ConfigError);
    try {
        parse("q_batt = 1\nsoc_min = 0.2\nq_batt = 3\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("t.cfg:3"), std::string::npos) << e.what();
    }
    try {
        parse("bogus = 3\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos) << e.what();
    }
}

TEST(Config, DeskConfigLoads) {
    const auto cfg = load_config(std::string(HEVLAB_DATA_DIR) + "/desk.cfg");
    EXPECT_EQ(cfg.agent.action_bins, 31u);
    EXPECT_EQ(cfg.seeds.size(), 5u);
    EXPECT_EQ(cfg.initial_soc, cfg.agent.initial_soc);
    ASSERT_TRUE(cfg.terminal());
    EXPECT_EQ(cfg.terminal()->target, cfg.initial_soc);
    EXPECT_FALSE(cfg.powertrain.engine_map.empty());
}

TEST(Spec, SeedingPresentIffSeeded) {
    ExperimentSpec spec;
    spec.cycle.demand = {1e5};
    spec.method = Method::DDQN_shaped_dp_seed;
    EXPECT_THROW(spec.validate(), ConfigError);
    spec.seeding = SeedingSpec{};
    spec.seeding->data.resize(1);
    spec.method = Method::DDQN_shaped;
    EXPECT_THROW(spec.validate(), ConfigError);
}

TEST(Seeding, DpAndMixedData) {
    const auto dir = scratch("seeding");
    const auto cfg = small_lab(dir);
    const auto dp = make_seeding(Method::DDQN_shaped_dp_seed, cfg, 1);
    const auto mixed = make_seeding(Method::DDQN_shaped_mixed_seed, cfg, 1);
    ASSERT_TRUE(dp && mixed);
    EXPECT_EQ(dp->data.size(), 2u * 16u);
    EXPECT_EQ(mixed->data.size(), 4u * 16u);
    EXPECT_EQ(dp->fraction, cfg.seeding.dp_fraction);
    EXPECT_EQ(mixed->fraction, cfg.seeding.mixed_fraction);
    EXPECT_EQ(dp->epsilon_start, cfg.seeding.epsilon_start);
    EXPECT_FALSE(make_seeding(Method::DDQN_shaped, cfg));
    for (const auto& t : mixed->data) EXPECT_LT(t.action_index, cfg.agent.action_bins);
}

TEST(Cli, ExitCodes) {
    const auto dir = scratch("cli");
    const auto cfg = write_small_config(dir).string();
    EXPECT_EQ(run_cli({"bogus"}), cli::kExitConfig);
    EXPECT_EQ(run_cli({"run", "--method", "DP", "--config", (dir / "missing.cfg").string(), "--out", dir.string()}),
              cli::kExitConfig);
    EXPECT_EQ(run_cli({"run", "--method", "Nope", "--config", cfg, "--out", dir.string()}), cli::kExitConfig);
    EXPECT_EQ(run_cli({"run", "--method", "DP", "--config", cfg, "--out", dir.string(), "--set", "nokey=1"}),
              cli::kExitConfig);
    const auto bad = write_cycle(dir, {1e5, 5e5, 1e5});
    EXPECT_EQ(run_cli({"dp", "--config", cfg, "--cycle", bad.string(), "--out", (dir / "dp").string()}),
              cli::kExitInfeasible);
    EXPECT_EQ(run_cli({"run", "--method", "Conventional", "--config", cfg, "--out", (dir / "conv").string()}),
              cli::kExitOk);
    EXPECT_TRUE(fs::exists(dir / "conv" / "metrics.csv"));
    EXPECT_EQ(run_cli({"compare", "--out", (dir / "t.csv").string(), (dir / "conv").string()}), cli::kExitConfig);
}

TEST(Cli, EndToEnd) {
    const auto dir = scratch("e2e");
    const auto cfg = write_small_config(dir).string();
    const auto cycle = write_cycle(dir, {1.5e5, 1.5e5, 6e4, 6e4, 2.2e5, 2.2e5, 1.2e5, 1.2e5}).string();
    ASSERT_EQ(run_cli({"cycle", "gen", "--config", cfg, "--out", (dir / "gen.csv").string()}), 0);
    EXPECT_EQ(load_duty_cycle((dir / "gen.csv").string()).size(), 16u);
    for (const char* m : {"Conventional", "DP", "DDQN_shaped", "DDQN_shaped_dp_seed"})
        ASSERT_EQ(run_cli({"run", "--method", m, "--config", cfg, "--cycle", cycle, "--out", (dir / m).string()}), 0)
            << m;
    ASSERT_EQ(run_cli({"seed-gen", "--config", cfg, "--out", (dir / "seed").string()}), 0);
    EXPECT_EQ(load_transitions((dir / "seed" / "dp_transitions.csv").string()).size(), 2u * 16u);
    ASSERT_EQ(run_cli({"train", "--config", cfg, "--cycle", cycle, "--episodes", "5", "--out", (dir / "tr").string()}),
              0);
    EXPECT_EQ(read_rows(dir / "tr" / "training.csv").size(), 5u);
    EXPECT_NO_THROW(load_checkpoint((dir / "tr" / "network.bin").string()));
    ASSERT_EQ(run_cli({"compare", "--out", (dir / "t.csv").string(), (dir / "Conventional").string(),
                       (dir / "DP").string(), (dir / "DDQN_shaped" / "metrics.csv").string(),
                       (dir / "DDQN_shaped_dp_seed").string()}),
              0);
    EXPECT_EQ(read_rows(dir / "t.csv").size(), 4u);
}

TEST(Artifacts, FilesAndMetricConsistency) {
    const auto dir = scratch("artifacts");
    const auto cfg = write_small_config(dir).string();
    const std::vector<double> demand{1.5e5, 1.5e5, 6e4, 6e4, 2.2e5, 2.2e5, 1.2e5, 1.2e5, 0.0, 9e4};
    const auto cycle = write_cycle(dir, demand).string();
    const auto out = dir / "run";
    ASSERT_EQ(run_cli({"run", "--method", "DDQN_shaped", "--config", cfg, "--cycle", cycle, "--out", out.string()}), 0);
    const auto lab = load_config(cfg);
    for (const char* seed : {"1", "2"}) {
        const std::string p = std::string("seed") + seed + "_";
        const auto traj = read_rows(out / (p + "trajectory.csv"));
        ASSERT_EQ(traj.size(), demand.size());
        double kg = 0.0;
        std::size_t engine_on = 0;
        for (const auto& r : traj) {
            kg += std::stod(r[6]);
            engine_on += std::stod(r[3]) > 0.0 ? 1 : 0;
        }
        const auto ops = read_rows(out / (p + "operating_points.csv"));
        EXPECT_EQ(ops.size(), engine_on);
        for (const auto& r : ops) EXPECT_GT(std::stod(r[1]), 0.0);
        EXPECT_EQ(read_rows(out / (p + "training.csv")).size(), lab.agent.max_episodes);
        EXPECT_TRUE(fs::exists(out / (p + "network.bin")));

        // per-seed metrics row agrees with the emitted trajectory
        for (const auto& m : read_rows(out / "metrics.csv"))
            if (m[1] == seed) {
                EXPECT_NEAR(std::stod(m[3]), fuel_gallons(lab.powertrain, kg), 1e-9);
            }
    }
    EXPECT_EQ(read_rows(out / "metrics.csv").size(), 3u);
    const auto agg = read_aggregate_metrics((out / "metrics.csv").string());
    EXPECT_EQ(agg.method, Method::DDQN_shaped);
    EXPECT_EQ(agg.episodes_run, lab.agent.max_episodes);
}

TEST(Artifacts, TabularHeatmap) {
    const auto dir = scratch("tabular");
    const auto cfg = write_small_config(dir).string();
    const auto out = dir / "run";
    ASSERT_EQ(run_cli({"run", "--method", "Tabular_DQL", "--seed", "3", "--config", cfg, "--out", out.string()}), 0);
    EXPECT_TRUE(fs::exists(out / "seed3_heatmap.csv"));
    EXPECT_EQ(read_rows(out / "seed3_training.csv").size(), 12u);
    EXPECT_EQ(read_rows(out / "metrics.csv").size(), 2u);
}

TEST(Determinism, MetricsCsvIsByteIdentical) {
    const auto dir = scratch("determinism");
    const auto cfg = write_small_config(dir).string();
    for (const char* m : {"DDQN_shaped", "DDQN_shaped_mixed_seed", "DQN_fuel", "Tabular_DQL", "DP"}) {
        const auto a = dir / (std::string(m) + "_a"), b = dir / (std::string(m) + "_b");
        ASSERT_EQ(run_cli({"run", "--method", m, "--config", cfg, "--out", a.string()}), 0);
        ASSERT_EQ(run_cli({"run", "--method", m, "--config", cfg, "--out", b.string()}), 0);
        EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv")) << m;
        EXPECT_FALSE(slurp(a / "metrics.csv").empty());
    }
}
