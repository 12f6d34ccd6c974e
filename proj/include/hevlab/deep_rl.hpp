#pragma once

// DQN / DDQN over the masked battery-power grid: bootstrapped targets, hard
// target-network sync, per-episode epsilon decay, the training loop and the
// convergence detector used to compare runs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hevlab/action_grid.hpp"
#include "hevlab/errors.hpp"
#include "hevlab/mlp.hpp"
#include "hevlab/powertrain.hpp"
#include "hevlab/replay.hpp"
#include "hevlab/rewards.hpp"
#include "hevlab/rollout.hpp"
#include "hevlab/tabular.hpp"

namespace hevlab {

enum class Algorithm { DQN, DDQN };

inline const char* to_string(Algorithm a) { return a == Algorithm::DQN ? "DQN" : "DDQN"; }

struct AgentConfig {
    Algorithm algorithm = Algorithm::DDQN;
    double gamma = 0.99;
    double learning_rate = 1e-3;
    double epsilon_start = 1.0;
    double epsilon_end = 0.05;
    double epsilon_decay = 0.999;       // multiplicative, per episode
    std::size_t target_sync = 500;      // gradient steps between hard syncs
    std::size_t batch_size = 64;
    std::size_t buffer_capacity = 200000;
    std::size_t train_every = 1;        // environment steps per gradient step
    std::size_t max_episodes = 1000;
    std::size_t action_bins = 1600;
    std::vector<std::size_t> hidden{64, 64};
    double initial_soc = 0.8;
    std::size_t convergence_window = 200;
    bool stop_on_convergence = false;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
        if (!(0.0 <= epsilon_end && epsilon_end <= epsilon_start && epsilon_start <= 1.0))
            throw ConfigError("epsilon must satisfy 0 <= end <= start <= 1");
        if (!(epsilon_decay > 0.0 && epsilon_decay <= 1.0)) throw ConfigError("epsilon_decay must lie in (0, 1]");
        if (batch_size == 0 || batch_size > buffer_capacity) throw ConfigError("batch size must be in [1, capacity]");
        if (target_sync == 0 || train_every == 0) throw ConfigError("target_sync and train_every must be > 0");
        if (action_bins < 2) throw ConfigError("action_bins must be >= 2");
        if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
        if (convergence_window == 0) throw ConfigError("convergence window must be > 0");
    }
};

// Network input: (p_dem / p_e_max clamped to [0, 1], soc).
struct StateEncoder {
    double p_e_max = 2.75e5;

    void encode(const PowerSocState& s, double* out) const {
        out[0] = std::clamp(s.p_dem / p_e_max, 0.0, 1.0);
        out[1] = s.soc;
    }

    Matrix encode(std::span<const PowerSocState> states) const {
        Matrix m(states.size(), 2);
        for (std::size_t i = 0; i < states.size(); ++i) encode(states[i], m.row(i));
        return m;
    }
};

namespace detail {

inline Matrix encode_next(const std::vector<Transition>& batch, const StateEncoder& enc) {
    Matrix m(batch.size(), 2);
    for (std::size_t i = 0; i < batch.size(); ++i) enc.encode(batch[i].next_state, m.row(i));
    return m;
}

inline void check_masks(const std::vector<Transition>& batch, const std::vector<ActionMask>& masks,
                        std::size_t actions) {
    if (masks.size() != batch.size()) throw DomainError("one mask per transition is required");
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (batch[i].done) continue;
        if (masks[i].size() != actions) throw DomainError("mask width does not match the network");
        if (!any_feasible(masks[i])) throw InfeasibleStateError("next state has no feasible action");
    }
}

}  // namespace detail

// y = r for terminal transitions, else r + gamma * max over feasible a' of Q_target(s', a').
inline std::vector<double> dqn_targets(const std::vector<Transition>& batch, const MlpParams& target, double gamma,
                                       const std::vector<ActionMask>& masks, const StateEncoder& enc) {
    detail::check_masks(batch, masks, target.output_size());
    const Matrix q = forward(target, detail::encode_next(batch, enc));
    std::vector<double> y(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        y[i] = batch[i].reward;
        if (batch[i].done) continue;
        const std::span<const double> row(q.row(i), q.cols);
        y[i] += gamma * row[masked_argmax(row, masks[i])];
    }
    return y;
}

// a* = feasible argmax of the online net at s'; y = r + gamma * Q_target(s', a*).
inline std::vector<double> ddqn_targets(const std::vector<Transition>& batch, const MlpParams& online,
                                        const MlpParams& target, double gamma, const std::vector<ActionMask>& masks,
                                        const StateEncoder& enc) {
    detail::check_masks(batch, masks, target.output_size());
    const Matrix next = detail::encode_next(batch, enc);
    const Matrix q_on = forward(online, next);
    const Matrix q_tg = forward(target, next);
    std::vector<double> y(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        y[i] = batch[i].reward;
        if (batch[i].done) continue;
        const auto a_star = masked_argmax(std::span<const double>(q_on.row(i), q_on.cols), masks[i]);
        y[i] += gamma * q_tg(i, a_star);
    }
    return y;
}

inline void sync_target(const MlpParams& online, MlpParams& target) {
    if (!online.same_shape(target)) throw DomainError("sync_target: network shapes differ");
    target = online;
}

// Convergence detector. Starting at episode e, take six consecutive windows of
// `window` episodes; the run has converged at e if each of the five
// window-to-window changes in mean return is at most `tolerance` times the
// later window's absolute mean. Returns the first such e.
inline std::optional<std::size_t> detect_convergence(std::span<const double> returns, std::size_t window,
                                                     double tolerance = 0.01, std::size_t comparisons = 5) {
    if (window == 0) throw DomainError("convergence window must be > 0");
    const std::size_t span_len = window * (comparisons + 1);
    if (returns.size() < span_len) return std::nullopt;
    std::vector<double> prefix(returns.size() + 1, 0.0);
    for (std::size_t i = 0; i < returns.size(); ++i) prefix[i + 1] = prefix[i] + returns[i];
    const double w = static_cast<double>(window);
    auto mean = [&](std::size_t begin) { return (prefix[begin + window] - prefix[begin]) / w; };
    for (std::size_t e = 0; e + span_len <= returns.size(); ++e) {
        bool ok = true;
        for (std::size_t j = 0; j < comparisons && ok; ++j) {
            const double before = mean(e + j * window);
            const double after = mean(e + (j + 1) * window);
            ok = std::abs(after - before) <= tolerance * std::abs(after);
        }
        if (ok) return e;
    }
    return std::nullopt;
}

inline std::optional<std::size_t> detect_convergence(const std::vector<double>& returns, std::size_t window,
                                                     double tolerance = 0.01, std::size_t comparisons = 5) {
    return detect_convergence(std::span<const double>(returns), window, tolerance, comparisons);
}

struct TrainReport {
    Algorithm algorithm = Algorithm::DDQN;
    RewardKind reward = RewardKind::Shaped;
    std::vector<double> returns;
    std::vector<double> epsilons;
    std::vector<double> loss_means;
    std::optional<std::size_t> convergence_episode;
    std::size_t episodes_run = 0;
    std::size_t gradient_steps = 0;
    std::size_t preseeded = 0;
    std::vector<std::string> aborted;  // diagnostics of episodes cut short by infeasibility
    // Greedy (epsilon = 0) evaluation of the final online network.
    Trajectory greedy;
    TrajectoryMetrics metrics;
    double wall_time_s = 0.0;
};

struct TrainResult {
    TrainReport report;
    MlpParams online;
    MlpParams target;
};

inline std::vector<std::size_t> layer_sizes(const AgentConfig& a) {
    std::vector<std::size_t> sizes{2};
    sizes.insert(sizes.end(), a.hidden.begin(), a.hidden.end());
    sizes.push_back(a.action_bins);
    return sizes;
}

// Greedy battery-power policy of a Q-network over the masked grid.
inline PowerPolicy greedy_policy(const PowertrainConfig& cfg, const MlpParams& net, const ActionGrid& grid) {
    const StateEncoder enc{cfg.p_e_max};
    return [&cfg, &net, grid, enc](const EnvState& s) {
        const ActionMask mask = grid.mask(cfg, s);
        double x[2];
        enc.encode({s.p_dem, s.soc}, x);
        const auto q = forward_one(net, std::span<const double>(x, 2));
        return grid.value(masked_argmax(std::span<const double>(q), mask));
    };
}

template <class Rng>
TrainResult train(const PowertrainConfig& cfg, const DutyCycle& cycle, const RewardSpec& reward,
                  const AgentConfig& agent, ReplayBuffer& buffer, Rng& rng) {
    cfg.validate();
    agent.validate();
    cycle.validate();
    if (buffer.capacity() < agent.batch_size) throw ConfigError("replay capacity is smaller than the batch");
    if (std::abs(cycle.dt - cfg.t_s) > 1e-12 * cfg.t_s) throw ConfigError("duty cycle step differs from t_s");

    const auto t0 = std::chrono::steady_clock::now();
    const ActionGrid grid(cfg.p_b_max, agent.action_bins);
    const StateEncoder enc{cfg.p_e_max};
    const auto sizes = layer_sizes(agent);

    TrainResult res;
    res.online = make_mlp(std::span<const std::size_t>(sizes), rng);
    res.target = make_mlp(std::span<const std::size_t>(sizes), rng);
    OptState opt(res.online, agent.learning_rate);
    TrainReport& rep = res.report;
    rep.algorithm = agent.algorithm;
    rep.reward = reward.kind;
    rep.preseeded = buffer.size();

    double eps = agent.epsilon_start;
    std::size_t env_steps = 0;
    std::vector<ActionMask> next_masks;
    std::vector<std::size_t> actions;
    std::vector<PowerSocState> states;

    for (std::size_t ep = 0; ep < agent.max_episodes; ++ep) {
        double ret = 0.0, loss_sum = 0.0;
        std::size_t loss_n = 0;
        EnvState s = initial_state(cycle, agent.initial_soc);
        try {
            while (true) {
                const ActionMask mask = grid.mask(cfg, s);
                double x[2];
                enc.encode({s.p_dem, s.soc}, x);
                const auto q = forward_one(res.online, std::span<const double>(x, 2));
                const auto a = epsilon_greedy(std::span<const double>(q), mask, eps, rng);
                const auto out = step(cfg, s, grid.value(a), cycle);
                const double r = step_reward(reward, out.p_eng, out.efficiency, out.fuel_rate, cfg.t_s);
                ret += r;
                buffer.push({{s.p_dem, s.soc}, a, r, {out.next_state.p_dem, out.next_state.soc}, out.done});
                ++env_steps;

                if (env_steps % agent.train_every == 0) {
                    if (auto batch = buffer.sample(agent.batch_size, rng)) {
                        next_masks.assign(batch->size(), {});
                        actions.resize(batch->size());
                        states.resize(batch->size());
                        for (std::size_t i = 0; i < batch->size(); ++i) {
                            const auto& t = (*batch)[i];
                            actions[i] = t.action_index;
                            states[i] = t.state;
                            if (!t.done) next_masks[i] = grid.mask(cfg, EnvState{0, t.next_state.soc, t.next_state.p_dem});
                        }
                        const auto y = agent.algorithm == Algorithm::DDQN
                                           ? ddqn_targets(*batch, res.online, res.target, agent.gamma, next_masks, enc)
                                           : dqn_targets(*batch, res.target, agent.gamma, next_masks, enc);
                        const auto lg = loss_and_grad(res.online, enc.encode(std::span<const PowerSocState>(states)),
                                                      std::span<const std::size_t>(actions), std::span<const double>(y));
                        adam_step(res.online, lg.grad, opt);
                        loss_sum += lg.loss;
                        ++loss_n;
                        ++rep.gradient_steps;
                        if (rep.gradient_steps % agent.target_sync == 0) sync_target(res.online, res.target);
                    }
                }
                if (out.done) break;
                s = out.next_state;
            }
        } catch (const InfeasibleStateError& e) {
            rep.aborted.push_back("episode " + std::to_string(ep) + ": " + e.what());
        }
        rep.returns.push_back(ret);
        rep.epsilons.push_back(eps);
        rep.loss_means.push_back(loss_n > 0 ? loss_sum / static_cast<double>(loss_n) : 0.0);
        ++rep.episodes_run;
        eps = std::max(agent.epsilon_end, eps * agent.epsilon_decay);
        if (agent.stop_on_convergence && detect_convergence(rep.returns, agent.convergence_window)) break;
    }

    rep.convergence_episode = detect_convergence(rep.returns, agent.convergence_window);
    rep.greedy = simulate(cfg, cycle, reward, agent.initial_soc, greedy_policy(cfg, res.online, grid));
    rep.metrics = measure(cfg, rep.greedy);
    rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

// Per-episode training curve.
inline void write_training_csv(const std::string& path, const TrainReport& rep) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path);
    out << "episode,return,epsilon,loss_mean\n" << std::setprecision(17);
    for (std::size_t i = 0; i < rep.returns.size(); ++i)
        out << i << ',' << rep.returns[i] << ',' << rep.epsilons[i] << ',' << rep.loss_means[i] << '\n';
}

}  // namespace hevlab
