#pragma once

// Tabular Q-learning and Double Q-learning over the discretized
// (p_dem, SOC) x battery-power grid, plus the two diagnostics used to show why
// the tabular route does not scale: state-visit coverage and the Q/reward
// Pearson correlation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hevlab/action_grid.hpp"
#include "hevlab/errors.hpp"
#include "hevlab/powertrain.hpp"
#include "hevlab/rewards.hpp"

namespace hevlab {

// Uniform bins over [lo, hi]; values outside clamp to the edge bins.
struct Binning {
    double lo = 0.0;
    double hi = 1.0;
    std::size_t count = 2;

    double width() const noexcept { return (hi - lo) / static_cast<double>(count); }

    std::size_t index(double v) const noexcept {
        const double pos = (v - lo) / width();
        if (!(pos > 0.0)) return 0;
        return std::min(static_cast<std::size_t>(pos), count - 1);
    }

    double center(std::size_t i) const noexcept { return lo + (static_cast<double>(i) + 0.5) * width(); }
};

struct Discretization {
    Binning p_dem{0.0, 4.25e5, 766};
    Binning soc{0.3, 0.9, 50};
    std::size_t action_bins = 1600;

    static Discretization for_config(const PowertrainConfig& cfg) {
        Discretization d;
        d.p_dem = {0.0, cfg.p_e_max + cfg.p_b_max, 766};
        d.soc = {cfg.soc_min, cfg.soc_max, 50};
        return d;
    }

    void validate() const {
        if (p_dem.count < 2 || soc.count < 2 || action_bins < 2) throw ConfigError("bin counts must be >= 2");
        if (!(p_dem.hi > p_dem.lo) || !(soc.hi > soc.lo)) throw ConfigError("bin ranges must be non-empty");
    }

    std::size_t state_count() const noexcept { return p_dem.count * soc.count; }
    std::size_t entry_count() const noexcept { return state_count() * action_bins; }

    std::size_t state_index(std::size_t p_bin, std::size_t soc_bin) const noexcept {
        return p_bin * soc.count + soc_bin;
    }
    std::size_t state_index(double p_dem_w, double soc_v) const noexcept {
        return state_index(p_dem.index(p_dem_w), soc.index(soc_v));
    }
};

// Contiguous value array, zero-initialised. At the default discretization this
// is 61.28M floats (~245 MB) per table.
class DenseStorage {
public:
    DenseStorage(std::size_t states, std::size_t actions) : actions_(actions), values_(states * actions, 0.0f) {}

    std::span<float> row(std::size_t s) { return {values_.data() + s * actions_, actions_}; }
    std::span<const float> row(std::size_t s) const { return {values_.data() + s * actions_, actions_}; }

private:
    std::size_t actions_;
    std::vector<float> values_;
};

// Rows allocated on first write; unwritten rows read as zeros.
class SparseStorage {
public:
    SparseStorage(std::size_t /*states*/, std::size_t actions) : actions_(actions), zeros_(actions, 0.0f) {}

    std::span<float> row(std::size_t s) {
        auto [it, inserted] = rows_.try_emplace(s);
        if (inserted) it->second.assign(actions_, 0.0f);
        return it->second;
    }
    std::span<const float> row(std::size_t s) const {
        auto it = rows_.find(s);
        return it == rows_.end() ? std::span<const float>(zeros_) : std::span<const float>(it->second);
    }

    std::size_t allocated_rows() const noexcept { return rows_.size(); }

private:
    std::size_t actions_;
    std::vector<float> zeros_;
    std::unordered_map<std::size_t, std::vector<float>> rows_;
};

template <class Storage = DenseStorage>
class QTable {
public:
    explicit QTable(const Discretization& d)
        : disc_(d), storage_((d.validate(), d.state_count()), d.action_bins), visits_(d.state_count(), 0) {}

    const Discretization& discretization() const noexcept { return disc_; }
    std::size_t state_count() const noexcept { return disc_.state_count(); }
    std::size_t action_count() const noexcept { return disc_.action_bins; }
    std::size_t entry_count() const noexcept { return disc_.entry_count(); }

    std::span<float> row(std::size_t s) { return storage_.row(s); }
    std::span<const float> row(std::size_t s) const { return storage_.row(s); }

    double value(std::size_t s, std::size_t a) const { return row(s)[a]; }
    void set(std::size_t s, std::size_t a, double v) { row(s)[a] = static_cast<float>(v); }

    std::uint64_t visits(std::size_t s) const { return visits_[s]; }
    void record_visit(std::size_t s) { ++visits_[s]; }

    const Storage& storage() const noexcept { return storage_; }

private:
    Discretization disc_;
    Storage storage_;
    std::vector<std::uint64_t> visits_;
};

// Argmax over feasible entries, ties to the lowest index. An empty mask means
// every action is feasible.
template <class T>
std::size_t masked_argmax(std::span<const T> q, const ActionMask& mask) {
    std::size_t best = q.size();
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (!mask.empty() && !mask[i]) continue;
        if (best == q.size() || q[i] > q[best]) best = i;
    }
    if (best == q.size()) throw InfeasibleStateError("no feasible action");
    return best;
}

template <class T, class Rng>
std::size_t epsilon_greedy(std::span<const T> q, const ActionMask& mask, double epsilon, Rng& rng) {
    if (!mask.empty() && mask.size() != q.size()) throw DomainError("mask size does not match action count");
    std::size_t feasible = 0;
    for (std::size_t i = 0; i < q.size(); ++i) feasible += (mask.empty() || mask[i]) ? 1 : 0;
    if (feasible == 0) throw InfeasibleStateError("epsilon_greedy: no feasible action");
    if (epsilon > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < epsilon) {
        auto k = std::uniform_int_distribution<std::size_t>(0, feasible - 1)(rng);
        for (std::size_t i = 0; i < q.size(); ++i) {
            if (!mask.empty() && !mask[i]) continue;
            if (k-- == 0) return i;
        }
    }
    return masked_argmax(q, mask);
}

template <class T, class Rng>
std::size_t epsilon_greedy(const std::vector<T>& q, const ActionMask& mask, double epsilon, Rng& rng) {
    return epsilon_greedy(std::span<const T>(q), mask, epsilon, rng);
}

// One tabular experience in discretized coordinates.
struct TabularStep {
    std::size_t state = 0;
    std::size_t action = 0;
    double reward = 0.0;
    std::size_t next_state = 0;
    bool done = false;
    ActionMask next_mask;  // feasible actions at next_state; empty = all
};

template <class S>
void q_update(QTable<S>& table, const TabularStep& t, double alpha, double gamma) {
    double target = t.reward;
    if (!t.done) {
        auto next = std::as_const(table).row(t.next_state);
        target += gamma * next[masked_argmax(next, t.next_mask)];
    }
    auto r = table.row(t.state);
    r[t.action] = static_cast<float>(r[t.action] + alpha * (target - r[t.action]));
    table.record_visit(t.state);
}

enum class Coin { A, B };

// Updates `upd` using `upd` to select the next action and `eval` to score it.
template <class S>
void double_q_update_one(QTable<S>& upd, const QTable<S>& eval, const TabularStep& t, double alpha, double gamma) {
    double target = t.reward;
    if (!t.done) {
        const auto a_star = masked_argmax(std::as_const(upd).row(t.next_state), t.next_mask);
        target += gamma * eval.row(t.next_state)[a_star];
    }
    auto r = upd.row(t.state);
    r[t.action] = static_cast<float>(r[t.action] + alpha * (target - r[t.action]));
    upd.record_visit(t.state);
}

template <class S>
void double_q_update(QTable<S>& a, QTable<S>& b, const TabularStep& t, double alpha, double gamma, Coin coin) {
    if (coin == Coin::A)
        double_q_update_one(a, std::as_const(b), t, alpha, gamma);
    else
        double_q_update_one(b, std::as_const(a), t, alpha, gamma);
}

template <class S, class Rng>
Coin double_q_update(QTable<S>& a, QTable<S>& b, const TabularStep& t, double alpha, double gamma, Rng& rng) {
    const Coin coin = std::bernoulli_distribution(0.5)(rng) ? Coin::A : Coin::B;
    double_q_update(a, b, t, alpha, gamma, coin);
    return coin;
}

struct VisitHeatmap {
    std::size_t p_dem_bins = 0;
    std::size_t soc_bins = 0;
    std::vector<std::uint64_t> counts;  // row-major (p_dem_bin, soc_bin)
    double zero_visit_fraction = 1.0;

    std::uint64_t at(std::size_t p_bin, std::size_t soc_bin) const { return counts[p_bin * soc_bins + soc_bin]; }

    void write_csv(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw ParseError("cannot write " + path);
        out << "p_dem_bin,soc_bin,count\n";
        for (std::size_t i = 0; i < p_dem_bins; ++i)
            for (std::size_t j = 0; j < soc_bins; ++j) out << i << ',' << j << ',' << at(i, j) << '\n';
    }
};

template <class... Tables>
VisitHeatmap visit_heatmap(const Tables&... tables) {
    const auto& d = std::get<0>(std::tie(tables...)).discretization();
    VisitHeatmap h;
    h.p_dem_bins = d.p_dem.count;
    h.soc_bins = d.soc.count;
    h.counts.assign(d.state_count(), 0);
    std::size_t zeros = 0;
    for (std::size_t s = 0; s < d.state_count(); ++s) {
        h.counts[s] = (tables.visits(s) + ...);
        zeros += h.counts[s] == 0 ? 1 : 0;
    }
    h.zero_visit_fraction = static_cast<double>(zeros) / static_cast<double>(d.state_count());
    return h;
}

// Pearson correlation of (q, r) pairs.
inline double pearson_q_reward(std::span<const std::pair<double, double>> samples) {
    if (samples.size() < 2) throw DomainError("pearson correlation needs at least two samples");
    const double n = static_cast<double>(samples.size());
    double mq = 0.0, mr = 0.0;
    for (auto [q, r] : samples) {
        mq += q;
        mr += r;
    }
    mq /= n;
    mr /= n;
    double cov = 0.0, vq = 0.0, vr = 0.0;
    for (auto [q, r] : samples) {
        cov += (q - mq) * (r - mr);
        vq += (q - mq) * (q - mq);
        vr += (r - mr) * (r - mr);
    }
    if (vq == 0.0) throw DomainError("correlation undefined: Q values have zero variance");
    if (vr == 0.0) throw DomainError("correlation undefined: rewards have zero variance");
    return std::clamp(cov / std::sqrt(vq * vr), -1.0, 1.0);
}

inline double pearson_q_reward(const std::vector<std::pair<double, double>>& samples) {
    return pearson_q_reward(std::span<const std::pair<double, double>>(samples));
}

// ---- training loop --------------------------------------------------------

struct TabularConfig {
    Discretization disc;
    bool double_q = true;
    double alpha = 0.1;
    double gamma = 0.99;
    double epsilon_start = 1.0;
    double epsilon_end = 0.05;
    double epsilon_decay = 0.999;  // per episode
    std::size_t episodes = 1000;
    double initial_soc = 0.8;
    std::uint64_t seed = 1;
};

struct TabularReport {
    std::vector<double> returns;
    VisitHeatmap heatmap;
    std::size_t entry_count = 0;
    std::vector<std::pair<double, double>> q_reward_samples;
    double pearson = 0.0;
    bool pearson_defined = false;
};

// Trains Q (or Q_A/Q_B) on the cycle and reports the coverage diagnostics.
// Pearson pairs: for each visited state, the max Q over actions that were
// updated there (mean of both tables for Double Q) against the mean immediate
// reward observed in that state during training.
template <class S = DenseStorage>
TabularReport train_tabular(const PowertrainConfig& cfg, const DutyCycle& cycle, const RewardSpec& reward,
                            const TabularConfig& tc, QTable<S>& qa, QTable<S>& qb) {
    cycle.validate();
    const auto& d = tc.disc;
    const ActionGrid grid(cfg.p_b_max, d.action_bins);
    std::mt19937_64 rng(tc.seed);
    TabularReport rep;
    rep.entry_count = d.entry_count();

    std::unordered_map<std::size_t, std::pair<double, std::uint64_t>> reward_at;
    std::unordered_set<std::uint64_t> touched;
    std::vector<float> combined(d.action_bins);

    double eps = tc.epsilon_start;
    for (std::size_t ep = 0; ep < tc.episodes; ++ep) {
        EnvState s = initial_state(cycle, tc.initial_soc);
        double ret = 0.0;
        ActionMask mask = grid.mask(cfg, s);
        while (true) {
            const std::size_t si = d.state_index(s.p_dem, s.soc);
            auto ra = std::as_const(qa).row(si);
            auto rb = std::as_const(qb).row(si);
            for (std::size_t a = 0; a < d.action_bins; ++a) combined[a] = tc.double_q ? ra[a] + rb[a] : ra[a];
            const auto a = epsilon_greedy(std::span<const float>(combined), mask, eps, rng);
            const auto out = step(cfg, s, grid.value(a), cycle);
            const double r = step_reward(reward, out.p_eng, out.efficiency, out.fuel_rate, cfg.t_s);
            ret += r;

            TabularStep t;
            t.state = si;
            t.action = a;
            t.reward = r;
            t.done = out.done;
            if (!out.done) {
                t.next_state = d.state_index(out.next_state.p_dem, out.next_state.soc);
                t.next_mask = grid.mask(cfg, out.next_state);
            }
            if (tc.double_q)
                double_q_update(qa, qb, t, tc.alpha, tc.gamma, rng);
            else
                q_update(qa, t, tc.alpha, tc.gamma);

            auto& acc = reward_at[si];
            acc.first += r;
            acc.second += 1;
            touched.insert(static_cast<std::uint64_t>(si) * d.action_bins + a);

            if (out.done) break;
            s = out.next_state;
            mask = std::move(t.next_mask);
        }
        rep.returns.push_back(ret);
        eps = std::max(tc.epsilon_end, eps * tc.epsilon_decay);
    }

    rep.heatmap = tc.double_q ? visit_heatmap(qa, qb) : visit_heatmap(qa);

    std::unordered_map<std::size_t, double> best_q;
    for (auto key : touched) {
        const auto si = static_cast<std::size_t>(key / d.action_bins);
        const auto a = static_cast<std::size_t>(key % d.action_bins);
        double q = qa.value(si, a);
        if (tc.double_q) q = 0.5 * (q + qb.value(si, a));
        auto [it, inserted] = best_q.try_emplace(si, q);
        if (!inserted) it->second = std::max(it->second, q);
    }
    std::vector<std::size_t> states;
    states.reserve(best_q.size());
    for (auto& [si, q] : best_q) states.push_back(si);
    std::sort(states.begin(), states.end());
    for (auto si : states) {
        const auto& acc = reward_at.at(si);
        rep.q_reward_samples.emplace_back(best_q.at(si), acc.first / static_cast<double>(acc.second));
    }
    try {
        rep.pearson = pearson_q_reward(rep.q_reward_samples);
        rep.pearson_defined = true;
    } catch (const DomainError&) {
        rep.pearson_defined = false;
    }
    return rep;
}

}  // namespace hevlab
