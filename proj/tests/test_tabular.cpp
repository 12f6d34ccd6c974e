#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hevlab/tabular.hpp"

using namespace hevlab;

namespace {

Discretization tiny() {
    Discretization d;
    d.p_dem = {0.0, 4.0, 4};
    d.soc = {0.0, 1.0, 2};
    d.action_bins = 3;
    return d;
}

}  // namespace

TEST(EpsilonGreedy, Greedy) {
    std::mt19937_64 rng(1);
    EXPECT_EQ(epsilon_greedy(std::vector<double>{1, 5, 3}, {}, 0.0, rng), 1u);
    EXPECT_EQ(epsilon_greedy(std::vector<double>{5, 5, 1}, {}, 0.0, rng), 0u);
    EXPECT_EQ(epsilon_greedy(std::vector<double>{9, 5, 5}, ActionMask{0, 1, 1}, 0.0, rng), 1u);
    EXPECT_THROW(epsilon_greedy(std::vector<double>{1, 2}, ActionMask{0, 0}, 0.0, rng), InfeasibleStateError);
}

TEST(EpsilonGreedy, UniformOverFeasible) {
    std::mt19937_64 rng(42);
    const std::vector<double> q{10, 0, 0};
    const ActionMask mask{0, 1, 1};
    int ones = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const auto a = epsilon_greedy(q, mask, 1.0, rng);
        ASSERT_TRUE(a == 1 || a == 2);
        ones += a == 1 ? 1 : 0;
    }
    EXPECT_NEAR(static_cast<double>(ones) / n, 0.5, 0.05);
}

TEST(QUpdate, Examples) {
    QTable<SparseStorage> q(tiny());
    q.set(2, 1, 2.0);
    TabularStep t{0, 0, 1.0, 2, false, {}};
    q_update(q, t, 0.5, 0.9);
    EXPECT_NEAR(q.value(0, 0), 1.4, 1e-6);
    EXPECT_EQ(q.visits(0), 1u);

    const float before = static_cast<float>(q.value(0, 0));
    q_update(q, t, 0.0, 0.9);
    EXPECT_EQ(q.value(0, 0), before);

    TabularStep term{1, 2, -2.0, 0, true, {}};
    q_update(q, term, 1.0, 0.9);
    EXPECT_EQ(q.value(1, 2), -2.0);
}

TEST(QUpdate, MaskedNextMax) {
    QTable<SparseStorage> q(tiny());
    q.set(2, 0, 100.0);
    q.set(2, 1, 2.0);
    q_update(q, TabularStep{0, 0, 1.0, 2, false, ActionMask{0, 1, 1}}, 0.5, 0.9);
    EXPECT_NEAR(q.value(0, 0), 1.4, 1e-6);
}

TEST(DoubleQ, CoinA) {
    QTable<SparseStorage> a(tiny()), b(tiny());
    a.set(2, 2, 5.0);   // argmax of A at s' is action 2
    b.set(2, 2, 2.0);
    b.set(2, 0, 50.0);  // B's own max must not be used
    double_q_update(a, b, TabularStep{0, 1, 1.0, 2, false, {}}, 0.5, 0.9, Coin::A);
    EXPECT_NEAR(a.value(0, 1), 1.4, 1e-6);
    EXPECT_EQ(b.value(0, 1), 0.0);
    EXPECT_EQ(a.visits(0), 1u);
    EXPECT_EQ(b.visits(0), 0u);
}

TEST(DoubleQ, TieBreakAndSymmetry) {
    QTable<SparseStorage> a(tiny()), b(tiny());
    b.set(2, 0, 3.0);
    b.set(2, 1, 7.0);
    double_q_update(a, b, TabularStep{0, 0, 1.0, 2, false, {}}, 1.0, 0.5, Coin::A);
    EXPECT_NEAR(a.value(0, 0), 1.0 + 0.5 * 3.0, 1e-6);

    // same inputs with the roles swapped
    QTable<SparseStorage> a2(tiny()), b2(tiny());
    a2.set(2, 0, 3.0);
    a2.set(2, 1, 7.0);
    double_q_update(a2, b2, TabularStep{0, 0, 1.0, 2, false, {}}, 1.0, 0.5, Coin::B);
    EXPECT_EQ(b2.value(0, 0), a.value(0, 0));
}

TEST(DoubleQ, EvaluationTableZeroedGivesReward) {
    QTable<SparseStorage> a(tiny()), b(tiny());
    a.set(2, 1, 100.0);
    double_q_update(a, b, TabularStep{0, 0, 0.7, 2, false, {}}, 1.0, 0.99, Coin::A);
    EXPECT_NEAR(a.value(0, 0), 0.7, 1e-6);
}

TEST(DoubleQ, FairCoin) {
    QTable<SparseStorage> a(tiny()), b(tiny());
    std::mt19937_64 rng(3);
    int heads = 0;
    for (int i = 0; i < 10000; ++i)
        heads += double_q_update(a, b, TabularStep{0, 0, 0.0, 1, false, {}}, 0.1, 0.9, rng) == Coin::A ? 1 : 0;
    EXPECT_NEAR(heads / 10000.0, 0.5, 0.03);
    EXPECT_EQ(a.visits(0) + b.visits(0), 10000u);
}

TEST(Heatmap, EmptyAndSingle) {
    QTable<SparseStorage> a(tiny()), b(tiny());
    auto h = visit_heatmap(a, b);
    EXPECT_EQ(h.zero_visit_fraction, 1.0);
    for (auto c : h.counts) EXPECT_EQ(c, 0u);

    const auto d = tiny();
    const auto s = d.state_index(2.5, 0.75);
    q_update(a, TabularStep{s, 0, 1.0, 0, true, {}}, 0.5, 0.9);
    h = visit_heatmap(a, b);
    std::size_t nonzero = 0;
    for (auto c : h.counts) nonzero += c != 0 ? 1 : 0;
    EXPECT_EQ(nonzero, 1u);
    EXPECT_EQ(h.at(2, 1), 1u);
    EXPECT_DOUBLE_EQ(h.zero_visit_fraction, 7.0 / 8.0);
}

TEST(Pearson, Examples) {
    EXPECT_NEAR(pearson_q_reward({{1, 2}, {2, 4}, {3, 6}}), 1.0, 1e-12);
    EXPECT_NEAR(pearson_q_reward({{1, 6}, {2, 4}, {3, 2}}), -1.0, 1e-12);
    EXPECT_THROW(pearson_q_reward({{1, 1}, {1, 2}}), DomainError);
    EXPECT_THROW(pearson_q_reward({{1, 1}}), DomainError);
}

TEST(Pearson, BoundedAndAffineInvariant) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int t = 0; t < 200; ++t) {
        std::vector<std::pair<double, double>> s, scaled;
        for (int i = 0; i < 30; ++i) {
            const double q = n(rng), r = 0.3 * q + n(rng);
            s.emplace_back(q, r);
            scaled.emplace_back(3.0 * q - 7.0, 0.5 * r + 2.0);
        }
        const double p = pearson_q_reward(s);
        EXPECT_GE(p, -1.0);
        EXPECT_LE(p, 1.0);
        EXPECT_NEAR(p, pearson_q_reward(scaled), 1e-12);
    }
}

TEST(Binning, RoundTripWithinHalfBin) {
    const Binning b{0.0, 4.25e5, 766};
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 4.25e5);
    for (int i = 0; i < 10000; ++i) {
        const double v = u(rng);
        EXPECT_LE(std::abs(b.center(b.index(v)) - v), 0.5 * b.width() * (1 + 1e-12));
    }
    EXPECT_EQ(b.index(-5.0), 0u);
    EXPECT_EQ(b.index(1e9), 765u);
}

TEST(Discretization, DefaultEntryCount) {
    const Discretization d;
    EXPECT_EQ(d.p_dem.count, 766u);
    EXPECT_EQ(d.soc.count, 50u);
    EXPECT_EQ(d.action_bins, 1600u);
    EXPECT_EQ(d.entry_count(), 61280000u);
    Discretization bad;
    bad.soc.count = 1;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(TrainTabular, SmallRun) {
    PowertrainConfig cfg;
    cfg.engine_map = EngineMap({{1e3, 0.2}, {1.5e5, 0.43}, {2.75e5, 0.38}});
    DutyCycle cycle{1.0, std::vector<double>(20, 1.2e5)};
    TabularConfig tc;
    tc.disc = Discretization::for_config(cfg);
    tc.disc.p_dem.count = 20;
    tc.disc.soc.count = 10;
    tc.disc.action_bins = 11;
    tc.episodes = 30;
    RewardSpec r;
    QTable<SparseStorage> a(tc.disc), b(tc.disc);
    const auto rep = train_tabular(cfg, cycle, r, tc, a, b);
    EXPECT_EQ(rep.returns.size(), 30u);
    EXPECT_EQ(rep.entry_count, 20u * 10u * 11u);
    std::uint64_t total = 0;
    for (auto c : rep.heatmap.counts) total += c;
    EXPECT_EQ(total, 30u * 20u);
    EXPECT_FALSE(rep.q_reward_samples.empty());

    QTable<SparseStorage> a2(tc.disc), b2(tc.disc);
    const auto rep2 = train_tabular(cfg, cycle, r, tc, a2, b2);
    EXPECT_EQ(rep.returns, rep2.returns);
}
