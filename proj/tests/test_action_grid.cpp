#include <gtest/gtest.h>

#include <random>

#include "hevlab/action_grid.hpp"

using namespace hevlab;

TEST(ActionGrid, ExactEndpointsAndZero) {
    const ActionGrid g(1.5e5, 31);
    EXPECT_EQ(g.value(0), -1.5e5);
    EXPECT_EQ(g.value(30), 1.5e5);
    EXPECT_EQ(g.value(15), 0.0);
    EXPECT_DOUBLE_EQ(g.step(), 1.0e4);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g.value(i), -1.5e5 + 1.0e4 * static_cast<double>(i), 1e-9);
    EXPECT_THROW(g.value(31), DomainError);
    EXPECT_THROW(ActionGrid(1.0, 1), DomainError);
}

TEST(ActionGrid, Nearest) {
    const ActionGrid g(1.5e5, 31);
    EXPECT_EQ(g.nearest(0.0), 15u);
    EXPECT_EQ(g.nearest(4.0e3), 15u);
    EXPECT_EQ(g.nearest(6.0e3), 16u);
    EXPECT_EQ(g.nearest(-1e9), 0u);
    EXPECT_EQ(g.nearest(1e9), 30u);
}

TEST(ActionGrid, MaskMatchesBounds) {
    const ActionGrid g(1.5e5, 31);
    const auto m = g.mask(PowerBounds{-2.0e4, 3.0e4});
    for (std::size_t i = 0; i < g.size(); ++i)
        EXPECT_EQ(m[i] != 0, g.value(i) >= -2.0e4 && g.value(i) <= 3.0e4) << i;
    EXPECT_TRUE(any_feasible(m));
    EXPECT_FALSE(any_feasible(g.mask(PowerBounds{1.0, 9.0e3})));
}

TEST(ActionGrid, QuantizeFeasible) {
    const ActionGrid g(1.5e5, 31);
    const PowerBounds b{-2.0e4, 3.0e4};
    EXPECT_EQ(g.value(g.quantize_feasible(1.2e4, b)), 1.0e4);
    EXPECT_EQ(g.value(g.quantize_feasible(1e6, b)), 3.0e4);
    EXPECT_EQ(g.value(g.quantize_feasible(-1e6, b)), -2.0e4);
    EXPECT_EQ(g.value(g.quantize_feasible(5.0e3, b)), 0.0);  // tie goes to the lower value
    EXPECT_EQ(g.quantize_feasible(0.0, PowerBounds{1.0, 9.0e3}), g.size());
}

TEST(ActionGrid, MaskedActionsAreStepFeasible) {
    PowertrainConfig cfg;
    cfg.engine_map = EngineMap({{1e3, 0.2}, {2.75e5, 0.4}});
    cfg.q_batt = 6e4;
    const ActionGrid g(cfg.p_b_max, 31);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 500; ++t) {
        const double p_dem = std::round(u(rng) * 27.5) * 1e4;
        const double soc = cfg.soc_min + (cfg.soc_max - cfg.soc_min) * u(rng);
        DutyCycle c{1.0, {p_dem}};
        const EnvState s{0, soc, p_dem};
        const auto m = g.mask(cfg, s);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (m[i]) {
                EXPECT_NO_THROW(step(cfg, s, g.value(i), c));
            }
    }
}
