#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "hevlab/errors.hpp"
#include "hevlab/powertrain.hpp"

namespace hevlab {

using ActionMask = std::vector<std::uint8_t>;

// Uniform grid of battery powers over [-p_b_max, p_b_max], endpoints included.
class ActionGrid {
public:
    ActionGrid() = default;

    ActionGrid(double p_b_max, std::size_t count) : p_b_max_(p_b_max), count_(count) {
        if (count < 2) throw DomainError("action grid needs at least two points");
        if (!(p_b_max > 0.0)) throw DomainError("action grid needs p_b_max > 0");
        step_ = 2.0 * p_b_max / static_cast<double>(count - 1);
    }

    std::size_t size() const noexcept { return count_; }
    double step() const noexcept { return step_; }
    double p_b_max() const noexcept { return p_b_max_; }

    double value(std::size_t i) const {
        if (i >= count_) throw DomainError("action index out of range");
        // Written so that the endpoints and (for odd counts) zero are exact.
        const double n = static_cast<double>(count_ - 1);
        return p_b_max_ * (2.0 * static_cast<double>(i) - n) / n;
    }

    // Nearest grid index to p (clamped to the grid).
    std::size_t nearest(double p) const {
        const double pos = (p + p_b_max_) / step_;
        if (pos <= 0.0) return 0;
        const auto i = static_cast<std::size_t>(std::llround(pos));
        return std::min(i, count_ - 1);
    }

    // Grid points inside [lb, ub] (with kPowerTolW slack).
    ActionMask mask(const PowerBounds& b) const {
        ActionMask m(count_, 0);
        for (std::size_t i = 0; i < count_; ++i) {
            const double v = value(i);
            m[i] = (v >= b.lb - kPowerTolW && v <= b.ub + kPowerTolW) ? 1 : 0;
        }
        return m;
    }

    ActionMask mask(const PowertrainConfig& cfg, const EnvState& s) const { return mask(action_bounds(cfg, s)); }

    // Feasible grid point nearest to p (ties toward the lower value), or
    // size() when no grid point is feasible.
    std::size_t quantize_feasible(double p, const PowerBounds& b) const {
        std::size_t best = count_;
        double best_dist = 0.0;
        for (std::size_t i = 0; i < count_; ++i) {
            const double v = value(i);
            if (v < b.lb - kPowerTolW || v > b.ub + kPowerTolW) continue;
            const double dist = std::abs(v - p);
            if (best == count_ || dist < best_dist) {
                best = i;
                best_dist = dist;
            }
        }
        return best;
    }

private:
    double p_b_max_ = 0.0;
    std::size_t count_ = 0;
    double step_ = 0.0;
};

inline bool any_feasible(const ActionMask& m) {
    for (auto v : m)
        if (v) return true;
    return false;
}

}  // namespace hevlab
