#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hevlab/errors.hpp"
#include "hevlab/powertrain.hpp"

namespace hevlab {

struct PowerSocState {
    double p_dem = 0.0;  // W
    double soc = 0.0;

    friend bool operator==(const PowerSocState&, const PowerSocState&) = default;
};

struct Transition {
    PowerSocState state;
    std::size_t action_index = 0;
    double reward = 0.0;
    PowerSocState next_state;
    bool done = false;

    friend bool operator==(const Transition&, const Transition&) = default;
};

// Fixed-capacity ring of transitions. Once full, the oldest entry is
// overwritten; nothing (expert data included) is protected from eviction.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw DomainError("replay capacity must be > 0");
        items_.reserve(std::min<std::size_t>(capacity, 1u << 20));
    }

    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t size() const noexcept { return items_.size(); }
    bool empty() const noexcept { return items_.empty(); }

    void push(const Transition& t) {
        if (items_.size() < capacity_) {
            items_.push_back(t);
        } else {
            items_[cursor_] = t;
        }
        cursor_ = (cursor_ + 1) % capacity_;
    }

    // Contents from oldest to newest.
    std::vector<Transition> contents() const {
        std::vector<Transition> out;
        out.reserve(items_.size());
        const std::size_t start = items_.size() < capacity_ ? 0 : cursor_;
        for (std::size_t i = 0; i < items_.size(); ++i) out.push_back(items_[(start + i) % items_.size()]);
        return out;
    }

    const Transition& at(std::size_t slot) const { return items_.at(slot); }

    // Uniform with replacement. nullopt while the buffer holds fewer than
    // batch_size transitions.
    template <class Rng>
    std::optional<std::vector<Transition>> sample(std::size_t batch_size, Rng& rng) const {
        if (batch_size == 0 || items_.size() < batch_size) return std::nullopt;
        std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
        std::vector<Transition> batch;
        batch.reserve(batch_size);
        for (std::size_t i = 0; i < batch_size; ++i) batch.push_back(items_[pick(rng)]);
        return batch;
    }

    // Fills an empty buffer with up to floor(fraction * capacity) expert
    // transitions, in the given order.
    std::size_t preseed(const std::vector<Transition>& experts, double fraction) {
        if (!items_.empty()) throw DomainError("preseed requires an empty buffer");
        if (!(fraction > 0.0 && fraction <= 1.0)) throw DomainError("preseed fraction must be in (0, 1]");
        const auto quota = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(capacity_)));
        const std::size_t n = std::min(quota, experts.size());
        for (std::size_t i = 0; i < n; ++i) push(experts[i]);
        return n;
    }

private:
    std::size_t capacity_;
    std::size_t cursor_ = 0;
    std::vector<Transition> items_;
};

// ---- transition CSV -------------------------------------------------------

inline constexpr const char* kTransitionHeader = "p_dem_w,soc,action_index,reward,next_p_dem_w,next_soc,done";

inline void save_transitions(const std::string& path, const std::vector<Transition>& ts) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path);
    out << kTransitionHeader << '\n' << std::setprecision(17);
    for (const auto& t : ts)
        out << t.state.p_dem << ',' << t.state.soc << ',' << t.action_index << ',' << t.reward << ','
            << t.next_state.p_dem << ',' << t.next_state.soc << ',' << (t.done ? 1 : 0) << '\n';
}

inline std::vector<Transition> load_transitions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || detail::trim(line) != kTransitionHeader)
        throw ParseError(path + ": expected header '" + std::string(kTransitionHeader) + "'");
    std::vector<Transition> out;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        line = detail::trim(line);
        if (line.empty()) continue;
        ++row;
        auto c = detail::split_csv(line);
        if (c.size() != 7) throw ParseError(path + ": expected 7 columns", row);
        Transition t;
        t.state = {detail::parse_double(c[0], row), detail::parse_double(c[1], row)};
        const double a = detail::parse_double(c[2], row);
        if (a < 0.0 || a != std::floor(a)) throw ParseError(path + ": bad action index", row);
        t.action_index = static_cast<std::size_t>(a);
        t.reward = detail::parse_double(c[3], row);
        t.next_state = {detail::parse_double(c[4], row), detail::parse_double(c[5], row)};
        if (c[6] != "0" && c[6] != "1") throw ParseError(path + ": done must be 0 or 1", row);
        t.done = c[6] == "1";
        out.push_back(t);
    }
    return out;
}

}  // namespace hevlab
