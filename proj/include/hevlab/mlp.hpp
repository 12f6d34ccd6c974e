#pragma once

// Small fully connected Q-network: affine layers with rectifier activations on
// the hidden layers and an identity output, Huber TD loss on the selected
// action, and an Adam optimiser. Everything is float64 and single-threaded.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "hevlab/errors.hpp"

namespace hevlab {

// Row-major dense matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double* row(std::size_t i) noexcept { return data.data() + i * cols; }
    const double* row(std::size_t i) const noexcept { return data.data() + i * cols; }
    double& operator()(std::size_t i, std::size_t j) noexcept { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return data[i * cols + j]; }
};

// Weights are stored input-major: w[k * out + j] connects input k to unit j.
struct Layer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> w;
    std::vector<double> b;

    Layer() = default;
    Layer(std::size_t in_, std::size_t out_) : in(in_), out(out_), w(in_ * out_, 0.0), b(out_, 0.0) {}

    double& weight(std::size_t k, std::size_t j) noexcept { return w[k * out + j]; }
    double weight(std::size_t k, std::size_t j) const noexcept { return w[k * out + j]; }
};

struct MlpParams {
    std::vector<Layer> layers;

    std::size_t input_size() const { return layers.empty() ? 0 : layers.front().in; }
    std::size_t output_size() const { return layers.empty() ? 0 : layers.back().out; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.w.size() + l.b.size();
        return n;
    }

    bool same_shape(const MlpParams& o) const {
        if (layers.size() != o.layers.size()) return false;
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (layers[i].in != o.layers[i].in || layers[i].out != o.layers[i].out) return false;
        return true;
    }

    void validate() const {
        if (layers.empty()) throw DomainError("network has no layers");
        for (std::size_t i = 1; i < layers.size(); ++i)
            if (layers[i].in != layers[i - 1].out) throw DomainError("layer shapes do not chain");
    }

    // Zero-valued parameters with the same shapes.
    MlpParams zeros_like() const {
        MlpParams z;
        for (const auto& l : layers) z.layers.emplace_back(l.in, l.out);
        return z;
    }
};

inline MlpParams make_zero_mlp(std::span<const std::size_t> sizes) {
    if (sizes.size() < 2) throw DomainError("network needs at least an input and an output size");
    MlpParams p;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) p.layers.emplace_back(sizes[i], sizes[i + 1]);
    return p;
}

// He-style uniform init, U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases.
template <class Rng>
MlpParams make_mlp(std::span<const std::size_t> sizes, Rng& rng) {
    MlpParams p = make_zero_mlp(sizes);
    for (auto& l : p.layers) {
        const double lim = std::sqrt(6.0 / static_cast<double>(l.in));
        std::uniform_real_distribution<double> u(-lim, lim);
        for (auto& w : l.w) w = u(rng);
    }
    return p;
}

template <class Rng>
MlpParams make_mlp(std::initializer_list<std::size_t> sizes, Rng& rng) {
    return make_mlp(std::span<const std::size_t>(sizes.begin(), sizes.size()), rng);
}

namespace detail {

// y(n x out) = x(n x in) * W + b, optionally followed by max(0, .).
inline void affine(const Layer& l, const Matrix& x, Matrix& y, bool relu) {
    y.rows = x.rows;
    y.cols = l.out;
    y.data.resize(x.rows * l.out);
    for (std::size_t i = 0; i < x.rows; ++i) {
        double* yi = y.row(i);
        const double* xi = x.row(i);
        std::copy(l.b.begin(), l.b.end(), yi);
        for (std::size_t k = 0; k < l.in; ++k) {
            const double xk = xi[k];
            if (xk == 0.0) continue;
            const double* wk = l.w.data() + k * l.out;
#pragma omp simd
            for (std::size_t j = 0; j < l.out; ++j) yi[j] += xk * wk[j];
        }
        if (relu)
            for (std::size_t j = 0; j < l.out; ++j) yi[j] = yi[j] > 0.0 ? yi[j] : 0.0;
    }
}

}  // namespace detail

inline Matrix forward(const MlpParams& p, const Matrix& inputs) {
    if (p.layers.empty()) throw DomainError("network has no layers");
    if (inputs.cols != p.input_size()) throw DomainError("input width does not match the network");
    for (double v : inputs.data)
        if (!std::isfinite(v)) throw DomainError("non-finite network input");
    Matrix cur = inputs, next;
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        detail::affine(p.layers[i], cur, next, i + 1 < p.layers.size());
        std::swap(cur, next);
    }
    return cur;
}

inline std::vector<double> forward_one(const MlpParams& p, std::span<const double> x) {
    Matrix in(1, x.size());
    std::copy(x.begin(), x.end(), in.data.begin());
    return std::move(forward(p, in).data);
}

struct LossAndGrad {
    double loss = 0.0;
    MlpParams grad;
};

inline constexpr double kHuberDelta = 1.0;

// Mean Huber loss between Q(s_i, a_i) and targets_i. Only the selected output
// of each sample receives gradient.
inline LossAndGrad loss_and_grad(const MlpParams& p, const Matrix& states, std::span<const std::size_t> actions,
                                 std::span<const double> targets) {
    const std::size_t n = states.rows;
    if (actions.size() != n || targets.size() != n) throw DomainError("batch size mismatch");
    if (n == 0) throw DomainError("empty batch");
    for (std::size_t i = 0; i < n; ++i) {
        if (actions[i] >= p.output_size()) throw DomainError("action index out of range");
        if (!std::isfinite(targets[i])) throw DomainError("non-finite TD target");
    }

    const std::size_t L = p.layers.size();
    std::vector<Matrix> acts(L + 1);  // acts[0] = input, acts[l+1] = output of layer l
    acts[0] = states;
    for (std::size_t l = 0; l < L; ++l) detail::affine(p.layers[l], acts[l], acts[l + 1], l + 1 < L);

    LossAndGrad out;
    out.grad = p.zeros_like();
    const double inv_n = 1.0 / static_cast<double>(n);

    Matrix delta(n, p.output_size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double e = acts[L](i, actions[i]) - targets[i];
        const double ae = std::abs(e);
        out.loss += ae <= kHuberDelta ? 0.5 * e * e : kHuberDelta * (ae - 0.5 * kHuberDelta);
        delta(i, actions[i]) = std::clamp(e, -kHuberDelta, kHuberDelta) * inv_n;
    }
    out.loss *= inv_n;

    for (std::size_t l = L; l-- > 0;) {
        const Layer& layer = p.layers[l];
        Layer& g = out.grad.layers[l];
        const Matrix& x = acts[l];
        for (std::size_t i = 0; i < n; ++i) {
            const double* di = delta.row(i);
            const double* xi = x.row(i);
            for (std::size_t j = 0; j < layer.out; ++j) g.b[j] += di[j];
            for (std::size_t k = 0; k < layer.in; ++k) {
                const double xk = xi[k];
                if (xk == 0.0) continue;
                double* gk = g.w.data() + k * layer.out;
#pragma omp simd
                for (std::size_t j = 0; j < layer.out; ++j) gk[j] += xk * di[j];
            }
        }
        if (l == 0) break;
        Matrix prev(n, layer.in, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double* di = delta.row(i);
            const double* xi = x.row(i);
            double* pi = prev.row(i);
            for (std::size_t k = 0; k < layer.in; ++k) {
                if (xi[k] <= 0.0) continue;  // rectifier gate of the previous layer
                const double* wk = layer.w.data() + k * layer.out;
                double s = 0.0;
#pragma omp simd reduction(+ : s)
                for (std::size_t j = 0; j < layer.out; ++j) s += wk[j] * di[j];
                pi[k] = s;
            }
        }
        delta = std::move(prev);
    }
    return out;
}

struct OptState {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step = 0;
    MlpParams m;
    MlpParams v;

    OptState() = default;
    OptState(const MlpParams& like, double lr) : learning_rate(lr), m(like.zeros_like()), v(like.zeros_like()) {}
};

inline void adam_step(MlpParams& p, const MlpParams& g, OptState& opt) {
    if (!p.same_shape(g) || !p.same_shape(opt.m) || !p.same_shape(opt.v))
        throw DomainError("adam_step: shape mismatch");
    ++opt.step;
    const double t = static_cast<double>(opt.step);
    const double c1 = 1.0 - std::pow(opt.beta1, t);
    const double c2 = 1.0 - std::pow(opt.beta2, t);
    const double b1 = opt.beta1, b2 = opt.beta2, lr = opt.learning_rate, eps = opt.epsilon;
    auto update = [&](std::vector<double>& x, const std::vector<double>& gx, std::vector<double>& m,
                      std::vector<double>& v) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * gx[i];
            v[i] = b2 * v[i] + (1.0 - b2) * gx[i] * gx[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            x[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    };
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        update(p.layers[l].w, g.layers[l].w, opt.m.layers[l].w, opt.v.layers[l].w);
        update(p.layers[l].b, g.layers[l].b, opt.m.layers[l].b, opt.v.layers[l].b);
    }
}

// ---- checkpoints ----------------------------------------------------------
//
// Little-endian binary:
//   8 bytes  magic "HEVMLP\0\1"
//   u32      format version (1)
//   u32      layer count
//   per layer: u64 in, u64 out, in*out f64 weights (input-major), out f64 biases

inline constexpr char kCheckpointMagic[8] = {'H', 'E', 'V', 'M', 'L', 'P', '\0', '\1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void write_le(std::ostream& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T read_le(std::istream& in) {
    unsigned char buf[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw ParseError("truncated checkpoint");
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const MlpParams& p) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::write_le<std::uint32_t>(out, kCheckpointVersion);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.layers.size()));
    for (const auto& l : p.layers) {
        detail::write_le<std::uint64_t>(out, l.in);
        detail::write_le<std::uint64_t>(out, l.out);
        for (double w : l.w) detail::write_le(out, w);
        for (double b : l.b) detail::write_le(out, b);
    }
}

inline MlpParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    char magic[sizeof(kCheckpointMagic)];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw ParseError(path + ": not a network checkpoint");
    if (detail::read_le<std::uint32_t>(in) != kCheckpointVersion) throw ParseError(path + ": unsupported version");
    const auto count = detail::read_le<std::uint32_t>(in);
    MlpParams p;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto n_in = detail::read_le<std::uint64_t>(in);
        const auto n_out = detail::read_le<std::uint64_t>(in);
        if (n_in == 0 || n_out == 0 || n_in > (1u << 24) || n_out > (1u << 24)) throw ParseError(path + ": bad layer shape");
        Layer l(n_in, n_out);
        for (auto& w : l.w) w = detail::read_le<double>(in);
        for (auto& b : l.b) b = detail::read_le<double>(in);
        p.layers.push_back(std::move(l));
    }
    p.validate();
    return p;
}

}  // namespace hevlab
