#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "rsovs/autograd.hpp"

namespace rsovs {

/// Deterministic generator. The engine is fully specified by the standard; the
/// conversions to floating point are done here so results do not depend on the
/// standard library's distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi].
    int64_t uniform_int(int64_t lo, int64_t hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(engine_() % span);
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <class It>
    void shuffle(It first, It last) {
        const auto n = last - first;
        for (auto i = n - 1; i > 0; --i) std::swap(first[i], first[uniform_int(0, i)]);
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0;
};

/// 64-bit FNV-1a.
uint64_t fnv1a64(std::string_view text, uint64_t basis = 0xcbf29ce484222325ULL);

template <class T>
struct NamedParam {
    std::string name;
    ag::Var<T> var;
    bool frozen = false;
};

/// Ordered registry of every learned tensor in a model.
template <class T>
class ParamStore {
public:
    ag::Var<T> add(std::string name, Tensor<T> init, bool frozen = false) {
        for (const auto& p : params_)
            if (p.name == name) throw ConfigError("duplicate parameter name " + name);
        auto v = ag::leaf(std::move(init), !frozen);
        params_.push_back({std::move(name), v, frozen});
        return v;
    }

    const std::vector<NamedParam<T>>& all() const { return params_; }

    int64_t count(bool trainable_only) const {
        int64_t n = 0;
        for (const auto& p : params_)
            if (!trainable_only || !p.frozen) n += p.var->value.numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.var->zero_grad();
    }

private:
    std::vector<NamedParam<T>> params_;
};

/// Weights U(-1/sqrt(in), 1/sqrt(in)).
template <class T>
Tensor<T> uniform_init(Shape shape, int64_t fan_in, Rng& rng) {
    Tensor<T> t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

template <class T>
struct Linear {
    ag::Var<T> weight;
    ag::Var<T> bias;  // may be null

    Linear() = default;
    Linear(ParamStore<T>& store, const std::string& name, int64_t in, int64_t out, Rng& rng, bool with_bias = true) {
        weight = store.add(name + ".weight", uniform_init<T>({out, in}, in, rng));
        if (with_bias) bias = store.add(name + ".bias", uniform_init<T>({out}, in, rng));
    }

    ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::linear(x, weight, bias); }

    int64_t in_features() const { return weight->value.dim(1); }
    int64_t out_features() const { return weight->value.dim(0); }

    void set_zero() {
        std::fill(weight->value.data.begin(), weight->value.data.end(), T(0));
        if (bias) std::fill(bias->value.data.begin(), bias->value.data.end(), T(0));
    }
};

template <class T>
struct LayerNorm {
    ag::Var<T> gamma;
    ag::Var<T> beta;

    LayerNorm() = default;
    LayerNorm(ParamStore<T>& store, const std::string& name, int64_t width) {
        gamma = store.add(name + ".gamma", Tensor<T>({width}, T(1)));
        beta = store.add(name + ".beta", Tensor<T>({width}, T(0)));
    }

    ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::layer_norm(x, gamma, beta); }
};

inline ag::IndexMap make_index(std::vector<int64_t> v) {
    return std::make_shared<const std::vector<int64_t>>(std::move(v));
}

}  // namespace rsovs
