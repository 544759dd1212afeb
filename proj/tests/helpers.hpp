#pragma once

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "rsovs/nn.hpp"
#include "rsovs/pipeline.hpp"

namespace rsovs::testing {

template <class T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

inline ImageGrid random_image(int64_t side, Rng& rng) { return ImageGrid(random_tensor<float>({side, side, 3}, rng, 0.0, 1.0)); }

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    REQUIRE(a.shape == b.shape);
    double m = 0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
    return m;
}

/// Tensor contents as a plain vector, for comparisons against literals.
template <class T>
std::vector<T> values(const Tensor<T>& t) {
    return {t.data.begin(), t.data.end()};
}

/// Small model configuration that keeps tests fast.
inline ModelConfig tiny_model(int64_t d_f = 16) {
    ModelConfig m;
    m.backbone.embed_dim = 16;
    m.backbone.patch_size = 4;
    m.d_f = d_f;
    m.refine.window_size = 4;
    m.refine.heads = 2;
    m.refine.repeats = 1;
    return m;
}

/// Permutes the last axis of `t` so that out[..., k] = t[..., perm[k]].
template <class T>
Tensor<T> permute_last(const Tensor<T>& t, const std::vector<int>& perm) {
    const int64_t c = t.dim(-1);
    Tensor<T> out(t.shape);
    for (int64_t r = 0; r < t.numel() / c; ++r)
        for (int64_t k = 0; k < c; ++k) out.data[r * c + k] = t.data[r * c + perm[k]];
    return out;
}

/// Fresh scratch directory under the build tree, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("rsovs_" + tag + "_" + std::to_string(std::rand()) + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

}  // namespace rsovs::testing

namespace rsovs::testing {

struct GradCheck {
    double max_rel = 0;
    int64_t checked = 0;
    std::string worst;
};

/// Compares analytic gradients of `loss()` (a scalar graph) against central
/// differences for every non-frozen parameter of `store`.
template <class F>
GradCheck finite_difference_check(ParamStore<double>& store, F&& loss, double eps = 1e-5) {
    store.zero_grad();
    ag::backward(loss());
    GradCheck out;
    // Entries far below the largest gradient are compared against that scale,
    // since their numeric estimate is pure round-off.
    double scale = 0;
    for (const auto& p : store.all())
        if (!p.frozen && p.var->has_grad())
            for (double g : p.var->grad.data) scale = std::max(scale, std::abs(g));
    const double floor = std::max(1e-8, 1e-6 * scale);
    for (const auto& p : store.all()) {
        if (p.frozen) continue;
        REQUIRE(p.var->has_grad());
        const Tensor<double> analytic = p.var->grad;
        for (int64_t i = 0; i < p.var->value.numel(); ++i) {
            double& w = p.var->value.data[i];
            const double w0 = w;
            double up, down;
            {
                ag::NoGradGuard ng;
                w = w0 + eps;
                up = loss()->value.data[0];
                w = w0 - eps;
                down = loss()->value.data[0];
            }
            w = w0;
            const double numeric = (up - down) / (2 * eps);
            const double a = analytic.data[i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            ++out.checked;
            if (rel > out.max_rel) {
                out.max_rel = rel;
                out.worst = p.name + "[" + std::to_string(i) + "] analytic " + std::to_string(a) + " numeric " +
                            std::to_string(numeric) + " rel " + std::to_string(rel);
            }
        }
    }
    return out;
}

/// Replaces every trainable parameter with U(-scale, scale) values.
template <class T>
void randomize_params(ParamStore<T>& store, Rng& rng, double scale) {
    for (const auto& p : store.all())
        if (!p.frozen)
            for (auto& v : p.var->value.data) v = static_cast<T>(rng.uniform(-scale, scale));
}

/// sum(x * r) for a fixed random r: a scalar whose gradient reaches every output.
template <class T>
ag::Var<T> weighted_sum(const ag::Var<T>& x, const Tensor<T>& r) {
    return ag::sum_all(ag::mul(x, ag::constant(r)));
}

}  // namespace rsovs::testing
