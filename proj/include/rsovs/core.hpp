#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "rsovs/tensor.hpp"

namespace rsovs {

/// Counter-clockwise rotation by a multiple of 90 degrees.
class Orientation {
public:
    constexpr Orientation() = default;
    explicit Orientation(int quarter_turns) : turns_(quarter_turns) {
        if (quarter_turns < 0 || quarter_turns > 3)
            throw InputError("orientation must be 0..3 quarter turns, got " + std::to_string(quarter_turns));
    }
    constexpr int quarter_turns() const { return turns_; }
    constexpr int degrees() const { return turns_ * 90; }
    friend constexpr bool operator==(Orientation, Orientation) = default;

private:
    int turns_ = 0;
};

/// (4 - k) mod 4.
inline Orientation inverse_rotation(Orientation o) { return Orientation((4 - o.quarter_turns()) % 4); }

/// Source flat spatial index (row * side + col) for every destination cell of a
/// `side` x `side` grid rotated counter-clockwise by `o`.
std::vector<int64_t> rotation_source_index(int64_t side, Orientation o);

/// Rotates the two leading (spatial) axes of `grid` counter-clockwise; trailing
/// axes move as a block. Exact permutation, no interpolation.
template <class T>
Tensor<T> rotate_grid(const Tensor<T>& grid, Orientation o) {
    if (grid.rank() < 2 || grid.dim(0) != grid.dim(1))
        throw ShapeError("rotate_grid needs a square grid, got " + shape_str(grid.shape));
    if (o.quarter_turns() == 0) return grid;
    const int64_t side = grid.dim(0);
    const int64_t block = grid.inner(2);
    const auto src = rotation_source_index(side, o);
    Tensor<T> out(grid.shape);
    for (int64_t i = 0; i < side * side; ++i)
        std::copy_n(grid.data.begin() + src[i] * block, block, out.data.begin() + i * block);
    return out;
}

/// dot(a,b) / (max(|a|,eps) * max(|b|,eps)), clamped to [-1, 1].
template <class T>
T cosine_similarity(std::span<const T> a, std::span<const T> b, T eps = T(1e-8)) {
    if (a.size() != b.size())
        throw ShapeError("cosine_similarity length mismatch " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    T dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const T denom = std::max(std::sqrt(na), eps) * std::max(std::sqrt(nb), eps);
    return std::clamp(dot / denom, T(-1), T(1));
}

/// One output coordinate of a linear resample. The default is half-pixel
/// sampling; `align_corners` maps the end samples onto each other instead.
struct LinearTap {
    int64_t lo = 0;
    int64_t hi = 0;
    double w_hi = 0;  // weight of `hi`; `lo` gets 1 - w_hi
};

std::vector<LinearTap> linear_taps(int64_t in_size, int64_t out_size, bool align_corners = false);

/// Bilinear resize of the two leading axes; trailing axes interpolated as a block.
template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& grid, int64_t out_h, int64_t out_w, bool align_corners = false) {
    if (grid.rank() < 2) throw ShapeError("bilinear_resize needs a grid, got " + shape_str(grid.shape));
    if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize output size must be positive");
    const int64_t in_h = grid.dim(0), in_w = grid.dim(1);
    if (in_h == out_h && in_w == out_w) return grid;
    const int64_t block = grid.inner(2);
    const auto ty = linear_taps(in_h, out_h, align_corners);
    const auto tx = linear_taps(in_w, out_w, align_corners);
    Shape shape = grid.shape;
    shape[0] = out_h;
    shape[1] = out_w;
    Tensor<T> out(shape);
    for (int64_t y = 0; y < out_h; ++y) {
        for (int64_t x = 0; x < out_w; ++x) {
            const T wy = T(ty[y].w_hi), wx = T(tx[x].w_hi);
            const T w00 = (1 - wy) * (1 - wx), w01 = (1 - wy) * wx, w10 = wy * (1 - wx), w11 = wy * wx;
            const T* p00 = &grid.data[(ty[y].lo * in_w + tx[x].lo) * block];
            const T* p01 = &grid.data[(ty[y].lo * in_w + tx[x].hi) * block];
            const T* p10 = &grid.data[(ty[y].hi * in_w + tx[x].lo) * block];
            const T* p11 = &grid.data[(ty[y].hi * in_w + tx[x].hi) * block];
            T* o = &out.data[(y * out_w + x) * block];
            for (int64_t c = 0; c < block; ++c) o[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
        }
    }
    return out;
}

/// Nearest-neighbour resize of the two leading axes (used for label masks).
template <class T>
Tensor<T> nearest_resize(const Tensor<T>& grid, int64_t out_h, int64_t out_w) {
    const int64_t in_h = grid.dim(0), in_w = grid.dim(1);
    if (in_h == out_h && in_w == out_w) return grid;
    const int64_t block = grid.inner(2);
    Shape shape = grid.shape;
    shape[0] = out_h;
    shape[1] = out_w;
    Tensor<T> out(shape);
    for (int64_t y = 0; y < out_h; ++y) {
        const int64_t sy = std::min(in_h - 1, (y * in_h) / out_h);
        for (int64_t x = 0; x < out_w; ++x) {
            const int64_t sx = std::min(in_w - 1, (x * in_w) / out_w);
            std::copy_n(grid.data.begin() + (sy * in_w + sx) * block, block, out.data.begin() + (y * out_w + x) * block);
        }
    }
    return out;
}

template <class T>
bool all_finite(const Tensor<T>& t) {
    return std::all_of(t.data.begin(), t.data.end(), [](T v) { return std::isfinite(static_cast<double>(v)); });
}

/// H x W x 3 image with values in [0, 1].
struct ImageGrid {
    Tensor<float> pixels;

    ImageGrid() = default;
    explicit ImageGrid(Tensor<float> px);
    int64_t height() const { return pixels.dim(0); }
    int64_t width() const { return pixels.dim(1); }
};

/// h x w x d token grid produced by a vision backbone level.
struct FeatureGrid {
    Tensor<float> values;

    int64_t grid_height() const { return values.dim(0); }
    int64_t grid_width() const { return values.dim(1); }
    int64_t channels() const { return values.dim(2); }
};

inline constexpr int32_t kIgnoreIndex = 255;

/// H x W integer class indices; `kIgnoreIndex` marks unlabeled pixels.
using LabelMask = Tensor<int32_t>;

}  // namespace rsovs
