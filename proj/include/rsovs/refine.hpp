#pragma once

#include <vector>

#include "rsovs/nn.hpp"

namespace rsovs {

struct RefineConfig {
    int64_t repeats = 2;
    int64_t window_size = 8;
    int64_t heads = 4;

    void validate(int64_t d_f) const;
};

/// Multi-head self-attention over tokens [G, n, F]. `bias` is [heads, n, n] and
/// broadcast over G; `mask` is [M, heads, n, n] with G a multiple of M, tiled
/// over the leading part of G. Either may be null.
template <class T>
ag::Var<T> multihead_attention(const ag::Var<T>& tokens, const Linear<T>& qkv, const Linear<T>& proj, int64_t heads,
                               const ag::Var<T>& bias, const ag::Var<T>& mask);

/// Pre-norm transformer block with a x4 GELU feedforward.
template <class T>
struct AttentionBlock {
    LayerNorm<T> norm1;
    Linear<T> qkv;
    Linear<T> proj;
    LayerNorm<T> norm2;
    Linear<T> fc1;
    Linear<T> fc2;
    int64_t heads = 1;

    AttentionBlock() = default;
    AttentionBlock(ParamStore<T>& store, const std::string& name, int64_t d_f, int64_t heads, Rng& rng);

    ag::Var<T> feedforward(const ag::Var<T>& x) const;
    /// Zeroes both residual-branch output projections, making the block the identity.
    void zero_residual_outputs();
};

/// Windowed self-attention over the pixels of each category slice of a
/// [h, w, N_C, d_F] stack. Shifted blocks offset the window grid by half a window.
template <class T>
class WindowBlock {
public:
    WindowBlock(ParamStore<T>& store, const std::string& name, int64_t d_f, const RefineConfig& cfg, bool shifted,
                Rng& rng);

    ag::Var<T> operator()(const ag::Var<T>& stack) const;
    void zero_residual_outputs() { block_.zero_residual_outputs(); }
    const AttentionBlock<T>& block() const { return block_; }

private:
    AttentionBlock<T> block_;
    ag::Var<T> relative_bias_;  // [(2w-1)^2, heads]
    int64_t window_;
    bool shifted_;
};

/// Position-free attention across the N_C category tokens of every pixel.
template <class T>
class CategoryBlock {
public:
    CategoryBlock(ParamStore<T>& store, const std::string& name, int64_t d_f, const RefineConfig& cfg, Rng& rng);

    ag::Var<T> operator()(const ag::Var<T>& stack) const;
    void zero_residual_outputs() { block_.zero_residual_outputs(); }
    const AttentionBlock<T>& block() const { return block_; }

private:
    AttentionBlock<T> block_;
};

/// (regular window block -> shifted window block -> category block), `repeats` times.
template <class T>
class Refiner {
public:
    Refiner(ParamStore<T>& store, int64_t d_f, const RefineConfig& cfg, Rng& rng);

    ag::Var<T> spatial_refine(const ag::Var<T>& stack, int64_t repeat) const;
    ag::Var<T> category_refine(const ag::Var<T>& stack, int64_t repeat) const;
    ag::Var<T> operator()(const ag::Var<T>& stack) const;

    void zero_residual_outputs();
    int64_t repeats() const { return cfg_.repeats; }

private:
    RefineConfig cfg_;
    std::vector<WindowBlock<T>> regular_;
    std::vector<WindowBlock<T>> shifted_;
    std::vector<CategoryBlock<T>> category_;
};

/// Window layout of an h x w grid: effective window extents, padded sizes and shift.
struct WindowLayout {
    int64_t win_h = 0, win_w = 0;
    int64_t pad_h = 0, pad_w = 0;
    int64_t shift_h = 0, shift_w = 0;
    int64_t windows_y() const { return pad_h / win_h; }
    int64_t windows_x() const { return pad_w / win_w; }
    int64_t window_tokens() const { return win_h * win_w; }
    bool needs_mask(int64_t h, int64_t w) const { return shift_h || shift_w || pad_h != h || pad_w != w; }
};

/// Grids no larger than the window form one unshifted window; larger grids are
/// zero padded up to a multiple of the window.
WindowLayout window_layout(int64_t h, int64_t w, int64_t window, bool shifted);

}  // namespace rsovs
