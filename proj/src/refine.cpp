#include "rsovs/refine.hpp"

#include <cmath>

namespace rsovs {

namespace {

constexpr double kMasked = -1e9;

int64_t round_up(int64_t v, int64_t m) { return (v + m - 1) / m * m; }

int64_t shift_region(int64_t r, int64_t pad, int64_t win, int64_t shift) {
    if (shift == 0) return 0;
    if (r < pad - win) return 0;
    return r < pad - shift ? 1 : 2;
}

}  // namespace

void RefineConfig::validate(int64_t d_f) const {
    if (repeats < 1) throw ConfigError("refine repeats must be at least 1");
    if (window_size < 1) throw ConfigError("refine window_size must be positive");
    if (heads < 1) throw ConfigError("refine heads must be positive");
    if (d_f % heads != 0)
        throw ConfigError("d_F " + std::to_string(d_f) + " is not divisible by " + std::to_string(heads) + " heads");
}

WindowLayout window_layout(int64_t h, int64_t w, int64_t window, bool shifted) {
    WindowLayout L;
    if (h <= window && w <= window) {
        L.win_h = L.pad_h = h;
        L.win_w = L.pad_w = w;
        return L;
    }
    L.win_h = L.win_w = window;
    L.pad_h = round_up(h, window);
    L.pad_w = round_up(w, window);
    if (shifted) L.shift_h = L.shift_w = window / 2;
    return L;
}

template <class T>
ag::Var<T> multihead_attention(const ag::Var<T>& tokens, const Linear<T>& qkv, const Linear<T>& proj, int64_t heads,
                               const ag::Var<T>& bias, const ag::Var<T>& mask) {
    const auto& s = tokens->shape();
    if (s.size() != 3) throw ShapeError("attention tokens must be [G,n,F], got " + shape_str(s));
    const int64_t G = s[0], n = s[1], F = s[2];
    if (F % heads != 0) throw ConfigError("token width not divisible by head count");
    const int64_t dh = F / heads;
    auto packed = qkv(tokens);  // [G, n, 3F]: q | k | v, each split into heads
    auto split = [&](int64_t which) {
        std::vector<int64_t> idx(G * heads * n);
        for (int64_t g = 0; g < G; ++g)
            for (int64_t hd = 0; hd < heads; ++hd)
                for (int64_t t = 0; t < n; ++t) idx[(g * heads + hd) * n + t] = ((g * n + t) * 3 + which) * heads + hd;
        return ag::gather_rows(packed, make_index(std::move(idx)), dh, {G * heads, n, dh});
    };
    auto q = split(0), k = split(1), v = split(2);
    auto scores = ag::scale(ag::bmm(q, k, true), T(1) / std::sqrt(T(dh)));
    if (bias) scores = ag::add_broadcast_leading(scores, bias);
    if (mask) scores = ag::add_broadcast_leading(scores, mask);
    auto out = ag::bmm(ag::softmax_last(scores), v, false);  // [G*heads, n, dh]
    std::vector<int64_t> merge(G * n * heads);
    for (int64_t g = 0; g < G; ++g)
        for (int64_t t = 0; t < n; ++t)
            for (int64_t hd = 0; hd < heads; ++hd) merge[(g * n + t) * heads + hd] = (g * heads + hd) * n + t;
    return proj(ag::gather_rows(out, make_index(std::move(merge)), dh, {G, n, F}));
}

template <class T>
AttentionBlock<T>::AttentionBlock(ParamStore<T>& store, const std::string& name, int64_t d_f, int64_t heads_,
                                  Rng& rng)
    : norm1(store, name + ".norm1", d_f),
      qkv(store, name + ".attn.qkv", d_f, 3 * d_f, rng),
      proj(store, name + ".attn.proj", d_f, d_f, rng),
      norm2(store, name + ".norm2", d_f),
      fc1(store, name + ".ffn.fc1", d_f, 4 * d_f, rng),
      fc2(store, name + ".ffn.fc2", 4 * d_f, d_f, rng),
      heads(heads_) {}

template <class T>
ag::Var<T> AttentionBlock<T>::feedforward(const ag::Var<T>& x) const {
    return ag::add(x, fc2(ag::gelu(fc1(norm2(x)))));
}

template <class T>
void AttentionBlock<T>::zero_residual_outputs() {
    proj.set_zero();
    fc2.set_zero();
}

template <class T>
WindowBlock<T>::WindowBlock(ParamStore<T>& store, const std::string& name, int64_t d_f, const RefineConfig& cfg,
                            bool shifted, Rng& rng)
    : block_(store, name, d_f, cfg.heads, rng), window_(cfg.window_size), shifted_(shifted) {
    const int64_t span = 2 * window_ - 1;
    relative_bias_ = store.add(name + ".attn.relative_bias", Tensor<T>({span * span, cfg.heads}, T(0)));
}

template <class T>
ag::Var<T> WindowBlock<T>::operator()(const ag::Var<T>& stack) const {
    const auto& s = stack->shape();
    if (s.size() != 4) throw ShapeError("semantic map stack must be [h,w,N_C,d_F], got " + shape_str(s));
    const int64_t h = s[0], w = s[1], C = s[2], F = s[3];
    const int64_t heads = block_.heads;
    const WindowLayout L = window_layout(h, w, window_, shifted_);
    const int64_t nwy = L.windows_y(), nwx = L.windows_x(), nw = nwy * nwx, n = L.window_tokens();

    std::vector<int64_t> part(C * nw * n);
    std::vector<char> is_pad(nw * n);
    for (int64_t c = 0; c < C; ++c)
        for (int64_t wy = 0; wy < nwy; ++wy)
            for (int64_t wx = 0; wx < nwx; ++wx)
                for (int64_t iy = 0; iy < L.win_h; ++iy)
                    for (int64_t ix = 0; ix < L.win_w; ++ix) {
                        const int64_t py = (wy * L.win_h + iy + L.shift_h) % L.pad_h;
                        const int64_t px = (wx * L.win_w + ix + L.shift_w) % L.pad_w;
                        const int64_t t = (wy * nwx + wx) * n + iy * L.win_w + ix;
                        const bool pad = py >= h || px >= w;
                        is_pad[t] = pad;
                        part[c * nw * n + t] = pad ? -1 : (py * w + px) * C + c;
                    }

    std::vector<int64_t> unpart(h * w * C);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const int64_t ry = (y - L.shift_h + L.pad_h) % L.pad_h, rx = (x - L.shift_w + L.pad_w) % L.pad_w;
            const int64_t t = ((ry / L.win_h) * nwx + rx / L.win_w) * n + (ry % L.win_h) * L.win_w + rx % L.win_w;
            for (int64_t c = 0; c < C; ++c) unpart[(y * w + x) * C + c] = c * nw * n + t;
        }

    const int64_t span = 2 * window_ - 1;
    std::vector<int64_t> bias_idx(heads * n * n);
    for (int64_t hd = 0; hd < heads; ++hd)
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < n; ++j) {
                const int64_t dy = i / L.win_w - j / L.win_w + window_ - 1;
                const int64_t dx = i % L.win_w - j % L.win_w + window_ - 1;
                bias_idx[(hd * n + i) * n + j] = (dy * span + dx) * heads + hd;
            }
    auto bias = ag::gather_rows(relative_bias_, make_index(std::move(bias_idx)), 1, {heads, n, n});

    ag::Var<T> mask;
    if (L.needs_mask(h, w)) {
        Tensor<T> m({nw, heads, n, n}, T(0));
        for (int64_t wy = 0; wy < nwy; ++wy)
            for (int64_t wx = 0; wx < nwx; ++wx) {
                const int64_t win = wy * nwx + wx;
                auto region = [&](int64_t t) {
                    const int64_t ry = wy * L.win_h + t / L.win_w, rx = wx * L.win_w + t % L.win_w;
                    return shift_region(ry, L.pad_h, L.win_h, L.shift_h) * 3 +
                           shift_region(rx, L.pad_w, L.win_w, L.shift_w);
                };
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < n; ++j) {
                        if (!is_pad[win * n + j] && region(i) == region(j)) continue;
                        for (int64_t hd = 0; hd < heads; ++hd) m.data[((win * heads + hd) * n + i) * n + j] = T(kMasked);
                    }
            }
        mask = ag::constant(std::move(m));
    }

    auto normed = block_.norm1(stack);
    auto windows = ag::gather_rows(normed, make_index(std::move(part)), F, {C * nw, n, F});
    auto attended = multihead_attention(windows, block_.qkv, block_.proj, heads, bias, mask);
    auto restored = ag::gather_rows(attended, make_index(std::move(unpart)), F, {h, w, C, F});
    return block_.feedforward(ag::add(stack, restored));
}

template <class T>
CategoryBlock<T>::CategoryBlock(ParamStore<T>& store, const std::string& name, int64_t d_f, const RefineConfig& cfg,
                                Rng& rng)
    : block_(store, name, d_f, cfg.heads, rng) {}

template <class T>
ag::Var<T> CategoryBlock<T>::operator()(const ag::Var<T>& stack) const {
    const auto& s = stack->shape();
    if (s.size() != 4) throw ShapeError("semantic map stack must be [h,w,N_C,d_F], got " + shape_str(s));
    auto tokens = ag::reshape(block_.norm1(stack), {s[0] * s[1], s[2], s[3]});
    auto attended = multihead_attention(tokens, block_.qkv, block_.proj, block_.heads, ag::Var<T>{}, ag::Var<T>{});
    return block_.feedforward(ag::add(stack, ag::reshape(attended, s)));
}

template <class T>
Refiner<T>::Refiner(ParamStore<T>& store, int64_t d_f, const RefineConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate(d_f);
    for (int64_t b = 0; b < cfg_.repeats; ++b) {
        const std::string base = "refine." + std::to_string(b);
        regular_.emplace_back(store, base + ".spatial.regular", d_f, cfg_, false, rng);
        shifted_.emplace_back(store, base + ".spatial.shifted", d_f, cfg_, true, rng);
        category_.emplace_back(store, base + ".category", d_f, cfg_, rng);
    }
}

template <class T>
ag::Var<T> Refiner<T>::spatial_refine(const ag::Var<T>& stack, int64_t repeat) const {
    return shifted_.at(repeat)(regular_.at(repeat)(stack));
}

template <class T>
ag::Var<T> Refiner<T>::category_refine(const ag::Var<T>& stack, int64_t repeat) const {
    return category_.at(repeat)(stack);
}

template <class T>
ag::Var<T> Refiner<T>::operator()(const ag::Var<T>& stack) const {
    ag::Var<T> x = stack;
    for (int64_t b = 0; b < cfg_.repeats; ++b) x = category_refine(spatial_refine(x, b), b);
    return x;
}

template <class T>
void Refiner<T>::zero_residual_outputs() {
    for (auto& b : regular_) b.zero_residual_outputs();
    for (auto& b : shifted_) b.zero_residual_outputs();
    for (auto& b : category_) b.zero_residual_outputs();
}

template ag::Var<float> multihead_attention(const ag::Var<float>&, const Linear<float>&, const Linear<float>&, int64_t,
                                            const ag::Var<float>&, const ag::Var<float>&);
template ag::Var<double> multihead_attention(const ag::Var<double>&, const Linear<double>&, const Linear<double>&,
                                             int64_t, const ag::Var<double>&, const ag::Var<double>&);
template struct AttentionBlock<float>;
template struct AttentionBlock<double>;
template class WindowBlock<float>;
template class WindowBlock<double>;
template class CategoryBlock<float>;
template class CategoryBlock<double>;
template class Refiner<float>;
template class Refiner<double>;

}  // namespace rsovs
