#include "rsovs/decoder.hpp"

namespace rsovs {

void DecoderConfig::validate(int64_t available_levels) const {
    if (num_stages < 0) throw ConfigError("decoder num_stages must be non-negative");
    if (upsample_factor != 2) throw ConfigError("decoder upsample_factor must be 2");
    if (num_stages > available_levels - 1)
        throw ConfigError("decoder needs " + std::to_string(num_stages + 1) + " backbone levels, backbone exposes " +
                          std::to_string(available_levels));
}

template <class T>
UpsampleStage<T>::UpsampleStage(ParamStore<T>& store, const std::string& name, int64_t level_dim, int64_t d_f,
                                int64_t factor, Rng& rng)
    : factor_(factor),
      inner_(store, name + ".pool_conv", d_f, d_f, rng),
      sp_proj_(store, name + ".spatial_gate", d_f, 1, rng),
      ch_proj_(store, name + ".channel_gate", d_f, d_f, rng),
      level_proj_(store, name + ".level_proj", level_dim, d_f, rng),
      fuse_guide_(store, name + ".fuse_guide", d_f, d_f, rng, false),
      fuse_map_(store, name + ".fuse_map", d_f, d_f, rng),
      connect_(store, name + ".connect", d_f, d_f, rng) {}

template <class T>
std::pair<ag::Var<T>, ag::Var<T>> UpsampleStage<T>::activation_vectors(const ag::Var<T>& maps) const {
    const auto& s = maps->shape();
    if (s.size() != 4) throw ShapeError("semantic map stack must be [h,w,N_C,d_F], got " + shape_str(s));
    const int64_t h = s[0], w = s[1], C = s[2], F = s[3];
    auto inner = inner_(maps);
    std::vector<int64_t> per_location(h * w * C), everything(h * w * C, 0);
    for (int64_t r = 0; r < h * w * C; ++r) per_location[r] = r / C;
    auto over_categories = ag::scatter_rows(inner, make_index(std::move(per_location)), F, {h, w, F}, T(1) / T(C));
    auto v_sp = ag::sigmoid(sp_proj_(over_categories));
    auto pooled = ag::scatter_rows(inner, make_index(std::move(everything)), F, {1, F}, T(1) / T(h * w * C));
    auto v_ch = ag::reshape(ag::sigmoid(ch_proj_(pooled)), {F});
    return {v_sp, v_ch};
}

template <class T>
std::pair<ag::Var<T>, ag::Var<T>> UpsampleStage<T>::activate_features(const ag::Var<T>& level, const ag::Var<T>& v_sp,
                                                                      const ag::Var<T>& v_ch) const {
    const auto& s = level->shape();
    if (s.size() != 3) throw ShapeError("level features must be [H_L,W_L,C], got " + shape_str(s));
    if (s[2] != v_ch->value.numel())
        throw ShapeError("channel gate has " + std::to_string(v_ch->value.numel()) + " entries, features have " +
                         std::to_string(s[2]) + " channels");
    auto gate = ag::resize_bilinear(v_sp, s[0], s[1]);
    return {ag::mul_broadcast_trailing(level, gate), ag::mul_broadcast_leading(level, v_ch)};
}

template <class T>
ag::Var<T> UpsampleStage<T>::fuse_scale(const ag::Var<T>& maps, const ag::Var<T>& level) const {
    const auto& s = maps->shape();
    if (s.size() != 4) throw ShapeError("semantic map stack must be [h,w,N_C,d_F], got " + shape_str(s));
    const int64_t H = s[0] * factor_, W = s[1] * factor_, C = s[2];
    auto up = ag::resize_bilinear(fuse_map_(maps), H, W);
    auto lvl = ag::resize_bilinear(level_proj_(level), H, W);
    auto [v_sp, v_ch] = activation_vectors(maps);
    auto [f_sp, f_ch] = activate_features(lvl, v_sp, v_ch);
    auto guide = fuse_guide_(ag::add(ag::add(f_sp, f_ch), lvl));
    return ag::add_grouped(up, guide, C);
}

template <class T>
ag::Var<T> UpsampleStage<T>::operator()(const ag::Var<T>& maps, const ag::Var<T>& level) const {
    return ag::gelu(connect_(fuse_scale(maps, level)));
}

template <class T>
LogitHead<T>::LogitHead(ParamStore<T>& store, int64_t d_f, Rng& rng) : probe_(store, "head.probe", d_f, 1, rng) {}

template <class T>
ag::Var<T> LogitHead<T>::operator()(const ag::Var<T>& maps, int64_t out_h, int64_t out_w) const {
    const auto& s = maps->shape();
    auto logits = ag::reshape(probe_(maps), {s[0], s[1], s[2]});
    return ag::resize_bilinear(logits, out_h, out_w);
}

template <class T>
Tensor<int32_t> argmax_labels(const Tensor<T>& logits) {
    const int64_t C = logits.dim(-1);
    Shape shape(logits.shape.begin(), logits.shape.end() - 1);
    Tensor<int32_t> out(shape);
    for (int64_t p = 0; p < out.numel(); ++p) {
        const T* z = &logits.data[p * C];
        int32_t best = 0;
        for (int64_t c = 1; c < C; ++c)
            if (z[c] > z[best]) best = static_cast<int32_t>(c);
        out.data[p] = best;
    }
    return out;
}

template class UpsampleStage<float>;
template class UpsampleStage<double>;
template class LogitHead<float>;
template class LogitHead<double>;
template Tensor<int32_t> argmax_labels(const Tensor<float>&);
template Tensor<int32_t> argmax_labels(const Tensor<double>&);

}  // namespace rsovs
