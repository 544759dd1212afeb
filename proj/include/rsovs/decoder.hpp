#pragma once

#include <utility>
#include <vector>

#include "rsovs/nn.hpp"

namespace rsovs {

struct DecoderConfig {
    int64_t num_stages = 2;
    int64_t upsample_factor = 2;

    void validate(int64_t available_levels) const;
};

/// H x W x N_C logits at image resolution.
template <class T>
using LogitMap = Tensor<T>;

/// One scale-aware upsampling stage: pooled semantic statistics gate an earlier
/// backbone level, the gated level is fused into the 2x-resized semantic maps, and
/// a pointwise connection layer prepares the result for the next stage.
template <class T>
class UpsampleStage {
public:
    UpsampleStage(ParamStore<T>& store, const std::string& name, int64_t level_dim, int64_t d_f, int64_t factor,
                  Rng& rng);

    /// V_sp [h, w, 1] and V_ch [d_F], both in (0, 1).
    std::pair<ag::Var<T>, ag::Var<T>> activation_vectors(const ag::Var<T>& maps) const;

    /// Gates projected level features [H_L, W_L, d_F]: returns (spatial-gated,
    /// channel-gated). `v_sp` is resized to H_L x W_L first.
    std::pair<ag::Var<T>, ag::Var<T>> activate_features(const ag::Var<T>& level, const ag::Var<T>& v_sp,
                                                         const ag::Var<T>& v_ch) const;

    /// Scale-aware maps [f*h, f*w, N_C, d_F]: level features (raw backbone width)
    /// are projected, resized to the target grid, gated and summed, then fused with
    /// the resized maps.
    ag::Var<T> fuse_scale(const ag::Var<T>& maps, const ag::Var<T>& level) const;

    /// fuse_scale followed by the connection layer and GELU.
    ag::Var<T> operator()(const ag::Var<T>& maps, const ag::Var<T>& level) const;

    Linear<T>& fuse_map() { return fuse_map_; }
    Linear<T>& fuse_guide() { return fuse_guide_; }
    Linear<T>& level_proj() { return level_proj_; }
    Linear<T>& spatial_gate() { return sp_proj_; }
    Linear<T>& channel_gate() { return ch_proj_; }
    Linear<T>& pooled_conv() { return inner_; }

private:
    int64_t factor_;
    Linear<T> inner_;       // pointwise conv ahead of both poolings
    Linear<T> sp_proj_;     // d_F -> 1 per location
    Linear<T> ch_proj_;     // d_F -> d_F on the pooled channel vector
    Linear<T> level_proj_;  // backbone width -> d_F
    Linear<T> fuse_guide_;  // gated level half of the fusion conv
    Linear<T> fuse_map_;    // semantic map half of the fusion conv
    Linear<T> connect_;
};

/// Shared d_F -> 1 probe per category token followed by a bilinear resize.
template <class T>
class LogitHead {
public:
    LogitHead(ParamStore<T>& store, int64_t d_f, Rng& rng);
    ag::Var<T> operator()(const ag::Var<T>& maps, int64_t out_h, int64_t out_w) const;
    Linear<T>& probe() { return probe_; }

private:
    Linear<T> probe_;
};

/// Per-pixel argmax over the last axis; ties go to the lowest index.
template <class T>
Tensor<int32_t> argmax_labels(const Tensor<T>& logits);

}  // namespace rsovs
