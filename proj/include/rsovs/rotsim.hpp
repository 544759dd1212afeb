#pragma once

#include <vector>

#include "rsovs/backbone.hpp"
#include "rsovs/core.hpp"
#include "rsovs/nn.hpp"

namespace rsovs {

struct OrientationConfig {
    std::vector<Orientation> orientations{Orientation(0), Orientation(1), Orientation(2), Orientation(3)};

    int64_t count() const { return static_cast<int64_t>(orientations.size()); }
    void validate() const;
};

/// View k is the input rotated by orientations[k]; view 0 is the input itself.
std::vector<ImageGrid> generate_rotated_views(const ImageGrid& image, const OrientationConfig& cfg);

/// Stacks per-view cosine similarities into [h, w, N_A, N_C]. `features` holds the
/// deepest-level grid of every view.
template <class T>
ag::Var<T> compute_orientation_similarities(const std::vector<ag::Var<T>>& features,
                                            const std::vector<ClassEmbedding>& classes);

/// Embeds similarity planes, rotates every orientation slice back into the frame
/// of the unrotated view and fuses the slices into the initial semantic maps.
template <class T>
class RotationAggregator {
public:
    RotationAggregator(ParamStore<T>& store, OrientationConfig cfg, int64_t d_f, int64_t embed_kernel, Rng& rng);

    /// [h, w, N_A, N_C] -> [h, w, N_A, N_C, d_F]; one shared 1-channel kernel.
    ag::Var<T> embed_similarities(const ag::Var<T>& sims) const;

    /// [h, w, N_A, N_C, d_F] -> [h, w, N_C, N_A, d_F] with slice k rotated by the
    /// inverse of orientations[k].
    ag::Var<T> align(const ag::Var<T>& embedded) const;

    /// Aligned slices concatenated on the feature axis and fused to [h, w, N_C, d_F].
    ag::Var<T> align_and_fuse(const ag::Var<T>& embedded) const;

    const OrientationConfig& config() const { return cfg_; }
    Linear<T>& embed_layer() { return embed_; }
    Linear<T>& fuse_layer() { return fuse_; }

private:
    OrientationConfig cfg_;
    int64_t d_f_;
    int64_t kernel_;
    Linear<T> embed_;
    Linear<T> fuse_;
};

/// Rotates the leading two axes of a graph node (square grid) by `o`.
template <class T>
ag::Var<T> rotate_var(const ag::Var<T>& grid, Orientation o);

}  // namespace rsovs
