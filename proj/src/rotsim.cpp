#include "rsovs/rotsim.hpp"

#include <set>

namespace rsovs {

void OrientationConfig::validate() const {
    if (orientations.empty()) throw ConfigError("orientation set must not be empty");
    if (orientations.front().quarter_turns() != 0) throw ConfigError("first orientation must be 0");
    std::set<int> seen;
    for (auto o : orientations)
        if (!seen.insert(o.quarter_turns()).second)
            throw ConfigError("duplicate orientation " + std::to_string(o.degrees()));
}

std::vector<ImageGrid> generate_rotated_views(const ImageGrid& image, const OrientationConfig& cfg) {
    cfg.validate();
    if (image.height() != image.width())
        throw ShapeError("rotation views need a square image, got " + std::to_string(image.height()) + "x" +
                         std::to_string(image.width()));
    std::vector<ImageGrid> views;
    views.reserve(cfg.orientations.size());
    for (auto o : cfg.orientations) views.emplace_back(rotate_grid(image.pixels, o));
    return views;
}

template <class T>
ag::Var<T> rotate_var(const ag::Var<T>& grid, Orientation o) {
    if (grid->value.rank() < 2 || grid->value.dim(0) != grid->value.dim(1))
        throw ShapeError("rotation needs a square grid, got " + shape_str(grid->shape()));
    if (o.quarter_turns() == 0) return grid;
    return ag::gather_rows(grid, make_index(rotation_source_index(grid->value.dim(0), o)), grid->value.inner(2),
                           grid->shape());
}

template <class T>
ag::Var<T> compute_orientation_similarities(const std::vector<ag::Var<T>>& features,
                                            const std::vector<ClassEmbedding>& classes) {
    if (features.empty()) throw ShapeError("no orientation features");
    if (classes.empty()) throw InputError("at least one category is required");
    const int64_t d = features[0]->value.dim(-1);
    Tensor<T> cls({static_cast<int64_t>(classes.size()), d});
    for (size_t j = 0; j < classes.size(); ++j) {
        if (static_cast<int64_t>(classes[j].vector.size()) != d)
            throw ShapeError("class embedding \"" + classes[j].category_name + "\" has width " +
                             std::to_string(classes[j].vector.size()) + ", image features have " + std::to_string(d));
        for (int64_t i = 0; i < d; ++i) cls.data[j * d + i] = static_cast<T>(classes[j].vector[i]);
    }
    std::vector<ag::Var<T>> per_view;
    for (const auto& f : features) {
        if (f->shape() != features[0]->shape())
            throw ShapeError("orientation features differ in shape: " + shape_str(f->shape()) + " vs " +
                             shape_str(features[0]->shape()));
        per_view.push_back(ag::cosine_rows(f, cls));
    }
    const auto& s = features[0]->shape();
    const int64_t A = static_cast<int64_t>(features.size()), C = static_cast<int64_t>(classes.size());
    return ag::reshape(ag::concat_last(per_view), {s[0], s[1], A, C});
}

template <class T>
RotationAggregator<T>::RotationAggregator(ParamStore<T>& store, OrientationConfig cfg, int64_t d_f,
                                          int64_t embed_kernel, Rng& rng)
    : cfg_(std::move(cfg)), d_f_(d_f), kernel_(embed_kernel) {
    cfg_.validate();
    if (d_f < 1) throw ConfigError("d_F must be positive");
    if (embed_kernel != 1 && embed_kernel != 3) throw ConfigError("embedding kernel must be 1 or 3");
    embed_ = Linear<T>(store, "rotsim.embed", kernel_ * kernel_, d_f, rng);
    fuse_ = Linear<T>(store, "rotsim.fuse", cfg_.count() * d_f, d_f, rng);
}

template <class T>
ag::Var<T> RotationAggregator<T>::embed_similarities(const ag::Var<T>& sims) const {
    const auto& s = sims->shape();
    if (s.size() != 4) throw ShapeError("similarity stack must be [h,w,N_A,N_C], got " + shape_str(s));
    const int64_t h = s[0], w = s[1], A = s[2], C = s[3];
    if (kernel_ == 1) return embed_(ag::reshape(sims, {h, w, A, C, 1}));
    // 3x3 neighbourhoods of every (orientation, category) plane, zero padded.
    std::vector<int64_t> idx;
    idx.reserve(h * w * A * C * 9);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t a = 0; a < A; ++a)
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t dy = -1; dy <= 1; ++dy)
                        for (int64_t dx = -1; dx <= 1; ++dx) {
                            const int64_t yy = y + dy, xx = x + dx;
                            idx.push_back(yy < 0 || yy >= h || xx < 0 || xx >= w ? -1
                                                                                   : ((yy * w + xx) * A + a) * C + c);
                        }
    auto patches = ag::gather_rows(sims, make_index(std::move(idx)), 1, {h, w, A, C, 9});
    return embed_(patches);
}

template <class T>
ag::Var<T> RotationAggregator<T>::align(const ag::Var<T>& embedded) const {
    const auto& s = embedded->shape();
    if (s.size() != 5) throw ShapeError("embedded stack must be [h,w,N_A,N_C,d_F], got " + shape_str(s));
    const int64_t h = s[0], w = s[1], A = s[2], C = s[3], F = s[4];
    if (A != cfg_.count())
        throw ShapeError("stack has " + std::to_string(A) + " orientations, config has " + std::to_string(cfg_.count()));
    if (h != w) throw ShapeError("alignment needs a square grid");
    std::vector<std::vector<int64_t>> back;
    for (auto o : cfg_.orientations) back.push_back(rotation_source_index(h, inverse_rotation(o)));
    std::vector<int64_t> idx(h * w * C * A);
    for (int64_t p = 0; p < h * w; ++p)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t a = 0; a < A; ++a) idx[(p * C + c) * A + a] = (back[a][p] * A + a) * C + c;
    return ag::gather_rows(embedded, make_index(std::move(idx)), F, {h, w, C, A, F});
}

template <class T>
ag::Var<T> RotationAggregator<T>::align_and_fuse(const ag::Var<T>& embedded) const {
    auto aligned = align(embedded);
    const auto& s = aligned->shape();
    return fuse_(ag::reshape(aligned, {s[0], s[1], s[2], s[3] * s[4]}));
}

template class RotationAggregator<float>;
template class RotationAggregator<double>;
template ag::Var<float> compute_orientation_similarities(const std::vector<ag::Var<float>>&,
                                                         const std::vector<ClassEmbedding>&);
template ag::Var<double> compute_orientation_similarities(const std::vector<ag::Var<double>>&,
                                                          const std::vector<ClassEmbedding>&);
template ag::Var<float> rotate_var(const ag::Var<float>&, Orientation);
template ag::Var<double> rotate_var(const ag::Var<double>&, Orientation);

}  // namespace rsovs
