#include "rsovs/pipeline.hpp"

#include <set>

namespace rsovs {

namespace {

template <class F>
auto tagged(const char* stage, F&& fn) {
    const std::string tag = std::string(stage) + ": ";
    try {
        return fn();
    } catch (const ShapeError& e) {
        throw ShapeError(tag + e.what());
    } catch (const InputError& e) {
        throw InputError(tag + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(tag + e.what());
    } catch (const BackboneFault& e) {
        throw BackboneFault(tag + e.what());
    }
}

}  // namespace

void ModelConfig::validate() const {
    if (backbone_kind != "mock" && backbone_kind != "external")
        throw ConfigError("unknown backbone kind \"" + backbone_kind + "\"");
    if (backbone_kind == "external" && backbone_weights.empty())
        throw ConfigError("external backbone needs a weight file");
    backbone.validate();
    orientation.validate();
    refine.validate(d_f);
    decoder.validate(static_cast<int64_t>(backbone.level_ids.size()));
    if (d_f < 1) throw ConfigError("d_F must be positive");
}

template <class T>
SegmentationModel<T>::SegmentationModel(ModelConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
    if (cfg_.backbone_kind == "external") {
        backbone_ = std::make_unique<ExternalBackbone<T>>(params_, cfg_.backbone_weights, cfg_.backbone_trainable);
        cfg_.backbone = backbone_->spec();
    } else {
        cfg_.validate();
        backbone_ = std::make_unique<MockBackbone<T>>(params_, cfg_.backbone, cfg_.backbone_seed, cfg_.backbone_trainable);
    }
    cfg_.validate();
    Rng rng(init_seed);
    rotsim_ = std::make_unique<RotationAggregator<T>>(params_, cfg_.orientation, cfg_.d_f, cfg_.embed_kernel, rng);
    refiner_ = std::make_unique<Refiner<T>>(params_, cfg_.d_f, cfg_.refine, rng);
    for (int64_t s = 0; s < cfg_.decoder.num_stages; ++s)
        stages_.emplace_back(params_, "decoder.stage" + std::to_string(s), cfg_.backbone.embed_dim, cfg_.d_f,
                             cfg_.decoder.upsample_factor, rng);
    head_ = std::make_unique<LogitHead<T>>(params_, cfg_.d_f, rng);
}

template <class T>
std::vector<ClassEmbedding> SegmentationModel<T>::encode_categories(const std::vector<std::string>& names) const {
    if (names.empty()) throw InputError("at least one category is required");
    std::set<std::string> seen;
    std::vector<ClassEmbedding> out;
    for (const auto& n : names) {
        if (n.empty()) throw InputError("category name must not be empty");
        if (!seen.insert(n).second) throw InputError("duplicate category name \"" + n + "\"");
        out.push_back(backbone_->encode_text(cfg_.prompt, n));
    }
    return out;
}

template <class T>
ag::Var<T> SegmentationModel<T>::forward(const ImageGrid& image, const std::vector<ClassEmbedding>& classes,
                                         ForwardTrace<T>* trace) const {
    if (classes.empty()) throw InputError("at least one category is required");
    if (image.height() != image.width())
        throw ShapeError("input image must be square, got " + std::to_string(image.height()) + "x" +
                         std::to_string(image.width()));

    std::vector<ag::Var<T>> levels;
    std::vector<ag::Var<T>> deepest;
    tagged("backbone", [&] {
        const auto views = generate_rotated_views(image, cfg_.orientation);
        for (size_t k = 0; k < views.size(); ++k) {
            if (k == 0) {
                levels = backbone_->encode_levels(views[0], false);
                deepest.push_back(levels.back());
            } else {
                deepest.push_back(backbone_->encode_levels(views[k], true).back());
            }
        }
        return 0;
    });

    auto sims = tagged("rotsim", [&] { return compute_orientation_similarities(deepest, classes); });
    auto embedded = tagged("rotsim", [&] { return rotsim_->embed_similarities(sims); });
    auto maps = tagged("rotsim", [&] { return rotsim_->align_and_fuse(embedded); });
    auto refined = tagged("refine", [&] { return (*refiner_)(maps); });

    ag::Var<T> x = refined;
    std::vector<ag::Var<T>> stage_maps;
    const int64_t L = static_cast<int64_t>(levels.size());
    for (int64_t s = 0; s < static_cast<int64_t>(stages_.size()); ++s) {
        x = tagged("decoder", [&] { return stages_[s](x, levels[L - 2 - s]); });
        stage_maps.push_back(x);
    }
    auto logits = tagged("head", [&] { return (*head_)(x, image.height(), image.width()); });

    if (trace) {
        trace->similarities = sims;
        trace->embedded = embedded;
        trace->initial_maps = maps;
        trace->refined_maps = refined;
        trace->stage_maps = std::move(stage_maps);
        trace->levels = std::move(levels);
    }
    return logits;
}

template <class T>
LogitMap<T> SegmentationModel<T>::predict(const ImageGrid& image, const std::vector<std::string>& names) const {
    ag::NoGradGuard no_grad;
    return forward(image, encode_categories(names))->value;
}

template <class T>
std::vector<CensusEntry> SegmentationModel<T>::parameter_census() const {
    std::vector<CensusEntry> out;
    for (const auto& p : params_.all()) {
        CensusEntry e;
        e.name = p.name;
        e.module = p.name.substr(0, p.name.find('.'));
        e.count = p.var->value.numel();
        e.frozen = p.frozen;
        out.push_back(std::move(e));
    }
    return out;
}

template class SegmentationModel<float>;
template class SegmentationModel<double>;

}  // namespace rsovs
