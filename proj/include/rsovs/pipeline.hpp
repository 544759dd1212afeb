#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rsovs/backbone.hpp"
#include "rsovs/decoder.hpp"
#include "rsovs/refine.hpp"
#include "rsovs/rotsim.hpp"

namespace rsovs {

struct ModelConfig {
    std::string backbone_kind = "mock";  // "mock" or "external"
    BackboneSpec backbone;
    uint64_t backbone_seed = 42;
    bool backbone_trainable = false;
    std::string backbone_weights;  // external backbones only
    OrientationConfig orientation;
    RefineConfig refine;
    DecoderConfig decoder;
    int64_t d_f = 128;
    int64_t embed_kernel = 1;
    PromptTemplate prompt;

    /// Cross-module checks that do not need an image.
    void validate() const;
};

struct CensusEntry {
    std::string name;
    std::string module;
    int64_t count = 0;
    bool frozen = false;
};

/// Intermediate results of one forward pass.
template <class T>
struct ForwardTrace {
    ag::Var<T> similarities;  // [h, w, N_A, N_C]
    ag::Var<T> embedded;      // [h, w, N_A, N_C, d_F]
    ag::Var<T> initial_maps;  // [h, w, N_C, d_F]
    ag::Var<T> refined_maps;  // [h, w, N_C, d_F]
    std::vector<ag::Var<T>> stage_maps;
    std::vector<ag::Var<T>> levels;
};

/// Rotated views -> similarities -> aligned fusion -> refinement -> scale-aware
/// upsampling -> per-category logits at image resolution.
template <class T>
class SegmentationModel {
public:
    SegmentationModel(ModelConfig cfg, uint64_t init_seed);
    SegmentationModel(const SegmentationModel&) = delete;
    SegmentationModel& operator=(const SegmentationModel&) = delete;

    /// Logits [H, W, N_C] for an image and pre-encoded categories.
    ag::Var<T> forward(const ImageGrid& image, const std::vector<ClassEmbedding>& classes,
                       ForwardTrace<T>* trace = nullptr) const;

    /// Encodes category names with the configured prompt. Empty or duplicate names
    /// are rejected.
    std::vector<ClassEmbedding> encode_categories(const std::vector<std::string>& names) const;

    LogitMap<T> predict(const ImageGrid& image, const std::vector<std::string>& names) const;

    std::vector<CensusEntry> parameter_census() const;

    /// Zeroes the residual-branch outputs of every refinement block.
    void set_refine_identity() { refiner_->zero_residual_outputs(); }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    const Backbone<T>& backbone() const { return *backbone_; }
    RotationAggregator<T>& rotsim() { return *rotsim_; }
    Refiner<T>& refiner() { return *refiner_; }
    std::vector<UpsampleStage<T>>& stages() { return stages_; }
    LogitHead<T>& head() { return *head_; }

private:
    ModelConfig cfg_;
    ParamStore<T> params_;
    std::unique_ptr<Backbone<T>> backbone_;
    std::unique_ptr<RotationAggregator<T>> rotsim_;
    std::unique_ptr<Refiner<T>> refiner_;
    std::vector<UpsampleStage<T>> stages_;
    std::unique_ptr<LogitHead<T>> head_;
};

}  // namespace rsovs
