#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "rsovs/core.hpp"
#include "rsovs/nn.hpp"

namespace rsovs {

/// Raised when a backbone produces non-finite features.
class BackboneFault : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BackboneSpec {
    int64_t embed_dim = 64;
    int64_t patch_size = 16;
    /// Layer indices exposed as the pyramid, shallow to deep. The last entry feeds
    /// the similarity computation.
    std::vector<int> level_ids{4, 8, 12};

    void validate() const;
};

/// Text pattern with exactly one `{}` placeholder for the category name.
class PromptTemplate {
public:
    PromptTemplate() = default;
    explicit PromptTemplate(std::string pattern);

    const std::string& pattern() const { return pattern_; }
    std::string fill(const std::string& category_name) const;

private:
    std::string pattern_ = "an image of {}";
};

struct ClassEmbedding {
    std::vector<float> vector;
    std::string category_name;
};

/// Vision-language feature extractor. Image levels are returned as graph nodes so
/// an unfrozen backbone can take part in training; text embeddings are constants.
template <class T>
class Backbone {
public:
    virtual ~Backbone() = default;

    virtual const BackboneSpec& spec() const = 0;

    /// One h x w x d node per level, shallow to deep. When `deepest_only` is set the
    /// vector holds just the last level.
    virtual std::vector<ag::Var<T>> encode_levels(const ImageGrid& image, bool deepest_only) const = 0;

    virtual ClassEmbedding encode_text(const PromptTemplate& prompt, const std::string& category_name) const = 0;

    /// Value-only convenience around `encode_levels`.
    std::vector<FeatureGrid> encode_image_multilevel(const ImageGrid& image) const;

protected:
    void check_image(const ImageGrid& image) const;
    void check_finite(const std::vector<ag::Var<T>>& levels) const;
};

/// Deterministic stand-in for a CLIP-style encoder. Every token is the mean RGB of
/// its patch mapped through a seeded d x 3 matrix per level, so each token depends
/// on its own patch only and the encoder commutes exactly with quarter turns.
/// Text embeddings are unit Gaussian vectors seeded by a hash of the filled prompt.
template <class T>
class MockBackbone final : public Backbone<T> {
public:
    MockBackbone(ParamStore<T>& store, BackboneSpec spec, uint64_t seed, bool trainable);

    const BackboneSpec& spec() const override { return spec_; }
    std::vector<ag::Var<T>> encode_levels(const ImageGrid& image, bool deepest_only) const override;
    ClassEmbedding encode_text(const PromptTemplate& prompt, const std::string& category_name) const override;

private:
    BackboneSpec spec_;
    uint64_t seed_;
    std::vector<ag::Var<T>> level_weights_;
};

/// Adapter for externally supplied weights: a linear patch embedding per level
/// (d x 3p^2 plus bias, the first layer of a ViT) and a prompt -> vector table
/// for the text branch. Produces the same shapes as any other backbone.
template <class T>
class ExternalBackbone final : public Backbone<T> {
public:
    ExternalBackbone(ParamStore<T>& store, const std::string& weight_path, bool trainable);

    const BackboneSpec& spec() const override { return spec_; }
    std::vector<ag::Var<T>> encode_levels(const ImageGrid& image, bool deepest_only) const override;
    ClassEmbedding encode_text(const PromptTemplate& prompt, const std::string& category_name) const override;

private:
    BackboneSpec spec_;
    std::vector<Linear<T>> levels_;
    std::map<std::string, std::vector<float>> text_table_;
};

/// Per-patch mean colour, [side/p, side/p, 3]. Each mean is a function of the
/// patch's multiset of values only, so it is unchanged by rotating the patch.
Tensor<double> patch_mean_rgb(const ImageGrid& image, int64_t patch);

}  // namespace rsovs
