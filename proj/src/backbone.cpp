#include "rsovs/backbone.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <json.hpp>

namespace rsovs {

void BackboneSpec::validate() const {
    if (embed_dim < 1) throw ConfigError("backbone embed_dim must be positive");
    if (patch_size < 1) throw ConfigError("backbone patch_size must be positive");
    if (level_ids.empty()) throw ConfigError("backbone needs at least one level");
    for (size_t i = 1; i < level_ids.size(); ++i)
        if (level_ids[i] <= level_ids[i - 1]) throw ConfigError("backbone level_ids must be strictly increasing");
}

PromptTemplate::PromptTemplate(std::string pattern) : pattern_(std::move(pattern)) {
    const auto first = pattern_.find("{}");
    if (first == std::string::npos || pattern_.find("{}", first + 2) != std::string::npos)
        throw ConfigError("prompt template needs exactly one {} placeholder: \"" + pattern_ + "\"");
}

std::string PromptTemplate::fill(const std::string& category_name) const {
    std::string out = pattern_;
    out.replace(out.find("{}"), 2, category_name);
    return out;
}

Tensor<double> patch_mean_rgb(const ImageGrid& image, int64_t patch) {
    const int64_t gh = image.height() / patch, gw = image.width() / patch, W = image.width();
    const int64_t p = patch, half = p / 2;
    Tensor<double> out({gh, gw, 3});
    const auto& px = image.pixels.data;
    // Pixels are summed in quarter-turn orbits (each orbit sorted), orbits visited in
    // a fixed order; the result is identical for every rotation of the patch.
    for (int64_t i = 0; i < gh; ++i) {
        for (int64_t j = 0; j < gw; ++j) {
            auto at = [&](int64_t y, int64_t x, int64_t c) {
                return px[((i * p + y) * W + (j * p + x)) * 3 + c];
            };
            for (int64_t c = 0; c < 3; ++c) {
                double s = 0;
                for (int64_t y = 0; y < half; ++y)
                    for (int64_t x = 0; x < p - half; ++x) {
                        std::array<float, 4> o{at(y, x, c), at(x, p - 1 - y, c), at(p - 1 - y, p - 1 - x, c),
                                               at(p - 1 - x, y, c)};
                        std::sort(o.begin(), o.end());
                        s += (static_cast<double>(o[0]) + o[1]) + (static_cast<double>(o[2]) + o[3]);
                    }
                if (p % 2 == 1) s += at(half, half, c);
                out.at({i, j, c}) = s / static_cast<double>(p * p);
            }
        }
    }
    return out;
}

template <class T>
std::vector<FeatureGrid> Backbone<T>::encode_image_multilevel(const ImageGrid& image) const {
    std::vector<FeatureGrid> out;
    for (const auto& v : encode_levels(image, false)) out.push_back({v->value.template cast<float>()});
    return out;
}

template <class T>
void Backbone<T>::check_image(const ImageGrid& image) const {
    const int64_t p = spec().patch_size;
    if (image.height() % p != 0 || image.width() % p != 0)
        throw ShapeError("image " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                         " is not divisible by patch size " + std::to_string(p));
}

template <class T>
void Backbone<T>::check_finite(const std::vector<ag::Var<T>>& levels) const {
    for (const auto& l : levels)
        if (!all_finite(l->value)) throw BackboneFault("backbone produced non-finite features");
}

template <class T>
MockBackbone<T>::MockBackbone(ParamStore<T>& store, BackboneSpec spec, uint64_t seed, bool trainable)
    : spec_(std::move(spec)), seed_(seed) {
    spec_.validate();
    Rng rng(seed);
    for (size_t l = 0; l < spec_.level_ids.size(); ++l) {
        Tensor<T> w({spec_.embed_dim, 3});
        for (auto& v : w.data) v = static_cast<T>(rng.normal() / std::sqrt(3.0));
        level_weights_.push_back(store.add("backbone.level" + std::to_string(l) + ".weight", std::move(w), !trainable));
    }
}

template <class T>
std::vector<ag::Var<T>> MockBackbone<T>::encode_levels(const ImageGrid& image, bool deepest_only) const {
    this->check_image(image);
    auto means = ag::constant(patch_mean_rgb(image, spec_.patch_size).template cast<T>());
    std::vector<ag::Var<T>> out;
    const size_t first = deepest_only ? level_weights_.size() - 1 : 0;
    for (size_t l = first; l < level_weights_.size(); ++l) out.push_back(ag::linear(means, level_weights_[l], {}));
    this->check_finite(out);
    return out;
}

template <class T>
ClassEmbedding MockBackbone<T>::encode_text(const PromptTemplate& prompt, const std::string& category_name) const {
    if (category_name.empty()) throw InputError("category name must not be empty");
    Rng rng(fnv1a64(prompt.fill(category_name)) ^ (seed_ * 0x9e3779b97f4a7c15ULL));
    std::vector<double> v(spec_.embed_dim);
    double norm = 0;
    for (auto& x : v) {
        x = rng.normal();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    ClassEmbedding e{{}, category_name};
    for (double x : v) e.vector.push_back(static_cast<float>(x / norm));
    return e;
}

template <class T>
ExternalBackbone<T>::ExternalBackbone(ParamStore<T>& store, const std::string& weight_path, bool trainable) {
    std::ifstream in(weight_path);
    if (!in) throw ConfigError("cannot open backbone weight file " + weight_path);
    nlohmann::json j;
    try {
        in >> j;
        spec_.embed_dim = j.at("embed_dim").get<int64_t>();
        spec_.patch_size = j.at("patch_size").get<int64_t>();
        spec_.level_ids = j.at("level_ids").get<std::vector<int>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed backbone weight file " + weight_path + ": " + e.what());
    }
    spec_.validate();
    const auto& levels = j.at("levels");
    if (levels.size() != spec_.level_ids.size()) throw ConfigError("weight file level count does not match level_ids");
    const int64_t in_width = 3 * spec_.patch_size * spec_.patch_size;
    for (size_t l = 0; l < levels.size(); ++l) {
        auto w = levels[l].at("weight").template get<std::vector<T>>();
        auto b = levels[l].at("bias").template get<std::vector<T>>();
        if (static_cast<int64_t>(w.size()) != spec_.embed_dim * in_width || static_cast<int64_t>(b.size()) != spec_.embed_dim)
            throw ConfigError("weight file level " + std::to_string(l) + " has the wrong size");
        Linear<T> lin;
        const std::string name = "backbone.level" + std::to_string(l);
        lin.weight = store.add(name + ".weight", Tensor<T>({spec_.embed_dim, in_width}, std::move(w)), !trainable);
        lin.bias = store.add(name + ".bias", Tensor<T>({spec_.embed_dim}, std::move(b)), !trainable);
        levels_.push_back(std::move(lin));
    }
    if (j.contains("text"))
        for (const auto& [prompt, vec] : j["text"].items()) text_table_[prompt] = vec.template get<std::vector<float>>();
}

template <class T>
std::vector<ag::Var<T>> ExternalBackbone<T>::encode_levels(const ImageGrid& image, bool deepest_only) const {
    this->check_image(image);
    const int64_t p = spec_.patch_size;
    const int64_t gh = image.height() / p, gw = image.width() / p;
    Tensor<T> patches({gh, gw, 3 * p * p});
    int64_t k = 0;
    for (int64_t i = 0; i < gh; ++i)
        for (int64_t jj = 0; jj < gw; ++jj)
            for (int64_t y = 0; y < p; ++y)
                for (int64_t x = 0; x < p; ++x)
                    for (int64_t c = 0; c < 3; ++c)
                        patches.data[k++] = static_cast<T>(image.pixels.at({i * p + y, jj * p + x, c}));
    auto in = ag::constant(std::move(patches));
    std::vector<ag::Var<T>> out;
    const size_t first = deepest_only ? levels_.size() - 1 : 0;
    for (size_t l = first; l < levels_.size(); ++l) out.push_back(levels_[l](in));
    this->check_finite(out);
    return out;
}

template <class T>
ClassEmbedding ExternalBackbone<T>::encode_text(const PromptTemplate& prompt, const std::string& category_name) const {
    if (category_name.empty()) throw InputError("category name must not be empty");
    const auto it = text_table_.find(prompt.fill(category_name));
    if (it == text_table_.end()) throw InputError("no text embedding for prompt \"" + prompt.fill(category_name) + "\"");
    if (static_cast<int64_t>(it->second.size()) != spec_.embed_dim) throw ShapeError("text embedding width mismatch");
    double norm = 0;
    for (float v : it->second) norm += double(v) * v;
    norm = std::max(std::sqrt(norm), 1e-12);
    ClassEmbedding e{{}, category_name};
    for (float v : it->second) e.vector.push_back(static_cast<float>(v / norm));
    return e;
}

uint64_t fnv1a64(std::string_view text, uint64_t basis) {
    uint64_t h = basis;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

template class Backbone<float>;
template class Backbone<double>;
template class MockBackbone<float>;
template class MockBackbone<double>;
template class ExternalBackbone<float>;
template class ExternalBackbone<double>;

}  // namespace rsovs
