#include <doctest.h>

#include <map>

#include "helpers.hpp"
#include "rsovs/pipeline.hpp"

using namespace rsovs;
using namespace rsovs::testing;

namespace {

int64_t census_total(const std::vector<CensusEntry>& c, const std::string& module) {
    int64_t n = 0;
    for (const auto& e : c)
        if (module.empty() || e.module == module) n += e.count;
    return n;
}

}  // namespace

TEST_CASE("default model on a 384 image with six categories") {
    SegmentationModel<float> m(ModelConfig{}, 0);
    Rng rng(1);
    const std::vector<std::string> names{"impervious surfaces", "Building", "Low vegetation", "Tree", "Car", "background"};
    ag::NoGradGuard ng;
    ForwardTrace<float> trace;
    const auto logits = m.forward(random_image(384, rng), m.encode_categories(names), &trace);
    CHECK(logits->shape() == Shape{384, 384, 6});
    CHECK(trace.similarities->shape() == Shape{24, 24, 4, 6});
    CHECK(trace.initial_maps->shape() == Shape{24, 24, 6, 128});
    REQUIRE(trace.stage_maps.size() == 2);
    CHECK(trace.stage_maps[1]->shape() == Shape{96, 96, 6, 128});
    CHECK(all_finite(logits->value));
}

TEST_CASE("minimal composition: one orientation, no decoder stages") {
    ModelConfig cfg = tiny_model();
    cfg.orientation.orientations = {Orientation(0)};
    cfg.decoder.num_stages = 0;
    SegmentationModel<float> m(cfg, 0);
    Rng rng(2);
    const auto logits = m.predict(random_image(32, rng), {"ship"});
    CHECK(logits.shape == Shape{32, 32, 1});
    for (auto census = m.parameter_census(); const auto& e : census) CHECK(e.module != "decoder");
}

TEST_CASE("forward is deterministic") {
    Rng rng(3);
    const auto img = random_image(32, rng);
    SegmentationModel<float> a(tiny_model(), 7), b(tiny_model(), 7);
    const auto la = a.predict(img, {"ship", "harbor"});
    CHECK(la == a.predict(img, {"ship", "harbor"}));
    CHECK(la == b.predict(img, {"ship", "harbor"}));
    SegmentationModel<float> c(tiny_model(), 8);
    CHECK(la != c.predict(img, {"ship", "harbor"}));
}

TEST_CASE("category permutation permutes logit channels") {
    SegmentationModel<float> m(tiny_model(), 4);
    Rng rng(4);
    const auto img = random_image(32, rng);
    const std::vector<std::string> names{"ship", "harbor", "plane", "bridge", "tree"};
    const std::vector<int> perm{4, 2, 0, 3, 1};
    std::vector<std::string> permuted;
    for (int p : perm) permuted.push_back(names[p]);
    const auto base = m.predict(img, names);
    CHECK(max_abs_diff(permute_last(base, perm), m.predict(img, permuted)) < 1e-5);
}

TEST_CASE("quarter-turned input gives quarter-turned logits with identity refinement") {
    ModelConfig cfg = tiny_model();
    SegmentationModel<float> m(cfg, 5);
    m.set_refine_identity();
    Rng rng(5);
    const auto img = random_image(32, rng);
    const std::vector<std::string> names{"ship", "harbor", "plane"};
    const auto base = m.predict(img, names);
    for (int t = 1; t < 4; ++t) {
        const auto rotated = m.predict(ImageGrid(rotate_grid(img.pixels, Orientation(t))), names);
        CHECK(max_abs_diff(rotated, rotate_grid(base, Orientation(t))) < 1e-4);
        CHECK(argmax_labels(rotated) == rotate_grid(argmax_labels(base), Orientation(t)));
    }
}

TEST_CASE("parameter census") {
    ModelConfig one = tiny_model(), two = tiny_model();
    two.refine.repeats = 2;
    SegmentationModel<float> a(one, 0), b(two, 0);
    const auto ca = a.parameter_census(), cb = b.parameter_census();
    CHECK(census_total(cb, "refine") == 2 * census_total(ca, "refine"));
    CHECK(census_total(ca, "") == a.params().count(false));

    std::map<std::string, int> seen;
    for (const auto& e : ca) {
        CHECK(++seen[e.name] == 1);
        CHECK(e.frozen == (e.module == "backbone"));
    }
    for (const char* module : {"backbone", "rotsim", "refine", "decoder", "head"}) CHECK(census_total(ca, module) > 0);

    int64_t trainable = 0;
    for (const auto& e : ca)
        if (!e.frozen) trainable += e.count;
    CHECK(trainable == a.params().count(true));

    ModelConfig none = tiny_model();
    none.decoder.num_stages = 0;
    SegmentationModel<float> c(none, 0);
    CHECK(census_total(c.parameter_census(), "decoder") == 0);
}

TEST_CASE("input validation carries a stage tag") {
    SegmentationModel<float> m(tiny_model(), 0);
    Rng rng(6);
    CHECK_THROWS_AS(m.predict(ImageGrid(random_tensor<float>({32, 28, 3}, rng, 0, 1)), {"ship"}), ShapeError);
    CHECK_THROWS_AS(m.predict(random_image(30, rng), {"ship"}), ShapeError);
    try {
        m.predict(random_image(30, rng), {"ship"});
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).rfind("backbone: ", 0) == 0);
    }
    CHECK_THROWS_AS(m.predict(random_image(32, rng), {}), InputError);
    CHECK_THROWS_AS(m.predict(random_image(32, rng), {"ship", "ship"}), InputError);
}

TEST_CASE("model config validation") {
    ModelConfig c = tiny_model();
    c.decoder.num_stages = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_model();
    c.backbone_kind = "clip";
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_model();
    c.refine.heads = 3;
    CHECK_THROWS_AS(SegmentationModel<float>(c, 0), ConfigError);
}
