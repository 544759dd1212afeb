#include <doctest.h>

#include <fstream>
#include <json.hpp>

#include "helpers.hpp"
#include "rsovs/backbone.hpp"

using namespace rsovs;
using rsovs::testing::random_image;

namespace {

struct Mock {
    ParamStore<float> store;
    MockBackbone<float> bb;
    explicit Mock(BackboneSpec spec = {}, uint64_t seed = 42) : bb(store, std::move(spec), seed, false) {}
};

double dot(const std::vector<float>& a, const std::vector<float>& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += double(a[i]) * b[i];
    return s;
}

}  // namespace

TEST_CASE("mock level shapes follow patching") {
    Mock m;
    Rng rng(1);
    const auto levels = m.bb.encode_image_multilevel(random_image(384, rng));
    REQUIRE(levels.size() == 3);
    for (const auto& l : levels) CHECK(l.values.shape == Shape{24, 24, 64});
    const auto small = m.bb.encode_image_multilevel(random_image(32, rng));
    for (const auto& l : small) CHECK(l.values.shape == Shape{2, 2, 64});
    CHECK_THROWS_AS(m.bb.encode_image_multilevel(random_image(30, rng)), ShapeError);
}

TEST_CASE("zero image gives zero features") {
    Mock m;
    const auto levels = m.bb.encode_image_multilevel(ImageGrid(Tensor<float>({32, 32, 3}, 0.0f)));
    for (const auto& l : levels)
        for (float v : l.values.data) CHECK(v == 0.0f);
}

TEST_CASE("mock encoder commutes exactly with quarter turns at every level") {
    Mock m;
    Rng rng(2);
    for (int trial = 0; trial < 3; ++trial) {
        const auto img = random_image(64, rng);
        const auto base = m.bb.encode_image_multilevel(img);
        for (int t = 1; t < 4; ++t) {
            const auto rot = m.bb.encode_image_multilevel(ImageGrid(rotate_grid(img.pixels, Orientation(t))));
            for (size_t l = 0; l < base.size(); ++l) CHECK(rot[l].values == rotate_grid(base[l].values, Orientation(t)));
        }
    }
}

TEST_CASE("patch means are exact under rotation for odd patch sizes too") {
    Rng rng(3);
    for (int p : {1, 3, 4, 5}) {
        const auto img = random_image(p * 3, rng);
        const auto a = patch_mean_rgb(img, p);
        const auto b = patch_mean_rgb(ImageGrid(rotate_grid(img.pixels, Orientation(1))), p);
        CHECK(b == rotate_grid(a, Orientation(1)));
    }
}

TEST_CASE("changing one patch changes only its token") {
    Mock m;
    Rng rng(4);
    auto img = random_image(64, rng);
    const auto before = m.bb.encode_image_multilevel(img);
    for (int y = 16; y < 32; ++y)
        for (int x = 32; x < 48; ++x) img.pixels.at({y, x, 1}) = 0.123f;
    const auto after = m.bb.encode_image_multilevel(img);
    for (size_t l = 0; l < before.size(); ++l)
        for (int64_t i = 0; i < 4; ++i)
            for (int64_t j = 0; j < 4; ++j) {
                bool same = true;
                for (int64_t c = 0; c < 64; ++c) same &= before[l].values.at({i, j, c}) == after[l].values.at({i, j, c});
                CHECK(same == !(i == 1 && j == 2));
            }
}

TEST_CASE("mock features are deterministic for a fixed seed") {
    Rng rng(5);
    const auto img = random_image(48, rng);
    Mock a, b;
    const auto fa = a.bb.encode_image_multilevel(img), fb = b.bb.encode_image_multilevel(img);
    for (size_t l = 0; l < fa.size(); ++l) CHECK(fa[l].values == fb[l].values);
    Mock c({}, 43);
    CHECK(c.bb.encode_image_multilevel(img)[0].values != fa[0].values);
}

TEST_CASE("text embeddings are deterministic unit vectors") {
    Mock m;
    const PromptTemplate t;
    CHECK(t.fill("ship") == "an image of ship");
    const auto a = m.bb.encode_text(t, "ship"), b = m.bb.encode_text(t, "ship");
    CHECK(a.vector == b.vector);
    CHECK(a.vector.size() == 64);
    CHECK(std::sqrt(dot(a.vector, a.vector)) == doctest::Approx(1.0).epsilon(1e-5));
    const auto h = m.bb.encode_text(t, "harbor");
    CHECK(std::abs(dot(a.vector, h.vector)) < 0.99);
    CHECK(m.bb.encode_text(PromptTemplate("a satellite photo of {}"), "ship").vector != a.vector);
    CHECK_THROWS_AS(m.bb.encode_text(t, ""), InputError);
}

TEST_CASE("prompt template needs one placeholder") {
    CHECK_THROWS_AS(PromptTemplate("no placeholder"), ConfigError);
    CHECK_THROWS_AS(PromptTemplate("{} and {}"), ConfigError);
}

TEST_CASE("backbone parameters are frozen unless trainable") {
    ParamStore<float> frozen, live;
    MockBackbone<float> a(frozen, {}, 42, false), b(live, {}, 42, true);
    CHECK(frozen.count(true) == 0);
    CHECK(frozen.count(false) == 3 * 64 * 3);
    CHECK(live.count(true) == 3 * 64 * 3);
}

TEST_CASE("spec validation") {
    BackboneSpec s;
    s.level_ids = {4, 4};
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.level_ids = {};
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = {};
    s.patch_size = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("external adapter produces the same shapes from supplied weights") {
    rsovs::testing::TempDir dir("external");
    const int64_t d = 8, p = 4;
    Rng rng(6);
    nlohmann::json j;
    j["embed_dim"] = d;
    j["patch_size"] = p;
    j["level_ids"] = {3, 6, 9};
    for (int l = 0; l < 3; ++l) {
        std::vector<float> w(d * 3 * p * p), b(d);
        for (auto& v : w) v = static_cast<float>(rng.uniform(-0.1, 0.1));
        for (auto& v : b) v = static_cast<float>(rng.uniform(-0.1, 0.1));
        j["levels"].push_back({{"weight", w}, {"bias", b}});
    }
    j["text"]["an image of ship"] = std::vector<float>(d, 2.0f);
    const auto path = dir / "weights.json";
    std::ofstream(path) << j.dump();

    ParamStore<float> store;
    ExternalBackbone<float> bb(store, path.string(), false);
    const auto levels = bb.encode_image_multilevel(random_image(16, rng));
    REQUIRE(levels.size() == 3);
    for (const auto& l : levels) CHECK(l.values.shape == Shape{4, 4, d});
    const auto e = bb.encode_text(PromptTemplate(), "ship");
    CHECK(std::sqrt(dot(e.vector, e.vector)) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK_THROWS_AS(bb.encode_text(PromptTemplate(), "harbor"), InputError);
    CHECK_THROWS_AS(ExternalBackbone<float>(store, (dir / "missing.json").string(), false), ConfigError);
}
