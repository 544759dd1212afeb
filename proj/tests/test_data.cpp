#include <doctest.h>

#include <fstream>
#include <json.hpp>
#include <set>

#include "helpers.hpp"
#include "rsovs/data.hpp"

using namespace rsovs;
using rsovs::testing::TempDir;
using rsovs::testing::values;

namespace {

SynthConfig small_synth(uint64_t seed = 0) {
    SynthConfig c;
    c.num_images = 6;
    c.image_side = 48;
    c.num_categories = 4;
    c.seed = seed;
    return c;
}

nlohmann::json read_json(const std::filesystem::path& p) { return nlohmann::json::parse(std::ifstream(p)); }
void write_json(const std::filesystem::path& p, const nlohmann::json& j) { std::ofstream(p) << j.dump(); }

}  // namespace

TEST_CASE("built-in registries") {
    CHECK(builtin_registry("isaid").size() == 15);
    CHECK(builtin_registry("dlrsd").size() == 17);
    const auto potsdam = builtin_registry("potsdam");
    CHECK(potsdam.size() == 6);
    CHECK(potsdam.names == builtin_registry("vaihingen").names);
    CHECK(potsdam.index_of("Car") == 4);
    CHECK(potsdam.index_of("car") == -1);
    for (const char* id : {"isaid", "dlrsd", "potsdam"}) CHECK_NOTHROW(builtin_registry(id).validate());
    CHECK_THROWS_AS(builtin_registry("coco"), ConfigError);
}

TEST_CASE("registry validation") {
    CHECK_THROWS_AS((CategoryRegistry{"x", {"a", "a"}}.validate()), ConfigError);
    CHECK_THROWS_AS((CategoryRegistry{"x", {"a", ""}}.validate()), ConfigError);
    CHECK_NOTHROW((CategoryRegistry{"x", {"a", "b"}}.validate()));
    CHECK(split_from_string("val") == Split::Val);
    CHECK_THROWS_AS(split_from_string("test"), ConfigError);
}

TEST_CASE("synthetic dataset round trip through the manifest") {
    TempDir dir("data");
    const auto cfg = small_synth();
    const auto summary = synth_generate(cfg, dir.path());
    const auto m = load_manifest(dir / "manifest.json");
    CHECK(m.registry.names == synth_category_names(4));
    CHECK(m.samples.size() == 6);
    CHECK(m.split(Split::Val).size() == 2);
    CHECK(m.split(Split::Train).size() == 4);

    std::vector<int64_t> hist(4, 0);
    for (const auto& s : m.samples) {
        const auto loaded = load_sample(m, s, 48);
        CHECK(loaded.image.pixels.shape == Shape{48, 48, 3});
        for (float v : loaded.image.pixels.data) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        for (int32_t v : loaded.mask.data) ++hist[v];
    }
    CHECK(hist == summary.histogram);
    int64_t total = 0;
    for (auto h : hist) total += h;
    CHECK(total == 6 * 48 * 48);
    for (int64_t c = 1; c < 4; ++c) CHECK(hist[c] > 0);
}

TEST_CASE("rendering is a pure function of config and index") {
    const auto cfg = small_synth(3);
    const auto a = synth_render(cfg, 2), b = synth_render(cfg, 2);
    CHECK(a.rgb == b.rgb);
    CHECK(a.mask == b.mask);
    CHECK(synth_render(cfg, 3).mask != a.mask);
    CHECK(synth_render(small_synth(4), 2).mask != a.mask);
    TempDir d1("synth1"), d2("synth2");
    synth_generate(cfg, d1.path());
    synth_generate(cfg, d2.path());
    const auto m1 = load_manifest(d1 / "manifest.json"), m2 = load_manifest(d2 / "manifest.json");
    for (size_t i = 0; i < m1.samples.size(); ++i) {
        CHECK(read_png_rgb((d1 / m1.samples[i].image).string()) == read_png_rgb((d2 / m2.samples[i].image).string()));
        CHECK(read_png_gray((d1 / m1.samples[i].mask).string()) == read_png_gray((d2 / m2.samples[i].mask).string()));
    }
}

TEST_CASE("without orientation jitter shapes stay axis aligned") {
    auto cfg = small_synth(5);
    cfg.orientation_jitter = false;
    cfg.image_side = 96;
    for (int64_t i = 0; i < 6; ++i) {
        const auto scene = synth_render(cfg, i);
        for (const auto& s : scene.shapes) CHECK(s.angle == 0.0);
        // A lone rectangle's mask footprint is its bounding box.
        if (scene.shapes.size() == 1 && scene.shapes[0].kind != ShapeKind::Ellipse) {
            int64_t y0 = 96, y1 = -1, x0 = 96, x1 = -1, n = 0;
            for (int64_t y = 0; y < 96; ++y)
                for (int64_t x = 0; x < 96; ++x)
                    if (scene.mask.data[y * 96 + x] != 0) {
                        y0 = std::min(y0, y), y1 = std::max(y1, y), x0 = std::min(x0, x), x1 = std::max(x1, x), ++n;
                    }
            CHECK(n == (y1 - y0 + 1) * (x1 - x0 + 1));
        }
    }
    cfg.orientation_jitter = true;
    bool tilted = false;
    for (int64_t i = 0; i < 6; ++i)
        for (const auto& s : synth_render(cfg, i).shapes) tilted |= s.angle != 0.0;
    CHECK(tilted);
}

TEST_CASE("rotated validation copies") {
    TempDir dir("rotval");
    auto cfg = small_synth(6);
    cfg.val_rotated_copy = true;
    synth_generate(cfg, dir.path());
    const auto m = load_manifest(dir / "manifest.json");
    const auto train = m.split(Split::Train), val = m.split(Split::Val);
    REQUIRE(train.size() == 6);
    REQUIRE(val.size() == 6);
    for (size_t i = 0; i < train.size(); ++i) {
        const auto a = load_sample(m, train[i], 48), b = load_sample(m, val[i], 48);
        CHECK(b.mask == rotate_grid(a.mask, Orientation(1)));
        CHECK(b.image.pixels == rotate_grid(a.image.pixels, Orientation(1)));
    }
}

TEST_CASE("downsampled masks only contain source labels") {
    TempDir dir("resize");
    auto cfg = small_synth(7);
    cfg.num_images = 2;
    cfg.image_side = 768;
    cfg.val_fraction = 0;
    synth_generate(cfg, dir.path());
    const auto m = load_manifest(dir / "manifest.json");
    for (const auto& s : m.samples) {
        const auto full = read_png_gray((dir / s.mask).string());
        const std::set<int32_t> source(full.data.begin(), full.data.end());
        const auto small = load_sample(m, s, 384);
        CHECK(small.mask.shape == Shape{384, 384});
        for (int32_t v : small.mask.data) CHECK(source.count(v) == 1);
    }
}

TEST_CASE("manifest errors") {
    TempDir dir("manifest");
    synth_generate(small_synth(), dir.path());
    const auto good = read_json(dir / "manifest.json");
    CHECK_THROWS_AS(load_manifest(dir / "nope.json"), DataError);

    auto j = good;
    j["format"] = "other";
    write_json(dir / "bad.json", j);
    CHECK_THROWS_AS(load_manifest(dir / "bad.json"), ConfigError);

    j = good;
    j["categories"] = {"a", "a"};
    write_json(dir / "bad.json", j);
    CHECK_THROWS_AS(load_manifest(dir / "bad.json"), ConfigError);

    j = good;
    j["samples"] = nlohmann::json::array();
    write_json(dir / "bad.json", j);
    CHECK_THROWS_AS(load_manifest(dir / "bad.json"), ConfigError);

    j = good;
    j["samples"][0]["image"] = "images/missing.png";
    write_json(dir / "bad.json", j);
    CHECK_THROWS_AS(load_manifest(dir / "bad.json"), DataError);

    j = good;
    j["samples"][0]["split"] = "test";
    write_json(dir / "bad.json", j);
    CHECK_THROWS_AS(load_manifest(dir / "bad.json"), ConfigError);

    j = good;
    j.erase("dataset_id");
    write_json(dir / "bad.json", j);
    CHECK_THROWS_AS(load_manifest(dir / "bad.json"), ConfigError);

    std::ofstream(dir / "bad.json") << "{ not json";
    CHECK_THROWS_AS(load_manifest(dir / "bad.json"), ConfigError);
}

TEST_CASE("mask values outside the registry are rejected on load") {
    TempDir dir("badmask");
    synth_generate(small_synth(), dir.path());
    auto m = load_manifest(dir / "manifest.json");
    auto mask = read_png_gray((dir / m.samples[0].mask).string());
    mask.data[5] = 9;
    write_png_gray((dir / m.samples[0].mask).string(), mask);
    CHECK_THROWS_AS(load_sample(m, m.samples[0], 48), DataError);
    mask.data[5] = 255;
    write_png_gray((dir / m.samples[0].mask).string(), mask);
    CHECK(load_sample(m, m.samples[0], 48).mask.data[5] == kIgnoreIndex);
}

TEST_CASE("png round trip and unreadable files") {
    TempDir dir("png");
    Tensor<uint8_t> rgb({3, 5, 3});
    for (size_t i = 0; i < rgb.data.size(); ++i) rgb.data[i] = static_cast<uint8_t>(i * 7);
    write_png_rgb((dir / "a.png").string(), rgb);
    CHECK(read_png_rgb((dir / "a.png").string()) == rgb);
    std::ofstream(dir / "b.png") << "garbage";
    CHECK_THROWS_AS(read_png_rgb((dir / "b.png").string()), DataError);
    CHECK_THROWS_AS(read_png_gray((dir / "c.png").string()), DataError);
    const auto img = image_from_rgb8(rgb);
    CHECK(rgb8_from_image(img) == rgb);
}

TEST_CASE("synth config validation") {
    auto c = small_synth();
    c.num_categories = 9;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_synth();
    c.val_fraction = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_synth();
    c.min_shapes = 4;
    c.max_shapes = 2;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_synth();
    c.scale_min = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}
