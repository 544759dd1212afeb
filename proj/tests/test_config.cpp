#include <doctest.h>

#include <fstream>

#include "helpers.hpp"
#include "rsovs/config.hpp"

using namespace rsovs;
using rsovs::testing::TempDir;

TEST_CASE("defaults") {
    const RunConfig c = resolve_config({}, {});
    CHECK(c.train.lr == 2e-4);
    CHECK(c.train.weight_decay == 1e-3);
    CHECK(c.train.batch_size == 4);
    CHECK(c.train.max_iterations == 100000);
    CHECK(c.train.image_side == 384);
    CHECK(c.model.d_f == 128);
    CHECK(c.model.orientation.orientations.size() == 4);
    CHECK(c.model.refine.repeats == 2);
    CHECK(c.model.refine.window_size == 8);
    CHECK(c.model.backbone_kind == "mock");
    CHECK(c.data.categories.empty());
}

TEST_CASE("overrides apply in order and keep types") {
    const RunConfig c = resolve_config({}, {"train.lr=0.001", "model.d_f=32", "model.orientations=0,2",
                                            "data.categories=ship,harbor", "train.lr=0.002",
                                            "data.manifest=some dir/manifest.json", "synth.orientation_jitter=false"});
    CHECK(c.train.lr == 0.002);
    CHECK(c.model.d_f == 32);
    REQUIRE(c.model.orientation.orientations.size() == 2);
    CHECK(c.model.orientation.orientations[1].quarter_turns() == 2);
    CHECK(c.data.categories == std::vector<std::string>{"ship", "harbor"});
    CHECK(c.data.manifest == "some dir/manifest.json");
    CHECK_FALSE(c.synth.orientation_jitter);
    CHECK(resolve_config({}, {R"(data.categories=["a, b","c"])"}).data.categories ==
          std::vector<std::string>{"a, b", "c"});
}

TEST_CASE("unknown keys, sections and bad values are rejected") {
    CHECK_THROWS_AS(resolve_config({}, {"train.learning_rate=1"}), ConfigError);
    CHECK_THROWS_AS(resolve_config({}, {"nosection.key=1"}), ConfigError);
    CHECK_THROWS_AS(resolve_config({}, {"train=1"}), ConfigError);
    CHECK_THROWS_AS(resolve_config({}, {"train.lr"}), ConfigError);
    CHECK_THROWS_AS(resolve_config({}, {"=3"}), ConfigError);
    CHECK_THROWS_AS(resolve_config({}, {"train.batch_size=four"}), ConfigError);
    CHECK_THROWS_AS(resolve_config({}, {"train.lr=0"}), ConfigError);
    CHECK_THROWS_AS(resolve_config({}, {"train.weight_decay=-1"}), ConfigError);
    CHECK_THROWS_AS(resolve_config({}, {"model.orientations=1,0"}), ConfigError);
    CHECK_THROWS_AS(resolve_config({}, {"model.orientations=0,5"}), ConfigError);
    CHECK_THROWS_AS(resolve_config({}, {"train.image_side=30"}), ConfigError);
    CHECK_THROWS_AS(resolve_config({}, {"data.categories=a,a"}), ConfigError);
    CHECK_THROWS_AS(resolve_config({}, {"train.eval_split=test"}), ConfigError);
}

TEST_CASE("config files merge strictly and round trip") {
    TempDir dir("config");
    std::ofstream(dir / "a.json") << R"({"train": {"lr": 0.01, "seed": 9}, "model": {"d_f": 64}})";
    const RunConfig c = resolve_config(dir / "a.json", {"train.seed=3"});
    CHECK(c.train.lr == 0.01);
    CHECK(c.train.seed == 3);
    CHECK(c.model.d_f == 64);

    save_config(dir / "saved.json", c);
    const RunConfig back = resolve_config(dir / "saved.json", {});
    CHECK(to_json(back) == to_json(c));
    CHECK(to_json(run_config_from_json(to_json(c))) == to_json(c));

    std::ofstream(dir / "b.json") << R"({"train": {"lr": 0.01, "momentum": 0.9}})";
    CHECK_THROWS_AS(resolve_config(dir / "b.json", {}), ConfigError);
    std::ofstream(dir / "c.json") << R"({"train": {"lr": "fast"}})";
    CHECK_THROWS_AS(resolve_config(dir / "c.json", {}), ConfigError);
    std::ofstream(dir / "d.json") << "{ broken";
    CHECK_THROWS_AS(resolve_config(dir / "d.json", {}), ConfigError);
    CHECK_THROWS_AS(resolve_config(dir / "missing.json", {}), ConfigError);
}
