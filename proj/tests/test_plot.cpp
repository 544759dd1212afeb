#include <doctest.h>

#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "rsovs/plot.hpp"

using namespace rsovs;
using rsovs::testing::TempDir;

namespace {

void write_log(const std::filesystem::path& dir, int iterations, double base) {
    std::filesystem::create_directories(dir);
    std::ofstream log(dir / "train_log.jsonl");
    for (int i = 1; i <= iterations; ++i) {
        log << nlohmann::json{{"event", "train"}, {"iteration", i}, {"loss", base / i}, {"lr", 2e-4}, {"wall_time", 0.1 * i}}
                   .dump()
            << '\n';
        if (i % 5 == 0)
            log << nlohmann::json{{"event", "eval"}, {"iteration", i}, {"split", "val"}, {"mIoU", 0.1 * i / 5},
                                  {"fwIoU", 0.2}, {"mACC", 0.3}}
                       .dump()
                << '\n';
    }
}

std::vector<std::string> lines(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

}  // namespace

TEST_CASE("run logs parse from a directory or the file itself") {
    TempDir dir("plot");
    write_log(dir / "run_a", 10, 2.0);
    const auto a = read_run_log(dir / "run_a");
    CHECK(a.name == "run_a");
    REQUIRE(a.train.size() == 10);
    CHECK(a.train[3].loss == doctest::Approx(0.5));
    REQUIRE(a.evals.size() == 2);
    CHECK(a.evals[1].miou == doctest::Approx(0.2));
    CHECK(a.evals[1].split == "val");
    CHECK(read_run_log(dir / "run_a" / "train_log.jsonl").train.size() == 10);

    CHECK_THROWS_AS(read_run_log(dir / "missing"), DataError);
    std::filesystem::create_directories(dir / "empty");
    std::ofstream(dir / "empty" / "train_log.jsonl") << "";
    CHECK_THROWS_AS(read_run_log(dir / "empty"), ConfigError);
    std::ofstream(dir / "empty" / "train_log.jsonl") << "{not json\n";
    CHECK_THROWS_AS(read_run_log(dir / "empty"), DataError);
}

TEST_CASE("plots and tables for overlaid runs") {
    TempDir dir("plots");
    write_log(dir / "a" / "run", 10, 2.0);
    write_log(dir / "b" / "run", 15, 3.0);
    const auto files = write_metric_plots({read_run_log(dir / "a" / "run"), read_run_log(dir / "b" / "run")}, dir / "out");
    CHECK(files.size() == 4);
    for (const char* f : {"loss.svg", "metrics.svg", "loss.csv", "eval.csv"}) CHECK(std::filesystem::exists(dir / "out" / f));

    const auto loss = lines(dir / "out" / "loss.csv");
    CHECK(loss.front() == "run,iteration,loss,lr,wall_time");
    CHECK(loss.size() == 1 + 10 + 15);
    const auto eval = lines(dir / "out" / "eval.csv");
    CHECK(eval.front() == "run,iteration,split,mIoU,fwIoU,mACC");
    CHECK(eval.size() == 1 + 2 + 3);
    // Same run name twice gets disambiguated.
    CHECK(eval[1].rfind("run,", 0) == 0);
    CHECK(eval.back().rfind("run#2,", 0) == 0);

    std::ifstream svg(dir / "out" / "loss.svg");
    std::stringstream ss;
    ss << svg.rdbuf();
    CHECK(ss.str().rfind("<svg", 0) == 0);
    CHECK(ss.str().find("<polyline") != std::string::npos);
}

TEST_CASE("category colors are stable and colorize maps labels") {
    CHECK(category_color("ship") == category_color("ship"));
    CHECK(category_color("ship") != category_color("harbor"));
    for (const char* n : {"a", "ship", "storage tank"})
        for (uint8_t v : category_color(n)) {
            CHECK(v >= 48);
            CHECK(v <= 255);
        }
    const LabelMask labels({1, 3}, std::vector<int32_t>{0, 1, kIgnoreIndex});
    const auto rgb = colorize(labels, {"ship", "harbor"});
    CHECK(rgb.shape == Shape{1, 3, 3});
    for (int c = 0; c < 3; ++c) {
        CHECK(rgb.data[c] == category_color("ship")[c]);
        CHECK(rgb.data[3 + c] == category_color("harbor")[c]);
    }
}
