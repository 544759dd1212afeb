#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "rsovs/rsovs.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Options {
    std::string config;
    std::string out;
    std::vector<std::string> sets;
    std::string checkpoint;
    std::string categories;
    std::vector<std::string> inputs;
    long long seed = -1;
    bool quiet = false;
};

struct Failure {
    int code;
};

int exit_code(rsovs_status s) {
    switch (s) {
        case RSOVS_OK: return kExitOk;
        case RSOVS_ERR_ARGUMENT:
        case RSOVS_ERR_CONFIG:
        case RSOVS_ERR_INPUT: return kExitUsage;
        default: return kExitRuntime;
    }
}

void check(rsovs_status s, const std::string& what) {
    if (s == RSOVS_OK) return;
    std::cerr << "rsovs: " << what << ": " << rsovs_status_name(s) << ": " << rsovs_last_error() << '\n';
    throw Failure{exit_code(s)};
}

[[noreturn]] void usage(const std::string& msg) {
    std::cerr << "rsovs: " << msg << '\n';
    throw Failure{kExitUsage};
}

std::vector<std::string> split_categories(const std::string& s) {
    std::vector<std::string> out;
    if (s.empty()) return out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
        out.push_back(b == std::string::npos ? "" : item.substr(b, e - b + 1));
    }
    return out;
}

std::vector<const char*> c_strings(const std::vector<std::string>& v) {
    std::vector<const char*> out;
    for (const auto& s : v) out.push_back(s.c_str());
    return out;
}

// Output directory when --out is omitted: $RSOVS_WORKDIR/<command>, else ./runs/<command>.
std::string output_dir(const Options& o, const std::string& command) {
    if (!o.out.empty()) return o.out;
    const char* base = std::getenv("RSOVS_WORKDIR");
    return (fs::path(base && *base ? base : "runs") / command).string();
}

class Config {
public:
    Config() = default;
    Config(const Config&) = delete;
    Config& operator=(const Config&) = delete;
    ~Config() { rsovs_config_free(h_); }
    rsovs_config** out() { return &h_; }
    rsovs_config* get() const { return h_; }

    nlohmann::json json() const {
        size_t needed = 0;
        check(rsovs_config_to_json(h_, nullptr, 0, &needed), "config");
        std::string buf(needed, '\0');
        check(rsovs_config_to_json(h_, buf.data(), buf.size(), &needed), "config");
        buf.resize(needed - 1);
        return nlohmann::json::parse(buf);
    }

private:
    rsovs_config* h_ = nullptr;
};

class Model {
public:
    explicit Model(const std::string& checkpoint) { check(rsovs_model_load(checkpoint.c_str(), &h_), "load checkpoint"); }
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    ~Model() { rsovs_model_free(h_); }
    rsovs_model* get() const { return h_; }

private:
    rsovs_model* h_ = nullptr;
};

std::vector<std::string> with_extra(const Options& o, const std::vector<std::string>& extra) {
    std::vector<std::string> all = extra;
    all.insert(all.end(), o.sets.begin(), o.sets.end());
    return all;
}

void load_config(Config& cfg, const Options& o, const std::vector<std::string>& extra) {
    const auto overrides = with_extra(o, extra);
    const auto ptrs = c_strings(overrides);
    check(rsovs_config_load(o.config.empty() ? nullptr : o.config.c_str(), ptrs.data(), ptrs.size(), cfg.out()),
          "config");
}

void progress_to_stderr(const char* message, void*) { std::cerr << message << '\n'; }

int cmd_make_synth(const Options& o) {
    std::vector<std::string> extra;
    if (o.seed >= 0) extra.push_back("synth.seed=" + std::to_string(o.seed));
    Config cfg;
    load_config(cfg, o, extra);
    const std::string out = output_dir(o, "synth");
    int64_t n = 0;
    check(rsovs_make_synth(cfg.get(), out.c_str(), &n), "make-synth");
    std::cout << "wrote " << n << " samples to " << (fs::path(out) / "manifest.json").string() << '\n';
    return kExitOk;
}

int cmd_train(const Options& o) {
    std::vector<std::string> extra;
    if (o.seed >= 0) extra.push_back("train.seed=" + std::to_string(o.seed));
    if (!o.categories.empty()) extra.push_back("data.categories=" + nlohmann::json(split_categories(o.categories)).dump());
    Config cfg;
    load_config(cfg, o, extra);
    const std::string out = output_dir(o, "train");

    rsovs_trainer* t = nullptr;
    check(rsovs_trainer_create(cfg.get(), &t), "train");
    struct Guard {
        rsovs_trainer* t;
        ~Guard() { rsovs_trainer_free(t); }
    } guard{t};
    if (!o.checkpoint.empty()) check(rsovs_trainer_resume(t, o.checkpoint.c_str()), "resume");
    check(rsovs_trainer_run(t, out.c_str(), o.quiet ? nullptr : progress_to_stderr, nullptr), "train");
    int64_t it = 0;
    check(rsovs_trainer_iteration(t, &it), "train");
    std::cout << "finished at iteration " << it << "; final checkpoint " << (fs::path(out) / "final.ckpt").string()
              << '\n';
    return kExitOk;
}

int cmd_eval(const Options& o) {
    if (o.checkpoint.empty()) usage("eval requires --checkpoint");
    Config cfg;
    if (o.config.empty()) {
        const auto ptrs = c_strings(o.sets);
        check(rsovs_config_from_checkpoint(o.checkpoint.c_str(), ptrs.data(), ptrs.size(), cfg.out()), "config");
    } else {
        load_config(cfg, o, {});
    }
    const auto j = cfg.json();
    const std::string manifest = j["data"]["manifest"].get<std::string>();
    if (manifest.empty()) usage("no dataset: set data.manifest");
    const std::string split = j["train"]["eval_split"].get<std::string>();
    auto names = split_categories(o.categories);
    if (names.empty()) names = j["data"]["categories"].get<std::vector<std::string>>();
    const auto ptrs = c_strings(names);

    Model model(o.checkpoint);
    const std::string out = output_dir(o, "eval");
    double m[3] = {0, 0, 0};
    check(rsovs_model_evaluate(model.get(), manifest.c_str(), split.c_str(), ptrs.data(), ptrs.size(), out.c_str(), m),
          "eval");
    std::printf("split %s  mIoU %.2f  fwIoU %.2f  mACC %.2f\n", split.c_str(), m[0] * 100, m[1] * 100, m[2] * 100);
    std::cout << "report: " << (fs::path(out) / "eval_report.csv").string() << '\n';
    return kExitOk;
}

int cmd_predict(const Options& o) {
    if (o.checkpoint.empty()) usage("predict requires --checkpoint");
    if (o.inputs.empty()) usage("predict requires at least one image path");
    const auto names = split_categories(o.categories);
    for (const auto& n : names)
        if (n.empty()) usage("--categories contains an empty name");
    const auto ptrs = c_strings(names);
    Model model(o.checkpoint);
    const fs::path out = output_dir(o, "predict");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) {
        std::cerr << "rsovs: cannot create " << out << ": " << ec.message() << '\n';
        return kExitRuntime;
    }
    for (const auto& img : o.inputs) {
        const std::string stem = fs::path(img).stem().string();
        const std::string mask = (out / (stem + "_mask.png")).string(), color = (out / (stem + "_color.png")).string();
        check(rsovs_model_predict_file(model.get(), img.c_str(), ptrs.data(), ptrs.size(), mask.c_str(), color.c_str()),
              "predict " + img);
        std::cout << img << " -> " << mask << ", " << color << '\n';
    }
    return kExitOk;
}

int cmd_plot_metrics(const Options& o) {
    if (o.inputs.empty()) usage("plot-metrics requires at least one run directory or log file");
    const auto ptrs = c_strings(o.inputs);
    const std::string out = output_dir(o, "plots");
    check(rsovs_plot_metrics(ptrs.data(), ptrs.size(), out.c_str()), "plot-metrics");
    std::cout << "wrote loss.svg, metrics.svg, loss.csv, eval.csv to " << out << '\n';
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Open-vocabulary remote-sensing segmentation with rotation-aggregated similarity maps"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(rsovs_version()));

    Options o;
    auto common = [&](CLI::App* sub, bool with_config) {
        if (with_config) sub->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
        sub->add_option("--out", o.out, "output directory");
        sub->add_option("--set", o.sets, "override section.key=value (repeatable)")->allow_extra_args(false);
        sub->add_flag("--quiet,-q", o.quiet, "suppress progress output");
    };

    auto* synth = app.add_subcommand("make-synth", "render a synthetic dataset");
    common(synth, true);
    synth->add_option("--seed", o.seed, "synthesis seed")->check(CLI::NonNegativeNumber);

    auto* train = app.add_subcommand("train", "train a model");
    common(train, true);
    train->add_option("--checkpoint", o.checkpoint, "resume from this checkpoint")->check(CLI::ExistingFile);
    train->add_option("--categories", o.categories, "comma-separated training categories");
    train->add_option("--seed", o.seed, "training seed")->check(CLI::NonNegativeNumber);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    common(eval, true);
    eval->add_option("--checkpoint", o.checkpoint, "checkpoint to evaluate")->required()->check(CLI::ExistingFile);
    eval->add_option("--categories", o.categories, "comma-separated evaluation categories");

    auto* predict = app.add_subcommand("predict", "segment images with free-form categories");
    common(predict, false);
    predict->add_option("--checkpoint", o.checkpoint, "checkpoint")->required()->check(CLI::ExistingFile);
    predict->add_option("--categories", o.categories, "comma-separated category names");
    predict->add_option("images", o.inputs, "PNG images")->required();

    auto* plot = app.add_subcommand("plot-metrics", "plot and tabulate training logs");
    common(plot, false);
    plot->add_option("runs", o.inputs, "run directories or train_log.jsonl files")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*synth) return cmd_make_synth(o);
        if (*train) return cmd_train(o);
        if (*eval) return cmd_eval(o);
        if (*predict) return cmd_predict(o);
        if (*plot) return cmd_plot_metrics(o);
    } catch (const Failure& f) {
        return f.code;
    } catch (const std::exception& e) {
        std::cerr << "rsovs: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}
