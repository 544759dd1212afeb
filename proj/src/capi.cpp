#include "rsovs/rsovs.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <new>
#include <string>
#include <vector>

#include "rsovs/config.hpp"
#include "rsovs/image_io.hpp"
#include "rsovs/plot.hpp"
#include "rsovs/train.hpp"

namespace fs = std::filesystem;
using namespace rsovs;

struct rsovs_config {
    nlohmann::json json;  // merged, validated
    RunConfig cfg;
};

struct rsovs_trainer {
    std::unique_ptr<Trainer> trainer;
};

struct rsovs_model {
    RunConfig cfg;
    std::vector<std::string> categories;
    std::unique_ptr<SegmentationModel<float>> model;
};

namespace {

thread_local std::string g_last_error;

class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

template <class F>
rsovs_status guarded(F&& f) {
    g_last_error.clear();
    try {
        f();
        return RSOVS_OK;
    } catch (const ArgumentError& e) {
        g_last_error = e.what();
        return RSOVS_ERR_ARGUMENT;
    } catch (const ConfigError& e) {
        g_last_error = e.what();
        return RSOVS_ERR_CONFIG;
    } catch (const ShapeError& e) {
        g_last_error = e.what();
        return RSOVS_ERR_SHAPE;
    } catch (const InputError& e) {
        g_last_error = e.what();
        return RSOVS_ERR_INPUT;
    } catch (const UndefinedMetric& e) {
        g_last_error = e.what();
        return RSOVS_ERR_CONFIG;
    } catch (const DataError& e) {
        g_last_error = e.what();
        return RSOVS_ERR_IO;
    } catch (const TrainingError& e) {
        g_last_error = e.what();
        return RSOVS_ERR_TRAINING;
    } catch (const fs::filesystem_error& e) {
        g_last_error = e.what();
        return RSOVS_ERR_IO;
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return RSOVS_ERR_INTERNAL;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return RSOVS_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return RSOVS_ERR_INTERNAL;
    }
}

template <class T>
void require(const T* p, const char* what) {
    if (!p) throw ArgumentError(std::string(what) + " must not be null");
}

std::vector<std::string> strings(const char* const* items, size_t n, const char* what) {
    std::vector<std::string> out;
    if (n > 0) require(items, what);
    for (size_t i = 0; i < n; ++i) {
        require(items[i], what);
        out.emplace_back(items[i]);
    }
    return out;
}

void copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
    if (needed) *needed = s.size() + 1;
    if (!buf) return;
    if (cap < s.size() + 1) throw ArgumentError("buffer of " + std::to_string(cap) + " bytes is too small, need " +
                                                std::to_string(s.size() + 1));
    std::memcpy(buf, s.c_str(), s.size() + 1);
}

rsovs_config* make_config(nlohmann::json j, const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) apply_override(j, o);
    auto c = std::make_unique<rsovs_config>();
    c->cfg = run_config_from_json(j);
    c->json = to_json(c->cfg);
    return c.release();
}

const std::vector<std::string>& pick(const std::vector<std::string>& given, const std::vector<std::string>& fallback) {
    return given.empty() ? fallback : given;
}

}  // namespace

extern "C" {

const char* rsovs_version(void) { return "1.0.0"; }

const char* rsovs_last_error(void) { return g_last_error.c_str(); }

const char* rsovs_status_name(rsovs_status status) {
    switch (status) {
        case RSOVS_OK: return "ok";
        case RSOVS_ERR_ARGUMENT: return "invalid argument";
        case RSOVS_ERR_CONFIG: return "configuration error";
        case RSOVS_ERR_SHAPE: return "shape error";
        case RSOVS_ERR_INPUT: return "input error";
        case RSOVS_ERR_IO: return "i/o error";
        case RSOVS_ERR_TRAINING: return "training error";
        case RSOVS_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

rsovs_status rsovs_config_load(const char* path, const char* const* overrides, size_t num_overrides,
                               rsovs_config** out) {
    return guarded([&] {
        require(out, "out");
        *out = nullptr;
        const auto ov = strings(overrides, num_overrides, "overrides");
        const RunConfig c = resolve_config(path ? fs::path(path) : fs::path(), ov);
        *out = make_config(to_json(c), {});
    });
}

rsovs_status rsovs_config_from_checkpoint(const char* checkpoint_path, const char* const* overrides,
                                          size_t num_overrides, rsovs_config** out) {
    return guarded([&] {
        require(out, "out");
        require(checkpoint_path, "checkpoint_path");
        *out = nullptr;
        const auto ov = strings(overrides, num_overrides, "overrides");
        const Checkpoint ck = load_checkpoint(checkpoint_path);
        nlohmann::json base = to_json(run_config_from_json(ck.config));
        *out = make_config(std::move(base), ov);
    });
}

rsovs_status rsovs_config_set(rsovs_config* cfg, const char* assignment) {
    return guarded([&] {
        require(cfg, "cfg");
        require(assignment, "assignment");
        nlohmann::json j = cfg->json;
        apply_override(j, assignment);
        RunConfig c = run_config_from_json(j);
        cfg->cfg = std::move(c);
        cfg->json = to_json(cfg->cfg);
    });
}

rsovs_status rsovs_config_to_json(const rsovs_config* cfg, char* buf, size_t cap, size_t* needed) {
    return guarded([&] {
        require(cfg, "cfg");
        copy_out(cfg->json.dump(2), buf, cap, needed);
    });
}

rsovs_status rsovs_config_save(const rsovs_config* cfg, const char* path) {
    return guarded([&] {
        require(cfg, "cfg");
        require(path, "path");
        save_config(path, cfg->cfg);
    });
}

void rsovs_config_free(rsovs_config* cfg) { delete cfg; }

rsovs_status rsovs_make_synth(const rsovs_config* cfg, const char* out_dir, int64_t* num_samples) {
    return guarded([&] {
        require(cfg, "cfg");
        require(out_dir, "out_dir");
        const auto summary = synth_generate(cfg->cfg.synth, out_dir);
        RunConfig snapshot = cfg->cfg;
        snapshot.data.manifest = (fs::path(out_dir) / "manifest.json").string();
        save_config(fs::path(out_dir) / "config.json", snapshot);
        if (num_samples) *num_samples = static_cast<int64_t>(summary.manifest.samples.size());
    });
}

rsovs_status rsovs_trainer_create(const rsovs_config* cfg, rsovs_trainer** out) {
    return guarded([&] {
        require(cfg, "cfg");
        require(out, "out");
        *out = nullptr;
        if (cfg->cfg.data.manifest.empty()) throw ConfigError("data.manifest is not set");
        auto t = std::make_unique<rsovs_trainer>();
        t->trainer = std::make_unique<Trainer>(cfg->cfg, load_manifest(cfg->cfg.data.manifest));
        *out = t.release();
    });
}

rsovs_status rsovs_trainer_resume(rsovs_trainer* trainer, const char* checkpoint_path) {
    return guarded([&] {
        require(trainer, "trainer");
        require(checkpoint_path, "checkpoint_path");
        trainer->trainer->restore(load_checkpoint(checkpoint_path));
    });
}

rsovs_status rsovs_trainer_step(rsovs_trainer* trainer, double* loss) {
    return guarded([&] {
        require(trainer, "trainer");
        const LogRecord r = trainer->trainer->step();
        if (loss) *loss = r.loss;
    });
}

rsovs_status rsovs_trainer_run(rsovs_trainer* trainer, const char* out_dir, rsovs_progress_fn progress, void* user) {
    return guarded([&] {
        require(trainer, "trainer");
        require(out_dir, "out_dir");
        std::function<void(const std::string&)> cb;
        if (progress) cb = [&](const std::string& m) { progress(m.c_str(), user); };
        trainer->trainer->run(out_dir, cb);
    });
}

rsovs_status rsovs_trainer_iteration(const rsovs_trainer* trainer, int64_t* iteration) {
    return guarded([&] {
        require(trainer, "trainer");
        require(iteration, "iteration");
        *iteration = trainer->trainer->iteration();
    });
}

rsovs_status rsovs_trainer_save(const rsovs_trainer* trainer, const char* checkpoint_path) {
    return guarded([&] {
        require(trainer, "trainer");
        require(checkpoint_path, "checkpoint_path");
        save_checkpoint(checkpoint_path, trainer->trainer->checkpoint());
    });
}

void rsovs_trainer_free(rsovs_trainer* trainer) { delete trainer; }

rsovs_status rsovs_model_load(const char* checkpoint_path, rsovs_model** out) {
    return guarded([&] {
        require(checkpoint_path, "checkpoint_path");
        require(out, "out");
        *out = nullptr;
        const Checkpoint ck = load_checkpoint(checkpoint_path);
        auto m = std::make_unique<rsovs_model>();
        m->cfg = run_config_from_json(ck.config);
        m->categories = ck.categories;
        m->model = model_from_checkpoint(ck);
        *out = m.release();
    });
}

void rsovs_model_free(rsovs_model* model) { delete model; }

rsovs_status rsovs_model_categories(const rsovs_model* model, char* buf, size_t cap, size_t* needed) {
    return guarded([&] {
        require(model, "model");
        std::string joined;
        for (const auto& c : model->categories) joined += (joined.empty() ? "" : "\n") + c;
        copy_out(joined, buf, cap, needed);
    });
}

rsovs_status rsovs_model_predict(const rsovs_model* model, const float* rgb, int64_t side,
                                 const char* const* categories, size_t num_categories, float* logits,
                                 int32_t* labels) {
    return guarded([&] {
        require(model, "model");
        require(rgb, "rgb");
        require(logits, "logits");
        if (side < 1) throw ArgumentError("side must be positive");
        const auto names = pick(strings(categories, num_categories, "categories"), model->categories);
        Tensor<float> pixels({side, side, 3});
        std::memcpy(pixels.data.data(), rgb, pixels.data.size() * sizeof(float));
        const auto out = model->model->predict(ImageGrid(std::move(pixels)), names);
        std::memcpy(logits, out.data.data(), out.data.size() * sizeof(float));
        if (labels) {
            const auto idx = argmax_labels(out);
            std::memcpy(labels, idx.data.data(), idx.data.size() * sizeof(int32_t));
        }
    });
}

rsovs_status rsovs_model_predict_file(const rsovs_model* model, const char* image_path,
                                      const char* const* categories, size_t num_categories, const char* mask_path,
                                      const char* color_path) {
    return guarded([&] {
        require(model, "model");
        require(image_path, "image_path");
        require(mask_path, "mask_path");
        const auto names = pick(strings(categories, num_categories, "categories"), model->categories);
        if (names.size() > 255) throw ConfigError("at most 255 categories fit an 8-bit index mask");
        Tensor<uint8_t> rgb;
        try {
            rgb = read_png_rgb(image_path);
        } catch (const DataError& e) {
            throw InputError(e.what());
        }
        const int64_t side = model->cfg.train.image_side;
        const ImageGrid full = image_from_rgb8(rgb);
        const auto logits = model->model->predict(ImageGrid(bilinear_resize(full.pixels, side, side)), names);
        const auto labels = nearest_resize(argmax_labels(logits), rgb.dim(0), rgb.dim(1));
        write_png_gray(mask_path, labels.cast<uint8_t>());
        if (color_path) write_png_rgb(color_path, colorize(labels, names));
    });
}

rsovs_status rsovs_model_evaluate(const rsovs_model* model, const char* manifest_path, const char* split,
                                  const char* const* categories, size_t num_categories, const char* out_dir,
                                  double metrics[3]) {
    return guarded([&] {
        require(model, "model");
        require(manifest_path, "manifest_path");
        const Manifest manifest = load_manifest(manifest_path);
        const auto names = pick(strings(categories, num_categories, "categories"), model->categories);
        const Split s = split_from_string(split ? split : "val");
        const Evaluation ev = evaluate(*model->model, manifest, manifest.split(s), names, model->cfg.train.image_side,
                                       model->cfg.train.ignore_index);
        if (out_dir) {
            const fs::path dir(out_dir);
            fs::create_directories(dir);
            std::ofstream csv(dir / "eval_report.csv"), txt(dir / "eval_report.txt"), js(dir / "metrics.json");
            if (!csv || !txt || !js) throw DataError("cannot write evaluation reports under " + dir.string());
            write_report_csv(csv, ev.report);
            write_report_text(txt, ev.report);
            nlohmann::json per_class = nlohmann::json::array();
            for (size_t i = 0; i < ev.report.class_names.size(); ++i)
                per_class.push_back({{"name", ev.report.class_names[i]},
                                     {"IoU", std::isnan(ev.report.iou[i]) ? nlohmann::json() : nlohmann::json(ev.report.iou[i])},
                                     {"support", ev.report.support[i]}});
            js << nlohmann::json{{"manifest", manifest_path}, {"split", to_string(s)}, {"mIoU", ev.report.miou},
                                 {"fwIoU", ev.report.fwiou},    {"mACC", ev.report.macc}, {"classes", per_class}}
                      .dump(2)
               << '\n';
        }
        if (metrics) {
            metrics[0] = ev.report.miou;
            metrics[1] = ev.report.fwiou;
            metrics[2] = ev.report.macc;
        }
    });
}

rsovs_status rsovs_plot_metrics(const char* const* runs, size_t num_runs, const char* out_dir) {
    return guarded([&] {
        require(out_dir, "out_dir");
        const auto paths = strings(runs, num_runs, "runs");
        if (paths.empty()) throw ConfigError("no run logs given");
        std::vector<RunLog> logs;
        for (const auto& p : paths) {
            try {
                logs.push_back(read_run_log(p));
            } catch (const DataError& e) {
                if (!fs::exists(p) || (fs::is_directory(p) && !fs::exists(fs::path(p) / "train_log.jsonl")))
                    throw ConfigError(e.what());
                throw;
            }
        }
        write_metric_plots(logs, out_dir);
    });
}

}  // extern "C"
