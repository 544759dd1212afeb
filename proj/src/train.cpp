#include "rsovs/train.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

namespace rsovs {

namespace fs = std::filesystem;
using nlohmann::json;

template <class T>
ag::Var<T> cross_entropy_loss(const ag::Var<T>& logits, const LabelMask& target, int32_t ignore_index,
                              bool* all_ignored) {
    const auto& s = logits->shape();
    if (s.size() != 3) throw ShapeError("logits must be [H,W,N_C], got " + shape_str(s));
    if (target.rank() != 2 || target.dim(0) != s[0] || target.dim(1) != s[1])
        throw ShapeError("target " + shape_str(target.shape) + " does not match logits " + shape_str(s));
    int64_t valid = 0;
    auto loss = ag::cross_entropy(ag::reshape(logits, {s[0] * s[1], s[2]}), target.data, ignore_index, &valid);
    if (all_ignored) *all_ignored = valid == 0;
    return loss;
}

template <class T>
AdamW<T>::AdamW(const ParamStore<T>& store, AdamWConfig cfg) : cfg_(cfg) {
    if (cfg_.lr < 0 || cfg_.weight_decay < 0) throw ConfigError("AdamW lr and weight decay must be non-negative");
    for (const auto& p : store.all()) {
        if (p.frozen) continue;
        slots_.push_back({p.name, p.var, Tensor<T>(p.var->value.shape, T(0)), Tensor<T>(p.var->value.shape, T(0))});
    }
}

template <class T>
void AdamW<T>::step() {
    ++steps_;
    const T lr = T(cfg_.lr), b1 = T(cfg_.beta1), b2 = T(cfg_.beta2), eps = T(cfg_.eps);
    const T decay = T(1) - T(cfg_.lr * cfg_.weight_decay);
    const T c1 = T(1) - T(std::pow(cfg_.beta1, static_cast<double>(steps_)));
    const T c2 = T(1) - T(std::pow(cfg_.beta2, static_cast<double>(steps_)));
    for (auto& s : slots_) {
        auto& p = s.param->value.data;
        if (!s.param->has_grad()) continue;
        const auto& g = s.param->grad.data;
        for (size_t i = 0; i < p.size(); ++i) {
            p[i] *= decay;
            s.m.data[i] = b1 * s.m.data[i] + (T(1) - b1) * g[i];
            s.v.data[i] = b2 * s.v.data[i] + (T(1) - b2) * g[i] * g[i];
            const T mhat = s.m.data[i] / c1;
            const T vhat = s.v.data[i] / c2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

namespace {

uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::vector<int64_t> batch_indices(uint64_t seed, int64_t iteration, int64_t dataset_size, int64_t batch_size) {
    if (dataset_size < 1) throw ConfigError("dataset is empty");
    std::vector<int64_t> out;
    int64_t cached_epoch = -1;
    std::vector<int64_t> perm(dataset_size);
    for (int64_t j = 0; j < batch_size; ++j) {
        const int64_t pos = iteration * batch_size + j;
        const int64_t epoch = pos / dataset_size;
        if (epoch != cached_epoch) {
            std::iota(perm.begin(), perm.end(), int64_t{0});
            Rng rng(mix64(seed) ^ mix64(static_cast<uint64_t>(epoch) + 0x51ed27ULL));
            rng.shuffle(perm.begin(), perm.end());
            cached_epoch = epoch;
        }
        out.push_back(perm[pos % dataset_size]);
    }
    return out;
}

namespace {

constexpr char kMagic[8] = {'R', 'S', 'O', 'V', 'S', 'C', 'K', 'P'};
constexpr uint32_t kCheckpointVersion = 1;

json history_json(const std::vector<EvalRecord>& h) {
    json a = json::array();
    for (const auto& r : h)
        a.push_back({{"iteration", r.iteration}, {"split", r.split}, {"mIoU", r.miou}, {"fwIoU", r.fwiou}, {"mACC", r.macc}});
    return a;
}

std::vector<EvalRecord> history_from_json(const json& a) {
    std::vector<EvalRecord> h;
    for (const auto& r : a)
        h.push_back({r.at("iteration").get<int64_t>(), r.at("split").get<std::string>(), r.at("mIoU").get<double>(),
                     r.at("fwIoU").get<double>(), r.at("mACC").get<double>()});
    return h;
}

void write_floats(std::ofstream& out, const std::vector<float>& v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}

void read_floats(std::ifstream& in, std::vector<float>& v, int64_t n, const std::string& path) {
    v.resize(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw DataError("checkpoint " + path + " is truncated");
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
    static_assert(std::endian::native == std::endian::little, "checkpoint blobs are little-endian");
    json header;
    header["config"] = ckpt.config;
    header["iteration"] = ckpt.iteration;
    header["optimizer_steps"] = ckpt.optimizer_steps;
    header["categories"] = ckpt.categories;
    header["history"] = history_json(ckpt.history);
    header["params"] = json::array();
    for (const auto& p : ckpt.params) header["params"].push_back({{"name", p.name}, {"shape", p.shape}, {"frozen", p.frozen}});
    const std::string text = header.dump();

    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot write checkpoint " + path.string());
        out.write(kMagic, sizeof(kMagic));
        const uint32_t version = kCheckpointVersion;
        const uint64_t len = text.size();
        out.write(reinterpret_cast<const char*>(&version), sizeof(version));
        out.write(reinterpret_cast<const char*>(&len), sizeof(len));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& p : ckpt.params) {
            write_floats(out, p.value);
            if (!p.frozen) {
                write_floats(out, p.m);
                write_floats(out, p.v);
            }
        }
        if (!out) throw DataError("failed writing checkpoint " + path.string());
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    char magic[8];
    uint32_t version = 0;
    uint64_t len = 0;
    in.read(magic, sizeof(magic));
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw DataError(path.string() + " is not a checkpoint");
    if (version != kCheckpointVersion)
        throw DataError("checkpoint " + path.string() + " has unsupported version " + std::to_string(version));
    if (len > (uint64_t{1} << 32)) throw DataError("checkpoint " + path.string() + " has a corrupt header");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw DataError("checkpoint " + path.string() + " is truncated");

    Checkpoint c;
    try {
        const json h = json::parse(text);
        c.config = h.at("config");
        c.iteration = h.at("iteration").get<int64_t>();
        c.optimizer_steps = h.at("optimizer_steps").get<int64_t>();
        c.categories = h.at("categories").get<std::vector<std::string>>();
        c.history = history_from_json(h.at("history"));
        for (const auto& p : h.at("params")) {
            CheckpointEntry e;
            e.name = p.at("name").get<std::string>();
            e.shape = p.at("shape").get<Shape>();
            e.frozen = p.at("frozen").get<bool>();
            c.params.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw DataError("checkpoint " + path.string() + " has a malformed header: " + e.what());
    }
    for (auto& e : c.params) {
        const int64_t n = shape_numel(e.shape);
        read_floats(in, e.value, n, path.string());
        if (!e.frozen) {
            read_floats(in, e.m, n, path.string());
            read_floats(in, e.v, n, path.string());
        }
    }
    return c;
}

namespace {

void load_params(SegmentationModel<float>& model, const Checkpoint& ckpt) {
    std::map<std::string, const CheckpointEntry*> by_name;
    for (const auto& e : ckpt.params) by_name[e.name] = &e;
    const auto& params = model.params().all();
    if (params.size() != ckpt.params.size())
        throw ConfigError("checkpoint holds " + std::to_string(ckpt.params.size()) + " tensors, model has " +
                          std::to_string(params.size()));
    for (const auto& p : params) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) throw ConfigError("checkpoint lacks parameter " + p.name);
        if (it->second->shape != p.var->value.shape)
            throw ConfigError("checkpoint parameter " + p.name + " has shape " + shape_str(it->second->shape) +
                              ", model expects " + shape_str(p.var->value.shape));
        p.var->value.data.assign(it->second->value.begin(), it->second->value.end());
    }
}

}  // namespace

std::unique_ptr<SegmentationModel<float>> model_from_checkpoint(const Checkpoint& ckpt) {
    const RunConfig cfg = run_config_from_json(ckpt.config);
    auto model = std::make_unique<SegmentationModel<float>>(cfg.model, cfg.train.seed);
    load_params(*model, ckpt);
    return model;
}

std::vector<int32_t> label_remap(const Manifest& manifest, const std::vector<std::string>& categories,
                                 int32_t ignore_index) {
    std::vector<int32_t> table(256, -1);
    for (int64_t i = 0; i < manifest.registry.size() && i < 256; ++i) table[i] = ignore_index;
    for (size_t k = 0; k < categories.size(); ++k) {
        const int64_t idx = manifest.registry.index_of(categories[k]);
        if (idx < 0)
            throw ConfigError("category \"" + categories[k] + "\" is not in dataset " + manifest.registry.dataset_id);
        table[idx] = static_cast<int32_t>(k);
    }
    if (manifest.ignore_index >= 0 && manifest.ignore_index < 256) table[manifest.ignore_index] = ignore_index;
    return table;
}

LoadedSample load_remapped(const Manifest& manifest, const Sample& sample, int64_t image_side,
                           const std::vector<int32_t>& remap) {
    LoadedSample s = load_sample(manifest, sample, image_side);
    for (auto& v : s.mask.data) {
        const int32_t r = v >= 0 && v < static_cast<int32_t>(remap.size()) ? remap[v] : -1;
        if (r < 0) throw DataError("sample " + sample.id + ": mask value " + std::to_string(v) + " has no category");
        v = r;
    }
    return s;
}

Evaluation evaluate(const SegmentationModel<float>& model, const Manifest& manifest, const std::vector<Sample>& samples,
                    const std::vector<std::string>& categories, int64_t image_side, int32_t ignore_index) {
    if (samples.empty()) throw ConfigError("nothing to evaluate: the split is empty");
    const auto remap = label_remap(manifest, categories, ignore_index);
    const auto classes = model.encode_categories(categories);
    ConfusionMatrix cm(static_cast<int64_t>(categories.size()));
    ag::NoGradGuard no_grad;
    for (const auto& s : samples) {
        const auto loaded = load_remapped(manifest, s, image_side, remap);
        const auto logits = model.forward(loaded.image, classes);
        cm.accumulate(argmax_labels(logits->value), loaded.mask, ignore_index);
    }
    MetricReport report = make_report(cm, categories);
    return {std::move(cm), std::move(report)};
}

Trainer::Trainer(RunConfig cfg, Manifest manifest) : cfg_(std::move(cfg)), manifest_(std::move(manifest)) {
    cfg_.validate();
    categories_ = cfg_.data.categories.empty() ? manifest_.registry.names : cfg_.data.categories;
    remap_ = label_remap(manifest_, categories_, cfg_.train.ignore_index);
    train_samples_ = manifest_.split(Split::Train);
    if (train_samples_.empty()) throw ConfigError("dataset has no training samples");
    model_ = std::make_unique<SegmentationModel<float>>(cfg_.model, cfg_.train.seed);
    optimizer_ = std::make_unique<AdamW<float>>(
        model_->params(),
        AdamWConfig{cfg_.train.lr, cfg_.train.weight_decay, cfg_.train.beta1, cfg_.train.beta2, cfg_.train.eps});
    class_embeddings_ = model_->encode_categories(categories_);
    start_ = std::chrono::steady_clock::now();
}

void Trainer::restore(const Checkpoint& ckpt) {
    RunConfig saved = run_config_from_json(ckpt.config);
    saved.train.max_iterations = cfg_.train.max_iterations;
    saved.train.eval_every = cfg_.train.eval_every;
    saved.train.checkpoint_every = cfg_.train.checkpoint_every;
    saved.data = cfg_.data;
    if (ckpt.categories != categories_) throw ConfigError("checkpoint was trained on a different category list");
    cfg_ = std::move(saved);
    cfg_.validate();
    model_ = std::make_unique<SegmentationModel<float>>(cfg_.model, cfg_.train.seed);
    load_params(*model_, ckpt);
    optimizer_ = std::make_unique<AdamW<float>>(
        model_->params(),
        AdamWConfig{cfg_.train.lr, cfg_.train.weight_decay, cfg_.train.beta1, cfg_.train.beta2, cfg_.train.eps});
    std::map<std::string, const CheckpointEntry*> by_name;
    for (const auto& e : ckpt.params) by_name[e.name] = &e;
    for (auto& s : optimizer_->slots()) {
        const auto* e = by_name.at(s.name);
        if (e->frozen) throw ConfigError("checkpoint marks trainable parameter " + s.name + " as frozen");
        s.m.data.assign(e->m.begin(), e->m.end());
        s.v.data.assign(e->v.begin(), e->v.end());
    }
    optimizer_->set_steps(ckpt.optimizer_steps);
    class_embeddings_ = model_->encode_categories(categories_);
    iteration_ = ckpt.iteration;
    history_ = ckpt.history;
}

LoadedSample Trainer::sample(const Sample& s) {
    constexpr size_t kCacheCapacity = 256;
    if (auto it = cache_.find(s.id); it != cache_.end()) return it->second;
    LoadedSample loaded = load_remapped(manifest_, s, cfg_.train.image_side, remap_);
    if (cache_.size() < kCacheCapacity) cache_.emplace(s.id, loaded);
    return loaded;
}

LogRecord Trainer::step() {
    const auto idx = batch_indices(cfg_.train.seed, iteration_, static_cast<int64_t>(train_samples_.size()),
                                   cfg_.train.batch_size);
    model_->params().zero_grad();
    const float inv_batch = 1.0f / static_cast<float>(idx.size());
    double total = 0;
    int64_t ignored = 0;
    for (int64_t i : idx) {
        const auto s = sample(train_samples_[i]);
        auto logits = model_->forward(s.image, class_embeddings_);
        bool all_ignored = false;
        auto loss = cross_entropy_loss(logits, s.mask, cfg_.train.ignore_index, &all_ignored);
        const float value = loss->value.data[0];
        if (!std::isfinite(value)) {
            std::string ids;
            for (int64_t j : idx) ids += (ids.empty() ? "" : ", ") + train_samples_[j].id;
            throw TrainingError("non-finite loss at iteration " + std::to_string(iteration_ + 1) + " (batch: " + ids +
                                "; sample " + s.id + ")");
        }
        ignored += all_ignored ? 1 : 0;
        total += value;
        ag::backward(ag::scale(loss, inv_batch));
    }
    optimizer_->step();
    ++iteration_;
    LogRecord r;
    r.iteration = iteration_;
    r.loss = total / static_cast<double>(idx.size());
    r.lr = cfg_.train.lr;
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    r.all_ignored = ignored;
    return r;
}

EvalRecord Trainer::evaluate_split(Split split, MetricReport* report) {
    auto samples = manifest_.split(split);
    if (samples.empty() && split == Split::Val) {
        split = Split::Train;
        samples = train_samples_;
    }
    auto ev = evaluate(*model_, manifest_, samples, categories_, cfg_.train.image_side, cfg_.train.ignore_index);
    if (report) *report = ev.report;
    return {iteration_, to_string(split), ev.report.miou, ev.report.fwiou, ev.report.macc};
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint c;
    c.config = to_json(cfg_);
    c.iteration = iteration_;
    c.optimizer_steps = optimizer_->steps();
    c.categories = categories_;
    c.history = history_;
    std::map<std::string, const AdamW<float>::Slot*> slots;
    for (const auto& s : optimizer_->slots()) slots[s.name] = &s;
    for (const auto& p : model_->params().all()) {
        CheckpointEntry e;
        e.name = p.name;
        e.shape = p.var->value.shape;
        e.frozen = p.frozen;
        e.value.assign(p.var->value.data.begin(), p.var->value.data.end());
        if (!p.frozen) {
            e.m.assign(slots.at(p.name)->m.data.begin(), slots.at(p.name)->m.data.end());
            e.v.assign(slots.at(p.name)->v.data.begin(), slots.at(p.name)->v.data.end());
        }
        c.params.push_back(std::move(e));
    }
    return c;
}

void Trainer::run(const fs::path& out_dir, const std::function<void(const std::string&)>& progress) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create output directory " + out_dir.string() + ": " + ec.message());
    save_config(out_dir / "config.json", cfg_);
    std::ofstream log(out_dir / "train_log.jsonl", iteration_ > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw DataError("cannot write " + (out_dir / "train_log.jsonl").string());
    const Split eval_split = split_from_string(cfg_.train.eval_split);

    auto emit_eval = [&] {
        MetricReport report;
        const EvalRecord ev = evaluate_split(eval_split, &report);
        history_.push_back(ev);
        log << json{{"event", "eval"}, {"iteration", ev.iteration}, {"split", ev.split},
                    {"mIoU", ev.miou},   {"fwIoU", ev.fwiou},         {"mACC", ev.macc}}
                   .dump()
            << '\n'
            << std::flush;
        std::ofstream csv(out_dir / "eval_report.csv");
        write_report_csv(csv, report);
        if (progress)
            progress("iter " + std::to_string(ev.iteration) + " eval[" + ev.split + "] mIoU " +
                     std::to_string(ev.miou * 100.0));
    };

    while (iteration_ < cfg_.train.max_iterations) {
        const LogRecord r = step();
        json line{{"event", "train"}, {"iteration", r.iteration}, {"loss", r.loss}, {"lr", r.lr}, {"wall_time", r.wall_time}};
        if (r.all_ignored > 0) line["all_ignored"] = r.all_ignored;
        log << line.dump() << '\n' << std::flush;
        if (progress && (r.iteration % 10 == 0 || r.iteration == 1))
            progress("iter " + std::to_string(r.iteration) + " loss " + std::to_string(r.loss));
        if (r.iteration % cfg_.train.eval_every == 0 || r.iteration == cfg_.train.max_iterations) emit_eval();
        if (r.iteration % cfg_.train.checkpoint_every == 0) save_checkpoint(out_dir / "checkpoint.ckpt", checkpoint());
    }
    save_checkpoint(out_dir / "final.ckpt", checkpoint());
}

template ag::Var<float> cross_entropy_loss(const ag::Var<float>&, const LabelMask&, int32_t, bool*);
template ag::Var<double> cross_entropy_loss(const ag::Var<double>&, const LabelMask&, int32_t, bool*);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace rsovs
