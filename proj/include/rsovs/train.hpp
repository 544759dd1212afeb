#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "rsovs/config.hpp"
#include "rsovs/data.hpp"
#include "rsovs/metrics.hpp"
#include "rsovs/pipeline.hpp"

namespace rsovs {

/// Training diverged or produced a non-finite value.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Mean per-pixel cross-entropy of logits [H, W, N_C] against a mask [H, W].
/// When every pixel is ignored the loss is 0 and `all_ignored` is set.
template <class T>
ag::Var<T> cross_entropy_loss(const ag::Var<T>& logits, const LabelMask& target, int32_t ignore_index,
                              bool* all_ignored = nullptr);

struct AdamWConfig {
    double lr = 2e-4;
    double weight_decay = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with decoupled weight decay: p <- p * (1 - lr * wd), then the
/// bias-corrected Adam update. Frozen parameters are never touched.
template <class T>
class AdamW {
public:
    AdamW(const ParamStore<T>& store, AdamWConfig cfg);

    /// Applies one update from the gradients currently held by the parameters.
    void step();

    int64_t steps() const { return steps_; }
    const AdamWConfig& config() const { return cfg_; }

    struct Slot {
        std::string name;
        ag::Var<T> param;
        Tensor<T> m;
        Tensor<T> v;
    };
    std::vector<Slot>& slots() { return slots_; }
    const std::vector<Slot>& slots() const { return slots_; }
    void set_steps(int64_t n) { steps_ = n; }

private:
    AdamWConfig cfg_;
    std::vector<Slot> slots_;
    int64_t steps_ = 0;
};

/// Dataset positions of the batch for `iteration` (0-based). Every epoch is an
/// independent shuffle seeded by (seed, epoch), so the order never depends on
/// earlier calls.
std::vector<int64_t> batch_indices(uint64_t seed, int64_t iteration, int64_t dataset_size, int64_t batch_size);

struct LogRecord {
    int64_t iteration = 0;
    double loss = 0;
    double lr = 0;
    double wall_time = 0;
    int64_t all_ignored = 0;  // samples of the batch without a labelled pixel
};

struct EvalRecord {
    int64_t iteration = 0;
    std::string split;
    double miou = 0, fwiou = 0, macc = 0;
};

struct CheckpointEntry {
    std::string name;
    Shape shape;
    bool frozen = false;
    std::vector<float> value;
    std::vector<float> m;  // empty for frozen parameters
    std::vector<float> v;
};

struct Checkpoint {
    nlohmann::json config;
    int64_t iteration = 0;
    int64_t optimizer_steps = 0;
    std::vector<std::string> categories;
    std::vector<EvalRecord> history;
    std::vector<CheckpointEntry> params;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rebuilds the model a checkpoint was taken from and loads its parameters.
std::unique_ptr<SegmentationModel<float>> model_from_checkpoint(const Checkpoint& ckpt);

/// Lookup table over 8-bit mask values: registry index -> position in
/// `categories`. The dataset's ignore value and categories not listed map to
/// `ignore_index`; values outside the registry map to -1.
std::vector<int32_t> label_remap(const Manifest& manifest, const std::vector<std::string>& categories,
                                 int32_t ignore_index);

/// Loads a sample and rewrites its mask through `remap`.
LoadedSample load_remapped(const Manifest& manifest, const Sample& sample, int64_t image_side,
                           const std::vector<int32_t>& remap);

struct Evaluation {
    ConfusionMatrix confusion;
    MetricReport report;
};

/// Confusion matrix and metrics of argmax predictions over `samples`.
Evaluation evaluate(const SegmentationModel<float>& model, const Manifest& manifest, const std::vector<Sample>& samples,
                    const std::vector<std::string>& categories, int64_t image_side,
                    int32_t ignore_index = kIgnoreIndex);

class Trainer {
public:
    Trainer(RunConfig cfg, Manifest manifest);

    /// Restores model, optimizer and history; the checkpoint's config replaces
    /// the constructor's except for max_iterations, eval/checkpoint intervals.
    void restore(const Checkpoint& ckpt);

    /// One optimizer step on the next batch. Returns the batch mean loss.
    LogRecord step();

    EvalRecord evaluate_split(Split split, MetricReport* report = nullptr);

    Checkpoint checkpoint() const;

    /// Steps until max_iterations, writing the effective config, a JSONL log,
    /// periodic evaluations and checkpoints under `out_dir`.
    void run(const std::filesystem::path& out_dir, const std::function<void(const std::string&)>& progress = {});

    int64_t iteration() const { return iteration_; }
    const RunConfig& config() const { return cfg_; }
    const std::vector<std::string>& categories() const { return categories_; }
    const std::vector<EvalRecord>& history() const { return history_; }
    SegmentationModel<float>& model() { return *model_; }

private:
    LoadedSample sample(const Sample& s);

    RunConfig cfg_;
    Manifest manifest_;
    std::vector<Sample> train_samples_;
    std::vector<std::string> categories_;
    std::vector<int32_t> remap_;
    std::unique_ptr<SegmentationModel<float>> model_;
    std::unique_ptr<AdamW<float>> optimizer_;
    std::vector<ClassEmbedding> class_embeddings_;
    std::map<std::string, LoadedSample> cache_;
    std::vector<EvalRecord> history_;
    int64_t iteration_ = 0;
    std::chrono::steady_clock::time_point start_;
};

}  // namespace rsovs
