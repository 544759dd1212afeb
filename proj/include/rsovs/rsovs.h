/* C interface of the rsovs segmentation library. Every function returns a
 * status code; on failure rsovs_last_error() describes the problem. Handles
 * are opaque and owned by the caller until passed to the matching _free. */
#ifndef RSOVS_H
#define RSOVS_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define RSOVS_API __declspec(dllexport)
#else
#define RSOVS_API __attribute__((visibility("default")))
#endif

typedef enum rsovs_status {
    RSOVS_OK = 0,
    RSOVS_ERR_ARGUMENT = 1, /* null handle, bad buffer size */
    RSOVS_ERR_CONFIG = 2,   /* invalid configuration, category list or empty split */
    RSOVS_ERR_SHAPE = 3,
    RSOVS_ERR_INPUT = 4,    /* malformed or non-finite input values */
    RSOVS_ERR_IO = 5,       /* unreadable or unwritable files */
    RSOVS_ERR_TRAINING = 6, /* non-finite loss */
    RSOVS_ERR_INTERNAL = 7
} rsovs_status;

typedef struct rsovs_config rsovs_config;
typedef struct rsovs_trainer rsovs_trainer;
typedef struct rsovs_model rsovs_model;

/* Progress messages from long operations. */
typedef void (*rsovs_progress_fn)(const char* message, void* user);

RSOVS_API const char* rsovs_version(void);
/* Message of the last failure on the calling thread, "" if none. */
RSOVS_API const char* rsovs_last_error(void);
RSOVS_API const char* rsovs_status_name(rsovs_status status);

/* Defaults, then the JSON file (may be NULL), then "section.key=value" overrides. */
RSOVS_API rsovs_status rsovs_config_load(const char* path, const char* const* overrides, size_t num_overrides,
                                         rsovs_config** out);
/* Effective config recorded in a checkpoint, with overrides applied on top. */
RSOVS_API rsovs_status rsovs_config_from_checkpoint(const char* checkpoint_path, const char* const* overrides,
                                                    size_t num_overrides, rsovs_config** out);
RSOVS_API rsovs_status rsovs_config_set(rsovs_config* cfg, const char* assignment);
/* Copies the config as JSON into buf (NUL-terminated). *needed receives the
 * required size including the terminator; buf may be NULL to query it. */
RSOVS_API rsovs_status rsovs_config_to_json(const rsovs_config* cfg, char* buf, size_t cap, size_t* needed);
RSOVS_API rsovs_status rsovs_config_save(const rsovs_config* cfg, const char* path);
RSOVS_API void rsovs_config_free(rsovs_config* cfg);

/* Renders the synthetic dataset described by cfg's synth section into out_dir
 * (images/, masks/, manifest.json, config.json). */
RSOVS_API rsovs_status rsovs_make_synth(const rsovs_config* cfg, const char* out_dir, int64_t* num_samples);

/* Trainer over the manifest named by cfg's data.manifest. */
RSOVS_API rsovs_status rsovs_trainer_create(const rsovs_config* cfg, rsovs_trainer** out);
/* Continues from a checkpoint written by a trainer with the same categories. */
RSOVS_API rsovs_status rsovs_trainer_resume(rsovs_trainer* trainer, const char* checkpoint_path);
RSOVS_API rsovs_status rsovs_trainer_step(rsovs_trainer* trainer, double* loss);
/* Trains to max_iterations, writing logs, reports and checkpoints to out_dir. */
RSOVS_API rsovs_status rsovs_trainer_run(rsovs_trainer* trainer, const char* out_dir, rsovs_progress_fn progress,
                                         void* user);
RSOVS_API rsovs_status rsovs_trainer_iteration(const rsovs_trainer* trainer, int64_t* iteration);
RSOVS_API rsovs_status rsovs_trainer_save(const rsovs_trainer* trainer, const char* checkpoint_path);
RSOVS_API void rsovs_trainer_free(rsovs_trainer* trainer);

RSOVS_API rsovs_status rsovs_model_load(const char* checkpoint_path, rsovs_model** out);
RSOVS_API void rsovs_model_free(rsovs_model* model);
/* Number of categories the checkpoint was trained with, and their names joined by '\n'. */
RSOVS_API rsovs_status rsovs_model_categories(const rsovs_model* model, char* buf, size_t cap, size_t* needed);

/* Logits for an interleaved RGB float image [side, side, 3] in [0, 1].
 * logits receives side*side*num_categories values (channel fastest); labels,
 * if not NULL, receives side*side argmax indices. */
RSOVS_API rsovs_status rsovs_model_predict(const rsovs_model* model, const float* rgb, int64_t side,
                                           const char* const* categories, size_t num_categories, float* logits,
                                           int32_t* labels);

/* Predicts a PNG at the model's training resolution and writes the index
 * mask (8-bit) and a color-coded mask, both at the input resolution.
 * color_path may be NULL. */
RSOVS_API rsovs_status rsovs_model_predict_file(const rsovs_model* model, const char* image_path,
                                                const char* const* categories, size_t num_categories,
                                                const char* mask_path, const char* color_path);

/* Evaluates on split ("train" or "val") of the manifest and writes
 * eval_report.csv, eval_report.txt and metrics.json to out_dir (may be NULL).
 * categories may be NULL to use the checkpoint's list. metrics receives
 * mIoU, fwIoU and mACC as fractions. */
RSOVS_API rsovs_status rsovs_model_evaluate(const rsovs_model* model, const char* manifest_path, const char* split,
                                            const char* const* categories, size_t num_categories,
                                            const char* out_dir, double metrics[3]);

/* Reads train_log.jsonl from each run directory (or log file) and writes
 * loss.svg, metrics.svg, loss.csv and eval.csv to out_dir. */
RSOVS_API rsovs_status rsovs_plot_metrics(const char* const* runs, size_t num_runs, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif
