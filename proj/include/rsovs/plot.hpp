#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rsovs/train.hpp"

namespace rsovs {

/// Parsed train_log.jsonl of one run.
struct RunLog {
    std::string name;
    std::vector<LogRecord> train;
    std::vector<EvalRecord> evals;
};

/// Accepts a run directory or the log file itself.
RunLog read_run_log(const std::filesystem::path& path);

/// Writes loss.svg, metrics.svg, loss.csv and eval.csv (one row per eval
/// event) under `out_dir`; several runs are overlaid. Returns the files written.
std::vector<std::filesystem::path> write_metric_plots(const std::vector<RunLog>& runs,
                                                      const std::filesystem::path& out_dir);

/// Stable color for a category name (FNV-1a of the UTF-8 bytes).
std::array<uint8_t, 3> category_color(const std::string& name);

/// Colors every pixel of an [H, W] index mask by its category.
Tensor<uint8_t> colorize(const LabelMask& labels, const std::vector<std::string>& categories);

}  // namespace rsovs
