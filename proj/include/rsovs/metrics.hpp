#pragma once

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rsovs/core.hpp"

namespace rsovs {

/// Raised when a metric has no defined value (nothing to average over).
class UndefinedMetric : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// N_C x N_C pixel counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int64_t num_classes);

    int64_t num_classes() const { return n_; }
    int64_t at(int64_t gt, int64_t pred) const { return counts_[gt * n_ + pred]; }
    int64_t total() const;

    /// Adds every non-ignored pixel of (pred, gt). Ground-truth or predicted values
    /// outside [0, N_C) that are not `ignore_index` are rejected.
    void accumulate(const LabelMask& pred, const LabelMask& gt, int32_t ignore_index = kIgnoreIndex);
    void merge(const ConfusionMatrix& other);

    int64_t true_positives(int64_t c) const { return at(c, c); }
    int64_t false_positives(int64_t c) const;
    int64_t false_negatives(int64_t c) const;
    /// Ground-truth pixel count of class c.
    int64_t support(int64_t c) const;

    bool operator==(const ConfusionMatrix&) const = default;

private:
    int64_t n_;
    std::vector<int64_t> counts_;
};

/// Mean IoU over classes with a nonzero union.
double miou(const ConfusionMatrix& cm);
/// IoU weighted by ground-truth frequency.
double fwiou(const ConfusionMatrix& cm);
/// Mean per-class accuracy over classes present in the ground truth.
double macc(const ConfusionMatrix& cm);

/// Per-class IoU, or NaN for classes with an empty union.
std::vector<double> class_iou(const ConfusionMatrix& cm);
/// Per-class accuracy, or NaN for classes absent from the ground truth.
std::vector<double> class_accuracy(const ConfusionMatrix& cm);

struct MetricReport {
    double miou = 0, fwiou = 0, macc = 0;
    std::vector<std::string> class_names;
    std::vector<double> iou;
    std::vector<double> accuracy;
    std::vector<int64_t> support;
};

MetricReport make_report(const ConfusionMatrix& cm, const std::vector<std::string>& class_names);

/// Overall row followed by one row per class; values as percentages, 2 decimals.
void write_report_csv(std::ostream& os, const MetricReport& report);
void write_report_text(std::ostream& os, const MetricReport& report);

}  // namespace rsovs
