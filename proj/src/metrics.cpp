#include "rsovs/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace rsovs {

ConfusionMatrix::ConfusionMatrix(int64_t num_classes) : n_(num_classes), counts_(num_classes * num_classes, 0) {
    if (num_classes < 1) throw InputError("confusion matrix needs at least one class");
}

int64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), int64_t{0}); }

void ConfusionMatrix::accumulate(const LabelMask& pred, const LabelMask& gt, int32_t ignore_index) {
    if (pred.shape != gt.shape)
        throw InputError("prediction " + shape_str(pred.shape) + " and ground truth " + shape_str(gt.shape) +
                         " differ in shape");
    for (int64_t i = 0; i < gt.numel(); ++i) {
        const int32_t g = gt.data[i];
        if (g == ignore_index) continue;
        const int32_t p = pred.data[i];
        if (g < 0 || g >= n_ || p < 0 || p >= n_)
            throw InputError("label out of range at pixel " + std::to_string(i) + ": gt " + std::to_string(g) +
                             ", pred " + std::to_string(p));
        ++counts_[g * n_ + p];
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.n_ != n_) throw InputError("cannot merge confusion matrices of different sizes");
    for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

int64_t ConfusionMatrix::false_positives(int64_t c) const {
    int64_t s = 0;
    for (int64_t g = 0; g < n_; ++g)
        if (g != c) s += at(g, c);
    return s;
}

int64_t ConfusionMatrix::false_negatives(int64_t c) const {
    int64_t s = 0;
    for (int64_t p = 0; p < n_; ++p)
        if (p != c) s += at(c, p);
    return s;
}

int64_t ConfusionMatrix::support(int64_t c) const { return true_positives(c) + false_negatives(c); }

std::vector<double> class_iou(const ConfusionMatrix& cm) {
    std::vector<double> out(cm.num_classes());
    for (int64_t c = 0; c < cm.num_classes(); ++c) {
        const int64_t uni = cm.true_positives(c) + cm.false_positives(c) + cm.false_negatives(c);
        out[c] = uni > 0 ? static_cast<double>(cm.true_positives(c)) / static_cast<double>(uni)
                         : std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

std::vector<double> class_accuracy(const ConfusionMatrix& cm) {
    std::vector<double> out(cm.num_classes());
    for (int64_t c = 0; c < cm.num_classes(); ++c) {
        const int64_t n = cm.support(c);
        out[c] = n > 0 ? static_cast<double>(cm.true_positives(c)) / static_cast<double>(n)
                       : std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

// Means are accumulated from the integer counts in extended precision and
// rounded once, so small hand-checkable cases come out correctly rounded.
double miou(const ConfusionMatrix& cm) {
    long double sum = 0;
    int64_t k = 0;
    for (int64_t c = 0; c < cm.num_classes(); ++c) {
        const int64_t uni = cm.true_positives(c) + cm.false_positives(c) + cm.false_negatives(c);
        if (uni == 0) continue;
        sum += static_cast<long double>(cm.true_positives(c)) / static_cast<long double>(uni);
        ++k;
    }
    if (k == 0) throw UndefinedMetric("mIoU undefined: no class has a nonzero union");
    return static_cast<double>(sum / static_cast<long double>(k));
}

double fwiou(const ConfusionMatrix& cm) {
    long double num = 0;
    int64_t den = 0;
    for (int64_t c = 0; c < cm.num_classes(); ++c) {
        const int64_t n = cm.support(c);
        if (n == 0) continue;
        const int64_t uni = n + cm.false_positives(c);
        num += static_cast<long double>(n) * static_cast<long double>(cm.true_positives(c)) / static_cast<long double>(uni);
        den += n;
    }
    if (den == 0) throw UndefinedMetric("fwIoU undefined: no ground-truth pixels");
    return static_cast<double>(num / static_cast<long double>(den));
}

double macc(const ConfusionMatrix& cm) {
    long double sum = 0;
    int64_t k = 0;
    for (int64_t c = 0; c < cm.num_classes(); ++c) {
        const int64_t n = cm.support(c);
        if (n == 0) continue;
        sum += static_cast<long double>(cm.true_positives(c)) / static_cast<long double>(n);
        ++k;
    }
    if (k == 0) throw UndefinedMetric("mACC undefined: no ground-truth pixels");
    return static_cast<double>(sum / static_cast<long double>(k));
}

MetricReport make_report(const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
    if (static_cast<int64_t>(class_names.size()) != cm.num_classes())
        throw InputError("report needs one name per class");
    MetricReport r;
    r.miou = miou(cm);
    r.fwiou = fwiou(cm);
    r.macc = macc(cm);
    r.class_names = class_names;
    r.iou = class_iou(cm);
    r.accuracy = class_accuracy(cm);
    for (int64_t c = 0; c < cm.num_classes(); ++c) r.support.push_back(cm.support(c));
    return r;
}

namespace {

std::string pct(double v) {
    if (std::isnan(v)) return "n/a";
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << v * 100.0;
    return os.str();
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

}  // namespace

void write_report_csv(std::ostream& os, const MetricReport& r) {
    os << "scope,name,mIoU,fwIoU,mACC,IoU,Acc,pixels\n";
    os << "overall,all," << pct(r.miou) << ',' << pct(r.fwiou) << ',' << pct(r.macc) << ",,,";
    int64_t total = 0;
    for (auto s : r.support) total += s;
    os << total << '\n';
    for (size_t c = 0; c < r.class_names.size(); ++c)
        os << "class," << csv_field(r.class_names[c]) << ",,,," << pct(r.iou[c]) << ',' << pct(r.accuracy[c]) << ','
           << r.support[c] << '\n';
}

void write_report_text(std::ostream& os, const MetricReport& r) {
    size_t width = 8;
    for (const auto& n : r.class_names) width = std::max(width, n.size());
    os << "mIoU  " << pct(r.miou) << "\nfwIoU " << pct(r.fwiou) << "\nmACC  " << pct(r.macc) << "\n\n";
    os << std::left << std::setw(static_cast<int>(width)) << "class" << "  " << std::right << std::setw(7) << "IoU"
       << std::setw(8) << "Acc" << std::setw(12) << "pixels" << '\n';
    for (size_t c = 0; c < r.class_names.size(); ++c)
        os << std::left << std::setw(static_cast<int>(width)) << r.class_names[c] << "  " << std::right << std::setw(7)
           << pct(r.iou[c]) << std::setw(8) << pct(r.accuracy[c]) << std::setw(12) << r.support[c] << '\n';
}

}  // namespace rsovs
