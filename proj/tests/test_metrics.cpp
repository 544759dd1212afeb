#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "helpers.hpp"
#include "rsovs/metrics.hpp"

using namespace rsovs;

namespace {

LabelMask mask(int64_t h, int64_t w, std::vector<int32_t> v) { return LabelMask({h, w}, v); }

// Brute-force oracle: recount every class from the raw pixel pairs.
struct Oracle {
    double miou = 0, fwiou = 0, macc = 0;
};

Oracle brute_force(const std::vector<std::pair<LabelMask, LabelMask>>& pairs, int C, int32_t ignore) {
    std::vector<int64_t> tp(C), gt_n(C), pred_n(C);
    int64_t total = 0;
    for (const auto& [pred, gt] : pairs)
        for (int64_t i = 0; i < gt.numel(); ++i) {
            if (gt.data[i] == ignore) continue;
            ++total;
            ++gt_n[gt.data[i]];
            ++pred_n[pred.data[i]];
            if (gt.data[i] == pred.data[i]) ++tp[gt.data[i]];
        }
    Oracle o;
    int with_union = 0, present = 0;
    for (int c = 0; c < C; ++c) {
        const int64_t uni = gt_n[c] + pred_n[c] - tp[c];
        if (uni > 0) {
            const double iou = double(tp[c]) / double(uni);
            o.miou += iou;
            o.fwiou += double(gt_n[c]) * iou;
            ++with_union;
        }
        if (gt_n[c] > 0) {
            o.macc += double(tp[c]) / double(gt_n[c]);
            ++present;
        }
    }
    o.miou /= with_union;
    o.fwiou /= double(total);
    o.macc /= present;
    return o;
}

}  // namespace

TEST_CASE("hand-counted 2x2 example") {
    ConfusionMatrix cm(2);
    cm.accumulate(mask(2, 2, {0, 1, 1, 1}), mask(2, 2, {0, 0, 1, 1}));
    CHECK(cm.at(0, 0) == 1);
    CHECK(cm.at(0, 1) == 1);
    CHECK(cm.at(1, 0) == 0);
    CHECK(cm.at(1, 1) == 2);
    CHECK(cm.total() == 4);
    const auto iou = class_iou(cm);
    CHECK(iou[0] == 0.5);
    CHECK(iou[1] == 2.0 / 3.0);
    CHECK(miou(cm) == 7.0 / 12.0);
    CHECK(fwiou(cm) == 7.0 / 12.0);
    CHECK(macc(cm) == 0.75);
    const auto acc = class_accuracy(cm);
    CHECK(acc[0] == 0.5);
    CHECK(acc[1] == 1.0);
}

TEST_CASE("perfect prediction and ignored pixels") {
    ConfusionMatrix cm(3);
    const auto gt = mask(2, 3, {0, 1, 2, 2, 1, 0});
    cm.accumulate(gt, gt);
    for (int64_t g = 0; g < 3; ++g)
        for (int64_t p = 0; p < 3; ++p) CHECK(cm.at(g, p) == (g == p ? 2 : 0));
    CHECK(miou(cm) == 1.0);
    CHECK(fwiou(cm) == 1.0);
    CHECK(macc(cm) == 1.0);

    const ConfusionMatrix before = cm;
    cm.accumulate(mask(1, 2, {0, 1}), mask(1, 2, {kIgnoreIndex, kIgnoreIndex}));
    CHECK(cm == before);
}

TEST_CASE("disjoint prediction gives zero IoU") {
    ConfusionMatrix cm(2);
    cm.accumulate(mask(1, 2, {1, 1}), mask(1, 2, {0, 0}));
    const auto iou = class_iou(cm);
    CHECK(iou[0] == 0.0);
    CHECK(iou[1] == 0.0);
    CHECK(miou(cm) == 0.0);
}

TEST_CASE("classes absent from ground truth and prediction are excluded") {
    ConfusionMatrix cm(4);
    cm.accumulate(mask(1, 4, {0, 0, 1, 1}), mask(1, 4, {0, 0, 1, 0}));
    CHECK(std::isnan(class_iou(cm)[3]));
    CHECK(std::isnan(class_accuracy(cm)[2]));
    CHECK(miou(cm) == doctest::Approx((2.0 / 3.0 + 1.0 / 2.0) / 2).epsilon(1e-15));
    CHECK(macc(cm) == doctest::Approx((2.0 / 3.0 + 1.0) / 2).epsilon(1e-15));
    // Class 1 appears only in the prediction: it has a union but no ground truth.
    ConfusionMatrix only_pred(2);
    only_pred.accumulate(mask(1, 2, {1, 0}), mask(1, 2, {0, 0}));
    CHECK(miou(only_pred) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(macc(only_pred) == 0.5);
}

TEST_CASE("equal class frequencies make fwIoU equal mIoU") {
    ConfusionMatrix cm(3);
    cm.accumulate(mask(2, 3, {0, 1, 1, 2, 2, 0}), mask(2, 3, {0, 0, 1, 1, 2, 2}));
    CHECK(fwiou(cm) == doctest::Approx(miou(cm)).epsilon(1e-15));
}

TEST_CASE("undefined metrics and invalid input") {
    ConfusionMatrix cm(2);
    CHECK_THROWS_AS(miou(cm), UndefinedMetric);
    CHECK_THROWS_AS(fwiou(cm), UndefinedMetric);
    CHECK_THROWS_AS(macc(cm), UndefinedMetric);
    CHECK_THROWS_AS(cm.accumulate(mask(1, 2, {0, 1}), mask(2, 1, {0, 1})), InputError);
    CHECK_THROWS_AS(cm.accumulate(mask(1, 2, {0, 2}), mask(1, 2, {0, 1})), InputError);
    CHECK_THROWS_AS(cm.accumulate(mask(1, 2, {0, 1}), mask(1, 2, {-1, 1})), InputError);
    CHECK_THROWS_AS(cm.merge(ConfusionMatrix(3)), InputError);
    CHECK_THROWS_AS(ConfusionMatrix(0), InputError);
}

TEST_CASE("random masks match the brute-force oracle; accumulation order does not matter") {
    Rng rng(11);
    const int C = 5;
    std::vector<std::pair<LabelMask, LabelMask>> pairs;
    for (int t = 0; t < 100; ++t) {
        LabelMask pred({16, 16}), gt({16, 16});
        for (int64_t i = 0; i < 256; ++i) {
            pred.data[i] = static_cast<int32_t>(rng.uniform_int(0, C - 1));
            gt.data[i] = rng.uniform(0, 1) < 0.1 ? kIgnoreIndex : static_cast<int32_t>(rng.uniform_int(0, C - 1));
        }
        pairs.emplace_back(pred, gt);
    }
    ConfusionMatrix forward(C), backward(C), merged(C);
    for (const auto& [p, g] : pairs) forward.accumulate(p, g);
    for (auto it = pairs.rbegin(); it != pairs.rend(); ++it) backward.accumulate(it->first, it->second);
    for (const auto& [p, g] : pairs) {
        ConfusionMatrix one(C);
        one.accumulate(p, g);
        merged.merge(one);
    }
    CHECK(forward == backward);
    CHECK(forward == merged);

    const auto o = brute_force(pairs, C, kIgnoreIndex);
    CHECK(std::abs(miou(forward) - o.miou) < 1e-12);
    CHECK(std::abs(fwiou(forward) - o.fwiou) < 1e-12);
    CHECK(std::abs(macc(forward) - o.macc) < 1e-12);
    for (double v : {miou(forward), fwiou(forward), macc(forward)}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("reports list overall and per-class rows as percentages") {
    ConfusionMatrix cm(3);
    cm.accumulate(mask(2, 2, {0, 1, 1, 1}), mask(2, 2, {0, 0, 1, 1}));
    const auto r = make_report(cm, {"water", "ship, large", "harbor"});
    CHECK(r.support == std::vector<int64_t>{2, 2, 0});
    std::ostringstream csv;
    write_report_csv(csv, r);
    const std::string text = csv.str();
    CHECK(text.find("overall,all,58.33,58.33,75.00") != std::string::npos);
    CHECK(text.find("class,water,,,,50.00,50.00,2") != std::string::npos);
    CHECK(text.find("\"ship, large\"") != std::string::npos);
    CHECK(std::count(text.begin(), text.end(), '\n') == 5);
    std::ostringstream txt;
    write_report_text(txt, r);
    CHECK(txt.str().find("mIoU  58.33") != std::string::npos);
    CHECK_THROWS_AS(make_report(cm, {"a"}), InputError);
}
