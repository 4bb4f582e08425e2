#pragma once

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

namespace subkit {

// Per-class confusion counts aggregated over a prediction vector.
struct ConfusionCounts {
    std::map<int, std::int64_t> tp, fp, fn;
};

ConfusionCounts confusion_counts(const std::vector<int>& labels, const std::vector<int>& preds);

// Micro-averaged F1 over all classes: 2*TP / (2*TP + FP + FN) with counts
// pooled across classes. For single-label prediction this equals accuracy.
double micro_f1(const std::vector<int>& labels, const std::vector<int>& preds);

struct PerClassF1 {
    std::map<int, double> f1;  // classes present in labels or preds
    double macro_f1 = 0.0;     // mean over the classes in `f1`
};

PerClassF1 per_class_f1(const std::vector<int>& labels, const std::vector<int>& preds);

struct CvPool {
    double pooled = 0.0;             // micro-F1 of the concatenation
    std::vector<double> per_fold;    // micro-F1 per fold
    double fold_mean = 0.0;          // mean of per_fold (differs from pooled in general)
};

using FoldOutput = std::pair<std::vector<int>, std::vector<int>>;  // (labels, preds)

CvPool pool_cv(const std::vector<FoldOutput>& fold_outputs);

}  // namespace subkit
