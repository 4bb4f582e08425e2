#include "subkit/metrics.hpp"

#include <set>

#include "subkit/common.hpp"

namespace subkit {

ConfusionCounts confusion_counts(const std::vector<int>& labels, const std::vector<int>& preds) {
    if (labels.size() != preds.size()) throw DataError("metrics: labels/preds length mismatch");
    if (labels.empty()) throw DataError("metrics: empty input");
    ConfusionCounts cc;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == preds[i]) {
            cc.tp[labels[i]]++;
        } else {
            cc.fn[labels[i]]++;
            cc.fp[preds[i]]++;
        }
    }
    return cc;
}

double micro_f1(const std::vector<int>& labels, const std::vector<int>& preds) {
    const auto cc = confusion_counts(labels, preds);
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (const auto& [c, n] : cc.tp) tp += n;
    for (const auto& [c, n] : cc.fp) fp += n;
    for (const auto& [c, n] : cc.fn) fn += n;
    const std::int64_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

PerClassF1 per_class_f1(const std::vector<int>& labels, const std::vector<int>& preds) {
    const auto cc = confusion_counts(labels, preds);
    std::set<int> classes;
    for (int c : labels) classes.insert(c);
    for (int c : preds) classes.insert(c);
    PerClassF1 out;
    double sum = 0.0;
    for (int c : classes) {
        const auto tp = cc.tp.count(c) ? cc.tp.at(c) : 0;
        const auto fp = cc.fp.count(c) ? cc.fp.at(c) : 0;
        const auto fn = cc.fn.count(c) ? cc.fn.at(c) : 0;
        const std::int64_t denom = 2 * tp + fp + fn;
        const double f1 = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
        out.f1[c] = f1;
        sum += f1;
    }
    out.macro_f1 = sum / static_cast<double>(classes.size());
    return out;
}

CvPool pool_cv(const std::vector<FoldOutput>& fold_outputs) {
    if (fold_outputs.empty()) throw DataError("pool_cv: no folds");
    CvPool out;
    std::vector<int> all_labels, all_preds;
    double sum = 0.0;
    for (const auto& [labels, preds] : fold_outputs) {
        const double f1 = micro_f1(labels, preds);  // also validates shape/nonempty
        out.per_fold.push_back(f1);
        sum += f1;
        all_labels.insert(all_labels.end(), labels.begin(), labels.end());
        all_preds.insert(all_preds.end(), preds.begin(), preds.end());
    }
    out.pooled = micro_f1(all_labels, all_preds);
    out.fold_mean = sum / static_cast<double>(fold_outputs.size());
    return out;
}

}  // namespace subkit
