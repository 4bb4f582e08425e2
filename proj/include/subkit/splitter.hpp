#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "subkit/corpus.hpp"

namespace subkit {

// Assignment of every example to exactly one of k test folds, atomic by group.
struct FoldPlan {
    int k = 0;
    std::map<std::int64_t, int> assignment;        // example id -> fold
    std::map<std::int64_t, std::string> group_of;  // example id -> group key

    void save(const std::string& path) const;           // two-column CSV: example_id,fold
    static FoldPlan load(const std::string& path, int k_hint = 0);
};

using GroupKeyFn = std::function<std::string(const Example&)>;

// Group key used throughout: the exact query string.
std::string query_group_key(const Example& ex);

// Greedy grouped stratified split: groups sorted by descending size (ties in
// seeded shuffle order), each assigned to the fold that minimizes the total
// squared deviation (after assignment) of fold class counts from their
// proportional shares, each class normalized by its share.
FoldPlan assign_folds(const std::vector<Example>& examples, const GroupKeyFn& group_key, int k,
                      std::uint64_t seed);

struct PlanReport {
    int k = 0;
    std::vector<std::int64_t> fold_sizes;
    std::vector<double> fold_positive_ratio;
    double global_positive_ratio = 0.0;
    bool leakage = false;  // true iff some group spans two folds

    std::string to_text() const;
};

PlanReport verify_plan(const FoldPlan& plan, const std::vector<Example>& examples);

}  // namespace subkit
