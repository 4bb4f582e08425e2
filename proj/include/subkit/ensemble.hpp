#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace subkit {

// Per-example class probabilities produced by one model, plus the metadata
// the diversity tie-breaks key on. Interchange format between training runs
// and ensembling: CSV (example_id,p0,p1) with a key=value sidecar.
struct ProbMatrix {
    std::string model_id;
    std::string backbone_tag;  // config identity, e.g. "cfg-1a2b3c4d"
    std::string data_tag;      // training-data identity, e.g. "task3"
    std::string fold_provenance;
    std::vector<std::int64_t> example_ids;
    std::vector<std::array<double, 2>> rows;

    // Rows sum to 1 +- 1e-9, probabilities in [0,1], ids aligned with rows.
    void validate() const;

    // Per-row argmax; ties go to class 0.
    std::vector<int> argmax() const;

    void save(const std::string& path) const;  // writes path and path.meta
    static ProbMatrix load(const std::string& path);
};

// Sums probability rows across members and takes the argmax per example;
// ties go to class 0. Members must be row-aligned.
std::vector<int> soft_vote(const std::vector<ProbMatrix>& members);

struct SelectionStep {
    int step = 0;
    std::vector<std::pair<std::string, double>> candidate_scores;  // model id -> enlarged-set score
    std::string chosen;
    std::string reason;  // "best score" or the tie-break that decided
    double score = 0.0;  // ensemble score after adding `chosen`
};

struct EnsembleSpec {
    std::vector<std::string> members;  // model ids in selection order
    std::vector<SelectionStep> log;
    double final_score = 0.0;

    std::string to_text() const;
};

// Forward greedy selection on soft-vote micro-F1. Ties prefer (1) a backbone
// tag not yet in the set, (2) a data tag not yet in the set, (3) the
// lexicographically smallest model id. Stops when no candidate strictly
// improves the score or max_size is reached; the first member is always taken.
EnsembleSpec greedy_select(const std::vector<ProbMatrix>& candidates, const std::vector<int>& labels,
                           int max_size);

}  // namespace subkit
