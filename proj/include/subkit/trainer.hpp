#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "subkit/corpus.hpp"
#include "subkit/ensemble.hpp"
#include "subkit/model.hpp"
#include "subkit/robustness.hpp"
#include "subkit/splitter.hpp"

namespace subkit {

// Every tunable of a training run, flat so that configs can be diffed
// field-by-field (the A/B harness requires exactly one differing field).
// File format: one `key = value` per line, '#' comments; unknown keys are
// rejected to protect the single-field discipline.
struct TrainConfig {
    // model
    std::int64_t embed_dim = 32;
    std::int64_t ffn_dim = 64;
    std::int64_t lstm_hidden = 32;
    std::int64_t max_len = 78;
    int msd_samples = 5;
    double msd_rate = 0.5;
    std::string msd_average = "logits";  // logits | probs
    // optimization
    int epochs = 8;
    int batch_size = 32;
    std::string schedule = "cosine";  // cosine | step
    double lr_backbone = 3e-4;
    double lr_head = 1e-3;
    double min_lr = 0.0;
    double gamma = 0.2;
    int early_stop_patience = 2;
    // robustness
    bool awp = false;
    double awp_adv_lr = 1e-4;
    int awp_start_step = 0;
    bool ema = false;
    double ema_decay = 0.999;
    // data / bookkeeping
    int min_count = 1;
    int k_folds = 5;
    std::uint64_t seed = 7;

    void validate() const;
    // Canonical `key = value` serialization, fixed key order.
    std::string serialize() const;
    // 16-hex-digit digest of the canonical serialization.
    std::string fingerprint() const;
    // Names of fields whose values differ.
    std::vector<std::string> diff(const TrainConfig& other) const;

    static TrainConfig parse_text(std::string_view text);
    static TrainConfig parse_file(const std::string& path);
};

// Adam with standard defaults; lr supplied per step by the caller.
struct AdamState {
    std::map<std::string, Tensor> m, v;
    std::int64_t t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    static AdamState init(const ParamSet& params);
};

void adam_step(ParamSet& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               const std::function<double(const std::string& group)>& lr_of_group);

struct RunRecord {
    std::vector<double> train_loss;  // per epoch (mean over steps)
    std::vector<double> valid_loss;
    std::vector<double> valid_f1;
    int best_epoch = -1;
    double final_f1 = 0.0;
    std::string config_fingerprint;
    std::uint64_t seed = 0;
    int fold = -1;
};

struct FoldResult {
    ParamSet params;  // best-epoch weights (EMA shadow when EMA is on)
    ModelConfig model_cfg;
    Vocabulary vocab;
    RunRecord record;
    ProbMatrix valid_probs;  // out-of-fold probabilities from the best epoch
};

// One fold: builds the vocabulary from the train split only (the valid split
// stays unseen), trains with Adam + schedule (+ optional AWP/EMA), validates
// once per epoch on micro-F1 with early stopping.
FoldResult train_fold(const std::vector<Example>& train, const std::vector<Example>& valid,
                      const TrainConfig& cfg);

// Evaluation helper: class probabilities of a trained fold on examples.
ProbMatrix predict_probs(const ParamSet& params, const ModelConfig& model_cfg,
                         const Vocabulary& vocab, const std::vector<Example>& examples,
                         int batch_size);

struct FoldRun {
    RunRecord record;
    ProbMatrix probs;
    std::shared_ptr<FoldResult> detail;  // trained weights etc.; null for synthetic runners
};

// Substitutable fold-level runner (tests inject an oracle predictor).
using FoldRunner = std::function<FoldRun(const std::vector<Example>& train,
                                         const std::vector<Example>& valid, const TrainConfig& cfg,
                                         int fold)>;

struct CvResult {
    std::vector<RunRecord> records;
    std::vector<double> fold_f1;
    double fold_mean = 0.0;
    double pooled = 0.0;  // micro-F1 of all out-of-fold predictions pooled
    ProbMatrix oof;       // pooled out-of-fold probabilities, sorted by example id
    std::vector<ProbMatrix> fold_probs;                    // per-fold, provenance stamped
    std::vector<std::shared_ptr<FoldResult>> fold_details;  // null for synthetic runners

    std::string to_text() const;
};

CvResult run_cv(const std::vector<Example>& examples, const FoldPlan& plan, const TrainConfig& cfg,
                const FoldRunner& runner = {});

struct AbResult {
    std::string field;  // the single differing field
    std::vector<std::uint64_t> seeds;
    std::vector<double> control_scores;
    std::vector<double> experiment_scores;
    double control_mean = 0.0;
    double experiment_mean = 0.0;
    double delta = 0.0;

    std::string to_text() const;
};

// Paired cross-validation runs whose configs differ in exactly one field
// (seed excluded); both arms run with identical seeds and the same plan.
AbResult ab_experiment(const TrainConfig& control, const TrainConfig& experiment,
                       const std::vector<Example>& examples, const FoldPlan& plan,
                       const std::vector<std::uint64_t>& seeds = {},
                       const FoldRunner& runner = {});

}  // namespace subkit
