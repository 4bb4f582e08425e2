#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

#include "subkit/model.hpp"
#include "subkit/tensor.hpp"

namespace subkit {

// Adversarial weight perturbation: a single ascent step in weight space,
// per-tensor scaled by the weight norm, taken before the real gradient
// computation. delta = adv_lr * ||w||_2 * g / (||g||_2 + eps).
struct AwpConfig {
    double adv_lr = 1e-4;  // 0 disables: perturb becomes a bit-exact no-op
    double eps = 1e-12;
    int start_step = 0;
    std::set<std::string> groups;  // group names to perturb; empty = all

    void validate() const;
};

// Exact copies of the perturbed tensors, for bit-level restore.
using AwpBackup = std::map<std::string, Tensor>;

// Perturbs the selected tensors in place and returns their originals.
// Tensors with zero gradient norm are left untouched (and not backed up).
AwpBackup awp_perturb(ParamSet& params, const std::map<std::string, Tensor>& grads,
                      const AwpConfig& cfg);

// Restores every backed-up tensor bit-exactly.
void awp_restore(ParamSet& params, const AwpBackup& backup);

// Exponential moving average of weights, updated once per optimizer step;
// evaluation and checkpoints read the shadow.
struct EmaState {
    std::map<std::string, Tensor> shadow;
    double decay = 0.999;
    std::int64_t n_updates = 0;

    static EmaState init(const ParamSet& params, double decay);
};

// shadow <- decay * shadow + (1 - decay) * w
void ema_update(EmaState& state, const ParamSet& params);

// Shadow tensors repackaged as a ParamSet for evaluation.
ParamSet ema_params(const EmaState& state);

// Per-group learning-rate schedules. Cosine anneals over total_steps; step
// decays by gamma once per epoch.
struct ScheduleConfig {
    enum class Kind { kCosine, kStep };
    Kind kind = Kind::kCosine;
    std::map<std::string, double> base_lr = {{"backbone", 3e-4}, {"head", 1e-3}};
    double min_lr = 0.0;            // cosine floor
    double gamma = 0.2;             // step decay factor
    std::int64_t total_steps = 1;   // cosine horizon T

    void validate() const;
};

double lr_at(const ScheduleConfig& sched, const std::string& group, std::int64_t step,
             std::int64_t epoch);

}  // namespace subkit
