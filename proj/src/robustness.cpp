#include "subkit/robustness.hpp"

#include <cmath>

#include "subkit/common.hpp"

namespace subkit {

void AwpConfig::validate() const {
    if (adv_lr < 0.0) throw DataError("awp: adv_lr must be >= 0");
    if (eps <= 0.0) throw DataError("awp: eps must be > 0");
    if (start_step < 0) throw DataError("awp: start_step must be >= 0");
}

namespace {

double l2_norm(const Tensor& t) {
    double s = 0.0;
    for (auto x : t.data) s += x * x;
    return std::sqrt(s);
}

bool group_selected(const AwpConfig& cfg, const std::string& name) {
    return cfg.groups.empty() || cfg.groups.count(ParamSet::group_of(name)) > 0;
}

}  // namespace

AwpBackup awp_perturb(ParamSet& params, const std::map<std::string, Tensor>& grads,
                      const AwpConfig& cfg) {
    cfg.validate();
    AwpBackup backup;
    if (cfg.adv_lr == 0.0) return backup;  // explicit no-op (keeps -0.0 weights bit-intact)
    for (const auto& name : ParamSet::names()) {
        if (!group_selected(cfg, name)) continue;
        auto git = grads.find(name);
        if (git == grads.end())
            throw DataError("awp: missing gradient for tensor \"" + name + "\"");
        Tensor& w = params.at(name);
        const Tensor& g = git->second;
        if (!w.same_shape(g))
            throw DataError("awp: gradient shape " + g.shape_str() + " does not match \"" + name +
                            "\" " + w.shape_str());
        const double gn = l2_norm(g);
        if (gn == 0.0) continue;
        const double coef = cfg.adv_lr * l2_norm(w) / (gn + cfg.eps);
        backup.emplace(name, w);
        for (std::size_t i = 0; i < w.data.size(); ++i) w.data[i] += coef * g.data[i];
    }
    return backup;
}

void awp_restore(ParamSet& params, const AwpBackup& backup) {
    for (const auto& [name, original] : backup) {
        Tensor& w = params.at(name);
        if (!w.same_shape(original))
            throw DataError("awp: backup shape " + original.shape_str() + " does not match \"" +
                            name + "\" " + w.shape_str());
        w = original;
    }
}

EmaState EmaState::init(const ParamSet& params, double decay) {
    if (decay < 0.0 || decay > 1.0) throw DataError("ema: decay must be in [0,1]");
    EmaState s;
    s.decay = decay;
    s.shadow = params.tensors;
    return s;
}

void ema_update(EmaState& state, const ParamSet& params) {
    if (state.shadow.size() != params.tensors.size())
        throw DataError("ema: shadow does not cover the parameter set");
    for (auto& [name, sh] : state.shadow) {
        const Tensor& w = params.at(name);
        if (!sh.same_shape(w))
            throw DataError("ema: shadow shape " + sh.shape_str() + " does not match \"" + name +
                            "\" " + w.shape_str());
        for (std::size_t i = 0; i < sh.data.size(); ++i)
            sh.data[i] = state.decay * sh.data[i] + (1.0 - state.decay) * w.data[i];
    }
    state.n_updates += 1;
}

ParamSet ema_params(const EmaState& state) {
    ParamSet p;
    p.tensors = state.shadow;
    return p;
}

void ScheduleConfig::validate() const {
    if (gamma <= 0.0 || gamma > 1.0) throw DataError("schedule: gamma must be in (0,1]");
    if (min_lr < 0.0) throw DataError("schedule: min_lr must be >= 0");
    if (kind == Kind::kCosine && total_steps < 1)
        throw DataError("schedule: cosine needs total_steps >= 1");
    for (const auto& [group, lr] : base_lr)
        if (lr <= 0.0) throw DataError("schedule: base_lr for group \"" + group + "\" must be > 0");
}

double lr_at(const ScheduleConfig& sched, const std::string& group, std::int64_t step,
             std::int64_t epoch) {
    sched.validate();
    if (step < 0) throw DataError("schedule: step must be >= 0");
    auto it = sched.base_lr.find(group);
    if (it == sched.base_lr.end()) throw DataError("schedule: unknown group \"" + group + "\"");
    const double base = it->second;
    if (sched.kind == ScheduleConfig::Kind::kStep)
        return base * std::pow(sched.gamma, static_cast<double>(epoch));
    if (step >= sched.total_steps) return sched.min_lr;
    const double frac = static_cast<double>(step) / static_cast<double>(sched.total_steps);
    return sched.min_lr + 0.5 * (base - sched.min_lr) * (1.0 + std::cos(M_PI * frac));
}

}  // namespace subkit
