#include "subkit/trainer.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_set>

#include "subkit/metrics.hpp"
#include "subkit/rng.hpp"

namespace subkit {

namespace {

// Single source of truth for the config fields: serialization, parsing and
// diffing all walk this list, so they can never drift apart.
template <class C, class F>
void visit_fields(C& c, F&& f) {
    f("embed_dim", c.embed_dim);
    f("ffn_dim", c.ffn_dim);
    f("lstm_hidden", c.lstm_hidden);
    f("max_len", c.max_len);
    f("msd_samples", c.msd_samples);
    f("msd_rate", c.msd_rate);
    f("msd_average", c.msd_average);
    f("epochs", c.epochs);
    f("batch_size", c.batch_size);
    f("schedule", c.schedule);
    f("lr_backbone", c.lr_backbone);
    f("lr_head", c.lr_head);
    f("min_lr", c.min_lr);
    f("gamma", c.gamma);
    f("early_stop_patience", c.early_stop_patience);
    f("awp", c.awp);
    f("awp_adv_lr", c.awp_adv_lr);
    f("awp_start_step", c.awp_start_step);
    f("ema", c.ema);
    f("ema_decay", c.ema_decay);
    f("min_count", c.min_count);
    f("k_folds", c.k_folds);
    f("seed", c.seed);
}

std::string fmt_value(std::int64_t v) { return std::to_string(v); }
std::string fmt_value(int v) { return std::to_string(v); }
std::string fmt_value(std::uint64_t v) { return std::to_string(v); }
std::string fmt_value(bool v) { return v ? "true" : "false"; }
std::string fmt_value(const std::string& v) { return v; }
std::string fmt_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <class Int>
void parse_int(const std::string& key, const std::string& raw, Int& out) {
    Int v{};
    auto [ptr, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
    if (ec != std::errc{} || ptr != raw.data() + raw.size())
        throw DataError("config: key '" + key + "' expects an integer, got '" + raw + "'");
    out = v;
}

void parse_value(const std::string& key, const std::string& raw, std::int64_t& out) {
    parse_int(key, raw, out);
}
void parse_value(const std::string& key, const std::string& raw, int& out) {
    parse_int(key, raw, out);
}
void parse_value(const std::string& key, const std::string& raw, std::uint64_t& out) {
    parse_int(key, raw, out);
}
void parse_value(const std::string& key, const std::string& raw, double& out) {
    char* end = nullptr;
    const double v = std::strtod(raw.c_str(), &end);
    if (raw.empty() || end != raw.c_str() + raw.size())
        throw DataError("config: key '" + key + "' expects a number, got '" + raw + "'");
    out = v;
}
void parse_value(const std::string& key, const std::string& raw, bool& out) {
    if (raw == "true" || raw == "1") out = true;
    else if (raw == "false" || raw == "0") out = false;
    else throw DataError("config: key '" + key + "' expects true or false, got '" + raw + "'");
}
void parse_value(const std::string&, const std::string& raw, std::string& out) { out = raw; }

std::string trim(std::string s) {
    const auto* ws = " \t\r\n";
    const auto a = s.find_first_not_of(ws);
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(ws);
    return s.substr(a, b - a + 1);
}

std::string hex64(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
    return buf;
}

}  // namespace

void TrainConfig::validate() const {
    if (embed_dim < 1) throw DataError("config: embed_dim must be >= 1");
    if (ffn_dim < 1) throw DataError("config: ffn_dim must be >= 1");
    if (lstm_hidden < 1) throw DataError("config: lstm_hidden must be >= 1");
    if (max_len < 1) throw DataError("config: max_len must be >= 1");
    if (msd_samples < 1) throw DataError("config: msd_samples must be >= 1");
    if (msd_rate < 0.0 || msd_rate >= 1.0) throw DataError("config: msd_rate must be in [0,1)");
    if (msd_average != "logits" && msd_average != "probs")
        throw DataError("config: msd_average must be 'logits' or 'probs'");
    if (epochs < 1) throw DataError("config: epochs must be >= 1");
    if (batch_size < 1) throw DataError("config: batch_size must be >= 1");
    if (schedule != "cosine" && schedule != "step")
        throw DataError("config: schedule must be 'cosine' or 'step'");
    if (lr_backbone <= 0.0) throw DataError("config: lr_backbone must be > 0");
    if (lr_head <= 0.0) throw DataError("config: lr_head must be > 0");
    if (min_lr < 0.0) throw DataError("config: min_lr must be >= 0");
    if (gamma <= 0.0 || gamma > 1.0) throw DataError("config: gamma must be in (0,1]");
    if (early_stop_patience < 0) throw DataError("config: early_stop_patience must be >= 0");
    if (awp && awp_adv_lr < 0.0) throw DataError("config: awp_adv_lr must be >= 0");
    if (awp_start_step < 0) throw DataError("config: awp_start_step must be >= 0");
    if (ema_decay < 0.0 || ema_decay > 1.0) throw DataError("config: ema_decay must be in [0,1]");
    if (min_count < 1) throw DataError("config: min_count must be >= 1");
    if (k_folds < 2) throw DataError("config: k_folds must be >= 2");
}

std::string TrainConfig::serialize() const {
    std::ostringstream out;
    visit_fields(*this, [&](const char* name, const auto& field) {
        out << name << " = " << fmt_value(field) << "\n";
    });
    return out.str();
}

std::string TrainConfig::fingerprint() const { return hex64(fnv1a64(serialize())); }

std::vector<std::string> TrainConfig::diff(const TrainConfig& other) const {
    std::vector<std::pair<std::string, std::string>> a, b;
    visit_fields(*this, [&](const char* name, const auto& field) {
        a.emplace_back(name, fmt_value(field));
    });
    visit_fields(other, [&](const char* name, const auto& field) {
        b.emplace_back(name, fmt_value(field));
    });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].second != b[i].second) out.push_back(a[i].first);
    return out;
}

TrainConfig TrainConfig::parse_text(std::string_view text) {
    TrainConfig cfg;
    std::set<std::string> seen;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError("config: expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw DataError("config: missing key in line '" + line + "'");
        if (!seen.insert(key).second) throw DataError("config: duplicate key '" + key + "'");
        bool matched = false;
        visit_fields(cfg, [&](const char* name, auto& field) {
            if (!matched && key == name) {
                parse_value(key, value, field);
                matched = true;
            }
        });
        if (!matched) throw DataError("config: unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

TrainConfig TrainConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str());
}

AdamState AdamState::init(const ParamSet& params) {
    AdamState s;
    for (const auto& name : ParamSet::names()) {
        const Tensor& w = params.at(name);
        s.m.emplace(name, Tensor::zeros(w.shape));
        s.v.emplace(name, Tensor::zeros(w.shape));
    }
    return s;
}

void adam_step(ParamSet& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               const std::function<double(const std::string& group)>& lr_of_group) {
    ++state.t;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (const auto& name : ParamSet::names()) {
        const auto git = grads.find(name);
        if (git == grads.end()) throw DataError("adam: missing gradient for tensor '" + name + "'");
        Tensor& w = params.at(name);
        const Tensor& g = git->second;
        if (!w.same_shape(g))
            throw DataError("adam: gradient shape mismatch for tensor '" + name + "'");
        Tensor& m = state.m.at(name);
        Tensor& v = state.v.at(name);
        const double lr = lr_of_group(ParamSet::group_of(name));
        for (std::size_t i = 0; i < w.data.size(); ++i) {
            m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * g.data[i];
            v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * g.data[i] * g.data[i];
            w.data[i] -= lr * (m.data[i] / bc1) / (std::sqrt(v.data[i] / bc2) + state.eps);
        }
    }
}

namespace {

ModelConfig model_config_of(const TrainConfig& cfg, std::int64_t vocab_size) {
    ModelConfig m;
    m.vocab_size = vocab_size;
    m.embed_dim = cfg.embed_dim;
    m.ffn_dim = cfg.ffn_dim;
    m.lstm_hidden = cfg.lstm_hidden;
    m.n_classes = 2;
    m.msd_samples = cfg.msd_samples;
    m.msd_rate = cfg.msd_rate;
    m.max_len = cfg.max_len;
    m.validate();
    return m;
}

std::vector<EncodedPair> encode_all(const std::vector<Example>& examples, const Vocabulary& vocab,
                                    std::int64_t max_len) {
    std::vector<EncodedPair> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) {
        auto ep = encode_pair(ex.query, ex.title, vocab, static_cast<int>(max_len));
        ep.label = ex.label;
        out.push_back(std::move(ep));
    }
    return out;
}

struct EvalOut {
    std::vector<std::array<double, 2>> rows;
    std::vector<int> preds;
    double mean_nll = 0.0;
};

EvalOut evaluate(const ParamSet& params, const ModelConfig& mcfg,
                 const std::vector<EncodedPair>& enc, int batch_size) {
    EvalOut out;
    out.rows.reserve(enc.size());
    out.preds.reserve(enc.size());
    double nll = 0.0;
    const std::size_t bs = static_cast<std::size_t>(batch_size);
    for (std::size_t b0 = 0; b0 < enc.size(); b0 += bs) {
        const std::size_t b1 = std::min(enc.size(), b0 + bs);
        std::vector<EncodedPair> chunk(enc.begin() + static_cast<std::ptrdiff_t>(b0),
                                       enc.begin() + static_cast<std::ptrdiff_t>(b1));
        const Tensor logits = forward_logits(params, chunk, mcfg);
        for (std::int64_t i = 0; i < logits.rows(); ++i) {
            const double l0 = logits.at(i, 0), l1 = logits.at(i, 1);
            const double mx = std::max(l0, l1);
            const double e0 = std::exp(l0 - mx), e1 = std::exp(l1 - mx);
            const double z = e0 + e1;
            const std::array<double, 2> p = {e0 / z, e1 / z};
            const int label = chunk[static_cast<std::size_t>(i)].label;
            nll -= std::log(std::max(p[static_cast<std::size_t>(label)], 1e-300));
            out.rows.push_back(p);
            out.preds.push_back(p[1] > p[0] ? 1 : 0);
        }
    }
    out.mean_nll = enc.empty() ? 0.0 : nll / static_cast<double>(enc.size());
    return out;
}

}  // namespace

FoldResult train_fold(const std::vector<Example>& train, const std::vector<Example>& valid,
                      const TrainConfig& cfg) {
    cfg.validate();
    if (train.empty() || valid.empty()) throw DataError("train_fold: empty train or valid split");
    std::unordered_set<std::string> train_queries;
    for (const auto& ex : train) train_queries.insert(ex.query);
    for (const auto& ex : valid)
        if (train_queries.count(ex.query))
            throw DataError("group leakage: query \"" + ex.query +
                            "\" appears in both train and valid splits");

    const Vocabulary vocab = build_vocab(train, cfg.min_count);
    const ModelConfig mcfg = model_config_of(cfg, vocab.size());
    const auto enc_train = encode_all(train, vocab, cfg.max_len);
    const auto enc_valid = encode_all(valid, vocab, cfg.max_len);

    ParamSet params = init_params(mcfg, derive_seed(cfg.seed, "init"));
    AdamState adam = AdamState::init(params);

    const std::int64_t n = static_cast<std::int64_t>(enc_train.size());
    const std::int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    ScheduleConfig sched;
    sched.kind = cfg.schedule == "cosine" ? ScheduleConfig::Kind::kCosine
                                          : ScheduleConfig::Kind::kStep;
    sched.base_lr = {{"backbone", cfg.lr_backbone}, {"head", cfg.lr_head}};
    sched.min_lr = cfg.min_lr;
    sched.gamma = cfg.gamma;
    sched.total_steps = cfg.epochs * steps_per_epoch;
    sched.validate();

    AwpConfig awp_cfg;
    awp_cfg.adv_lr = cfg.awp_adv_lr;
    awp_cfg.start_step = cfg.awp_start_step;

    std::optional<EmaState> ema;
    if (cfg.ema) ema = EmaState::init(params, cfg.ema_decay);

    Rng mask_rng(derive_seed(cfg.seed, "dropout"));

    RunRecord rec;
    rec.config_fingerprint = cfg.fingerprint();
    rec.seed = cfg.seed;

    double best_f1 = -1.0;
    int since_best = 0;
    ParamSet best_params;
    std::vector<std::array<double, 2>> best_rows;
    std::int64_t gstep = 0;

    std::vector<int> valid_labels;
    valid_labels.reserve(valid.size());
    for (const auto& ex : valid) valid_labels.push_back(ex.label);

    for (int e = 0; e < cfg.epochs; ++e) {
        std::vector<std::int64_t> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(e)));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::int64_t n_steps = 0;
        for (std::int64_t b0 = 0; b0 < n; b0 += cfg.batch_size) {
            const std::int64_t b1 = std::min(n, b0 + cfg.batch_size);
            std::vector<EncodedPair> chunk;
            chunk.reserve(static_cast<std::size_t>(b1 - b0));
            for (std::int64_t i = b0; i < b1; ++i)
                chunk.push_back(enc_train[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
            const Batch batch = pack_batch(chunk, mcfg);
            const auto masks = sample_dropout_masks(mcfg, batch.batch, mask_rng);

            double step_loss = 0.0;
            std::map<std::string, Tensor> grads;
            if (cfg.awp && gstep >= cfg.awp_start_step) {
                auto clean = loss_and_grads(params, batch, mcfg, masks, cfg.msd_average);
                step_loss = clean.loss;  // reported loss is pre-perturbation
                const AwpBackup backup = awp_perturb(params, clean.grads, awp_cfg);
                auto adv = loss_and_grads(params, batch, mcfg, masks, cfg.msd_average);
                awp_restore(params, backup);
                grads = std::move(adv.grads);
            } else {
                auto lg = loss_and_grads(params, batch, mcfg, masks, cfg.msd_average);
                step_loss = lg.loss;
                grads = std::move(lg.grads);
            }
            const std::int64_t step_now = gstep;
            adam_step(params, grads, adam,
                      [&](const std::string& group) { return lr_at(sched, group, step_now, e); });
            if (ema) ema_update(*ema, params);
            loss_sum += step_loss;
            ++n_steps;
            ++gstep;
        }
        rec.train_loss.push_back(loss_sum / static_cast<double>(n_steps));

        const ParamSet eval_ps = ema ? ema_params(*ema) : params;
        const EvalOut ev = evaluate(eval_ps, mcfg, enc_valid, cfg.batch_size);
        const double f1 = micro_f1(valid_labels, ev.preds);
        rec.valid_loss.push_back(ev.mean_nll);
        rec.valid_f1.push_back(f1);

        if (f1 > best_f1) {
            best_f1 = f1;
            rec.best_epoch = e;
            best_params = eval_ps;
            best_rows = ev.rows;
            since_best = 0;
        } else if (++since_best == cfg.early_stop_patience) {
            break;  // patience 0 never triggers: since_best is >= 1 here
        }
    }
    rec.final_f1 = best_f1;

    const std::string fp8 = rec.config_fingerprint.substr(0, 8);
    ProbMatrix pm;
    pm.model_id = "m-" + fp8 + "-s" + std::to_string(cfg.seed);
    pm.backbone_tag = "cfg-" + fp8;
    pm.data_tag = "vocab-" + hex64(vocab.fingerprint());
    pm.example_ids.reserve(valid.size());
    for (const auto& ex : valid) pm.example_ids.push_back(ex.id);
    pm.rows = std::move(best_rows);
    pm.validate();

    FoldResult out;
    out.params = std::move(best_params);
    out.model_cfg = mcfg;
    out.vocab = vocab;
    out.record = std::move(rec);
    out.valid_probs = std::move(pm);
    return out;
}

ProbMatrix predict_probs(const ParamSet& params, const ModelConfig& model_cfg,
                         const Vocabulary& vocab, const std::vector<Example>& examples,
                         int batch_size) {
    if (batch_size < 1) throw DataError("predict: batch_size must be >= 1");
    const auto enc = encode_all(examples, vocab, model_cfg.max_len);
    const EvalOut ev = evaluate(params, model_cfg, enc, batch_size);
    ProbMatrix pm;
    pm.model_id = "model";
    pm.example_ids.reserve(examples.size());
    for (const auto& ex : examples) pm.example_ids.push_back(ex.id);
    pm.rows = ev.rows;
    pm.validate();
    return pm;
}

CvResult run_cv(const std::vector<Example>& examples, const FoldPlan& plan, const TrainConfig& cfg,
                const FoldRunner& runner) {
    cfg.validate();
    if (plan.k < 2) throw DataError("run_cv: fold plan must have k >= 2");
    if (examples.empty()) throw DataError("run_cv: no examples");
    for (const auto& ex : examples)
        if (!plan.assignment.count(ex.id))
            throw DataError("run_cv: example " + std::to_string(ex.id) + " missing from fold plan");
    const PlanReport report = verify_plan(plan, examples);
    if (report.leakage) throw DataError("run_cv: fold plan splits a group across folds");

    const FoldRunner run = runner ? runner
                                  : FoldRunner([](const std::vector<Example>& tr,
                                                  const std::vector<Example>& va,
                                                  const TrainConfig& c, int) {
                                        auto detail = std::make_shared<FoldResult>(train_fold(tr, va, c));
                                        return FoldRun{detail->record, detail->valid_probs, detail};
                                    });

    CvResult res;
    std::vector<FoldOutput> fold_outputs;
    std::vector<std::pair<std::int64_t, std::array<double, 2>>> oof;
    oof.reserve(examples.size());

    for (int f = 0; f < plan.k; ++f) {
        std::vector<Example> tr, va;
        for (const auto& ex : examples)
            (plan.assignment.at(ex.id) == f ? va : tr).push_back(ex);
        if (tr.empty() || va.empty())
            throw DataError("run_cv: fold " + std::to_string(f) +
                            " has an empty train or valid split");
        FoldRun fr = run(tr, va, cfg, f);
        if (fr.probs.example_ids.size() != va.size())
            throw DataError("run_cv: fold runner returned misaligned probabilities");
        fr.record.fold = f;
        fr.probs.fold_provenance = "fold " + std::to_string(f) + "/" + std::to_string(plan.k);
        fr.probs.model_id += "-f" + std::to_string(f);

        std::vector<int> labels, preds;
        labels.reserve(va.size());
        preds.reserve(va.size());
        for (std::size_t i = 0; i < va.size(); ++i) {
            if (fr.probs.example_ids[i] != va[i].id)
                throw DataError("run_cv: fold runner returned misaligned probabilities");
            labels.push_back(va[i].label);
            preds.push_back(fr.probs.rows[i][1] > fr.probs.rows[i][0] ? 1 : 0);
            oof.emplace_back(va[i].id, fr.probs.rows[i]);
        }
        fold_outputs.emplace_back(std::move(labels), std::move(preds));
        res.records.push_back(std::move(fr.record));
        res.fold_probs.push_back(std::move(fr.probs));
        res.fold_details.push_back(std::move(fr.detail));
    }

    const CvPool pool = pool_cv(fold_outputs);
    res.fold_f1 = pool.per_fold;
    res.fold_mean = pool.fold_mean;
    res.pooled = pool.pooled;

    std::sort(oof.begin(), oof.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    const std::string fp8 = cfg.fingerprint().substr(0, 8);
    res.oof.model_id = "oof-" + fp8;
    res.oof.backbone_tag = "cfg-" + fp8;
    res.oof.fold_provenance = "oof k=" + std::to_string(plan.k);
    for (const auto& [id, row] : oof) {
        res.oof.example_ids.push_back(id);
        res.oof.rows.push_back(row);
    }
    res.oof.validate();
    return res;
}

std::string CvResult::to_text() const {
    std::ostringstream out;
    char buf[64];
    out << "cross-validation (k=" << fold_f1.size();
    if (!records.empty()) out << ", config " << records.front().config_fingerprint;
    out << ")\n";
    for (std::size_t f = 0; f < fold_f1.size(); ++f) {
        std::snprintf(buf, sizeof buf, "  fold %zu: f1=%.4f", f, fold_f1[f]);
        out << buf << "\n";
    }
    std::snprintf(buf, sizeof buf, "  fold mean: %.4f\n  pooled:    %.4f", fold_mean, pooled);
    out << buf << "\n";
    return out.str();
}

AbResult ab_experiment(const TrainConfig& control, const TrainConfig& experiment,
                       const std::vector<Example>& examples, const FoldPlan& plan,
                       const std::vector<std::uint64_t>& seeds, const FoldRunner& runner) {
    control.validate();
    experiment.validate();
    std::vector<std::string> fields = control.diff(experiment);
    fields.erase(std::remove(fields.begin(), fields.end(), "seed"), fields.end());
    if (fields.empty())
        throw DataError("ab: control and experiment configs show no difference (seed is ignored)");
    if (fields.size() > 1) {
        std::string list;
        for (const auto& f : fields) list += (list.empty() ? "" : ", ") + f;
        throw DataError("ab: configs differ in more than one field: " + list);
    }

    AbResult res;
    res.field = fields.front();
    res.seeds = seeds.empty() ? std::vector<std::uint64_t>{control.seed} : seeds;
    for (const auto s : res.seeds) {
        TrainConfig c = control;
        TrainConfig x = experiment;
        c.seed = s;
        x.seed = s;  // paired runs: both arms share every seed
        res.control_scores.push_back(run_cv(examples, plan, c, runner).pooled);
        res.experiment_scores.push_back(run_cv(examples, plan, x, runner).pooled);
    }
    const auto mean = [](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    res.control_mean = mean(res.control_scores);
    res.experiment_mean = mean(res.experiment_scores);
    res.delta = res.experiment_mean - res.control_mean;
    return res;
}

std::string AbResult::to_text() const {
    std::ostringstream out;
    char buf[128];
    out << "a/b experiment on field '" << field << "'\n";
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        std::snprintf(buf, sizeof buf, "  seed %" PRIu64 ": control=%.4f experiment=%.4f delta=%+.4f",
                      seeds[i], control_scores[i], experiment_scores[i],
                      experiment_scores[i] - control_scores[i]);
        out << buf << "\n";
    }
    std::snprintf(buf, sizeof buf, "  mean:  control=%.4f experiment=%.4f delta=%+.4f",
                  control_mean, experiment_mean, delta);
    out << buf << "\n";
    return out.str();
}

}  // namespace subkit
