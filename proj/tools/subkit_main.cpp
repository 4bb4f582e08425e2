#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "subkit/common.hpp"
#include "subkit/corpus.hpp"
#include "subkit/ensemble.hpp"
#include "subkit/halfprec.hpp"
#include "subkit/manifest.hpp"
#include "subkit/metrics.hpp"
#include "subkit/model.hpp"
#include "subkit/rng.hpp"
#include "subkit/splitter.hpp"
#include "subkit/trainer.hpp"

namespace {

using namespace subkit;

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << content;
}

std::string ensure_dir(const std::string& dir) {
    std::filesystem::create_directories(dir);
    return dir;
}

// Builds the manifest for this invocation, reconciles it against any manifest
// already present in the output directory (a resumed run must see the same
// inputs), and writes it.
void commit_manifest(const std::string& out_dir, RunManifest m) {
    m.tool_version = SUBKIT_VERSION;
    m.output_dir = out_dir;
    if (!m.config_path.empty()) m.config_hash = file_hash_hex(m.config_path);
    if (!m.dataset_path.empty()) m.dataset_hash = file_hash_hex(m.dataset_path);
    if (!m.plan_path.empty()) m.plan_hash = file_hash_hex(m.plan_path);
    const std::string path = out_dir + "/manifest.json";
    if (std::filesystem::exists(path)) {
        const auto prior = RunManifest::load(path);
        const auto fields = prior.diff(m);
        if (!fields.empty()) {
            std::string joined;
            for (const auto& f : fields) {
                if (!joined.empty()) joined += ", ";
                joined += f;
            }
            throw DataError("manifest mismatch in '" + out_dir + "': " + joined);
        }
    }
    m.save(path);
}

std::string run_record_text(const RunRecord& rec) {
    std::ostringstream out;
    out << "fold = " << rec.fold << "\n";
    out << "seed = " << rec.seed << "\n";
    out << "config_fingerprint = " << rec.config_fingerprint << "\n";
    out << "best_epoch = " << rec.best_epoch << "\n";
    out << "final_f1 = " << fmt_double(rec.final_f1) << "\n";
    const auto series = [&out](const char* name, const std::vector<double>& xs) {
        out << name << " =";
        for (double x : xs) out << ' ' << fmt_double(x);
        out << "\n";
    };
    series("train_loss", rec.train_loss);
    series("valid_loss", rec.valid_loss);
    series("valid_f1", rec.valid_f1);
    return out.str();
}

std::string technique_name(const std::string& explicit_name, const std::string& config_path) {
    if (!explicit_name.empty()) return explicit_name;
    if (config_path.empty()) return "default";
    return std::filesystem::path(config_path).stem().string();
}

TrainConfig load_config(const std::string& path) {
    return path.empty() ? TrainConfig{} : TrainConfig::parse_file(path);
}

// Train/valid split of the dataset against a saved fold plan.
std::pair<std::vector<Example>, std::vector<Example>> split_fold(const std::vector<Example>& examples,
                                                                 const FoldPlan& plan, int fold) {
    std::pair<std::vector<Example>, std::vector<Example>> out;
    for (const auto& ex : examples) {
        const auto it = plan.assignment.find(ex.id);
        if (it == plan.assignment.end())
            throw DataError("fold plan does not cover example id " + std::to_string(ex.id));
        (it->second == fold ? out.second : out.first).push_back(ex);
    }
    return out;
}

std::map<std::string, std::string> read_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

std::string kv_need(const std::map<std::string, std::string>& kv, const std::string& key,
                    const std::string& path) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw DataError("'" + path + "' is missing key '" + key + "'");
    return it->second;
}

std::array<double, 2> softmax2(double a, double b) {
    const double m = std::max(a, b);
    const double ea = std::exp(a - m);
    const double eb = std::exp(b - m);
    return {ea / (ea + eb), eb / (ea + eb)};
}

void register_gen(CLI::App& app) {
    auto* cmd = app.add_subcommand("gen", "Generate a synthetic query-item dataset as CSV");
    auto spec = std::make_shared<SynthSpec>();
    auto out = std::make_shared<std::string>();
    cmd->add_option("--queries", spec->n_queries, "Number of distinct queries (groups)")
        ->default_val(spec->n_queries);
    cmd->add_option("--items", spec->items_per_query, "Items per query")->default_val(spec->items_per_query);
    cmd->add_option("--attr-pool", spec->attr_pool_size, "Attribute token pool size")
        ->default_val(spec->attr_pool_size);
    cmd->add_option("--head-pool", spec->head_pool_size, "Head-noun token pool size")
        ->default_val(spec->head_pool_size);
    cmd->add_option("--noise-pool", spec->noise_pool_size, "Noise token pool size")
        ->default_val(spec->noise_pool_size);
    cmd->add_option("--positive-ratio", spec->positive_ratio_target, "Target share of label-1 rows")
        ->default_val(spec->positive_ratio_target);
    cmd->add_option("--seed", spec->seed, "RNG seed")->default_val(spec->seed);
    cmd->add_option("--out", *out, "Output CSV path")->required();
    cmd->callback([spec, out] {
        const auto examples = generate_synthetic(*spec);
        save_csv(*out, examples);
        std::int64_t pos = 0;
        for (const auto& ex : examples) pos += ex.label;
        std::printf("wrote %zu examples (%lld positive) to %s\n", examples.size(),
                    static_cast<long long>(pos), out->c_str());
    });
}

void register_split(CLI::App& app) {
    auto* cmd = app.add_subcommand("split", "Assign examples to stratified group folds");
    auto data = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto k = std::make_shared<int>(5);
    auto seed = std::make_shared<std::uint64_t>(7);
    cmd->add_option("--data", *data, "Input dataset CSV")->required();
    cmd->add_option("--k", *k, "Number of folds")->default_val(5);
    cmd->add_option("--seed", *seed, "RNG seed")->default_val(7);
    cmd->add_option("--out", *out, "Output fold-plan CSV")->required();
    cmd->callback([data, out, k, seed] {
        const auto examples = load_csv(*data);
        const auto plan = assign_folds(examples, query_group_key, *k, *seed);
        plan.save(*out);
        const auto report = verify_plan(plan, examples);
        std::fputs(report.to_text().c_str(), stdout);
        if (report.leakage) throw DataError("fold plan has group leakage");
    });
}

void register_train(CLI::App& app) {
    auto* cmd = app.add_subcommand("train", "Train a single fold and save its checkpoint");
    auto config = std::make_shared<std::string>();
    auto data = std::make_shared<std::string>();
    auto plan_path = std::make_shared<std::string>();
    auto fold = std::make_shared<int>(0);
    auto out = std::make_shared<std::string>();
    cmd->add_option("--config", *config, "Training config file (defaults apply when omitted)");
    cmd->add_option("--data", *data, "Dataset CSV")->required();
    cmd->add_option("--plan", *plan_path, "Fold-plan CSV from 'split'")->required();
    cmd->add_option("--fold", *fold, "Validation fold index")->default_val(0);
    cmd->add_option("--out", *out, "Output directory")->required();
    cmd->callback([config, data, plan_path, fold, out] {
        const TrainConfig cfg = load_config(*config);
        const auto examples = load_csv(*data);
        const auto plan = FoldPlan::load(*plan_path);
        if (*fold < 0 || *fold >= plan.k)
            throw UsageError("--fold must be in [0, " + std::to_string(plan.k) + ")");
        ensure_dir(*out);
        RunManifest m;
        m.config_path = *config;
        m.dataset_path = *data;
        m.plan_path = *plan_path;
        m.seeds = {cfg.seed};
        commit_manifest(*out, m);
        auto [tr, va] = split_fold(examples, plan, *fold);
        auto res = train_fold(tr, va, cfg);
        res.record.fold = *fold;
        res.valid_probs.model_id += "-f" + std::to_string(*fold);
        res.valid_probs.fold_provenance =
            "fold " + std::to_string(*fold) + "/" + std::to_string(plan.k);
        write_text_file(*out + "/config.cfg", cfg.serialize());
        save_checkpoint(*out + "/checkpoint.txt", res.params, res.model_cfg, res.vocab.fingerprint());
        res.vocab.save(*out + "/vocab.txt");
        res.valid_probs.save(*out + "/probs.csv");
        write_text_file(*out + "/record.txt", run_record_text(res.record));
        std::printf("fold %d: best_epoch=%d f1=%.4f (%zu train / %zu valid examples)\n", *fold,
                    res.record.best_epoch, res.record.final_f1, tr.size(), va.size());
        std::printf("outputs in %s\n", out->c_str());
    });
}

void register_cv(CLI::App& app) {
    auto* cmd = app.add_subcommand("cv", "Cross-validate: train every fold, pool OOF predictions");
    auto config = std::make_shared<std::string>();
    auto data = std::make_shared<std::string>();
    auto plan_path = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto name = std::make_shared<std::string>();
    cmd->add_option("--config", *config, "Training config file (defaults apply when omitted)");
    cmd->add_option("--data", *data, "Dataset CSV")->required();
    cmd->add_option("--plan", *plan_path, "Fold-plan CSV from 'split'")->required();
    cmd->add_option("--out", *out, "Output directory")->required();
    cmd->add_option("--name", *name, "Technique label for 'report' (default: config file stem)");
    cmd->callback([config, data, plan_path, out, name] {
        const TrainConfig cfg = load_config(*config);
        const auto examples = load_csv(*data);
        const auto plan = FoldPlan::load(*plan_path);
        ensure_dir(*out);
        RunManifest m;
        m.config_path = *config;
        m.dataset_path = *data;
        m.plan_path = *plan_path;
        m.seeds = {cfg.seed};
        commit_manifest(*out, m);
        const auto res = run_cv(examples, plan, cfg);
        write_text_file(*out + "/config.cfg", cfg.serialize());
        write_text_file(*out + "/report.txt", res.to_text());
        res.oof.save(*out + "/oof.csv");
        std::string records;
        for (const auto& rec : res.records) {
            if (!records.empty()) records += "\n";
            records += run_record_text(rec);
        }
        write_text_file(*out + "/records.txt", records);
        for (std::size_t f = 0; f < res.fold_details.size(); ++f) {
            const auto& detail = res.fold_details[f];
            if (!detail) continue;  // injected runners carry no weights
            const std::string dir = ensure_dir(*out + "/fold_" + std::to_string(f));
            save_checkpoint(dir + "/checkpoint.txt", detail->params, detail->model_cfg,
                            detail->vocab.fingerprint());
            detail->vocab.save(dir + "/vocab.txt");
            res.fold_probs[f].save(dir + "/probs.csv");
        }
        std::ostringstream kv;
        kv << "technique = " << technique_name(*name, *config) << "\n";
        kv << "pooled_f1 = " << fmt_double(res.pooled) << "\n";
        kv << "fold_mean_f1 = " << fmt_double(res.fold_mean) << "\n";
        kv << "k = " << plan.k << "\n";
        kv << "seed = " << cfg.seed << "\n";
        kv << "config_fingerprint = " << cfg.fingerprint() << "\n";
        write_text_file(*out + "/result.kv", kv.str());
        std::fputs(res.to_text().c_str(), stdout);
        std::printf("outputs in %s\n", out->c_str());
    });
}

void register_ab(CLI::App& app) {
    auto* cmd = app.add_subcommand("ab", "Paired A/B experiment over seeds; configs must differ in one field");
    auto control = std::make_shared<std::string>();
    auto experiment = std::make_shared<std::string>();
    auto data = std::make_shared<std::string>();
    auto plan_path = std::make_shared<std::string>();
    auto seeds = std::make_shared<std::vector<std::uint64_t>>();
    auto out = std::make_shared<std::string>();
    cmd->add_option("--control", *control, "Control config file")->required();
    cmd->add_option("--experiment", *experiment, "Experiment config file")->required();
    cmd->add_option("--data", *data, "Dataset CSV")->required();
    cmd->add_option("--plan", *plan_path, "Fold-plan CSV from 'split'")->required();
    cmd->add_option("--seeds", *seeds, "Seeds to pair over (default: the control seed)")->expected(-1);
    cmd->add_option("--out", *out, "Output directory")->required();
    cmd->callback([control, experiment, data, plan_path, seeds, out] {
        const auto control_cfg = TrainConfig::parse_file(*control);
        const auto experiment_cfg = TrainConfig::parse_file(*experiment);
        const auto examples = load_csv(*data);
        const auto plan = FoldPlan::load(*plan_path);
        ensure_dir(*out);
        RunManifest m;
        m.config_path = *control;
        m.dataset_path = *data;
        m.plan_path = *plan_path;
        m.seeds = seeds->empty() ? std::vector<std::uint64_t>{control_cfg.seed} : *seeds;
        commit_manifest(*out, m);
        const auto res = ab_experiment(control_cfg, experiment_cfg, examples, plan, *seeds);
        write_text_file(*out + "/control.cfg", control_cfg.serialize());
        write_text_file(*out + "/experiment.cfg", experiment_cfg.serialize());
        write_text_file(*out + "/ab.txt", res.to_text());
        std::ostringstream kv;
        kv << "field = " << res.field << "\n";
        kv << "control_mean = " << fmt_double(res.control_mean) << "\n";
        kv << "experiment_mean = " << fmt_double(res.experiment_mean) << "\n";
        kv << "delta = " << fmt_double(res.delta) << "\n";
        write_text_file(*out + "/result.kv", kv.str());
        std::fputs(res.to_text().c_str(), stdout);
        std::printf("outputs in %s\n", out->c_str());
    });
}

void register_ensemble(CLI::App& app) {
    auto* cmd = app.add_subcommand("ensemble", "Greedy soft-voting ensemble over saved probability matrices");
    auto probs = std::make_shared<std::vector<std::string>>();
    auto data = std::make_shared<std::string>();
    auto max_size = std::make_shared<int>(0);
    auto name = std::make_shared<std::string>("ensemble");
    auto out = std::make_shared<std::string>();
    cmd->add_option("--probs", *probs, "Candidate probability CSVs (each with a .meta sidecar)")
        ->required()
        ->expected(-1);
    cmd->add_option("--data", *data, "Dataset CSV holding the reference labels")->required();
    cmd->add_option("--max-size", *max_size, "Member cap, 0 = no cap")->default_val(0);
    cmd->add_option("--name", *name, "Technique label for 'report'")->default_val("ensemble");
    cmd->add_option("--out", *out, "Output directory")->required();
    cmd->callback([probs, data, max_size, name, out] {
        std::vector<ProbMatrix> candidates;
        candidates.reserve(probs->size());
        for (const auto& path : *probs) candidates.push_back(ProbMatrix::load(path));
        for (const auto& c : candidates)
            if (c.example_ids != candidates.front().example_ids)
                throw DataError("candidate \"" + c.model_id + "\" is not row-aligned with \"" +
                                candidates.front().model_id + "\" (example ids differ)");
        const auto examples = load_csv(*data);
        std::map<std::int64_t, int> label_of;
        for (const auto& ex : examples) label_of[ex.id] = ex.label;
        std::vector<int> labels;
        labels.reserve(candidates.front().example_ids.size());
        for (const auto id : candidates.front().example_ids) {
            const auto it = label_of.find(id);
            if (it == label_of.end())
                throw DataError("dataset has no label for example id " + std::to_string(id));
            labels.push_back(it->second);
        }
        const int cap = *max_size > 0 ? *max_size : static_cast<int>(candidates.size());
        const auto spec = greedy_select(candidates, labels, cap);
        std::vector<ProbMatrix> selected;
        for (const auto& id : spec.members)
            for (const auto& c : candidates)
                if (c.model_id == id) {
                    selected.push_back(c);
                    break;
                }
        const auto preds = soft_vote(selected);
        ensure_dir(*out);
        RunManifest m;
        m.dataset_path = *data;
        commit_manifest(*out, m);
        write_text_file(*out + "/selection.txt", spec.to_text());
        std::ostringstream csv;
        csv << "example_id,pred\n";
        for (std::size_t i = 0; i < preds.size(); ++i)
            csv << candidates.front().example_ids[i] << ',' << preds[i] << "\n";
        write_text_file(*out + "/predictions.csv", csv.str());
        std::ostringstream kv;
        kv << "technique = " << *name << "\n";
        kv << "pooled_f1 = " << fmt_double(spec.final_score) << "\n";
        kv << "n_members = " << spec.members.size() << "\n";
        std::string joined;
        for (const auto& id : spec.members) {
            if (!joined.empty()) joined += ' ';
            joined += id;
        }
        kv << "members = " << joined << "\n";
        write_text_file(*out + "/result.kv", kv.str());
        std::fputs(spec.to_text().c_str(), stdout);
        std::printf("outputs in %s\n", out->c_str());
    });
}

void register_infer(CLI::App& app) {
    auto* cmd = app.add_subcommand("infer", "Predict with a saved checkpoint");
    auto ckpt = std::make_shared<std::string>();
    auto vocab_path = std::make_shared<std::string>();
    auto data = std::make_shared<std::string>();
    auto precision = std::make_shared<std::string>("full");
    auto batch = std::make_shared<int>(64);
    auto out = std::make_shared<std::string>();
    cmd->add_option("--checkpoint", *ckpt, "Checkpoint file from 'train' or 'cv'")->required();
    cmd->add_option("--vocab", *vocab_path, "Vocabulary file saved next to the checkpoint")->required();
    cmd->add_option("--data", *data, "Dataset CSV to predict on")->required();
    cmd->add_option("--precision", *precision, "'full' or 'half' (emulated binary16)")
        ->default_val("full");
    cmd->add_option("--batch", *batch, "Batch size")->default_val(64);
    cmd->add_option("--out", *out, "Output predictions CSV")->required();
    cmd->callback([ckpt, vocab_path, data, precision, batch, out] {
        if (*precision != "full" && *precision != "half")
            throw UsageError("--precision must be 'full' or 'half'");
        if (*batch < 1) throw UsageError("--batch must be >= 1");
        const auto ck = load_checkpoint(*ckpt);
        const auto vocab = Vocabulary::load(*vocab_path);
        if (vocab.fingerprint() != ck.vocab_fingerprint)
            throw DataError("vocabulary does not match checkpoint (fingerprint mismatch)");
        const auto examples = load_csv(*data);
        std::ostringstream csv;
        csv << "example_id,p0,p1,pred\n";
        std::vector<int> labels;
        std::vector<int> preds;
        for (std::size_t start = 0; start < examples.size(); start += static_cast<std::size_t>(*batch)) {
            const std::size_t stop = std::min(examples.size(), start + static_cast<std::size_t>(*batch));
            std::vector<EncodedPair> enc;
            enc.reserve(stop - start);
            for (std::size_t i = start; i < stop; ++i)
                enc.push_back(encode_pair(examples[i].query, examples[i].title, vocab, ck.cfg.max_len));
            const Tensor logits = *precision == "half" ? forward_f16(ck.params, enc, ck.cfg)
                                                       : forward_logits(ck.params, enc, ck.cfg);
            for (std::size_t i = start; i < stop; ++i) {
                const std::size_t r = i - start;
                const auto p = softmax2(logits.data[2 * r], logits.data[2 * r + 1]);
                const int pred = p[1] > p[0] ? 1 : 0;
                csv << examples[i].id << ',' << fmt_double(p[0]) << ',' << fmt_double(p[1]) << ','
                    << pred << "\n";
                labels.push_back(examples[i].label);
                preds.push_back(pred);
            }
        }
        write_text_file(*out, csv.str());
        std::printf("wrote %zu predictions to %s (micro_f1 vs dataset labels: %.4f)\n", preds.size(),
                    out->c_str(), micro_f1(labels, preds));
    });
}

void register_bench(CLI::App& app) {
    auto* cmd = app.add_subcommand("bench", "Inference latency: full vs emulated binary16 precision");
    auto ckpt = std::make_shared<std::string>();
    auto vocab_size = std::make_shared<std::int64_t>(500);
    auto n_examples = std::make_shared<int>(256);
    auto batch = std::make_shared<int>(32);
    auto lengths = std::make_shared<std::vector<std::int64_t>>();
    auto repeats = std::make_shared<int>(5);
    auto seed = std::make_shared<std::uint64_t>(7);
    auto out = std::make_shared<std::string>();
    cmd->add_option("--checkpoint", *ckpt, "Optional checkpoint; fresh random weights when omitted");
    cmd->add_option("--vocab-size", *vocab_size, "Vocabulary size for fresh weights")->default_val(500);
    cmd->add_option("--examples", *n_examples, "Examples per timed pass")->default_val(256);
    cmd->add_option("--batch", *batch, "Batch size")->default_val(32);
    cmd->add_option("--lengths", *lengths, "Sequence lengths to time (default: 78 256)")->expected(-1);
    cmd->add_option("--repeats", *repeats, "Timed repeats per cell (median reported)")->default_val(5);
    cmd->add_option("--seed", *seed, "RNG seed for weights and token draws")->default_val(7);
    cmd->add_option("--out", *out, "Optional output CSV");
    cmd->callback([ckpt, vocab_size, n_examples, batch, lengths, repeats, seed, out] {
        ModelConfig cfg;
        ParamSet params;
        if (!ckpt->empty()) {
            auto ck = load_checkpoint(*ckpt);
            cfg = ck.cfg;
            params = std::move(ck.params);
        } else {
            cfg.vocab_size = *vocab_size;
            params = init_params(cfg, derive_seed(*seed, "init"));
        }
        const std::vector<std::int64_t> lens =
            lengths->empty() ? std::vector<std::int64_t>{78, 256} : *lengths;
        const auto report = bench_table(params, cfg, *n_examples, *batch, lens, *repeats, *seed);
        std::fputs(report.to_text().c_str(), stdout);
        if (!out->empty()) report.save_csv(*out);
    });
}

void register_report(CLI::App& app) {
    auto* cmd = app.add_subcommand("report", "Tabulate runs: technique, CV score, gain over the first run");
    auto runs = std::make_shared<std::vector<std::string>>();
    auto out = std::make_shared<std::string>();
    cmd->add_option("--runs", *runs, "Run directories (first one is the control)")
        ->required()
        ->expected(-1);
    cmd->add_option("--out", *out, "Optional output file");
    cmd->callback([runs, out] {
        struct Row {
            std::string technique;
            double score = 0.0;
        };
        std::vector<Row> rows;
        rows.reserve(runs->size());
        for (const auto& dir : *runs) {
            const std::string path = dir + "/result.kv";
            const auto kv = read_kv_file(path);
            rows.push_back({kv_need(kv, "technique", path),
                            std::strtod(kv_need(kv, "pooled_f1", path).c_str(), nullptr)});
        }
        std::ostringstream table;
        table << "Technique                     CV Score   Relative Gain\n";
        for (std::size_t i = 0; i < rows.size(); ++i) {
            char line[96];
            if (i == 0) {
                std::snprintf(line, sizeof line, "%-28s %8.4f %15s\n", rows[i].technique.c_str(),
                              rows[i].score, "--");
            } else {
                char gain[24];
                std::snprintf(gain, sizeof gain, "%+.4f", rows[i].score - rows[0].score);
                std::snprintf(line, sizeof line, "%-28s %8.4f %15s\n", rows[i].technique.c_str(),
                              rows[i].score, gain);
            }
            table << line;
        }
        std::fputs(table.str().c_str(), stdout);
        if (!out->empty()) write_text_file(*out, table.str());
    });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"subkit: substitute-classification training toolkit"};
    app.set_version_flag("--version", std::string(SUBKIT_VERSION));
    app.require_subcommand(1);
    register_gen(app);
    register_split(app);
    register_train(app);
    register_cv(app);
    register_ab(app);
    register_ensemble(app);
    register_infer(app);
    register_bench(app);
    register_report(app);
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const subkit::UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const subkit::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
