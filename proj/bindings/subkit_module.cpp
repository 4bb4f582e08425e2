#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "subkit/common.hpp"
#include "subkit/corpus.hpp"
#include "subkit/ensemble.hpp"
#include "subkit/halfprec.hpp"
#include "subkit/manifest.hpp"
#include "subkit/metrics.hpp"
#include "subkit/splitter.hpp"
#include "subkit/trainer.hpp"

namespace py = pybind11;
using namespace subkit;

PYBIND11_MODULE(_core, m) {
    m.doc() = "C++ core: synthetic corpus, grouped CV splits, robustness training, "
              "ensembling and binary16 emulation";

    const auto base = py::register_exception<Error>(m, "SubkitError");
    py::register_exception<DataError>(m, "DataError", base.ptr());
    py::register_exception<UsageError>(m, "UsageError", base.ptr());

    // ----------------------------------------------------------------- corpus
    py::class_<Example>(m, "Example")
        .def(py::init<>())
        .def_readwrite("id", &Example::id)
        .def_readwrite("query", &Example::query)
        .def_readwrite("title", &Example::title)
        .def_readwrite("locale", &Example::locale)
        .def_readwrite("label", &Example::label)
        .def("__repr__", [](const Example& e) {
            return "<Example id=" + std::to_string(e.id) + " label=" + std::to_string(e.label) +
                   " query='" + e.query + "'>";
        });

    py::class_<SynthSpec>(m, "SynthSpec")
        .def(py::init<>())
        .def_readwrite("n_queries", &SynthSpec::n_queries)
        .def_readwrite("items_per_query", &SynthSpec::items_per_query)
        .def_readwrite("attr_pool_size", &SynthSpec::attr_pool_size)
        .def_readwrite("head_pool_size", &SynthSpec::head_pool_size)
        .def_readwrite("noise_pool_size", &SynthSpec::noise_pool_size)
        .def_readwrite("positive_ratio_target", &SynthSpec::positive_ratio_target)
        .def_readwrite("seed", &SynthSpec::seed);

    py::class_<Vocabulary>(m, "Vocabulary")
        .def("size", &Vocabulary::size)
        .def("fingerprint", &Vocabulary::fingerprint)
        .def("id_of", &Vocabulary::id_of)
        .def("token_of", &Vocabulary::token_of)
        .def("save", &Vocabulary::save)
        .def_static("load", &Vocabulary::load);

    m.def("clean_title", &clean_title, py::arg("raw"),
          "Strip non-letter/digit characters, collapse spaces, trim.");
    m.def("clean_tokens", &clean_tokens, py::arg("text"), "Lowercased whitespace tokens.");
    m.def("generate_synthetic", &generate_synthetic, py::arg("spec") = SynthSpec{});
    m.def("synthetic_label_oracle", &synthetic_label_oracle, py::arg("example"));
    m.def("build_vocab", &build_vocab, py::arg("examples"), py::arg("min_count") = 1);
    m.def("load_csv", &load_csv, py::arg("path"));
    m.def("save_csv", &save_csv, py::arg("path"), py::arg("examples"));

    // --------------------------------------------------------------- splitter
    py::class_<FoldPlan>(m, "FoldPlan")
        .def_readonly("k", &FoldPlan::k)
        .def_readonly("assignment", &FoldPlan::assignment)
        .def("save", &FoldPlan::save)
        .def_static("load", &FoldPlan::load, py::arg("path"), py::arg("k_hint") = 0);

    py::class_<PlanReport>(m, "PlanReport")
        .def_readonly("k", &PlanReport::k)
        .def_readonly("fold_sizes", &PlanReport::fold_sizes)
        .def_readonly("fold_positive_ratio", &PlanReport::fold_positive_ratio)
        .def_readonly("global_positive_ratio", &PlanReport::global_positive_ratio)
        .def_readonly("leakage", &PlanReport::leakage)
        .def("to_text", &PlanReport::to_text);

    m.def(
        "assign_folds",
        [](const std::vector<Example>& examples, int k, std::uint64_t seed) {
            return assign_folds(examples, query_group_key, k, seed);
        },
        py::arg("examples"), py::arg("k"), py::arg("seed"),
        "Stratified grouped fold assignment; groups are exact query strings.");
    m.def("verify_plan", &verify_plan, py::arg("plan"), py::arg("examples"));

    // ---------------------------------------------------------------- metrics
    m.def("micro_f1", &micro_f1, py::arg("labels"), py::arg("preds"));

    // ---------------------------------------------------------------- trainer
    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("embed_dim", &TrainConfig::embed_dim)
        .def_readwrite("ffn_dim", &TrainConfig::ffn_dim)
        .def_readwrite("lstm_hidden", &TrainConfig::lstm_hidden)
        .def_readwrite("max_len", &TrainConfig::max_len)
        .def_readwrite("msd_samples", &TrainConfig::msd_samples)
        .def_readwrite("msd_rate", &TrainConfig::msd_rate)
        .def_readwrite("msd_average", &TrainConfig::msd_average)
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("schedule", &TrainConfig::schedule)
        .def_readwrite("lr_backbone", &TrainConfig::lr_backbone)
        .def_readwrite("lr_head", &TrainConfig::lr_head)
        .def_readwrite("min_lr", &TrainConfig::min_lr)
        .def_readwrite("gamma", &TrainConfig::gamma)
        .def_readwrite("early_stop_patience", &TrainConfig::early_stop_patience)
        .def_readwrite("awp", &TrainConfig::awp)
        .def_readwrite("awp_adv_lr", &TrainConfig::awp_adv_lr)
        .def_readwrite("awp_start_step", &TrainConfig::awp_start_step)
        .def_readwrite("ema", &TrainConfig::ema)
        .def_readwrite("ema_decay", &TrainConfig::ema_decay)
        .def_readwrite("min_count", &TrainConfig::min_count)
        .def_readwrite("k_folds", &TrainConfig::k_folds)
        .def_readwrite("seed", &TrainConfig::seed)
        .def("validate", &TrainConfig::validate)
        .def("serialize", &TrainConfig::serialize)
        .def("fingerprint", &TrainConfig::fingerprint)
        .def("diff", &TrainConfig::diff, py::arg("other"))
        .def_static("parse_text", &TrainConfig::parse_text, py::arg("text"))
        .def_static("parse_file", &TrainConfig::parse_file, py::arg("path"));

    py::class_<RunRecord>(m, "RunRecord")
        .def_readonly("train_loss", &RunRecord::train_loss)
        .def_readonly("valid_loss", &RunRecord::valid_loss)
        .def_readonly("valid_f1", &RunRecord::valid_f1)
        .def_readonly("best_epoch", &RunRecord::best_epoch)
        .def_readonly("final_f1", &RunRecord::final_f1)
        .def_readonly("config_fingerprint", &RunRecord::config_fingerprint)
        .def_readonly("seed", &RunRecord::seed)
        .def_readonly("fold", &RunRecord::fold);

    py::class_<CvResult>(m, "CvResult")
        .def_readonly("records", &CvResult::records)
        .def_readonly("fold_f1", &CvResult::fold_f1)
        .def_readonly("fold_mean", &CvResult::fold_mean)
        .def_readonly("pooled", &CvResult::pooled)
        .def_readonly("oof", &CvResult::oof)
        .def("to_text", &CvResult::to_text);

    py::class_<AbResult>(m, "AbResult")
        .def_readonly("field", &AbResult::field)
        .def_readonly("seeds", &AbResult::seeds)
        .def_readonly("control_scores", &AbResult::control_scores)
        .def_readonly("experiment_scores", &AbResult::experiment_scores)
        .def_readonly("control_mean", &AbResult::control_mean)
        .def_readonly("experiment_mean", &AbResult::experiment_mean)
        .def_readonly("delta", &AbResult::delta)
        .def("to_text", &AbResult::to_text);

    m.def(
        "run_cv",
        [](const std::vector<Example>& examples, const FoldPlan& plan, const TrainConfig& cfg) {
            return run_cv(examples, plan, cfg);
        },
        py::arg("examples"), py::arg("plan"), py::arg("config"),
        "Train every fold of the plan and pool the out-of-fold predictions.");
    m.def(
        "ab_experiment",
        [](const TrainConfig& control, const TrainConfig& experiment,
           const std::vector<Example>& examples, const FoldPlan& plan,
           const std::vector<std::uint64_t>& seeds) {
            return ab_experiment(control, experiment, examples, plan, seeds);
        },
        py::arg("control"), py::arg("experiment"), py::arg("examples"), py::arg("plan"),
        py::arg("seeds") = std::vector<std::uint64_t>{},
        "Paired CV runs; the configs must differ in exactly one field besides the seed.");

    // --------------------------------------------------------------- ensemble
    py::class_<SelectionStep>(m, "SelectionStep")
        .def_readonly("step", &SelectionStep::step)
        .def_readonly("candidate_scores", &SelectionStep::candidate_scores)
        .def_readonly("chosen", &SelectionStep::chosen)
        .def_readonly("reason", &SelectionStep::reason)
        .def_readonly("score", &SelectionStep::score);

    py::class_<ProbMatrix>(m, "ProbMatrix")
        .def(py::init<>())
        .def_readwrite("model_id", &ProbMatrix::model_id)
        .def_readwrite("backbone_tag", &ProbMatrix::backbone_tag)
        .def_readwrite("data_tag", &ProbMatrix::data_tag)
        .def_readwrite("fold_provenance", &ProbMatrix::fold_provenance)
        .def_readwrite("example_ids", &ProbMatrix::example_ids)
        .def_readwrite("rows", &ProbMatrix::rows)
        .def("validate", &ProbMatrix::validate)
        .def("argmax", &ProbMatrix::argmax)
        .def("save", &ProbMatrix::save)
        .def_static("load", &ProbMatrix::load);

    py::class_<EnsembleSpec>(m, "EnsembleSpec")
        .def_readonly("members", &EnsembleSpec::members)
        .def_readonly("log", &EnsembleSpec::log)
        .def_readonly("final_score", &EnsembleSpec::final_score)
        .def("to_text", &EnsembleSpec::to_text);

    m.def("soft_vote", &soft_vote, py::arg("members"));
    m.def("greedy_select", &greedy_select, py::arg("candidates"), py::arg("labels"),
          py::arg("max_size"));

    // --------------------------------------------------------------- halfprec
    m.def("round_binary16", py::vectorize(&round_binary16), py::arg("x"),
          "Round to the nearest binary16 value (returned as float64); numpy-aware.");
    m.def("f16_bits", &f16_bits, py::arg("x"));
    m.def("f16_value", &f16_value, py::arg("bits"));

    // --------------------------------------------------------------- manifest
    py::class_<RunManifest>(m, "RunManifest")
        .def(py::init<>())
        .def_readwrite("tool_version", &RunManifest::tool_version)
        .def_readwrite("config_path", &RunManifest::config_path)
        .def_readwrite("config_hash", &RunManifest::config_hash)
        .def_readwrite("dataset_path", &RunManifest::dataset_path)
        .def_readwrite("dataset_hash", &RunManifest::dataset_hash)
        .def_readwrite("plan_path", &RunManifest::plan_path)
        .def_readwrite("plan_hash", &RunManifest::plan_hash)
        .def_readwrite("seeds", &RunManifest::seeds)
        .def_readwrite("output_dir", &RunManifest::output_dir)
        .def("save", &RunManifest::save)
        .def("verify_hashes", &RunManifest::verify_hashes)
        .def("diff", &RunManifest::diff)
        .def_static("load", &RunManifest::load);
    m.def("file_hash_hex", &file_hash_hex, py::arg("path"));
}
