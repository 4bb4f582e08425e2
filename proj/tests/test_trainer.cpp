#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "subkit/common.hpp"
#include "subkit/corpus.hpp"
#include "subkit/model.hpp"
#include "subkit/rng.hpp"
#include "subkit/splitter.hpp"
#include "subkit/tape.hpp"
#include "subkit/trainer.hpp"

using namespace subkit;

namespace {

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.embed_dim = 16;
    cfg.ffn_dim = 24;
    cfg.lstm_hidden = 16;
    cfg.max_len = 24;
    cfg.msd_samples = 3;
    cfg.msd_rate = 0.3;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.min_count = 1;
    cfg.k_folds = 4;
    cfg.seed = 11;
    return cfg;
}

std::vector<Example> tiny_corpus(int n_queries = 60, std::uint64_t seed = 5) {
    SynthSpec spec;
    spec.n_queries = n_queries;
    spec.items_per_query = 4;
    spec.attr_pool_size = 40;
    spec.head_pool_size = 20;
    spec.noise_pool_size = 20;
    spec.seed = seed;
    return generate_synthetic(spec);
}

// Splits by query: queries hashed into valid with probability ~1/k.
void split_by_query(const std::vector<Example>& all, std::vector<Example>& train,
                    std::vector<Example>& valid, int k = 4) {
    for (const auto& ex : all) {
        if (fnv1a64(ex.query) % static_cast<std::uint64_t>(k) == 0) valid.push_back(ex);
        else train.push_back(ex);
    }
}

FoldRunner oracle_runner() {
    return [](const std::vector<Example>&, const std::vector<Example>& va, const TrainConfig&,
              int) {
        FoldRun fr;
        fr.probs.model_id = "oracle";
        for (const auto& ex : va) {
            fr.probs.example_ids.push_back(ex.id);
            fr.probs.rows.push_back(ex.label == 1 ? std::array<double, 2>{0.1, 0.9}
                                                  : std::array<double, 2>{0.9, 0.1});
        }
        return fr;
    };
}

}  // namespace

TEST_CASE("adam single step matches the closed form") {
    ModelConfig mcfg;
    mcfg.vocab_size = 8;
    mcfg.embed_dim = 4;
    mcfg.ffn_dim = 4;
    mcfg.lstm_hidden = 4;
    ParamSet params = init_params(mcfg, 1);
    ParamSet before = params;
    AdamState state = AdamState::init(params);

    std::map<std::string, Tensor> grads;
    for (const auto& name : ParamSet::names()) grads.emplace(name, Tensor::zeros(params.at(name).shape));
    for (auto& x : grads.at("cls_w").data) x = 1.0;

    adam_step(params, grads, state, [](const std::string&) { return 1e-3; });
    CHECK(state.t == 1);

    // g=1 from a fresh state: mhat=1, vhat=1, so the update is -lr/(1+eps).
    for (std::size_t i = 0; i < params.at("cls_w").data.size(); ++i) {
        const double delta = params.at("cls_w").data[i] - before.at("cls_w").data[i];
        CHECK(std::abs(delta - (-1e-3)) < 1e-9);
    }
    // tensors with zero gradient are untouched bit-for-bit
    for (const auto& name : ParamSet::names()) {
        if (name == "cls_w") continue;
        CHECK(params.at(name).data == before.at(name).data);
    }
}

TEST_CASE("adam with all-zero gradients is a no-op from a fresh state") {
    ModelConfig mcfg;
    mcfg.vocab_size = 8;
    mcfg.embed_dim = 4;
    mcfg.ffn_dim = 4;
    mcfg.lstm_hidden = 4;
    ParamSet params = init_params(mcfg, 1);
    const ParamSet before = params;
    AdamState state = AdamState::init(params);
    std::map<std::string, Tensor> grads;
    for (const auto& name : ParamSet::names()) grads.emplace(name, Tensor::zeros(params.at(name).shape));
    adam_step(params, grads, state, [](const std::string&) { return 1e-3; });
    CHECK(params.same_values(before));
}

TEST_CASE("adam rejects missing gradients") {
    ModelConfig mcfg;
    mcfg.vocab_size = 8;
    mcfg.embed_dim = 4;
    mcfg.ffn_dim = 4;
    mcfg.lstm_hidden = 4;
    ParamSet params = init_params(mcfg, 1);
    AdamState state = AdamState::init(params);
    std::map<std::string, Tensor> grads;  // empty
    CHECK_THROWS_WITH_AS(
        adam_step(params, grads, state, [](const std::string&) { return 1e-3; }),
        "adam: missing gradient for tensor 'embedding'", DataError);
}

TEST_CASE("config serialize/parse round trip") {
    TrainConfig cfg;
    cfg.awp = true;
    cfg.awp_adv_lr = 5e-3;
    cfg.msd_average = "probs";
    cfg.lr_backbone = 0.00030000000000000003;  // survives %.17g
    cfg.seed = 1234567890123456789ULL;
    const TrainConfig back = TrainConfig::parse_text(cfg.serialize());
    CHECK(cfg.diff(back).empty());
    CHECK(cfg.fingerprint() == back.fingerprint());
}

TEST_CASE("config parse accepts comments and blank lines") {
    const auto cfg = TrainConfig::parse_text(
        "# experiment arm\n"
        "\n"
        "epochs = 3   # short run\n"
        "awp = true\n"
        "schedule = step\n");
    CHECK(cfg.epochs == 3);
    CHECK(cfg.awp);
    CHECK(cfg.schedule == "step");
    CHECK(cfg.batch_size == 32);  // untouched default
}

TEST_CASE("config parse rejects unknown keys, duplicates and bad values") {
    CHECK_THROWS_WITH_AS(TrainConfig::parse_text("ema_deacy = 0.9\n"),
                         "config: unknown key 'ema_deacy'", DataError);
    CHECK_THROWS_WITH_AS(TrainConfig::parse_text("epochs = 3\nepochs = 4\n"),
                         "config: duplicate key 'epochs'", DataError);
    CHECK_THROWS_WITH_AS(TrainConfig::parse_text("epochs = abc\n"),
                         "config: key 'epochs' expects an integer, got 'abc'", DataError);
    CHECK_THROWS_WITH_AS(TrainConfig::parse_text("awp = maybe\n"),
                         "config: key 'awp' expects true or false, got 'maybe'", DataError);
    CHECK_THROWS_WITH_AS(TrainConfig::parse_text("msd_rate = fast\n"),
                         "config: key 'msd_rate' expects a number, got 'fast'", DataError);
    CHECK_THROWS_AS(TrainConfig::parse_text("just some words\n"), DataError);
}

TEST_CASE("config validation names the offending field") {
    TrainConfig cfg;
    cfg.msd_average = "median";
    CHECK_THROWS_WITH_AS(cfg.validate(), "config: msd_average must be 'logits' or 'probs'",
                         DataError);
    cfg = TrainConfig{};
    cfg.k_folds = 1;
    CHECK_THROWS_WITH_AS(cfg.validate(), "config: k_folds must be >= 2", DataError);
    cfg = TrainConfig{};
    cfg.gamma = 0.0;
    CHECK_THROWS_AS(cfg.validate(), DataError);
    cfg = TrainConfig{};
    cfg.awp = true;
    cfg.awp_adv_lr = -1e-4;
    CHECK_THROWS_AS(cfg.validate(), DataError);
}

TEST_CASE("config diff lists exactly the differing fields in canonical order") {
    TrainConfig a, b;
    CHECK(a.diff(b).empty());
    b.awp = true;
    b.epochs = 12;
    b.seed = 99;
    const auto d = a.diff(b);
    REQUIRE(d.size() == 3);
    CHECK(d[0] == "epochs");
    CHECK(d[1] == "awp");
    CHECK(d[2] == "seed");
    CHECK(a.fingerprint() != b.fingerprint());
}

TEST_CASE("train_fold rejects query leakage between splits") {
    const auto all = tiny_corpus(20);
    std::vector<Example> train(all.begin(), all.end() - 4);
    std::vector<Example> valid(all.end() - 8, all.end());  // overlaps train by one query
    TrainConfig cfg = tiny_config();
    cfg.epochs = 1;
    CHECK_THROWS_AS(train_fold(train, valid, cfg), DataError);
    try {
        train_fold(train, valid, cfg);
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("group leakage") != std::string::npos);
    }
    CHECK_THROWS_AS(train_fold({}, valid, cfg), DataError);
}

TEST_CASE("train_fold is deterministic for a fixed config and seed") {
    const auto all = tiny_corpus(40);
    std::vector<Example> train, valid;
    split_by_query(all, train, valid);
    const TrainConfig cfg = tiny_config();

    const FoldResult a = train_fold(train, valid, cfg);
    const FoldResult b = train_fold(train, valid, cfg);
    CHECK(a.record.train_loss == b.record.train_loss);
    CHECK(a.record.valid_loss == b.record.valid_loss);
    CHECK(a.record.valid_f1 == b.record.valid_f1);
    CHECK(a.record.best_epoch == b.record.best_epoch);
    CHECK(a.params.same_values(b.params));
    CHECK(a.valid_probs.rows == b.valid_probs.rows);

    REQUIRE(a.record.train_loss.size() >= 1);
    CHECK(a.record.valid_f1.size() == a.record.train_loss.size());
    CHECK(a.record.best_epoch >= 0);
    CHECK(a.record.final_f1 == *std::max_element(a.record.valid_f1.begin(), a.record.valid_f1.end()));
    CHECK(a.valid_probs.example_ids.size() == valid.size());
    CHECK(a.record.config_fingerprint == cfg.fingerprint());

    // a different seed changes the trajectory
    TrainConfig other = cfg;
    other.seed = 12;
    const FoldResult c = train_fold(train, valid, other);
    CHECK(c.record.train_loss != a.record.train_loss);
}

TEST_CASE("train_fold learns the synthetic rule") {
    const auto all = tiny_corpus(80, 21);
    std::vector<Example> train, valid;
    split_by_query(all, train, valid);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 4;
    cfg.early_stop_patience = 0;  // run every epoch
    const FoldResult res = train_fold(train, valid, cfg);
    REQUIRE(res.record.train_loss.size() == 4);
    CHECK(res.record.train_loss[3] < res.record.train_loss[0]);

    // better than always predicting the majority class
    std::int64_t pos = 0;
    for (const auto& ex : valid) pos += ex.label;
    const double majority =
        std::max(static_cast<double>(pos), static_cast<double>(valid.size() - pos)) /
        static_cast<double>(valid.size());
    CHECK(res.record.final_f1 > majority - 0.05);  // at least competitive on a tiny run
}

TEST_CASE("probs-mode loss gradients agree with finite differences") {
    const auto all = tiny_corpus(10);
    std::vector<Example> train, valid;
    split_by_query(all, train, valid);
    const Vocabulary vocab = build_vocab(train, 1);
    ModelConfig mcfg;
    mcfg.vocab_size = vocab.size();
    mcfg.embed_dim = 8;
    mcfg.ffn_dim = 12;
    mcfg.lstm_hidden = 8;
    mcfg.msd_samples = 2;
    mcfg.msd_rate = 0.5;
    mcfg.max_len = 24;
    ParamSet params = init_params(mcfg, 3);

    std::vector<EncodedPair> enc;
    for (std::size_t i = 0; i < 4 && i < train.size(); ++i) {
        auto ep = encode_pair(train[i].query, train[i].title, vocab, static_cast<int>(mcfg.max_len));
        ep.label = train[i].label;
        enc.push_back(std::move(ep));
    }
    const Batch batch = pack_batch(enc, mcfg);
    Rng mask_rng(17);
    const auto masks = sample_dropout_masks(mcfg, batch.batch, mask_rng);

    const LossGrads lg = loss_and_grads(params, batch, mcfg, masks, "probs");
    CHECK(lg.loss > 0.0);
    std::vector<Tensor*> weights;
    std::vector<const Tensor*> analytic;
    for (const auto& name : ParamSet::names()) {
        weights.push_back(&params.at(name));
        analytic.push_back(&lg.grads.at(name));
    }
    const auto f = [&]() { return loss_and_grads(params, batch, mcfg, masks, "probs").loss; };
    const double err = finite_diff_check(f, weights, analytic, 1e-4, 40, 77);
    CHECK(err < 1e-4);

    CHECK_THROWS_AS(loss_and_grads(params, batch, mcfg, masks, "median"), DataError);
}

TEST_CASE("run_cv with an oracle runner pools to a perfect score") {
    const auto all = tiny_corpus(40);
    const FoldPlan plan = assign_folds(all, query_group_key, 4, 9);
    const TrainConfig cfg = tiny_config();
    const CvResult res = run_cv(all, plan, cfg, oracle_runner());

    REQUIRE(res.records.size() == 4);
    REQUIRE(res.fold_f1.size() == 4);
    for (const double f1 : res.fold_f1) CHECK(f1 == doctest::Approx(1.0));
    CHECK(res.fold_mean == doctest::Approx(1.0));
    CHECK(res.pooled == doctest::Approx(1.0));
    for (int f = 0; f < 4; ++f) CHECK(res.records[static_cast<std::size_t>(f)].fold == f);

    // out-of-fold matrix covers every example exactly once, sorted by id
    REQUIRE(res.oof.example_ids.size() == all.size());
    CHECK(std::is_sorted(res.oof.example_ids.begin(), res.oof.example_ids.end()));
    std::set<std::int64_t> ids(res.oof.example_ids.begin(), res.oof.example_ids.end());
    CHECK(ids.size() == all.size());

    const std::string text = res.to_text();
    CHECK(text.find("fold 0: f1=1.0000") != std::string::npos);
    CHECK(text.find("pooled:    1.0000") != std::string::npos);
}

TEST_CASE("run_cv end to end on a tiny real run") {
    const auto all = tiny_corpus(32);
    const FoldPlan plan = assign_folds(all, query_group_key, 4, 9);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 1;
    const CvResult res = run_cv(all, plan, cfg);
    REQUIRE(res.records.size() == 4);
    CHECK(res.pooled >= 0.0);
    CHECK(res.pooled <= 1.0);
    CHECK(res.oof.example_ids.size() == all.size());
    for (const auto& rec : res.records) CHECK(rec.train_loss.size() == 1);
    // provenance stamped per fold
    CHECK(res.records[2].fold == 2);
}

TEST_CASE("run_cv validates plan coverage and leakage") {
    const auto all = tiny_corpus(20);
    FoldPlan plan = assign_folds(all, query_group_key, 4, 9);
    const TrainConfig cfg = tiny_config();

    FoldPlan missing = plan;
    missing.assignment.erase(all.back().id);
    CHECK_THROWS_AS(run_cv(all, missing, cfg, oracle_runner()), DataError);

    FoldPlan leaky = plan;
    // force two items of one query into different folds
    const auto& q = all.front().query;
    bool moved = false;
    for (const auto& ex : all) {
        if (ex.query == q && !moved) {
            leaky.assignment[ex.id] = (leaky.assignment[ex.id] + 1) % 4;
            moved = true;
        }
    }
    CHECK_THROWS_AS(run_cv(all, leaky, cfg, oracle_runner()), DataError);

    FoldPlan k1 = plan;
    k1.k = 1;
    CHECK_THROWS_AS(run_cv(all, k1, cfg, oracle_runner()), DataError);
}

TEST_CASE("ab_experiment enforces the single-field discipline") {
    const auto all = tiny_corpus(20);
    const FoldPlan plan = assign_folds(all, query_group_key, 4, 9);
    const TrainConfig control = tiny_config();

    CHECK_THROWS_WITH_AS(ab_experiment(control, control, all, plan, {}, oracle_runner()),
                         "ab: control and experiment configs show no difference (seed is ignored)",
                         DataError);

    TrainConfig seed_only = control;
    seed_only.seed = 123;
    CHECK_THROWS_AS(ab_experiment(control, seed_only, all, plan, {}, oracle_runner()), DataError);

    TrainConfig two = control;
    two.awp = true;
    two.epochs = 5;
    CHECK_THROWS_WITH_AS(ab_experiment(control, two, all, plan, {}, oracle_runner()),
                         "ab: configs differ in more than one field: epochs, awp", DataError);
}

TEST_CASE("ab_experiment pairs seeds across both arms") {
    const auto all = tiny_corpus(24);
    const FoldPlan plan = assign_folds(all, query_group_key, 4, 9);
    TrainConfig control = tiny_config();
    TrainConfig experiment = control;
    experiment.awp = true;

    // the runner scores the experiment arm perfectly and flips one row for control
    FoldRunner runner = [](const std::vector<Example>&, const std::vector<Example>& va,
                           const TrainConfig& cfg, int) {
        FoldRun fr;
        fr.probs.model_id = "probe";
        for (std::size_t i = 0; i < va.size(); ++i) {
            int lab = va[i].label;
            if (!cfg.awp && i == 0) lab = 1 - lab;
            fr.probs.example_ids.push_back(va[i].id);
            fr.probs.rows.push_back(lab == 1 ? std::array<double, 2>{0.2, 0.8}
                                             : std::array<double, 2>{0.8, 0.2});
        }
        return fr;
    };

    const std::vector<std::uint64_t> seeds = {3, 4, 5};
    const AbResult res = ab_experiment(control, experiment, all, plan, seeds, runner);
    CHECK(res.field == "awp");
    CHECK(res.seeds == seeds);
    REQUIRE(res.control_scores.size() == 3);
    REQUIRE(res.experiment_scores.size() == 3);
    for (const double s : res.experiment_scores) CHECK(s == doctest::Approx(1.0));
    for (const double s : res.control_scores) CHECK(s < 1.0);
    CHECK(res.delta > 0.0);
    CHECK(res.to_text().find("delta=+") != std::string::npos);
    CHECK(res.to_text().find("field 'awp'") != std::string::npos);
}
