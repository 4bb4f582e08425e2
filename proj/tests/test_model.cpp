#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "subkit/common.hpp"
#include "subkit/corpus.hpp"
#include "subkit/model.hpp"
#include "subkit/rng.hpp"

using namespace subkit;

namespace {

struct Fixture {
    SynthSpec spec;
    std::vector<Example> examples;
    Vocabulary vocab;
    ModelConfig cfg;

    explicit Fixture(int n_queries = 30, std::int64_t max_len = 16) {
        spec.n_queries = n_queries;
        spec.items_per_query = 4;
        spec.attr_pool_size = 20;
        spec.head_pool_size = 10;
        spec.noise_pool_size = 12;
        spec.seed = 11;
        examples = generate_synthetic(spec);
        vocab = build_vocab(examples, 1);
        cfg.vocab_size = vocab.size();
        cfg.embed_dim = 16;
        cfg.ffn_dim = 24;
        cfg.lstm_hidden = 12;
        cfg.msd_samples = 3;
        cfg.msd_rate = 0.5;
        cfg.max_len = max_len;
    }

    EncodedPair encode(const Example& ex) const {
        auto pair = encode_pair(ex.query, ex.title, vocab, static_cast<int>(cfg.max_len));
        pair.label = ex.label;
        return pair;
    }

    std::vector<EncodedPair> encode_n(std::size_t n) const {
        std::vector<EncodedPair> out;
        for (std::size_t i = 0; i < n; ++i) out.push_back(encode(examples[i]));
        return out;
    }
};

std::vector<Tensor> ones_masks(const ModelConfig& cfg, std::int64_t batch) {
    return std::vector<Tensor>(static_cast<std::size_t>(cfg.msd_samples),
                               Tensor::full({batch, cfg.lstm_hidden}, 1.0));
}

}  // namespace

TEST_CASE("init_params: shapes, determinism, stated initial values") {
    ModelConfig cfg;
    cfg.vocab_size = 40;
    auto p1 = init_params(cfg, 7);
    auto p2 = init_params(cfg, 7);
    auto p3 = init_params(cfg, 8);
    CHECK(p1.same_values(p2));
    CHECK_FALSE(p1.same_values(p3));

    CHECK(p1.at("embedding").shape == std::vector<std::int64_t>{40, 32});
    CHECK(p1.at("lstm_w").shape == std::vector<std::int64_t>{32 + 32, 128});
    CHECK(p1.at("cls_w").shape == std::vector<std::int64_t>{32, 2});

    // uniform bound s = sqrt(6/(fan_in+fan_out))
    const double s = std::sqrt(6.0 / (40 + 32));
    for (auto x : p1.at("embedding").data) CHECK(std::abs(x) <= s);

    for (auto x : p1.at("ln1_gain").data) CHECK(x == 1.0);
    for (auto x : p1.at("ln2_shift").data) CHECK(x == 0.0);
    for (auto x : p1.at("ffn_b1").data) CHECK(x == 0.0);
    for (auto x : p1.at("cls_b").data) CHECK(x == 0.0);
    // forget-gate slice [H, 2H) of the LSTM bias is 1, everything else 0
    const auto& lb = p1.at("lstm_b").data;
    for (std::int64_t h = 0; h < 128; ++h) CHECK(lb[static_cast<std::size_t>(h)] == (h >= 32 && h < 64 ? 1.0 : 0.0));

    CHECK(ParamSet::group_of("embedding") == "backbone");
    CHECK(ParamSet::group_of("ffn_w1") == "backbone");
    CHECK(ParamSet::group_of("lstm_w") == "head");
    CHECK(ParamSet::group_of("cls_b") == "head");
    CHECK_THROWS_AS(ParamSet::group_of("nope"), DataError);
}

TEST_CASE("config validation") {
    ModelConfig cfg;
    CHECK_THROWS_AS(cfg.validate(), DataError);  // vocab_size unset
    cfg.vocab_size = 10;
    CHECK_NOTHROW(cfg.validate());
    cfg.msd_rate = 1.0;
    CHECK_THROWS_AS(cfg.validate(), DataError);
    cfg.msd_rate = 0.5;
    cfg.msd_samples = 0;
    CHECK_THROWS_AS(cfg.validate(), DataError);
}

TEST_CASE("logit shapes and batch trimming") {
    Fixture fx;
    auto params = init_params(fx.cfg, 7);
    auto batch = fx.encode_n(4);
    auto logits = forward_logits(params, batch, fx.cfg);
    CHECK(logits.shape == std::vector<std::int64_t>{4, 2});

    auto packed = pack_batch(batch, fx.cfg);
    CHECK(packed.batch == 4);
    CHECK(packed.len <= fx.cfg.max_len);
    // trimming drops only all-PAD columns: at least one mask bit in the last kept column
    bool any_last = false;
    for (std::int64_t b = 0; b < packed.batch; ++b)
        any_last = any_last || packed.mask[static_cast<std::size_t>(b * packed.len + packed.len - 1)];
    CHECK(any_last);
}

TEST_CASE("train mode with p=0 and all-ones masks equals eval mode bit-exactly") {
    Fixture fx;
    fx.cfg.msd_rate = 0.0;
    auto params = init_params(fx.cfg, 3);
    auto examples = fx.encode_n(5);
    auto batch = pack_batch(examples, fx.cfg);
    auto masks = ones_masks(fx.cfg, batch.batch);

    Tape t_train, t_eval;
    auto train_refs = forward_on_tape(t_train, params, batch, fx.cfg, Mode::kTrain, &masks);
    auto eval_refs = forward_on_tape(t_eval, params, batch, fx.cfg, Mode::kEval, nullptr);
    CHECK(t_train.val(train_refs.logits).data == t_eval.val(eval_refs.logits).data);
}

TEST_CASE("eval forward is deterministic across repeated passes") {
    Fixture fx;
    auto params = init_params(fx.cfg, 5);
    auto examples = fx.encode_n(6);
    auto a = forward_logits(params, examples, fx.cfg);
    auto b = forward_logits(params, examples, fx.cfg);
    CHECK(a.data == b.data);
}

TEST_CASE("zeroed classifier forces uniform logits and ln 2 loss") {
    Fixture fx;
    auto params = init_params(fx.cfg, 7);
    for (auto& x : params.at("cls_w").data) x = 0.0;
    for (auto& x : params.at("cls_b").data) x = 0.0;
    auto examples = fx.encode_n(8);
    auto batch = pack_batch(examples, fx.cfg);
    auto lg = loss_and_grads(params, batch, fx.cfg, ones_masks(fx.cfg, batch.batch));
    CHECK(lg.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("permuting a batch permutes logits rows and keeps the loss") {
    Fixture fx;
    auto params = init_params(fx.cfg, 9);
    auto examples = fx.encode_n(6);
    std::vector<EncodedPair> permuted{examples[4], examples[0], examples[5],
                                      examples[2], examples[1], examples[3]};
    const std::vector<int> perm{4, 0, 5, 2, 1, 3};

    auto a = forward_logits(params, examples, fx.cfg);
    auto b = forward_logits(params, permuted, fx.cfg);
    for (std::int64_t r = 0; r < 6; ++r)
        for (std::int64_t c = 0; c < 2; ++c)
            CHECK(b.at(r, c) == doctest::Approx(a.at(perm[static_cast<std::size_t>(r)], c)).epsilon(1e-12));

    auto batch_a = pack_batch(examples, fx.cfg);
    auto batch_b = pack_batch(permuted, fx.cfg);
    auto la = loss_and_grads(params, batch_a, fx.cfg, ones_masks(fx.cfg, 6)).loss;
    auto lb = loss_and_grads(params, batch_b, fx.cfg, ones_masks(fx.cfg, 6)).loss;
    CHECK(la == doctest::Approx(lb).epsilon(1e-12));
}

TEST_CASE("PAD positions beyond the real tokens never change logits") {
    Fixture fx;
    auto params = init_params(fx.cfg, 13);
    // examples[0] alone trims to its own effective length; adding a longer
    // second example lengthens the packed batch with extra PAD for row 0
    auto effective = [](const EncodedPair& p) {
        std::size_t n = 0;
        for (std::size_t i = 0; i < p.mask.size(); ++i)
            if (p.mask[i]) n = i + 1;
        return n;
    };
    auto ex0 = fx.encode(fx.examples[0]);
    EncodedPair longer;
    for (std::size_t i = 1; i < fx.examples.size(); ++i) {
        longer = fx.encode(fx.examples[i]);
        if (effective(longer) > effective(ex0)) break;
    }
    REQUIRE(effective(longer) > effective(ex0));

    auto solo = forward_logits(params, {ex0}, fx.cfg);
    auto padded = forward_logits(params, {ex0, longer}, fx.cfg);
    CHECK(solo.at(0, 0) == padded.at(0, 0));
    CHECK(solo.at(0, 1) == padded.at(0, 1));
}

TEST_CASE("batch gradient is the mean of per-example gradients") {
    Fixture fx;
    fx.cfg.msd_rate = 0.0;
    auto params = init_params(fx.cfg, 17);
    auto a = fx.encode(fx.examples[0]);
    auto b = fx.encode(fx.examples[7]);

    auto grads_of = [&](std::vector<EncodedPair> xs) {
        auto batch = pack_batch(xs, fx.cfg);
        return loss_and_grads(params, batch, fx.cfg, ones_masks(fx.cfg, batch.batch));
    };
    auto ga = grads_of({a});
    auto gb = grads_of({b});
    auto gab = grads_of({a, b});
    auto gaa = grads_of({a, a});

    for (const auto& name : ParamSet::names()) {
        const auto& m = gab.grads.at(name);
        const auto& x = ga.grads.at(name);
        const auto& y = gb.grads.at(name);
        for (std::size_t i = 0; i < m.data.size(); ++i)
            CHECK(m.data[i] == doctest::Approx(0.5 * (x.data[i] + y.data[i])).epsilon(1e-12));
        // a duplicated example contributes twice the half-weight: mean equals batch-of-1
        const auto& d = gaa.grads.at(name);
        for (std::size_t i = 0; i < d.data.size(); ++i)
            CHECK(d.data[i] == doctest::Approx(x.data[i]).epsilon(1e-12));
    }
    CHECK(gab.loss == doctest::Approx(0.5 * (ga.loss + gb.loss)).epsilon(1e-12));
}

TEST_CASE("full-model gradients match finite differences") {
    Fixture fx;
    auto params = init_params(fx.cfg, 7);
    auto examples = fx.encode_n(4);
    auto batch = pack_batch(examples, fx.cfg);
    Rng mask_rng(21);
    auto masks = sample_dropout_masks(fx.cfg, batch.batch, mask_rng);  // frozen for the check

    auto lg = loss_and_grads(params, batch, fx.cfg, masks);
    CHECK(std::isfinite(lg.loss));
    auto f = [&]() {
        Tape tape;
        auto refs = forward_on_tape(tape, params, batch, fx.cfg, Mode::kTrain, &masks);
        return tape.val(tape.softmax_xent(refs.logits, batch.labels)).data[0];
    };
    std::vector<Tensor*> ptrs;
    std::vector<const Tensor*> analytic;
    for (const auto& name : ParamSet::names()) {
        ptrs.push_back(&params.at(name));
        analytic.push_back(&lg.grads.at(name));
    }
    CHECK(finite_diff_check(f, ptrs, analytic, 1e-4, 60, 7) < 1e-4);
}

TEST_CASE("gradients on a synthetic mini-batch are finite everywhere") {
    Fixture fx;
    auto params = init_params(fx.cfg, 23);
    auto examples = fx.encode_n(12);
    auto batch = pack_batch(examples, fx.cfg);
    Rng mask_rng(5);
    auto masks = sample_dropout_masks(fx.cfg, batch.batch, mask_rng);
    auto lg = loss_and_grads(params, batch, fx.cfg, masks);
    CHECK(std::isfinite(lg.loss));
    for (const auto& name : ParamSet::names())
        for (auto g : lg.grads.at(name).data) CHECK(std::isfinite(g));
}

TEST_CASE("all-PAD rows are rejected") {
    Fixture fx;
    auto params = init_params(fx.cfg, 7);
    EncodedPair empty;
    empty.token_ids.assign(static_cast<std::size_t>(fx.cfg.max_len), Vocabulary::kPad);
    empty.mask.assign(static_cast<std::size_t>(fx.cfg.max_len), 0);
    try {
        forward_logits(params, {empty}, fx.cfg);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("empty sequence") != std::string::npos);
    }
}

TEST_CASE("dropout mask sampling: 0/1 values at roughly the configured rate") {
    ModelConfig cfg;
    cfg.vocab_size = 10;
    cfg.msd_samples = 4;
    cfg.msd_rate = 0.3;
    Rng rng(7);
    auto masks = sample_dropout_masks(cfg, 50, rng);
    REQUIRE(masks.size() == 4);
    double kept = 0.0, total = 0.0;
    for (const auto& m : masks) {
        CHECK(m.shape == std::vector<std::int64_t>{50, 32});
        for (auto x : m.data) {
            CHECK((x == 0.0 || x == 1.0));
            kept += x;
            total += 1.0;
        }
    }
    CHECK(kept / total == doctest::Approx(0.7).epsilon(0.05));
}

TEST_CASE("checkpoint round trip is bit-exact") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "subkit_test_model";
    fs::create_directories(dir);
    const auto path = (dir / "model.ckpt").string();

    Fixture fx;
    auto params = init_params(fx.cfg, 7);
    // make the values non-trivial (denormal-free but irregular)
    params.at("cls_b").data = {0.1, -3.25e-7};
    save_checkpoint(path, params, fx.cfg, fx.vocab.fingerprint());

    auto ckpt = load_checkpoint(path);
    CHECK(ckpt.cfg == fx.cfg);
    CHECK(ckpt.vocab_fingerprint == fx.vocab.fingerprint());
    CHECK(ckpt.params.same_values(params));

    // same inputs -> same logits through a save/load cycle
    auto examples = fx.encode_n(3);
    CHECK(forward_logits(params, examples, fx.cfg).data ==
          forward_logits(ckpt.params, examples, fx.cfg).data);

    SUBCASE("corrupted header rejected") {
        const auto bad = (dir / "bad.ckpt").string();
        std::FILE* f = std::fopen(bad.c_str(), "w");
        std::fputs("not a checkpoint\n", f);
        std::fclose(f);
        CHECK_THROWS_AS(load_checkpoint(bad), DataError);
    }
    fs::remove_all(dir);
}
