#include "subkit/model.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "subkit/common.hpp"

namespace subkit {

namespace {
constexpr double kLnEps = 1e-5;
}

void ModelConfig::validate() const {
    if (vocab_size < 1) throw DataError("model config: vocab_size must be >= 1");
    if (embed_dim < 1 || ffn_dim < 1 || lstm_hidden < 1 || n_classes < 1 || max_len < 1)
        throw DataError("model config: all dimensions must be >= 1");
    if (msd_samples < 1) throw DataError("model config: msd_samples must be >= 1");
    if (msd_rate < 0.0 || msd_rate >= 1.0) throw DataError("model config: msd_rate must be in [0,1)");
}

Tensor& ParamSet::at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("params: no tensor named \"" + name + "\"");
    return it->second;
}

const Tensor& ParamSet::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("params: no tensor named \"" + name + "\"");
    return it->second;
}

const std::vector<std::pair<std::string, std::string>>& ParamSet::schema() {
    static const std::vector<std::pair<std::string, std::string>> s = {
        {"embedding", "backbone"}, {"attn_q", "backbone"},    {"attn_k", "backbone"},
        {"attn_v", "backbone"},    {"attn_o", "backbone"},    {"ln1_gain", "backbone"},
        {"ln1_shift", "backbone"}, {"ln2_gain", "backbone"},  {"ln2_shift", "backbone"},
        {"ffn_w1", "backbone"},    {"ffn_b1", "backbone"},    {"ffn_w2", "backbone"},
        {"ffn_b2", "backbone"},    {"lstm_w", "head"},        {"lstm_b", "head"},
        {"cls_w", "head"},         {"cls_b", "head"},
    };
    return s;
}

const std::string& ParamSet::group_of(const std::string& name) {
    for (const auto& [n, g] : schema())
        if (n == name) return g;
    throw DataError("params: no tensor named \"" + name + "\"");
}

std::vector<std::string> ParamSet::names() {
    std::vector<std::string> out;
    for (const auto& [n, g] : schema()) out.push_back(n);
    return out;
}

bool ParamSet::same_values(const ParamSet& other) const {
    if (tensors.size() != other.tensors.size()) return false;
    for (const auto& [name, t] : tensors) {
        auto it = other.tensors.find(name);
        if (it == other.tensors.end() || !t.same_shape(it->second) || t.data != it->second.data)
            return false;
    }
    return true;
}

ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const auto V = cfg.vocab_size, E = cfg.embed_dim, F = cfg.ffn_dim, H = cfg.lstm_hidden,
               C = cfg.n_classes;
    const std::map<std::string, std::vector<std::int64_t>> shapes = {
        {"embedding", {V, E}}, {"attn_q", {E, E}},     {"attn_k", {E, E}},    {"attn_v", {E, E}},
        {"attn_o", {E, E}},    {"ln1_gain", {E}},      {"ln1_shift", {E}},    {"ln2_gain", {E}},
        {"ln2_shift", {E}},    {"ffn_w1", {E, F}},     {"ffn_b1", {F}},       {"ffn_w2", {F, E}},
        {"ffn_b2", {E}},       {"lstm_w", {E + H, 4 * H}}, {"lstm_b", {4 * H}}, {"cls_w", {H, C}},
        {"cls_b", {C}},
    };
    ParamSet p;
    for (const auto& [name, group] : ParamSet::schema()) {
        const auto& shape = shapes.at(name);
        Tensor t = Tensor::zeros(shape);
        if (shape.size() == 2) {
            const double s = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
            Rng rng(derive_seed(seed, "init:" + name));
            for (auto& x : t.data) x = rng.uniform(-s, s);
        } else if (name == "ln1_gain" || name == "ln2_gain") {
            for (auto& x : t.data) x = 1.0;
        } else if (name == "lstm_b") {
            for (std::int64_t h = H; h < 2 * H; ++h) t.data[static_cast<std::size_t>(h)] = 1.0;
        }
        p.tensors.emplace(name, std::move(t));
        (void)group;
    }
    return p;
}

Batch pack_batch(const std::vector<EncodedPair>& examples, const ModelConfig& cfg) {
    if (examples.empty()) throw DataError("pack_batch: empty batch");
    std::int64_t eff = 1;
    for (const auto& ex : examples) {
        if (static_cast<std::int64_t>(ex.token_ids.size()) != cfg.max_len ||
            ex.mask.size() != ex.token_ids.size())
            throw DataError("pack_batch: example not encoded to max_len " + std::to_string(cfg.max_len));
        std::int64_t n = 0;
        for (std::int64_t i = 0; i < cfg.max_len; ++i)
            if (ex.mask[static_cast<std::size_t>(i)]) n = i + 1;
        eff = std::max(eff, n);
    }
    Batch b;
    b.batch = static_cast<std::int64_t>(examples.size());
    b.len = eff;
    b.ids.reserve(static_cast<std::size_t>(b.batch * b.len));
    b.mask.reserve(static_cast<std::size_t>(b.batch * b.len));
    for (const auto& ex : examples) {
        for (std::int64_t i = 0; i < eff; ++i) {
            b.ids.push_back(ex.token_ids[static_cast<std::size_t>(i)]);
            b.mask.push_back(ex.mask[static_cast<std::size_t>(i)]);
        }
        b.labels.push_back(ex.label);
    }
    return b;
}

std::vector<Tensor> sample_dropout_masks(const ModelConfig& cfg, std::int64_t batch_size, Rng& rng) {
    std::vector<Tensor> masks;
    masks.reserve(static_cast<std::size_t>(cfg.msd_samples));
    for (int m = 0; m < cfg.msd_samples; ++m) {
        Tensor t = Tensor::zeros({batch_size, cfg.lstm_hidden});
        for (auto& x : t.data) x = rng.uniform() < cfg.msd_rate ? 0.0 : 1.0;
        masks.push_back(std::move(t));
    }
    return masks;
}

ForwardRefs forward_on_tape(Tape& tape, const ParamSet& params, const Batch& batch,
                            const ModelConfig& cfg, Mode mode,
                            const std::vector<Tensor>* dropout_masks) {
    cfg.validate();
    ForwardRefs refs;
    for (const auto& [name, group] : ParamSet::schema()) {
        refs.leaves[name] = tape.leaf(params.at(name), name);
        (void)group;
    }
    auto L = [&](const std::string& name) { return refs.leaves.at(name); };

    auto x = tape.gather(L("embedding"), batch.ids, "embed");
    auto q = tape.matmul(x, L("attn_q"), "attn q");
    auto k = tape.matmul(x, L("attn_k"), "attn k");
    auto v = tape.matmul(x, L("attn_v"), "attn v");
    auto attn = tape.masked_attention(q, k, v, batch.mask, batch.batch, batch.len, "attn");
    attn = tape.matmul(attn, L("attn_o"), "attn out");
    x = tape.layer_norm(tape.add(x, attn, "residual1"), L("ln1_gain"), L("ln1_shift"), kLnEps, "ln1");
    auto f = tape.tanh_op(tape.add_bias(tape.matmul(x, L("ffn_w1"), "ffn1"), L("ffn_b1")), "ffn act");
    f = tape.add_bias(tape.matmul(f, L("ffn_w2"), "ffn2"), L("ffn_b2"));
    x = tape.layer_norm(tape.add(x, f, "residual2"), L("ln2_gain"), L("ln2_shift"), kLnEps, "ln2");
    auto h = tape.lstm(x, L("lstm_w"), L("lstm_b"), batch.batch, batch.len, "lstm");
    auto pooled = tape.masked_mean_pool(h, batch.mask, batch.batch, batch.len, "pool");

    if (mode == Mode::kEval) {
        refs.logits = tape.add_bias(tape.matmul(pooled, L("cls_w"), "classifier"), L("cls_b"), "logits");
        return refs;
    }
    if (dropout_masks == nullptr || static_cast<int>(dropout_masks->size()) != cfg.msd_samples)
        throw DataError("forward: train mode needs " + std::to_string(cfg.msd_samples) +
                        " dropout masks");
    for (int m = 0; m < cfg.msd_samples; ++m) {
        const auto& mask = (*dropout_masks)[static_cast<std::size_t>(m)];
        auto dropped = tape.dropout(pooled, mask, cfg.msd_rate, "msd " + std::to_string(m));
        refs.sample_logits.push_back(
            tape.add_bias(tape.matmul(dropped, L("cls_w"), "classifier"), L("cls_b")));
    }
    refs.logits = tape.mean_stack(refs.sample_logits, "logits");
    return refs;
}

Tensor forward_logits(const ParamSet& params, const std::vector<EncodedPair>& examples,
                      const ModelConfig& cfg) {
    Tape tape;
    auto refs = forward_on_tape(tape, params, pack_batch(examples, cfg), cfg, Mode::kEval, nullptr);
    return tape.val(refs.logits);
}

LossGrads loss_and_grads(const ParamSet& params, const Batch& batch, const ModelConfig& cfg,
                         const std::vector<Tensor>& dropout_masks, const std::string& msd_average) {
    Tape tape;
    auto refs = forward_on_tape(tape, params, batch, cfg, Mode::kTrain, &dropout_masks);
    NodeRef loss = -1;
    if (msd_average == "logits") {
        loss = tape.softmax_xent(refs.logits, batch.labels, "loss");
    } else if (msd_average == "probs") {
        std::vector<NodeRef> probs;
        for (std::size_t m = 0; m < refs.sample_logits.size(); ++m)
            probs.push_back(tape.row_softmax(refs.sample_logits[m], "msd probs " + std::to_string(m)));
        auto avg = tape.mean_stack(probs, "mean probs");
        Tensor onehot = Tensor::zeros({batch.batch, cfg.n_classes});
        for (std::int64_t i = 0; i < batch.batch; ++i) {
            const int y = batch.labels[static_cast<std::size_t>(i)];
            if (y < 0 || y >= cfg.n_classes) throw DataError("loss: label out of range");
            onehot.at(i, y) = 1.0;
        }
        auto picked = tape.mul(tape.log_op(avg, "log probs"), tape.leaf(onehot, "onehot"),
                               "pick label log-prob");
        loss = tape.scale(tape.sum(picked, "sum"), -1.0 / static_cast<double>(batch.batch), "loss");
    } else {
        throw DataError("loss: msd_average must be \"logits\" or \"probs\"");
    }
    auto grads = tape.backward(loss);
    LossGrads out;
    out.loss = tape.val(loss).data[0];
    for (const auto& [name, ref] : refs.leaves)
        out.grads.emplace(name, std::move(grads[static_cast<std::size_t>(ref)]));
    return out;
}

void save_checkpoint(const std::string& path, const ParamSet& params, const ModelConfig& cfg,
                     std::uint64_t vocab_fingerprint) {
    std::ofstream out(path);
    if (!out) throw DataError("checkpoint: cannot write " + path);
    char buf[64];
    out << "subkit checkpoint v1\n";
    std::snprintf(buf, sizeof buf, "%016" PRIx64, vocab_fingerprint);
    out << "vocab " << buf << "\n";
    out << "config vocab_size=" << cfg.vocab_size << " embed_dim=" << cfg.embed_dim
        << " ffn_dim=" << cfg.ffn_dim << " lstm_hidden=" << cfg.lstm_hidden
        << " n_classes=" << cfg.n_classes << " msd_samples=" << cfg.msd_samples;
    std::snprintf(buf, sizeof buf, "%.17g", cfg.msd_rate);
    out << " msd_rate=" << buf << " max_len=" << cfg.max_len << "\n";
    out << "tensors " << params.tensors.size() << "\n";
    for (const auto& name : ParamSet::names()) {
        const auto& t = params.at(name);
        out << name;
        out << " " << t.shape.size();
        for (auto d : t.shape) out << " " << d;
        out << "\n";
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%a", t.data[i]);
            out << (i ? " " : "") << buf;
        }
        out << "\n";
    }
    if (!out) throw DataError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("checkpoint: cannot read " + path);
    std::string line;
    if (!std::getline(in, line) || line != "subkit checkpoint v1")
        throw DataError("checkpoint: bad header in " + path);

    Checkpoint ckpt;
    std::string word;
    in >> word;
    if (word != "vocab") throw DataError("checkpoint: missing vocab record");
    in >> word;
    ckpt.vocab_fingerprint = std::stoull(word, nullptr, 16);

    in >> word;
    if (word != "config") throw DataError("checkpoint: missing config record");
    std::getline(in, line);
    std::istringstream cfgs(line);
    std::string kv;
    while (cfgs >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw DataError("checkpoint: malformed config entry " + kv);
        const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
        auto& c = ckpt.cfg;
        if (key == "vocab_size") c.vocab_size = std::stoll(val);
        else if (key == "embed_dim") c.embed_dim = std::stoll(val);
        else if (key == "ffn_dim") c.ffn_dim = std::stoll(val);
        else if (key == "lstm_hidden") c.lstm_hidden = std::stoll(val);
        else if (key == "n_classes") c.n_classes = std::stoll(val);
        else if (key == "msd_samples") c.msd_samples = std::stoi(val);
        else if (key == "msd_rate") c.msd_rate = std::strtod(val.c_str(), nullptr);
        else if (key == "max_len") c.max_len = std::stoll(val);
        else throw DataError("checkpoint: unknown config key " + key);
    }
    ckpt.cfg.validate();

    in >> word;
    std::size_t count = 0;
    if (word != "tensors" || !(in >> count)) throw DataError("checkpoint: missing tensor count");
    for (std::size_t i = 0; i < count; ++i) {
        std::string name;
        std::size_t rank;
        if (!(in >> name >> rank)) throw DataError("checkpoint: truncated tensor header");
        std::vector<std::int64_t> shape(rank);
        for (auto& d : shape) in >> d;
        Tensor t = Tensor::zeros(shape);
        for (auto& x : t.data) {
            if (!(in >> word)) throw DataError("checkpoint: truncated tensor data for " + name);
            x = std::strtod(word.c_str(), nullptr);
        }
        ckpt.params.tensors.emplace(name, std::move(t));
    }
    for (const auto& name : ParamSet::names())
        if (!ckpt.params.tensors.count(name))
            throw DataError("checkpoint: missing tensor \"" + name + "\"");
    return ckpt;
}

}  // namespace subkit
