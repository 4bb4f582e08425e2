#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "subkit/corpus.hpp"
#include "subkit/rng.hpp"
#include "subkit/tape.hpp"
#include "subkit/tensor.hpp"

namespace subkit {

// Classifier topology: embedding -> one single-head self-attention encoder
// block (post-norm, tanh FFN) -> unidirectional LSTM -> masked mean pooling
// -> multi-sampled dropout -> shared linear classifier -> 2-class logits.
struct ModelConfig {
    std::int64_t vocab_size = 0;
    std::int64_t embed_dim = 32;
    std::int64_t ffn_dim = 64;
    std::int64_t lstm_hidden = 32;
    std::int64_t n_classes = 2;
    int msd_samples = 5;     // dropout samples M
    double msd_rate = 0.5;   // dropout rate p
    std::int64_t max_len = 78;

    void validate() const;  // DataError on out-of-range fields
    bool operator==(const ModelConfig&) const = default;
};

// Named parameter tensors plus the two-group partition driving per-group
// learning rates: {embedding, attention, layer norms, FFN} -> "backbone",
// {LSTM, classifier} -> "head".
struct ParamSet {
    std::map<std::string, Tensor> tensors;

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;

    // Fixed (name, group) schema in declaration order.
    static const std::vector<std::pair<std::string, std::string>>& schema();
    static const std::string& group_of(const std::string& name);

    // Names in schema order; every well-formed ParamSet has exactly these.
    static std::vector<std::string> names();

    // Sum over tensors of elementwise |a-b| == 0, i.e. bit-level equality.
    bool same_values(const ParamSet& other) const;
};

// Uniform(-s, s) with s = sqrt(6/(fan_in+fan_out)) per weight matrix; biases
// and layer-norm shifts 0; layer-norm gains 1; LSTM forget-gate bias slice 1.
ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed);

// A batch packed for the tape: token ids and masks flattened row-major to
// [B*len], trimmed to the longest effective (unpadded) length in the batch.
// Trimming only ever removes all-PAD columns, so logits are unchanged.
struct Batch {
    std::vector<std::int32_t> ids;
    std::vector<std::uint8_t> mask;
    std::vector<int> labels;
    std::int64_t batch = 0;
    std::int64_t len = 0;
};

Batch pack_batch(const std::vector<EncodedPair>& examples, const ModelConfig& cfg);

enum class Mode { kTrain, kEval };

// M Bernoulli(1-p) 0/1 masks of shape [B x H] for multi-sampled dropout.
std::vector<Tensor> sample_dropout_masks(const ModelConfig& cfg, std::int64_t batch_size, Rng& rng);

// Handles into a taped forward pass; callers attach a loss and run backward.
struct ForwardRefs {
    NodeRef logits = -1;
    std::vector<NodeRef> sample_logits;     // train mode: per-dropout-sample logits
    std::map<std::string, NodeRef> leaves;  // param name -> leaf node
};

// Records the forward pass on the tape. Train mode applies the M dropout
// masks to the pooled vector through the shared classifier and averages the
// logits; eval mode is a single plain pass (masks ignored, may be null).
ForwardRefs forward_on_tape(Tape& tape, const ParamSet& params, const Batch& batch,
                            const ModelConfig& cfg, Mode mode,
                            const std::vector<Tensor>* dropout_masks);

// Convenience eval-mode forward; returns logits [B x n_classes].
Tensor forward_logits(const ParamSet& params, const std::vector<EncodedPair>& examples,
                      const ModelConfig& cfg);

struct LossGrads {
    double loss = 0.0;
    std::map<std::string, Tensor> grads;  // one per parameter tensor
};

// Train-mode loss plus exact reverse-mode gradients for every parameter.
// msd_average selects where the dropout samples are combined: "logits"
// (mean logits, then softmax cross-entropy) or "probs" (per-sample softmax,
// mean probabilities, then negative log-likelihood).
LossGrads loss_and_grads(const ParamSet& params, const Batch& batch, const ModelConfig& cfg,
                         const std::vector<Tensor>& dropout_masks,
                         const std::string& msd_average = "logits");

// Versioned text checkpoint: config, vocabulary fingerprint, named tensors
// with hexfloat values (bit-exact round trip).
void save_checkpoint(const std::string& path, const ParamSet& params, const ModelConfig& cfg,
                     std::uint64_t vocab_fingerprint);

struct Checkpoint {
    ModelConfig cfg;
    ParamSet params;
    std::uint64_t vocab_fingerprint = 0;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace subkit
