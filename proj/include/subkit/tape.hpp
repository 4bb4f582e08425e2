#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "subkit/tensor.hpp"

namespace subkit {

// Index of a node on a Tape.
using NodeRef = std::int32_t;

// Reverse-mode autodiff over an explicit tape with the fixed primitive set the
// model needs. Nodes are appended in topological order; backward() replays the
// tape in reverse. Tensors on the tape are immutable once recorded.
//
// An optional post-op hook (set_post_hook) maps every primitive output
// elementwise before anything consumes it; the half-precision inference path
// uses it to round activations to binary16. Training never sets a hook.
class Tape {
  public:
    // Differentiable leaf (a parameter). The label names the tensor in errors.
    NodeRef leaf(const Tensor& v, std::string label = "");
    // Non-differentiable input (data, masks).
    NodeRef input(const Tensor& v, std::string label = "");

    const Tensor& val(NodeRef n) const;
    std::size_t size() const { return nodes_.size(); }

    // -- primitives ---------------------------------------------------------
    // embedding lookup: rows of table selected by ids
    NodeRef gather(NodeRef table, const std::vector<std::int32_t>& ids, std::string label = "");
    // [m x k] * [k x n] -> [m x n]
    NodeRef matmul(NodeRef a, NodeRef b, std::string label = "");
    // elementwise sum of equal shapes
    NodeRef add(NodeRef a, NodeRef b, std::string label = "");
    // adds a row vector [n] to every row of [m x n]
    NodeRef add_bias(NodeRef a, NodeRef bias, std::string label = "");
    NodeRef scale(NodeRef a, double s, std::string label = "");
    // elementwise product of equal shapes
    NodeRef mul(NodeRef a, NodeRef b, std::string label = "");
    NodeRef tanh_op(NodeRef a, std::string label = "");
    NodeRef sigmoid_op(NodeRef a, std::string label = "");
    // elementwise natural log; inputs must be positive
    NodeRef log_op(NodeRef a, std::string label = "");
    // softmax over each row
    NodeRef row_softmax(NodeRef a, std::string label = "");
    // per-row layer norm with population variance: gain * (x-mu)/sqrt(var+eps) + shift
    NodeRef layer_norm(NodeRef a, NodeRef gain, NodeRef shift, double eps, std::string label = "");
    // inverted dropout with an explicit 0/1 mask: a * mask / (1-p)
    NodeRef dropout(NodeRef a, const Tensor& mask, double p, std::string label = "");

    // single-head scaled dot-product attention over a batch of B sequences of
    // length len packed row-major into [B*len x E]; key positions with mask 0
    // receive exactly zero weight. mask is [B*len], 0/1.
    NodeRef masked_attention(NodeRef q, NodeRef k, NodeRef v, const std::vector<std::uint8_t>& mask,
                             std::int64_t batch, std::int64_t len, std::string label = "");

    // unidirectional LSTM over the same packed layout; x [B*len x I],
    // w [(I+H) x 4H] with gate order (input, forget, cell, output), b [4H].
    // Returns every position's hidden state, [B*len x H].
    NodeRef lstm(NodeRef x, NodeRef w, NodeRef b, std::int64_t batch, std::int64_t len,
                 std::string label = "");

    // mean of unmasked rows per sequence: [B*len x H] -> [B x H]
    NodeRef masked_mean_pool(NodeRef x, const std::vector<std::uint8_t>& mask, std::int64_t batch,
                             std::int64_t len, std::string label = "");

    // running (Welford) mean of same-shaped nodes; equals each input exactly
    // when all inputs are bit-identical
    NodeRef mean_stack(const std::vector<NodeRef>& xs, std::string label = "");

    // mean softmax cross-entropy of logits [B x C] against integer labels -> scalar
    NodeRef softmax_xent(NodeRef logits, const std::vector<int>& labels, std::string label = "");

    // sum of all entries -> scalar
    NodeRef sum(NodeRef a, std::string label = "");

    // -- differentiation -----------------------------------------------------
    // Gradients of a scalar node with respect to every node, aligned with node
    // indices; unreferenced nodes get zero tensors of their value's shape.
    std::vector<Tensor> backward(NodeRef loss_ref) const;

    // -- half-precision hook --------------------------------------------------
    void set_post_hook(std::function<double(double)> hook) { post_hook_ = std::move(hook); }
    // label of the first node whose hooked output contained a non-finite value
    const std::string& first_nonfinite_label() const { return first_nonfinite_; }
    bool saw_nonfinite() const { return !first_nonfinite_.empty(); }

  private:
    enum class Op {
        kLeaf,
        kInput,
        kGather,
        kMatmul,
        kAdd,
        kAddBias,
        kScale,
        kMul,
        kTanh,
        kSigmoid,
        kLog,
        kRowSoftmax,
        kLayerNorm,
        kDropout,
        kMaskedAttention,
        kLstm,
        kMaskedMeanPool,
        kMeanStack,
        kSoftmaxXent,
        kSum,
    };

    struct Node {
        Op op;
        Tensor value;
        std::vector<NodeRef> inputs;
        std::string label;
        bool needs_grad = false;
        // saved intermediates, meaning depends on op
        std::vector<double> saved;
        std::vector<std::int32_t> ids;       // gather ids / xent labels
        std::vector<std::uint8_t> mask;      // attention/pool masks
        Tensor aux;                          // dropout mask or op-specific tensor
        double attr = 0.0;                   // scale factor / dropout p / ln eps
        std::int64_t batch = 0, len = 0;     // packed-sequence dims
    };

    NodeRef push(Node n);
    const Node& node(NodeRef n) const;
    void check_ref(NodeRef n) const;

    std::vector<Node> nodes_;
    std::function<double(double)> post_hook_;
    std::string first_nonfinite_;
};

// Central-difference gradient oracle. Evaluates f() while nudging individual
// parameter scalars in place (restoring them afterwards); compares against the
// analytic gradients supplied alongside each parameter tensor. Probes n_probe
// randomly chosen scalars across all tensors and returns the maximum
// |analytic - numeric| / max(1e-8, |numeric|).
double finite_diff_check(const std::function<double()>& f, const std::vector<Tensor*>& params,
                         const std::vector<const Tensor*>& analytic, double h, int n_probe,
                         std::uint64_t seed);

}  // namespace subkit
