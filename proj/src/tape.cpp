#include "subkit/tape.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "subkit/common.hpp"
#include "subkit/rng.hpp"

namespace subkit {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConst = Eigen::Map<const RowMat>;

MapConst as_mat(const Tensor& t) { return MapConst(t.data.data(), t.rows(), t.cols()); }
MapMat as_mat(Tensor& t) { return MapMat(t.data.data(), t.rows(), t.cols()); }

}  // namespace

NodeRef Tape::push(Node n) {
    if (post_hook_ && n.op != Op::kLeaf && n.op != Op::kInput) {
        for (auto& x : n.value.data) x = post_hook_(x);
        if (first_nonfinite_.empty()) {
            for (auto x : n.value.data) {
                if (!std::isfinite(x)) {
                    first_nonfinite_ = n.label.empty() ? "(unnamed op)" : n.label;
                    break;
                }
            }
        }
    }
    nodes_.push_back(std::move(n));
    return static_cast<NodeRef>(nodes_.size() - 1);
}

void Tape::check_ref(NodeRef n) const {
    if (n < 0 || static_cast<std::size_t>(n) >= nodes_.size())
        throw DataError("tape: node reference out of range");
}

const Tape::Node& Tape::node(NodeRef n) const {
    check_ref(n);
    return nodes_[static_cast<std::size_t>(n)];
}

const Tensor& Tape::val(NodeRef n) const { return node(n).value; }

NodeRef Tape::leaf(const Tensor& v, std::string label) {
    Node n;
    n.op = Op::kLeaf;
    n.value = v;
    n.label = std::move(label);
    n.needs_grad = true;
    return push(std::move(n));
}

NodeRef Tape::input(const Tensor& v, std::string label) {
    Node n;
    n.op = Op::kInput;
    n.value = v;
    n.label = std::move(label);
    return push(std::move(n));
}

NodeRef Tape::gather(NodeRef table, const std::vector<std::int32_t>& ids, std::string label) {
    const auto& t = val(table);
    const auto cols = t.cols();
    Tensor out = Tensor::zeros({static_cast<std::int64_t>(ids.size()), cols});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto id = ids[i];
        if (id < 0 || id >= t.rows())
            throw DataError("gather: id " + std::to_string(id) + " out of range for table " + t.shape_str());
        for (std::int64_t c = 0; c < cols; ++c)
            out.at(static_cast<std::int64_t>(i), c) = t.at(id, c);
    }
    Node n;
    n.op = Op::kGather;
    n.value = std::move(out);
    n.inputs = {table};
    n.ids = ids;
    n.label = std::move(label);
    n.needs_grad = node(table).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::matmul(NodeRef a, NodeRef b, std::string label) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    if (ta.cols() != tb.rows())
        throw DataError("matmul: shape mismatch " + ta.shape_str() + " * " + tb.shape_str());
    Tensor out = Tensor::zeros({ta.rows(), tb.cols()});
    as_mat(out).noalias() = as_mat(ta) * as_mat(tb);
    Node n;
    n.op = Op::kMatmul;
    n.value = std::move(out);
    n.inputs = {a, b};
    n.label = std::move(label);
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::add(NodeRef a, NodeRef b, std::string label) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    if (!ta.same_shape(tb))
        throw DataError("add: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    Tensor out = ta;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
    Node n;
    n.op = Op::kAdd;
    n.value = std::move(out);
    n.inputs = {a, b};
    n.label = std::move(label);
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::add_bias(NodeRef a, NodeRef bias, std::string label) {
    const auto& ta = val(a);
    const auto& tb = val(bias);
    if (tb.numel() != ta.cols())
        throw DataError("add_bias: bias " + tb.shape_str() + " does not span columns of " + ta.shape_str());
    Tensor out = ta;
    for (std::int64_t r = 0; r < ta.rows(); ++r)
        for (std::int64_t c = 0; c < ta.cols(); ++c) out.at(r, c) += tb.data[static_cast<std::size_t>(c)];
    Node n;
    n.op = Op::kAddBias;
    n.value = std::move(out);
    n.inputs = {a, bias};
    n.label = std::move(label);
    n.needs_grad = node(a).needs_grad || node(bias).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::scale(NodeRef a, double s, std::string label) {
    Tensor out = val(a);
    for (auto& x : out.data) x *= s;
    Node n;
    n.op = Op::kScale;
    n.value = std::move(out);
    n.inputs = {a};
    n.attr = s;
    n.label = std::move(label);
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::mul(NodeRef a, NodeRef b, std::string label) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    if (!ta.same_shape(tb))
        throw DataError("mul: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    Tensor out = ta;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
    Node n;
    n.op = Op::kMul;
    n.value = std::move(out);
    n.inputs = {a, b};
    n.label = std::move(label);
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::tanh_op(NodeRef a, std::string label) {
    Tensor out = val(a);
    for (auto& x : out.data) x = std::tanh(x);
    Node n;
    n.op = Op::kTanh;
    n.value = std::move(out);
    n.inputs = {a};
    n.label = std::move(label);
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::sigmoid_op(NodeRef a, std::string label) {
    Tensor out = val(a);
    for (auto& x : out.data) x = 1.0 / (1.0 + std::exp(-x));
    Node n;
    n.op = Op::kSigmoid;
    n.value = std::move(out);
    n.inputs = {a};
    n.label = std::move(label);
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::log_op(NodeRef a, std::string label) {
    const auto& ta = val(a);
    Tensor out = ta;
    for (auto& x : out.data) {
        if (x <= 0.0) throw DataError("log: input must be positive");
        x = std::log(x);
    }
    Node n;
    n.op = Op::kLog;
    n.value = std::move(out);
    n.inputs = {a};
    n.label = std::move(label);
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::row_softmax(NodeRef a, std::string label) {
    const auto& ta = val(a);
    Tensor out = ta;
    for (std::int64_t r = 0; r < ta.rows(); ++r) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::int64_t c = 0; c < ta.cols(); ++c) m = std::max(m, ta.at(r, c));
        double z = 0.0;
        for (std::int64_t c = 0; c < ta.cols(); ++c) z += std::exp(ta.at(r, c) - m);
        for (std::int64_t c = 0; c < ta.cols(); ++c) out.at(r, c) = std::exp(ta.at(r, c) - m) / z;
    }
    Node n;
    n.op = Op::kRowSoftmax;
    n.value = std::move(out);
    n.inputs = {a};
    n.label = std::move(label);
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::layer_norm(NodeRef a, NodeRef gain, NodeRef shift, double eps, std::string label) {
    const auto& ta = val(a);
    const auto& tg = val(gain);
    const auto& ts = val(shift);
    if (tg.numel() != ta.cols() || ts.numel() != ta.cols())
        throw DataError("layer_norm: gain/shift " + tg.shape_str() + "/" + ts.shape_str() +
                        " do not span columns of " + ta.shape_str());
    const auto rows = ta.rows(), cols = ta.cols();
    Tensor out = Tensor::zeros(ta.shape);
    Node n;
    n.saved.resize(static_cast<std::size_t>(rows * cols + rows));  // xhat then invstd
    for (std::int64_t r = 0; r < rows; ++r) {
        double mean = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) mean += ta.at(r, c);
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) {
            const double d = ta.at(r, c) - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        const double invstd = 1.0 / std::sqrt(var + eps);
        n.saved[static_cast<std::size_t>(rows * cols + r)] = invstd;
        for (std::int64_t c = 0; c < cols; ++c) {
            const double xhat = (ta.at(r, c) - mean) * invstd;
            n.saved[static_cast<std::size_t>(r * cols + c)] = xhat;
            out.at(r, c) = xhat * tg.data[static_cast<std::size_t>(c)] + ts.data[static_cast<std::size_t>(c)];
        }
    }
    n.op = Op::kLayerNorm;
    n.value = std::move(out);
    n.inputs = {a, gain, shift};
    n.attr = eps;
    n.label = std::move(label);
    n.needs_grad = node(a).needs_grad || node(gain).needs_grad || node(shift).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::dropout(NodeRef a, const Tensor& mask, double p, std::string label) {
    const auto& ta = val(a);
    if (!ta.same_shape(mask))
        throw DataError("dropout: mask shape " + mask.shape_str() + " vs input " + ta.shape_str());
    if (p < 0.0 || p >= 1.0) throw DataError("dropout: rate must be in [0,1)");
    const double inv_keep = 1.0 / (1.0 - p);
    Tensor out = ta;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask.data[i] * inv_keep;
    Node n;
    n.op = Op::kDropout;
    n.value = std::move(out);
    n.inputs = {a};
    n.aux = mask;
    n.attr = p;
    n.label = std::move(label);
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::masked_attention(NodeRef q, NodeRef k, NodeRef v, const std::vector<std::uint8_t>& mask,
                               std::int64_t batch, std::int64_t len, std::string label) {
    const auto& tq = val(q);
    const auto& tk = val(k);
    const auto& tv = val(v);
    const auto rows = batch * len;
    if (tq.rows() != rows || !tq.same_shape(tk) || !tq.same_shape(tv) ||
        static_cast<std::int64_t>(mask.size()) != rows)
        throw DataError("masked_attention: inconsistent shapes q" + tq.shape_str() + " k" + tk.shape_str() +
                        " v" + tv.shape_str() + " for batch " + std::to_string(batch) + " x len " +
                        std::to_string(len));
    const auto dim = tq.cols();
    const double sc = 1.0 / std::sqrt(static_cast<double>(dim));
    Tensor out = Tensor::zeros(tq.shape);
    Node n;
    n.saved.assign(static_cast<std::size_t>(batch * len * len), 0.0);  // attention weights
    for (std::int64_t b = 0; b < batch; ++b) {
        const auto r0 = b * len;
        bool any = false;
        for (std::int64_t j = 0; j < len; ++j) any = any || mask[static_cast<std::size_t>(r0 + j)];
        if (!any) throw DataError("masked_attention: empty sequence in batch row " + std::to_string(b));
        for (std::int64_t i = 0; i < len; ++i) {
            double* w = n.saved.data() + static_cast<std::size_t>((r0 + i) * len);
            double m = -std::numeric_limits<double>::infinity();
            for (std::int64_t j = 0; j < len; ++j) {
                if (!mask[static_cast<std::size_t>(r0 + j)]) continue;
                double s = 0.0;
                for (std::int64_t c = 0; c < dim; ++c) s += tq.at(r0 + i, c) * tk.at(r0 + j, c);
                w[j] = s * sc;
                m = std::max(m, w[j]);
            }
            double z = 0.0;
            for (std::int64_t j = 0; j < len; ++j) {
                if (!mask[static_cast<std::size_t>(r0 + j)]) continue;
                w[j] = std::exp(w[j] - m);
                z += w[j];
            }
            for (std::int64_t j = 0; j < len; ++j) {
                if (!mask[static_cast<std::size_t>(r0 + j)]) continue;
                w[j] /= z;
                for (std::int64_t c = 0; c < dim; ++c) out.at(r0 + i, c) += w[j] * tv.at(r0 + j, c);
            }
        }
    }
    n.op = Op::kMaskedAttention;
    n.value = std::move(out);
    n.inputs = {q, k, v};
    n.mask = mask;
    n.attr = sc;
    n.batch = batch;
    n.len = len;
    n.label = std::move(label);
    n.needs_grad = node(q).needs_grad || node(k).needs_grad || node(v).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::lstm(NodeRef x, NodeRef w, NodeRef b, std::int64_t batch, std::int64_t len,
                   std::string label) {
    const auto& tx = val(x);
    const auto& tw = val(w);
    const auto& tb = val(b);
    const auto in_dim = tx.cols();
    if (tw.cols() % 4 != 0)
        throw DataError("lstm: weight " + tw.shape_str() + " must have 4H columns");
    const auto hidden = tw.cols() / 4;
    if (tx.rows() != batch * len || tw.rows() != in_dim + hidden || tb.numel() != 4 * hidden)
        throw DataError("lstm: inconsistent shapes x" + tx.shape_str() + " w" + tw.shape_str() + " b" +
                        tb.shape_str());
    Tensor out = Tensor::zeros({batch * len, hidden});
    Node n;
    // per position: i, f, g, o, c, tanh(c)
    n.saved.assign(static_cast<std::size_t>(batch * len * 6 * hidden), 0.0);

    RowMat z(batch, in_dim + hidden);           // [x_t | h_{t-1}]
    RowMat gates(batch, 4 * hidden);
    RowMat c_prev = RowMat::Zero(batch, hidden);
    z.rightCols(hidden).setZero();
    const auto wm = as_mat(tw);
    for (std::int64_t t = 0; t < len; ++t) {
        for (std::int64_t bi = 0; bi < batch; ++bi)
            for (std::int64_t c = 0; c < in_dim; ++c) z(bi, c) = tx.at(bi * len + t, c);
        gates.noalias() = z * wm;
        for (std::int64_t bi = 0; bi < batch; ++bi) {
            const auto row = bi * len + t;
            double* sv = n.saved.data() + static_cast<std::size_t>(row * 6 * hidden);
            for (std::int64_t h = 0; h < hidden; ++h) {
                const double gi = 1.0 / (1.0 + std::exp(-(gates(bi, h) + tb.data[static_cast<std::size_t>(h)])));
                const double gf =
                    1.0 / (1.0 + std::exp(-(gates(bi, hidden + h) + tb.data[static_cast<std::size_t>(hidden + h)])));
                const double gg = std::tanh(gates(bi, 2 * hidden + h) + tb.data[static_cast<std::size_t>(2 * hidden + h)]);
                const double go =
                    1.0 / (1.0 + std::exp(-(gates(bi, 3 * hidden + h) + tb.data[static_cast<std::size_t>(3 * hidden + h)])));
                const double c_new = gf * c_prev(bi, h) + gi * gg;
                const double tc = std::tanh(c_new);
                sv[h] = gi;
                sv[hidden + h] = gf;
                sv[2 * hidden + h] = gg;
                sv[3 * hidden + h] = go;
                sv[4 * hidden + h] = c_new;
                sv[5 * hidden + h] = tc;
                c_prev(bi, h) = c_new;
                const double hv = go * tc;
                out.at(row, h) = hv;
                z(bi, in_dim + h) = hv;
            }
        }
    }
    n.op = Op::kLstm;
    n.value = std::move(out);
    n.inputs = {x, w, b};
    n.batch = batch;
    n.len = len;
    n.label = std::move(label);
    n.needs_grad = node(x).needs_grad || node(w).needs_grad || node(b).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::masked_mean_pool(NodeRef x, const std::vector<std::uint8_t>& mask, std::int64_t batch,
                               std::int64_t len, std::string label) {
    const auto& tx = val(x);
    if (tx.rows() != batch * len || static_cast<std::int64_t>(mask.size()) != batch * len)
        throw DataError("masked_mean_pool: input " + tx.shape_str() + " does not match batch " +
                        std::to_string(batch) + " x len " + std::to_string(len));
    const auto cols = tx.cols();
    Tensor out = Tensor::zeros({batch, cols});
    Node n;
    n.saved.resize(static_cast<std::size_t>(batch));
    for (std::int64_t b = 0; b < batch; ++b) {
        std::int64_t cnt = 0;
        for (std::int64_t t = 0; t < len; ++t) {
            if (!mask[static_cast<std::size_t>(b * len + t)]) continue;
            ++cnt;
            for (std::int64_t c = 0; c < cols; ++c) out.at(b, c) += tx.at(b * len + t, c);
        }
        if (cnt == 0) throw DataError("empty sequence");
        for (std::int64_t c = 0; c < cols; ++c) out.at(b, c) /= static_cast<double>(cnt);
        n.saved[static_cast<std::size_t>(b)] = static_cast<double>(cnt);
    }
    n.op = Op::kMaskedMeanPool;
    n.value = std::move(out);
    n.inputs = {x};
    n.mask = mask;
    n.batch = batch;
    n.len = len;
    n.label = std::move(label);
    n.needs_grad = node(x).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::mean_stack(const std::vector<NodeRef>& xs, std::string label) {
    if (xs.empty()) throw DataError("mean_stack: no inputs");
    Tensor acc = val(xs[0]);
    for (std::size_t k = 1; k < xs.size(); ++k) {
        const auto& t = val(xs[k]);
        if (!t.same_shape(acc))
            throw DataError("mean_stack: shape mismatch " + t.shape_str() + " vs " + acc.shape_str());
        // running mean: exact when all inputs are bit-identical
        for (std::size_t i = 0; i < acc.data.size(); ++i)
            acc.data[i] += (t.data[i] - acc.data[i]) / static_cast<double>(k + 1);
    }
    Node n;
    n.op = Op::kMeanStack;
    n.value = std::move(acc);
    n.inputs = xs;
    n.label = std::move(label);
    for (auto r : xs) n.needs_grad = n.needs_grad || node(r).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::softmax_xent(NodeRef logits, const std::vector<int>& labels, std::string label) {
    const auto& tl = val(logits);
    if (tl.rows() != static_cast<std::int64_t>(labels.size()))
        throw DataError("softmax_xent: logits " + tl.shape_str() + " vs " + std::to_string(labels.size()) +
                        " labels");
    const auto rows = tl.rows(), cols = tl.cols();
    Node n;
    n.saved.resize(static_cast<std::size_t>(rows * cols));  // probabilities
    double loss = 0.0;
    for (std::int64_t r = 0; r < rows; ++r) {
        const int y = labels[static_cast<std::size_t>(r)];
        if (y < 0 || y >= cols) throw DataError("softmax_xent: label out of range");
        double m = -std::numeric_limits<double>::infinity();
        for (std::int64_t c = 0; c < cols; ++c) m = std::max(m, tl.at(r, c));
        double z = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) z += std::exp(tl.at(r, c) - m);
        for (std::int64_t c = 0; c < cols; ++c)
            n.saved[static_cast<std::size_t>(r * cols + c)] = std::exp(tl.at(r, c) - m) / z;
        loss += std::log(z) + m - tl.at(r, y);
    }
    loss /= static_cast<double>(rows);
    n.op = Op::kSoftmaxXent;
    n.value = Tensor::scalar(loss);
    n.inputs = {logits};
    n.ids.assign(labels.begin(), labels.end());
    n.label = std::move(label);
    n.needs_grad = node(logits).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::sum(NodeRef a, std::string label) {
    double s = 0.0;
    for (auto x : val(a).data) s += x;
    Node n;
    n.op = Op::kSum;
    n.value = Tensor::scalar(s);
    n.inputs = {a};
    n.label = std::move(label);
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
}

std::vector<Tensor> Tape::backward(NodeRef loss_ref) const {
    check_ref(loss_ref);
    if (!node(loss_ref).value.is_scalar()) throw DataError("backward: loss must be a scalar");
    std::vector<Tensor> grads(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) grads[i] = Tensor::zeros(nodes_[i].value.shape);
    grads[static_cast<std::size_t>(loss_ref)].data[0] = 1.0;

    for (std::int64_t ni = loss_ref; ni >= 0; --ni) {
        const Node& n = nodes_[static_cast<std::size_t>(ni)];
        if (!n.needs_grad) continue;
        const Tensor& g = grads[static_cast<std::size_t>(ni)];
        auto needs = [&](std::size_t slot) { return nodes_[static_cast<std::size_t>(n.inputs[slot])].needs_grad; };
        auto gin = [&](std::size_t slot) -> Tensor& { return grads[static_cast<std::size_t>(n.inputs[slot])]; };

        switch (n.op) {
            case Op::kLeaf:
            case Op::kInput:
                break;
            case Op::kGather: {
                if (!needs(0)) break;
                Tensor& gt = gin(0);
                const auto cols = gt.cols();
                for (std::size_t i = 0; i < n.ids.size(); ++i)
                    for (std::int64_t c = 0; c < cols; ++c)
                        gt.at(n.ids[i], c) += g.at(static_cast<std::int64_t>(i), c);
                break;
            }
            case Op::kMatmul: {
                const auto& a = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
                const auto& b = nodes_[static_cast<std::size_t>(n.inputs[1])].value;
                if (needs(0)) as_mat(gin(0)).noalias() += as_mat(g) * as_mat(b).transpose();
                if (needs(1)) as_mat(gin(1)).noalias() += as_mat(a).transpose() * as_mat(g);
                break;
            }
            case Op::kAdd: {
                for (std::size_t s = 0; s < 2; ++s) {
                    if (!needs(s)) continue;
                    Tensor& gi = gin(s);
                    for (std::size_t i = 0; i < gi.data.size(); ++i) gi.data[i] += g.data[i];
                }
                break;
            }
            case Op::kAddBias: {
                if (needs(0)) {
                    Tensor& ga = gin(0);
                    for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g.data[i];
                }
                if (needs(1)) {
                    Tensor& gb = gin(1);
                    const auto cols = g.cols();
                    for (std::int64_t r = 0; r < g.rows(); ++r)
                        for (std::int64_t c = 0; c < cols; ++c) gb.data[static_cast<std::size_t>(c)] += g.at(r, c);
                }
                break;
            }
            case Op::kScale: {
                if (!needs(0)) break;
                Tensor& ga = gin(0);
                for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += n.attr * g.data[i];
                break;
            }
            case Op::kMul: {
                const auto& a = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
                const auto& b = nodes_[static_cast<std::size_t>(n.inputs[1])].value;
                if (needs(0)) {
                    Tensor& ga = gin(0);
                    for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g.data[i] * b.data[i];
                }
                if (needs(1)) {
                    Tensor& gb = gin(1);
                    for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += g.data[i] * a.data[i];
                }
                break;
            }
            case Op::kTanh: {
                if (!needs(0)) break;
                Tensor& ga = gin(0);
                for (std::size_t i = 0; i < ga.data.size(); ++i) {
                    const double y = n.value.data[i];
                    ga.data[i] += g.data[i] * (1.0 - y * y);
                }
                break;
            }
            case Op::kSigmoid: {
                if (!needs(0)) break;
                Tensor& ga = gin(0);
                for (std::size_t i = 0; i < ga.data.size(); ++i) {
                    const double y = n.value.data[i];
                    ga.data[i] += g.data[i] * y * (1.0 - y);
                }
                break;
            }
            case Op::kLog: {
                if (!needs(0)) break;
                Tensor& ga = gin(0);
                const auto& a = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
                for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g.data[i] / a.data[i];
                break;
            }
            case Op::kRowSoftmax: {
                if (!needs(0)) break;
                Tensor& ga = gin(0);
                const auto rows = g.rows(), cols = g.cols();
                for (std::int64_t r = 0; r < rows; ++r) {
                    double dot = 0.0;
                    for (std::int64_t c = 0; c < cols; ++c) dot += g.at(r, c) * n.value.at(r, c);
                    for (std::int64_t c = 0; c < cols; ++c)
                        ga.at(r, c) += n.value.at(r, c) * (g.at(r, c) - dot);
                }
                break;
            }
            case Op::kLayerNorm: {
                const auto rows = g.rows(), cols = g.cols();
                const auto& gain = nodes_[static_cast<std::size_t>(n.inputs[1])].value;
                const double* xhat = n.saved.data();
                const double* invstd = n.saved.data() + rows * cols;
                if (needs(1) || needs(2)) {
                    for (std::int64_t r = 0; r < rows; ++r)
                        for (std::int64_t c = 0; c < cols; ++c) {
                            if (needs(1))
                                gin(1).data[static_cast<std::size_t>(c)] +=
                                    g.at(r, c) * xhat[r * cols + c];
                            if (needs(2)) gin(2).data[static_cast<std::size_t>(c)] += g.at(r, c);
                        }
                }
                if (needs(0)) {
                    Tensor& ga = gin(0);
                    for (std::int64_t r = 0; r < rows; ++r) {
                        double mean_dx = 0.0, mean_dxx = 0.0;
                        for (std::int64_t c = 0; c < cols; ++c) {
                            const double dx = g.at(r, c) * gain.data[static_cast<std::size_t>(c)];
                            mean_dx += dx;
                            mean_dxx += dx * xhat[r * cols + c];
                        }
                        mean_dx /= static_cast<double>(cols);
                        mean_dxx /= static_cast<double>(cols);
                        for (std::int64_t c = 0; c < cols; ++c) {
                            const double dx = g.at(r, c) * gain.data[static_cast<std::size_t>(c)];
                            ga.at(r, c) += invstd[r] * (dx - mean_dx - xhat[r * cols + c] * mean_dxx);
                        }
                    }
                }
                break;
            }
            case Op::kDropout: {
                if (!needs(0)) break;
                Tensor& ga = gin(0);
                const double inv_keep = 1.0 / (1.0 - n.attr);
                for (std::size_t i = 0; i < ga.data.size(); ++i)
                    ga.data[i] += g.data[i] * n.aux.data[i] * inv_keep;
                break;
            }
            case Op::kMaskedAttention: {
                const auto& q = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
                const auto& k = nodes_[static_cast<std::size_t>(n.inputs[1])].value;
                const auto& v = nodes_[static_cast<std::size_t>(n.inputs[2])].value;
                const auto len = n.len, dim = q.cols();
                std::vector<double> ds(static_cast<std::size_t>(len * len));
                for (std::int64_t b = 0; b < n.batch; ++b) {
                    const auto r0 = b * len;
                    const double* w0 = n.saved.data() + static_cast<std::size_t>(r0 * len);
                    // dV += W^T dOut, dW = dOut V^T (only unmasked columns carry weight)
                    for (std::int64_t i = 0; i < len; ++i) {
                        const double* wi = w0 + i * len;
                        double dot = 0.0;  // sum_j W_ij * dW_ij for the softmax backward
                        double* dsi = ds.data() + static_cast<std::size_t>(i * len);
                        for (std::int64_t j = 0; j < len; ++j) {
                            if (!n.mask[static_cast<std::size_t>(r0 + j)]) {
                                dsi[j] = 0.0;
                                continue;
                            }
                            double dw = 0.0;
                            for (std::int64_t c = 0; c < dim; ++c) dw += g.at(r0 + i, c) * v.at(r0 + j, c);
                            dsi[j] = dw;
                            dot += wi[j] * dw;
                        }
                        for (std::int64_t j = 0; j < len; ++j) {
                            if (!n.mask[static_cast<std::size_t>(r0 + j)]) continue;
                            dsi[j] = wi[j] * (dsi[j] - dot);
                        }
                        if (needs(2)) {
                            Tensor& gv = gin(2);
                            for (std::int64_t j = 0; j < len; ++j) {
                                if (wi[j] == 0.0) continue;
                                for (std::int64_t c = 0; c < dim; ++c)
                                    gv.at(r0 + j, c) += wi[j] * g.at(r0 + i, c);
                            }
                        }
                    }
                    if (needs(0)) {
                        Tensor& gq = gin(0);
                        for (std::int64_t i = 0; i < len; ++i) {
                            const double* dsi = ds.data() + static_cast<std::size_t>(i * len);
                            for (std::int64_t j = 0; j < len; ++j) {
                                if (dsi[j] == 0.0) continue;
                                for (std::int64_t c = 0; c < dim; ++c)
                                    gq.at(r0 + i, c) += n.attr * dsi[j] * k.at(r0 + j, c);
                            }
                        }
                    }
                    if (needs(1)) {
                        Tensor& gk = gin(1);
                        for (std::int64_t i = 0; i < len; ++i) {
                            const double* dsi = ds.data() + static_cast<std::size_t>(i * len);
                            for (std::int64_t j = 0; j < len; ++j) {
                                if (dsi[j] == 0.0) continue;
                                for (std::int64_t c = 0; c < dim; ++c)
                                    gk.at(r0 + j, c) += n.attr * dsi[j] * q.at(r0 + i, c);
                            }
                        }
                    }
                }
                break;
            }
            case Op::kLstm: {
                const auto& x = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
                const auto& w = nodes_[static_cast<std::size_t>(n.inputs[1])].value;
                const auto in_dim = x.cols();
                const auto hidden = w.cols() / 4;
                const auto batch = n.batch, len = n.len;

                RowMat dh = RowMat::Zero(batch, hidden);
                RowMat dc = RowMat::Zero(batch, hidden);
                RowMat da(batch, 4 * hidden);
                RowMat z(batch, in_dim + hidden);
                const auto wm = as_mat(w);
                for (std::int64_t t = len - 1; t >= 0; --t) {
                    for (std::int64_t bi = 0; bi < batch; ++bi) {
                        const auto row = bi * len + t;
                        const double* sv = n.saved.data() + static_cast<std::size_t>(row * 6 * hidden);
                        for (std::int64_t h = 0; h < hidden; ++h) {
                            const double gi = sv[h], gf = sv[hidden + h], gg = sv[2 * hidden + h],
                                         go = sv[3 * hidden + h], tc = sv[5 * hidden + h];
                            const double c_prev =
                                t == 0 ? 0.0
                                       : n.saved[static_cast<std::size_t>((row - 1) * 6 * hidden + 4 * hidden + h)];
                            const double dht = dh(bi, h) + g.at(row, h);
                            const double dct = dc(bi, h) + dht * go * (1.0 - tc * tc);
                            da(bi, h) = dct * gg * gi * (1.0 - gi);
                            da(bi, hidden + h) = dct * c_prev * gf * (1.0 - gf);
                            da(bi, 2 * hidden + h) = dct * gi * (1.0 - gg * gg);
                            da(bi, 3 * hidden + h) = dht * tc * go * (1.0 - go);
                            dc(bi, h) = dct * gf;
                        }
                        // rebuild z_t = [x_t | h_{t-1}] for the weight gradient
                        for (std::int64_t c = 0; c < in_dim; ++c) z(bi, c) = x.at(row, c);
                        for (std::int64_t h = 0; h < hidden; ++h)
                            z(bi, in_dim + h) = t == 0 ? 0.0 : n.value.at(row - 1, h);
                    }
                    if (needs(1)) as_mat(gin(1)).noalias() += z.transpose() * da;
                    if (needs(2)) {
                        Tensor& gb = gin(2);
                        for (std::int64_t c = 0; c < 4 * hidden; ++c)
                            gb.data[static_cast<std::size_t>(c)] += da.col(c).sum();
                    }
                    RowMat dz = da * wm.transpose();
                    if (needs(0)) {
                        Tensor& gx = gin(0);
                        for (std::int64_t bi = 0; bi < batch; ++bi)
                            for (std::int64_t c = 0; c < in_dim; ++c) gx.at(bi * len + t, c) += dz(bi, c);
                    }
                    dh = dz.rightCols(hidden);
                }
                break;
            }
            case Op::kMaskedMeanPool: {
                if (!needs(0)) break;
                Tensor& gx = gin(0);
                const auto cols = g.cols();
                for (std::int64_t b = 0; b < n.batch; ++b) {
                    const double inv = 1.0 / n.saved[static_cast<std::size_t>(b)];
                    for (std::int64_t t = 0; t < n.len; ++t) {
                        if (!n.mask[static_cast<std::size_t>(b * n.len + t)]) continue;
                        for (std::int64_t c = 0; c < cols; ++c) gx.at(b * n.len + t, c) += g.at(b, c) * inv;
                    }
                }
                break;
            }
            case Op::kMeanStack: {
                const double inv = 1.0 / static_cast<double>(n.inputs.size());
                for (std::size_t s = 0; s < n.inputs.size(); ++s) {
                    if (!needs(s)) continue;
                    Tensor& gi = gin(s);
                    for (std::size_t i = 0; i < gi.data.size(); ++i) gi.data[i] += g.data[i] * inv;
                }
                break;
            }
            case Op::kSoftmaxXent: {
                if (!needs(0)) break;
                Tensor& gl = gin(0);
                const auto rows = gl.rows(), cols = gl.cols();
                const double gs = g.data[0] / static_cast<double>(rows);
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t c = 0; c < cols; ++c) {
                        const double p = n.saved[static_cast<std::size_t>(r * cols + c)];
                        const double onehot = n.ids[static_cast<std::size_t>(r)] == c ? 1.0 : 0.0;
                        gl.at(r, c) += gs * (p - onehot);
                    }
                break;
            }
            case Op::kSum: {
                if (!needs(0)) break;
                Tensor& ga = gin(0);
                for (auto& x : ga.data) x += g.data[0];
                break;
            }
        }
    }
    return grads;
}

double finite_diff_check(const std::function<double()>& f, const std::vector<Tensor*>& params,
                         const std::vector<const Tensor*>& analytic, double h, int n_probe,
                         std::uint64_t seed) {
    if (h <= 0.0) throw DataError("finite_diff_check: h must be positive");
    if (n_probe < 1) throw DataError("finite_diff_check: n_probe must be >= 1");
    if (params.size() != analytic.size())
        throw DataError("finite_diff_check: params/analytic size mismatch");
    std::int64_t total = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i]->same_shape(*analytic[i]))
            throw DataError("finite_diff_check: gradient shape mismatch at tensor " + std::to_string(i));
        total += params[i]->numel();
    }
    if (total == 0) throw DataError("finite_diff_check: no parameters");

    Rng rng(derive_seed(seed, "fdcheck"));
    double max_rel = 0.0;
    for (int probe = 0; probe < n_probe; ++probe) {
        auto flat = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(total)));
        std::size_t ti = 0;
        while (flat >= params[ti]->numel()) flat -= params[ti++]->numel();
        double& wref = params[ti]->data[static_cast<std::size_t>(flat)];
        const double w0 = wref;
        wref = w0 + h;
        const double fp = f();
        wref = w0 - h;
        const double fm = f();
        wref = w0;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw DataError("finite_diff_check: non-finite loss at probe point");
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic[ti]->data[static_cast<std::size_t>(flat)];
        const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(numeric));
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace subkit
