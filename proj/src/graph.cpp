#include "weakpair/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace weakpair::grad {

std::string_view op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Affine: return "affine";
        case Op::Add: return "add";
        case Op::Multiply: return "multiply";
        case Op::Tanh: return "tanh";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Sigmoid: return "sigmoid";
        case Op::L2Normalize: return "l2_normalize";
        case Op::CosineMatrix: return "cosine_matrix";
        case Op::SoftmaxRows: return "softmax_rows";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::Detach: return "detach";
        case Op::GatherRows: return "gather_rows";
        case Op::ConcatRows: return "concat_rows";
        case Op::ConcatCols: return "concat_cols";
        case Op::Transpose: return "transpose";
        case Op::Diagonal: return "diagonal";
        case Op::Clamp: return "clamp";
        case Op::Count_: break;
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// Forward kernels

Tensor l2_normalize_rows(const Tensor& x, std::vector<std::size_t>* zero_rows) {
    Tensor out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const double n = norm(x.row_span(r));
        if (n == 0.0) {
            if (zero_rows) zero_rows->push_back(r);
            continue;
        }
        for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) / n;
    }
    return out;
}

Tensor cosine_matrix(const Tensor& a, const Tensor& b) { return matmul_transposed(a, b); }

Tensor softmax_rows(const Tensor& x) {
    Tensor out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row_span(r);
        auto o = out.row_span(r);
        const double m = *std::max_element(in.begin(), in.end());
        double z = 0.0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            o[c] = std::exp(in[c] - m);
            z += o[c];
        }
        for (double& v : o) v /= z;
    }
    return out;
}

namespace {

const Tensor& broadcast_shape(const Tensor& a, const Tensor& b, std::string_view what) {
    if (a.same_shape(b) || b.is_scalar()) return a;
    if (a.is_scalar()) return b;
    throw ShapeError(std::string(what) + ": incompatible shapes " + a.shape_string() + " and " +
                     b.shape_string());
}

double at_broadcast(const Tensor& t, std::size_t i) { return t.is_scalar() ? t[0] : t[i]; }

template <class F>
Tensor map(const Tensor& x, F f) {
    Tensor out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    return out;
}

Tensor& slot(std::vector<Tensor>& grads, const Graph& g, NodeId id) {
    Tensor& t = grads[id.index];
    if (t.size() == 0 && g.value(id).size() != 0) {
        const Tensor& v = g.value(id);
        t = Tensor(v.rows(), v.cols());
    }
    return t;
}

// Adds `delta` into the gradient of `id`, reducing to a scalar when `id` was
// broadcast.
void accumulate(std::vector<Tensor>& grads, const Graph& g, NodeId id, const Tensor& delta) {
    Tensor& t = slot(grads, g, id);
    if (t.same_shape(delta)) {
        for (std::size_t i = 0; i < t.size(); ++i) t[i] += delta[i];
    } else if (t.is_scalar()) {
        double s = 0.0;
        for (std::size_t i = 0; i < delta.size(); ++i) s += delta[i];
        t[0] += s;
    } else {
        throw ShapeError("gradient shape mismatch for node " + std::to_string(id.index));
    }
}

// ---------------------------------------------------------------------------
// Backward rules

void bw_none(const Graph&, const Node&, const Tensor&, std::vector<Tensor>&) {}

void bw_affine(const Graph& g, const Node& n, const Tensor& dy, std::vector<Tensor>& grads) {
    const Tensor& x = g.value(n.inputs[0]);
    const Tensor& w = g.value(n.inputs[1]);
    const std::size_t rows = x.rows(), in = x.cols(), out = w.cols();
    Tensor& dx = slot(grads, g, n.inputs[0]);
    Tensor& dw = slot(grads, g, n.inputs[1]);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < in; ++i) {
            double s = 0.0;
            for (std::size_t o = 0; o < out; ++o) s += dy(r, o) * w(i, o);
            dx(r, i) += s;
        }
    }
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < in; ++i) {
            const double xv = x(r, i);
            for (std::size_t o = 0; o < out; ++o) dw(i, o) += xv * dy(r, o);
        }
    }
    Tensor& db = slot(grads, g, n.inputs[2]);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < out; ++o) db(0, o) += dy(r, o);
    }
}

void bw_add(const Graph& g, const Node& n, const Tensor& dy, std::vector<Tensor>& grads) {
    accumulate(grads, g, n.inputs[0], dy);
    accumulate(grads, g, n.inputs[1], dy);
}

void bw_multiply(const Graph& g, const Node& n, const Tensor& dy, std::vector<Tensor>& grads) {
    const Tensor& a = g.value(n.inputs[0]);
    const Tensor& b = g.value(n.inputs[1]);
    Tensor da(dy.rows(), dy.cols()), db(dy.rows(), dy.cols());
    for (std::size_t i = 0; i < dy.size(); ++i) {
        da[i] = dy[i] * at_broadcast(b, i);
        db[i] = dy[i] * at_broadcast(a, i);
    }
    accumulate(grads, g, n.inputs[0], da);
    accumulate(grads, g, n.inputs[1], db);
}

template <class F>
void unary(const Graph& g, const Node& n, const Tensor& dy, std::vector<Tensor>& grads, F local) {
    const Tensor& x = g.value(n.inputs[0]);
    Tensor& dx = slot(grads, g, n.inputs[0]);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * local(x[i], n.value[i]);
}

void bw_tanh(const Graph& g, const Node& n, const Tensor& dy, std::vector<Tensor>& grads) {
    unary(g, n, dy, grads, [](double, double y) { return 1.0 - y * y; });
}

void bw_exp(const Graph& g, const Node& n, const Tensor& dy, std::vector<Tensor>& grads) {
    unary(g, n, dy, grads, [](double, double y) { return y; });
}

void bw_log(const Graph& g, const Node& n, const Tensor& dy, std::vector<Tensor>& grads) {
    unary(g, n, dy, grads, [](double x, double) { return 1.0 / x; });
}

void bw_sigmoid(const Graph& g, const Node& n, const Tensor& dy, std::vector<Tensor>& grads) {
    unary(g, n, dy, grads, [](double, double y) { return y * (1.0 - y); });
}

void bw_l2_normalize(const Graph& g, const Node& n, const Tensor& dy,
                     std::vector<Tensor>& grads) {
    const Tensor& x = g.value(n.inputs[0]);
    const Tensor& y = n.value;
    Tensor& dx = slot(grads, g, n.inputs[0]);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const double len = norm(x.row_span(r));
        if (len == 0.0) continue;
        const double proj = dot(y.row_span(r), dy.row_span(r));
        for (std::size_t c = 0; c < x.cols(); ++c) {
            dx(r, c) += (dy(r, c) - y(r, c) * proj) / len;
        }
    }
}

void bw_cosine_matrix(const Graph& g, const Node& n, const Tensor& dy,
                      std::vector<Tensor>& grads) {
    const Tensor& a = g.value(n.inputs[0]);
    const Tensor& b = g.value(n.inputs[1]);
    Tensor& da = slot(grads, g, n.inputs[0]);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double s = dy(i, j);
            if (s == 0.0) continue;
            for (std::size_t c = 0; c < a.cols(); ++c) da(i, c) += s * b(j, c);
        }
    }
    Tensor& db = slot(grads, g, n.inputs[1]);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double s = dy(i, j);
            if (s == 0.0) continue;
            for (std::size_t c = 0; c < a.cols(); ++c) db(j, c) += s * a(i, c);
        }
    }
}

void bw_softmax_rows(const Graph& g, const Node& n, const Tensor& dy,
                     std::vector<Tensor>& grads) {
    const Tensor& y = n.value;
    Tensor& dx = slot(grads, g, n.inputs[0]);
    for (std::size_t r = 0; r < y.rows(); ++r) {
        const double inner = dot(y.row_span(r), dy.row_span(r));
        for (std::size_t c = 0; c < y.cols(); ++c) dx(r, c) += y(r, c) * (dy(r, c) - inner);
    }
}

void bw_sum(const Graph& g, const Node& n, const Tensor& dy, std::vector<Tensor>& grads) {
    Tensor& dx = slot(grads, g, n.inputs[0]);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[0];
}

void bw_mean(const Graph& g, const Node& n, const Tensor& dy, std::vector<Tensor>& grads) {
    Tensor& dx = slot(grads, g, n.inputs[0]);
    const double share = dy[0] / static_cast<double>(dx.size());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += share;
}

void bw_gather_rows(const Graph& g, const Node& n, const Tensor& dy,
                    std::vector<Tensor>& grads) {
    Tensor& dx = slot(grads, g, n.inputs[0]);
    for (std::size_t k = 0; k < n.indices.size(); ++k) {
        for (std::size_t c = 0; c < dy.cols(); ++c) dx(n.indices[k], c) += dy(k, c);
    }
}

void bw_concat_rows(const Graph& g, const Node& n, const Tensor& dy,
                    std::vector<Tensor>& grads) {
    std::size_t offset = 0;
    for (NodeId in : n.inputs) {
        Tensor& dx = slot(grads, g, in);
        for (std::size_t r = 0; r < dx.rows(); ++r) {
            for (std::size_t c = 0; c < dx.cols(); ++c) dx(r, c) += dy(offset + r, c);
        }
        offset += dx.rows();
    }
}

void bw_concat_cols(const Graph& g, const Node& n, const Tensor& dy,
                    std::vector<Tensor>& grads) {
    std::size_t offset = 0;
    for (NodeId in : n.inputs) {
        Tensor& dx = slot(grads, g, in);
        for (std::size_t r = 0; r < dx.rows(); ++r) {
            for (std::size_t c = 0; c < dx.cols(); ++c) dx(r, c) += dy(r, offset + c);
        }
        offset += dx.cols();
    }
}

void bw_transpose(const Graph& g, const Node& n, const Tensor& dy, std::vector<Tensor>& grads) {
    Tensor& dx = slot(grads, g, n.inputs[0]);
    for (std::size_t r = 0; r < dx.rows(); ++r) {
        for (std::size_t c = 0; c < dx.cols(); ++c) dx(r, c) += dy(c, r);
    }
}

void bw_diagonal(const Graph& g, const Node& n, const Tensor& dy, std::vector<Tensor>& grads) {
    Tensor& dx = slot(grads, g, n.inputs[0]);
    for (std::size_t i = 0; i < dy.rows(); ++i) dx(i, i) += dy[i];
}

void bw_clamp(const Graph& g, const Node& n, const Tensor& dy, std::vector<Tensor>& grads) {
    const Tensor& x = g.value(n.inputs[0]);
    Tensor& dx = slot(grads, g, n.inputs[0]);
    for (std::size_t i = 0; i < dy.size(); ++i) {
        if (x[i] >= n.lo && x[i] <= n.hi) dx[i] += dy[i];
    }
}

BackwardTable make_standard() {
    BackwardTable t;
    auto set = [&t](Op op, BackwardRule r) { t.rules[static_cast<std::size_t>(op)] = r; };
    set(Op::Leaf, bw_none);
    set(Op::Affine, bw_affine);
    set(Op::Add, bw_add);
    set(Op::Multiply, bw_multiply);
    set(Op::Tanh, bw_tanh);
    set(Op::Exp, bw_exp);
    set(Op::Log, bw_log);
    set(Op::Sigmoid, bw_sigmoid);
    set(Op::L2Normalize, bw_l2_normalize);
    set(Op::CosineMatrix, bw_cosine_matrix);
    set(Op::SoftmaxRows, bw_softmax_rows);
    set(Op::Sum, bw_sum);
    set(Op::Mean, bw_mean);
    set(Op::Detach, bw_none);
    set(Op::GatherRows, bw_gather_rows);
    set(Op::ConcatRows, bw_concat_rows);
    set(Op::ConcatCols, bw_concat_cols);
    set(Op::Transpose, bw_transpose);
    set(Op::Diagonal, bw_diagonal);
    set(Op::Clamp, bw_clamp);
    return t;
}

}  // namespace

const BackwardTable& BackwardTable::standard() {
    static const BackwardTable table = make_standard();
    return table;
}

BackwardTable BackwardTable::with(Op op, BackwardRule rule) const {
    BackwardTable copy = *this;
    copy.rules[static_cast<std::size_t>(op)] = rule;
    return copy;
}

Gradients::Gradients(std::vector<Tensor> grads, const Graph& graph) : grads_(std::move(grads)) {
    for (std::size_t i = 0; i < grads_.size(); ++i) {
        if (grads_[i].size() == 0) {
            const Tensor& v = graph.value(NodeId{i});
            grads_[i] = Tensor(v.rows(), v.cols());
        }
    }
}

// ---------------------------------------------------------------------------
// Graph builders

NodeId Graph::push(Node node) {
    nodes_.push_back(std::move(node));
    return NodeId{nodes_.size() - 1};
}

void Graph::check(NodeId id) const {
    if (id.index >= nodes_.size()) {
        throw ContractViolation("node id " + std::to_string(id.index) + " not in graph");
    }
}

NodeId Graph::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
}

NodeId Graph::parameter(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.trainable = true;
    NodeId id = push(std::move(n));
    parameters_.push_back(id);
    return id;
}

NodeId Graph::affine(NodeId x, NodeId w, NodeId b) {
    check(x), check(w), check(b);
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(b);
    if (xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols()) {
        throw ShapeError("affine: " + xv.shape_string() + " * " + wv.shape_string() + " + " +
                         bv.shape_string());
    }
    Tensor out(xv.rows(), wv.cols());
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        for (std::size_t o = 0; o < wv.cols(); ++o) out(r, o) = bv(0, o);
        for (std::size_t i = 0; i < xv.cols(); ++i) {
            const double s = xv(r, i);
            for (std::size_t o = 0; o < wv.cols(); ++o) out(r, o) += s * wv(i, o);
        }
    }
    Node n;
    n.op = Op::Affine;
    n.inputs = {x, w, b};
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
    check(a), check(b);
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    const Tensor& shape = broadcast_shape(av, bv, "add");
    Tensor out(shape.rows(), shape.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = at_broadcast(av, i) + at_broadcast(bv, i);
    Node n;
    n.op = Op::Add;
    n.inputs = {a, b};
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Graph::multiply(NodeId a, NodeId b) {
    check(a), check(b);
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    const Tensor& shape = broadcast_shape(av, bv, "multiply");
    Tensor out(shape.rows(), shape.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = at_broadcast(av, i) * at_broadcast(bv, i);
    Node n;
    n.op = Op::Multiply;
    n.inputs = {a, b};
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Graph::tanh(NodeId x) {
    check(x);
    Node n;
    n.op = Op::Tanh;
    n.inputs = {x};
    n.value = map(value(x), [](double v) { return std::tanh(v); });
    return push(std::move(n));
}

NodeId Graph::exp(NodeId x) {
    check(x);
    Node n;
    n.op = Op::Exp;
    n.inputs = {x};
    n.value = map(value(x), [](double v) { return std::exp(v); });
    return push(std::move(n));
}

NodeId Graph::log(NodeId x) {
    check(x);
    Node n;
    n.op = Op::Log;
    n.inputs = {x};
    n.value = map(value(x), [](double v) { return std::log(v); });
    return push(std::move(n));
}

NodeId Graph::sigmoid(NodeId x) {
    check(x);
    Node n;
    n.op = Op::Sigmoid;
    n.inputs = {x};
    n.value = map(value(x), [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
    });
    return push(std::move(n));
}

NodeId Graph::l2_normalize(NodeId x) {
    check(x);
    Node n;
    n.op = Op::L2Normalize;
    n.inputs = {x};
    n.value = l2_normalize_rows(value(x), &n.flagged);
    degenerate_rows_ += n.flagged.size();
    return push(std::move(n));
}

NodeId Graph::cosine_matrix(NodeId a, NodeId b) {
    check(a), check(b);
    Node n;
    n.op = Op::CosineMatrix;
    n.inputs = {a, b};
    n.value = grad::cosine_matrix(value(a), value(b));
    return push(std::move(n));
}

NodeId Graph::softmax_rows(NodeId x) {
    check(x);
    Node n;
    n.op = Op::SoftmaxRows;
    n.inputs = {x};
    n.value = grad::softmax_rows(value(x));
    return push(std::move(n));
}

NodeId Graph::sum(NodeId x) {
    check(x);
    double s = 0.0;
    for (double v : value(x).data()) s += v;
    Node n;
    n.op = Op::Sum;
    n.inputs = {x};
    n.value = Tensor::scalar(s);
    return push(std::move(n));
}

NodeId Graph::mean(NodeId x) {
    check(x);
    const Tensor& xv = value(x);
    if (xv.size() == 0) throw ShapeError("mean of empty tensor");
    double s = 0.0;
    for (double v : xv.data()) s += v;
    Node n;
    n.op = Op::Mean;
    n.inputs = {x};
    n.value = Tensor::scalar(s / static_cast<double>(xv.size()));
    return push(std::move(n));
}

NodeId Graph::detach(NodeId x) {
    check(x);
    Node n;
    n.op = Op::Detach;
    n.inputs = {x};
    n.value = value(x);
    return push(std::move(n));
}

NodeId Graph::gather_rows(NodeId x, std::vector<std::size_t> rows) {
    check(x);
    const Tensor& xv = value(x);
    Tensor out(rows.size(), xv.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] >= xv.rows()) {
            throw ShapeError("gather_rows: row " + std::to_string(rows[k]) + " out of " +
                             xv.shape_string());
        }
        for (std::size_t c = 0; c < xv.cols(); ++c) out(k, c) = xv(rows[k], c);
    }
    Node n;
    n.op = Op::GatherRows;
    n.inputs = {x};
    n.value = std::move(out);
    n.indices = std::move(rows);
    return push(std::move(n));
}

NodeId Graph::concat_rows(std::span<const NodeId> parts) {
    if (parts.empty()) throw ShapeError("concat_rows of nothing");
    std::size_t rows = 0;
    const std::size_t cols = value(parts[0]).cols();
    for (NodeId p : parts) {
        check(p);
        if (value(p).cols() != cols) throw ShapeError("concat_rows: column count mismatch");
        rows += value(p).rows();
    }
    std::vector<double> data;
    data.reserve(rows * cols);
    for (NodeId p : parts) {
        auto d = value(p).data();
        data.insert(data.end(), d.begin(), d.end());
    }
    Node n;
    n.op = Op::ConcatRows;
    n.inputs.assign(parts.begin(), parts.end());
    n.value = Tensor(rows, cols, std::move(data));
    return push(std::move(n));
}

NodeId Graph::concat_cols(std::span<const NodeId> parts) {
    if (parts.empty()) throw ShapeError("concat_cols of nothing");
    std::size_t cols = 0;
    const std::size_t rows = value(parts[0]).rows();
    for (NodeId p : parts) {
        check(p);
        if (value(p).rows() != rows) throw ShapeError("concat_cols: row count mismatch");
        cols += value(p).cols();
    }
    Tensor out(rows, cols);
    std::size_t offset = 0;
    for (NodeId p : parts) {
        const Tensor& v = value(p);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < v.cols(); ++c) out(r, offset + c) = v(r, c);
        }
        offset += v.cols();
    }
    Node n;
    n.op = Op::ConcatCols;
    n.inputs.assign(parts.begin(), parts.end());
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Graph::transpose(NodeId x) {
    check(x);
    const Tensor& xv = value(x);
    Tensor out(xv.cols(), xv.rows());
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        for (std::size_t c = 0; c < xv.cols(); ++c) out(c, r) = xv(r, c);
    }
    Node n;
    n.op = Op::Transpose;
    n.inputs = {x};
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Graph::diagonal(NodeId x) {
    check(x);
    const Tensor& xv = value(x);
    if (xv.rows() != xv.cols()) throw ShapeError("diagonal of non-square " + xv.shape_string());
    Tensor out(xv.rows(), 1);
    for (std::size_t i = 0; i < xv.rows(); ++i) out[i] = xv(i, i);
    Node n;
    n.op = Op::Diagonal;
    n.inputs = {x};
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Graph::clamp(NodeId x, double lo, double hi) {
    check(x);
    Node n;
    n.op = Op::Clamp;
    n.inputs = {x};
    n.lo = lo;
    n.hi = hi;
    const Tensor& xv = value(x);
    n.value = Tensor(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        if (xv[i] < lo || xv[i] > hi) n.flagged.push_back(i);
        n.value[i] = std::clamp(xv[i], lo, hi);
    }
    clamped_entries_ += n.flagged.size();
    return push(std::move(n));
}

Gradients Graph::backward(NodeId loss) const {
    check(loss);
    if (!value(loss).is_scalar()) {
        throw ContractViolation("backward requires a scalar loss, got " +
                                value(loss).shape_string());
    }
    std::vector<Tensor> grads(nodes_.size());
    grads[loss.index] = Tensor::scalar(1.0);
    for (std::size_t i = loss.index + 1; i-- > 0;) {
        if (grads[i].size() == 0) continue;
        const Node& n = nodes_[i];
        rules_->rules[static_cast<std::size_t>(n.op)](*this, n, grads[i], grads);
    }
    return Gradients(std::move(grads), *this);
}

}  // namespace weakpair::grad
