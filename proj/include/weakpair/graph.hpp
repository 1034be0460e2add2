#pragma once

// Reverse-mode differentiation over a small, fixed set of matrix ops.
//
// A Graph is a tape: every builder call evaluates its op eagerly and appends a
// node, so insertion order is a topological order. backward() walks the tape
// in reverse and dispatches each node to the rule registered for its op in
// the graph's BackwardTable.

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "weakpair/tensor.hpp"

namespace weakpair::grad {

enum class Op : std::uint8_t {
    Leaf,
    Affine,
    Add,
    Multiply,
    Tanh,
    Exp,
    Log,
    Sigmoid,
    L2Normalize,
    CosineMatrix,
    SoftmaxRows,
    Sum,
    Mean,
    Detach,
    // Index/reshape plumbing; these move values around but add no calculus.
    GatherRows,
    ConcatRows,
    ConcatCols,
    Transpose,
    Diagonal,
    Clamp,
    Count_,
};

inline constexpr std::size_t kOpCount = static_cast<std::size_t>(Op::Count_);

std::string_view op_name(Op op);

struct NodeId {
    std::size_t index = 0;
    friend auto operator<=>(NodeId, NodeId) = default;
};

class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

struct Node {
    Op op = Op::Leaf;
    std::vector<NodeId> inputs;
    Tensor value;
    bool trainable = false;
    std::vector<std::size_t> indices;  // GatherRows: source rows
    double lo = 0.0;                   // Clamp bounds
    double hi = 0.0;
    std::vector<std::size_t> flagged;  // L2Normalize: zero rows; Clamp: clamped entries
};

class Graph;

// Accumulates the gradient of `node`'s inputs given the gradient of its output.
// grads is indexed by node; an empty tensor stands for an all-zero gradient.
using BackwardRule = void (*)(const Graph& graph, const Node& node, const Tensor& grad_out,
                              std::vector<Tensor>& grads);

struct BackwardTable {
    std::array<BackwardRule, kOpCount> rules{};

    static const BackwardTable& standard();
    BackwardTable with(Op op, BackwardRule rule) const;
};

class Gradients {
public:
    Gradients(std::vector<Tensor> grads, const Graph& graph);
    // Gradient w.r.t. node `id`; zeros shaped like its value when unreached.
    const Tensor& of(NodeId id) const { return grads_[id.index]; }

private:
    std::vector<Tensor> grads_;
};

class Graph {
public:
    explicit Graph(const BackwardTable& rules = BackwardTable::standard()) : rules_(&rules) {}

    NodeId constant(Tensor value);
    NodeId parameter(Tensor value);

    // x (n x in) * w (in x out) + b (1 x out)
    NodeId affine(NodeId x, NodeId w, NodeId b);
    // Elementwise; either operand may be a 1 x 1 scalar that broadcasts.
    NodeId add(NodeId a, NodeId b);
    NodeId multiply(NodeId a, NodeId b);
    NodeId tanh(NodeId x);
    NodeId exp(NodeId x);
    NodeId log(NodeId x);
    NodeId sigmoid(NodeId x);
    // Row-wise unit normalization. Zero rows stay zero and are recorded in the
    // node's `flagged` list rather than patched with an epsilon.
    NodeId l2_normalize(NodeId x);
    // a (n x d), b (m x d) with unit rows -> n x m matrix of dot products.
    NodeId cosine_matrix(NodeId a, NodeId b);
    NodeId softmax_rows(NodeId x);
    NodeId sum(NodeId x);
    NodeId mean(NodeId x);
    NodeId detach(NodeId x);

    NodeId gather_rows(NodeId x, std::vector<std::size_t> rows);
    NodeId concat_rows(std::span<const NodeId> parts);
    NodeId concat_rows(std::initializer_list<NodeId> parts) {
        return concat_rows(std::span<const NodeId>(parts.begin(), parts.size()));
    }
    NodeId concat_cols(std::span<const NodeId> parts);
    NodeId concat_cols(std::initializer_list<NodeId> parts) {
        return concat_cols(std::span<const NodeId>(parts.begin(), parts.size()));
    }
    NodeId transpose(NodeId x);
    // n x n -> n x 1
    NodeId diagonal(NodeId x);
    // Values outside [lo, hi] are clamped and receive zero gradient.
    NodeId clamp(NodeId x, double lo, double hi);

    // Convenience compositions over the op set.
    NodeId scale(NodeId x, double factor) { return multiply(x, constant(Tensor::scalar(factor))); }
    NodeId add_scalar(NodeId x, double c) { return add(x, constant(Tensor::scalar(c))); }
    NodeId negate(NodeId x) { return scale(x, -1.0); }
    NodeId subtract(NodeId a, NodeId b) { return add(a, negate(b)); }

    const Tensor& value(NodeId id) const { return nodes_.at(id.index).value; }
    const Node& node(NodeId id) const { return nodes_.at(id.index); }
    std::size_t size() const { return nodes_.size(); }
    const std::vector<NodeId>& parameters() const { return parameters_; }

    std::size_t degenerate_rows() const { return degenerate_rows_; }
    std::size_t clamped_entries() const { return clamped_entries_; }

    // Requires a 1 x 1 loss node.
    Gradients backward(NodeId loss) const;

private:
    NodeId push(Node node);
    void check(NodeId id) const;

    const BackwardTable* rules_;
    std::vector<Node> nodes_;
    std::vector<NodeId> parameters_;
    std::size_t degenerate_rows_ = 0;
    std::size_t clamped_entries_ = 0;
};

// Graph-free forward kernels shared with evaluation code.
Tensor l2_normalize_rows(const Tensor& x, std::vector<std::size_t>* zero_rows = nullptr);
Tensor cosine_matrix(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& x);

}  // namespace weakpair::grad
