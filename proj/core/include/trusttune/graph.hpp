#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trusttune/tensor.hpp"

namespace trusttune {

using NodeId = std::uint32_t;

enum class OpKind : std::uint8_t {
    kParam,
    kConstant,
    kMatMul,
    kTranspose,
    kAdd,
    kSub,
    kMul,
    kAddRowBias,
    kScale,
    kScaleBy,
    kReciprocal,
    kTanh,
    kLogFloored,
    kSoftmaxRows,
    kLogSoftmaxRows,
    kSumAll,
    kMeanAll,
    kMeanRows,
    kRow,
    kSelect,
    kLayerNorm,
    kEmbedding,
    kConcatRows,
};

const char* op_name(OpKind op);

struct PassCounters {
    std::uint64_t forward = 0;
    std::uint64_t backward = 0;
    std::uint64_t xfp() const { return forward + 2 * backward; }
};

// Append-only reverse-mode tape. Ops evaluate eagerly in creation order, so
// replaying an identical program yields bitwise-identical values. A "forward
// pass" is a whole-model evaluation declared by the caller via
// count_forward_pass(); backward() counts one backward pass.
class Graph {
public:
    // Leaf bound to external storage; backward accumulates into t.grad.
    NodeId param(Tensor& t);
    // Leaf without gradient tracking; the tape owns a copy.
    NodeId constant(Tensor t);
    NodeId constant_scalar(double v) { return constant(Tensor::scalar(v)); }

    NodeId matmul(NodeId a, NodeId b);
    NodeId transpose(NodeId a);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    // matrix (m x n) plus a length-n bias broadcast over rows; the only
    // broadcast in the op set.
    NodeId add_row_bias(NodeId m, NodeId bias);
    NodeId scale(NodeId a, double c);
    // tensor times a scalar node (gradient flows to both).
    NodeId scale_by(NodeId a, NodeId scalar_node);
    NodeId reciprocal(NodeId a);
    NodeId tanh_op(NodeId a);
    // ln(max(x, floor)); the probability floor before logs.
    NodeId log_floored(NodeId a, double floor = 1e-12);
    NodeId softmax_rows(NodeId a);
    NodeId log_softmax_rows(NodeId a);
    NodeId sum_all(NodeId a);
    NodeId mean_all(NodeId a);
    NodeId mean_rows(NodeId a);
    NodeId row(NodeId a, std::size_t r);
    NodeId select(NodeId a, std::size_t flat_index);
    NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, double eps = 1e-5);
    NodeId embedding(NodeId table, const std::vector<int>& ids);
    NodeId concat_rows(NodeId a, NodeId b);

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    double scalar_value(NodeId id) const;
    bool requires_grad(NodeId id) const { return nodes_[id].needs_grad; }
    // Gradient buffer of an interior node after backward (empty if untouched).
    const std::vector<double>& node_grad(NodeId id) const { return nodes_[id].grad; }

    // Reverse sweep from a scalar loss; accumulates into bound leaf tensors.
    void backward(NodeId loss);

    void count_forward_pass() { ++forward_count_; }
    std::uint64_t forward_count() const { return forward_count_; }
    std::uint64_t backward_count() const { return backward_count_; }
    PassCounters pass_counters() const { return {forward_count_, backward_count_}; }

    std::size_t node_count() const { return nodes_.size(); }
    void reserve(std::size_t n) { nodes_.reserve(n); }

private:
    struct Node {
        OpKind op;
        NodeId in[3] = {0, 0, 0};
        int num_in = 0;
        Tensor value;
        std::vector<double> grad;
        bool needs_grad = false;
        Tensor* leaf = nullptr;
        // per-op payloads
        std::vector<int> ids;        // embedding
        std::size_t index = 0;       // row/select
        double scalar = 0.0;         // scale factor / log floor / layernorm eps
        std::vector<double> saved;   // layer_norm: per-row mean, inv-stddev
    };

    NodeId push(Node n);
    const Tensor& in_val(const Node& n, int i) const { return nodes_[n.in[i]].value; }
    std::vector<double>& grad_buf(NodeId id);
    void check_finite(const Node& n) const;

    std::vector<Node> nodes_;
    std::uint64_t forward_count_ = 0;
    std::uint64_t backward_count_ = 0;
};

}  // namespace trusttune
