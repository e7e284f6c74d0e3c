#include "trusttune/graph.hpp"

#include <algorithm>
#include <cmath>

#include "trusttune/errors.hpp"

namespace trusttune {

const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::kParam: return "param";
        case OpKind::kConstant: return "constant";
        case OpKind::kMatMul: return "matmul";
        case OpKind::kTranspose: return "transpose";
        case OpKind::kAdd: return "add";
        case OpKind::kSub: return "sub";
        case OpKind::kMul: return "multiply";
        case OpKind::kAddRowBias: return "add_row_bias";
        case OpKind::kScale: return "scale";
        case OpKind::kScaleBy: return "scale_by";
        case OpKind::kReciprocal: return "reciprocal";
        case OpKind::kTanh: return "tanh";
        case OpKind::kLogFloored: return "log";
        case OpKind::kSoftmaxRows: return "softmax";
        case OpKind::kLogSoftmaxRows: return "log_softmax";
        case OpKind::kSumAll: return "sum";
        case OpKind::kMeanAll: return "mean";
        case OpKind::kMeanRows: return "mean_rows";
        case OpKind::kRow: return "row";
        case OpKind::kSelect: return "select";
        case OpKind::kLayerNorm: return "layer_norm";
        case OpKind::kEmbedding: return "embedding";
        case OpKind::kConcatRows: return "concat_rows";
    }
    return "?";
}

namespace {

[[noreturn]] void shape_fail(OpKind op, const std::string& detail) {
    throw ShapeError(std::string(op_name(op)) + ": " + detail);
}

// Last-axis layout: R rows of C columns. 1-D tensors are one row.
void row_layout(const Tensor& t, std::size_t& rows, std::size_t& cols) {
    if (t.shape.size() == 1) {
        rows = 1;
        cols = t.shape[0];
    } else if (t.shape.size() == 2) {
        rows = t.shape[0];
        cols = t.shape[1];
    } else {
        throw ShapeError("softmax/layer_norm support 1-D or 2-D tensors, got " + shape_str(t.shape));
    }
}

}  // namespace

NodeId Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

void Graph::check_finite(const Node& n) const {
    if (!n.value.all_finite()) {
        throw NumericError(std::string(op_name(n.op)) + " produced a non-finite value");
    }
}

NodeId Graph::param(Tensor& t) {
    Node n;
    n.op = OpKind::kParam;
    n.value = t;  // snapshot of current values
    n.needs_grad = true;
    n.leaf = &t;
    return push(std::move(n));
}

NodeId Graph::constant(Tensor t) {
    Node n;
    n.op = OpKind::kConstant;
    n.value = std::move(t);
    n.needs_grad = false;
    return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    const Tensor& A = nodes_[a].value;
    const Tensor& B = nodes_[b].value;
    if (!A.is_matrix() || !B.is_matrix())
        shape_fail(OpKind::kMatMul, "requires matrices, got " + shape_str(A.shape) + " and " + shape_str(B.shape));
    if (A.cols() != B.rows())
        shape_fail(OpKind::kMatMul, "inner dimensions disagree: " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    const std::size_t m = A.rows(), k = A.cols(), p = B.cols();
    Node n;
    n.op = OpKind::kMatMul;
    n.in[0] = a;
    n.in[1] = b;
    n.num_in = 2;
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    n.value = Tensor::zeros({m, p});
    const double* av = A.values.data();
    const double* bv = B.values.data();
    double* out = n.value.values.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t t = 0; t < k; ++t) {
            const double av_it = av[i * k + t];
            if (av_it == 0.0) continue;
            const double* brow = bv + t * p;
            double* orow = out + i * p;
            for (std::size_t j = 0; j < p; ++j) orow[j] += av_it * brow[j];
        }
    }
    return push(std::move(n));
}

NodeId Graph::transpose(NodeId a) {
    const Tensor& A = nodes_[a].value;
    if (!A.is_matrix()) shape_fail(OpKind::kTranspose, "requires a matrix, got " + shape_str(A.shape));
    Node n;
    n.op = OpKind::kTranspose;
    n.in[0] = a;
    n.num_in = 1;
    n.needs_grad = nodes_[a].needs_grad;
    n.value = Tensor::zeros({A.cols(), A.rows()});
    for (std::size_t i = 0; i < A.rows(); ++i)
        for (std::size_t j = 0; j < A.cols(); ++j) n.value.values[j * A.rows() + i] = A.values[i * A.cols() + j];
    return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
    const Tensor& A = nodes_[a].value;
    const Tensor& B = nodes_[b].value;
    if (!same_shape(A, B))
        shape_fail(OpKind::kAdd, "shapes differ: " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    Node n;
    n.op = OpKind::kAdd;
    n.in[0] = a;
    n.in[1] = b;
    n.num_in = 2;
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    n.value = A;
    for (std::size_t i = 0; i < B.size(); ++i) n.value.values[i] += B.values[i];
    return push(std::move(n));
}

NodeId Graph::sub(NodeId a, NodeId b) {
    const Tensor& A = nodes_[a].value;
    const Tensor& B = nodes_[b].value;
    if (!same_shape(A, B))
        shape_fail(OpKind::kSub, "shapes differ: " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    Node n;
    n.op = OpKind::kSub;
    n.in[0] = a;
    n.in[1] = b;
    n.num_in = 2;
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    n.value = A;
    for (std::size_t i = 0; i < B.size(); ++i) n.value.values[i] -= B.values[i];
    return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
    const Tensor& A = nodes_[a].value;
    const Tensor& B = nodes_[b].value;
    if (!same_shape(A, B))
        shape_fail(OpKind::kMul, "shapes differ: " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    Node n;
    n.op = OpKind::kMul;
    n.in[0] = a;
    n.in[1] = b;
    n.num_in = 2;
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    n.value = A;
    for (std::size_t i = 0; i < B.size(); ++i) n.value.values[i] *= B.values[i];
    return push(std::move(n));
}

NodeId Graph::add_row_bias(NodeId m, NodeId bias) {
    const Tensor& M = nodes_[m].value;
    const Tensor& B = nodes_[bias].value;
    if (!M.is_matrix() || B.shape.size() != 1 || B.shape[0] != M.cols())
        shape_fail(OpKind::kAddRowBias,
                   "requires (m x n) and (n,), got " + shape_str(M.shape) + " and " + shape_str(B.shape));
    Node n;
    n.op = OpKind::kAddRowBias;
    n.in[0] = m;
    n.in[1] = bias;
    n.num_in = 2;
    n.needs_grad = nodes_[m].needs_grad || nodes_[bias].needs_grad;
    n.value = M;
    const std::size_t rows = M.rows(), cols = M.cols();
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) n.value.values[i * cols + j] += B.values[j];
    return push(std::move(n));
}

NodeId Graph::scale(NodeId a, double c) {
    Node n;
    n.op = OpKind::kScale;
    n.in[0] = a;
    n.num_in = 1;
    n.needs_grad = nodes_[a].needs_grad;
    n.scalar = c;
    n.value = nodes_[a].value;
    for (double& v : n.value.values) v *= c;
    return push(std::move(n));
}

NodeId Graph::scale_by(NodeId a, NodeId scalar_node) {
    const Tensor& S = nodes_[scalar_node].value;
    if (!S.is_scalar()) shape_fail(OpKind::kScaleBy, "second input must be scalar, got " + shape_str(S.shape));
    Node n;
    n.op = OpKind::kScaleBy;
    n.in[0] = a;
    n.in[1] = scalar_node;
    n.num_in = 2;
    n.needs_grad = nodes_[a].needs_grad || nodes_[scalar_node].needs_grad;
    n.value = nodes_[a].value;
    const double s = S.values[0];
    for (double& v : n.value.values) v *= s;
    return push(std::move(n));
}

NodeId Graph::reciprocal(NodeId a) {
    Node n;
    n.op = OpKind::kReciprocal;
    n.in[0] = a;
    n.num_in = 1;
    n.needs_grad = nodes_[a].needs_grad;
    n.value = nodes_[a].value;
    for (double& v : n.value.values) v = 1.0 / v;
    check_finite(n);
    return push(std::move(n));
}

NodeId Graph::tanh_op(NodeId a) {
    Node n;
    n.op = OpKind::kTanh;
    n.in[0] = a;
    n.num_in = 1;
    n.needs_grad = nodes_[a].needs_grad;
    n.value = nodes_[a].value;
    for (double& v : n.value.values) v = std::tanh(v);
    return push(std::move(n));
}

NodeId Graph::log_floored(NodeId a, double floor) {
    Node n;
    n.op = OpKind::kLogFloored;
    n.in[0] = a;
    n.num_in = 1;
    n.needs_grad = nodes_[a].needs_grad;
    n.scalar = floor;
    n.value = nodes_[a].value;
    for (double& v : n.value.values) v = std::log(std::max(v, floor));
    check_finite(n);
    return push(std::move(n));
}

NodeId Graph::softmax_rows(NodeId a) {
    const Tensor& A = nodes_[a].value;
    std::size_t rows, cols;
    row_layout(A, rows, cols);
    Node n;
    n.op = OpKind::kSoftmaxRows;
    n.in[0] = a;
    n.num_in = 1;
    n.needs_grad = nodes_[a].needs_grad;
    n.value = A;
    for (std::size_t i = 0; i < rows; ++i) {
        double* r = n.value.values.data() + i * cols;
        double mx = r[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, r[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            r[j] = std::exp(r[j] - mx);
            sum += r[j];
        }
        for (std::size_t j = 0; j < cols; ++j) r[j] /= sum;
    }
    check_finite(n);
    return push(std::move(n));
}

NodeId Graph::log_softmax_rows(NodeId a) {
    const Tensor& A = nodes_[a].value;
    std::size_t rows, cols;
    row_layout(A, rows, cols);
    Node n;
    n.op = OpKind::kLogSoftmaxRows;
    n.in[0] = a;
    n.num_in = 1;
    n.needs_grad = nodes_[a].needs_grad;
    n.value = A;
    for (std::size_t i = 0; i < rows; ++i) {
        double* r = n.value.values.data() + i * cols;
        double mx = r[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, r[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) sum += std::exp(r[j] - mx);
        const double lse = mx + std::log(sum);
        for (std::size_t j = 0; j < cols; ++j) r[j] -= lse;
    }
    check_finite(n);
    return push(std::move(n));
}

NodeId Graph::sum_all(NodeId a) {
    Node n;
    n.op = OpKind::kSumAll;
    n.in[0] = a;
    n.num_in = 1;
    n.needs_grad = nodes_[a].needs_grad;
    double s = 0.0;
    for (double v : nodes_[a].value.values) s += v;
    n.value = Tensor::scalar(s);
    return push(std::move(n));
}

NodeId Graph::mean_all(NodeId a) {
    Node n;
    n.op = OpKind::kMeanAll;
    n.in[0] = a;
    n.num_in = 1;
    n.needs_grad = nodes_[a].needs_grad;
    double s = 0.0;
    for (double v : nodes_[a].value.values) s += v;
    n.value = Tensor::scalar(s / static_cast<double>(nodes_[a].value.size()));
    return push(std::move(n));
}

NodeId Graph::mean_rows(NodeId a) {
    const Tensor& A = nodes_[a].value;
    if (!A.is_matrix()) shape_fail(OpKind::kMeanRows, "requires a matrix, got " + shape_str(A.shape));
    const std::size_t rows = A.rows(), cols = A.cols();
    Node n;
    n.op = OpKind::kMeanRows;
    n.in[0] = a;
    n.num_in = 1;
    n.needs_grad = nodes_[a].needs_grad;
    n.value = Tensor::zeros({1, cols});
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) n.value.values[j] += A.values[i * cols + j];
    for (double& v : n.value.values) v /= static_cast<double>(rows);
    return push(std::move(n));
}

NodeId Graph::row(NodeId a, std::size_t r) {
    const Tensor& A = nodes_[a].value;
    if (!A.is_matrix()) shape_fail(OpKind::kRow, "requires a matrix, got " + shape_str(A.shape));
    if (r >= A.rows()) shape_fail(OpKind::kRow, "row index out of range");
    Node n;
    n.op = OpKind::kRow;
    n.in[0] = a;
    n.num_in = 1;
    n.needs_grad = nodes_[a].needs_grad;
    n.index = r;
    const std::size_t cols = A.cols();
    n.value = Tensor({1, cols}, std::vector<double>(A.values.begin() + r * cols, A.values.begin() + (r + 1) * cols));
    return push(std::move(n));
}

NodeId Graph::select(NodeId a, std::size_t flat_index) {
    const Tensor& A = nodes_[a].value;
    if (flat_index >= A.size()) shape_fail(OpKind::kSelect, "index out of range");
    Node n;
    n.op = OpKind::kSelect;
    n.in[0] = a;
    n.num_in = 1;
    n.needs_grad = nodes_[a].needs_grad;
    n.index = flat_index;
    n.value = Tensor::scalar(A.values[flat_index]);
    return push(std::move(n));
}

NodeId Graph::layer_norm(NodeId x, NodeId gain, NodeId bias, double eps) {
    const Tensor& X = nodes_[x].value;
    const Tensor& G = nodes_[gain].value;
    const Tensor& B = nodes_[bias].value;
    std::size_t rows, cols;
    row_layout(X, rows, cols);
    if (G.shape.size() != 1 || G.shape[0] != cols || B.shape.size() != 1 || B.shape[0] != cols)
        shape_fail(OpKind::kLayerNorm, "gain/bias must be (n,) matching the last axis of " + shape_str(X.shape));
    Node n;
    n.op = OpKind::kLayerNorm;
    n.in[0] = x;
    n.in[1] = gain;
    n.in[2] = bias;
    n.num_in = 3;
    n.needs_grad = nodes_[x].needs_grad || nodes_[gain].needs_grad || nodes_[bias].needs_grad;
    n.scalar = eps;
    n.value = X;
    n.saved.resize(2 * rows);
    for (std::size_t i = 0; i < rows; ++i) {
        double* r = n.value.values.data() + i * cols;
        double mean = 0.0;
        for (std::size_t j = 0; j < cols; ++j) mean += r[j];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double d = r[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        const double inv_std = 1.0 / std::sqrt(var + eps);
        n.saved[2 * i] = mean;
        n.saved[2 * i + 1] = inv_std;
        for (std::size_t j = 0; j < cols; ++j) r[j] = G.values[j] * (r[j] - mean) * inv_std + B.values[j];
    }
    check_finite(n);
    return push(std::move(n));
}

NodeId Graph::embedding(NodeId table, const std::vector<int>& ids) {
    const Tensor& T = nodes_[table].value;
    if (!T.is_matrix()) shape_fail(OpKind::kEmbedding, "table must be a matrix, got " + shape_str(T.shape));
    if (ids.empty()) shape_fail(OpKind::kEmbedding, "empty id sequence");
    const std::size_t v = T.rows(), dim = T.cols();
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= v)
            throw ShapeError("embedding: token id " + std::to_string(id) + " outside vocabulary of size " +
                             std::to_string(v));
    }
    Node n;
    n.op = OpKind::kEmbedding;
    n.in[0] = table;
    n.num_in = 1;
    n.needs_grad = nodes_[table].needs_grad;
    n.ids = ids;
    n.value = Tensor::zeros({ids.size(), dim});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const double* src = T.values.data() + static_cast<std::size_t>(ids[i]) * dim;
        std::copy(src, src + dim, n.value.values.data() + i * dim);
    }
    return push(std::move(n));
}

NodeId Graph::concat_rows(NodeId a, NodeId b) {
    const Tensor& A = nodes_[a].value;
    const Tensor& B = nodes_[b].value;
    if (!A.is_matrix() || !B.is_matrix() || A.cols() != B.cols())
        shape_fail(OpKind::kConcatRows,
                   "requires matrices with equal column counts, got " + shape_str(A.shape) + " and " +
                       shape_str(B.shape));
    Node n;
    n.op = OpKind::kConcatRows;
    n.in[0] = a;
    n.in[1] = b;
    n.num_in = 2;
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    n.value = Tensor::zeros({A.rows() + B.rows(), A.cols()});
    std::copy(A.values.begin(), A.values.end(), n.value.values.begin());
    std::copy(B.values.begin(), B.values.end(), n.value.values.begin() + A.values.size());
    return push(std::move(n));
}

double Graph::scalar_value(NodeId id) const {
    const Tensor& t = nodes_[id].value;
    if (!t.is_scalar()) throw ShapeError("node is not scalar, shape " + shape_str(t.shape));
    return t.values[0];
}

std::vector<double>& Graph::grad_buf(NodeId id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
}

void Graph::backward(NodeId loss) {
    if (nodes_.empty()) throw Error("backward called before any forward computation");
    if (loss >= nodes_.size()) throw Error("backward: invalid loss node");
    if (!nodes_[loss].value.is_scalar())
        throw ShapeError("backward: loss must be scalar, got " + shape_str(nodes_[loss].value.shape));

    // Per-pass buffers; leaves accumulate across passes, interior nodes do not.
    for (Node& n : nodes_) n.grad.clear();
    grad_buf(loss)[0] = 1.0;

    for (std::size_t idx = loss + 1; idx-- > 0;) {
        Node& n = nodes_[idx];
        if (!n.needs_grad || n.grad.empty()) continue;
        const std::vector<double>& gy = n.grad;
        switch (n.op) {
            case OpKind::kParam: {
                n.leaf->ensure_grad();
                auto& g = *n.leaf->grad;
                for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
                break;
            }
            case OpKind::kConstant:
                break;
            case OpKind::kMatMul: {
                const Tensor& A = in_val(n, 0);
                const Tensor& B = in_val(n, 1);
                const std::size_t m = A.rows(), k = A.cols(), p = B.cols();
                if (nodes_[n.in[0]].needs_grad) {
                    auto& ga = grad_buf(n.in[0]);
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t t = 0; t < k; ++t) {
                            double acc = 0.0;
                            const double* gyr = gy.data() + i * p;
                            const double* br = B.values.data() + t * p;
                            for (std::size_t j = 0; j < p; ++j) acc += gyr[j] * br[j];
                            ga[i * k + t] += acc;
                        }
                }
                if (nodes_[n.in[1]].needs_grad) {
                    auto& gb = grad_buf(n.in[1]);
                    for (std::size_t i = 0; i < m; ++i) {
                        const double* ar = A.values.data() + i * k;
                        const double* gyr = gy.data() + i * p;
                        for (std::size_t t = 0; t < k; ++t) {
                            const double a_it = ar[t];
                            if (a_it == 0.0) continue;
                            double* gbr = gb.data() + t * p;
                            for (std::size_t j = 0; j < p; ++j) gbr[j] += a_it * gyr[j];
                        }
                    }
                }
                break;
            }
            case OpKind::kTranspose: {
                if (!nodes_[n.in[0]].needs_grad) break;
                const Tensor& A = in_val(n, 0);
                auto& ga = grad_buf(n.in[0]);
                const std::size_t r = A.rows(), c = A.cols();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += gy[j * r + i];
                break;
            }
            case OpKind::kAdd: {
                for (int s = 0; s < 2; ++s) {
                    if (!nodes_[n.in[s]].needs_grad) continue;
                    auto& g = grad_buf(n.in[s]);
                    for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
                }
                break;
            }
            case OpKind::kSub: {
                if (nodes_[n.in[0]].needs_grad) {
                    auto& g = grad_buf(n.in[0]);
                    for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
                }
                if (nodes_[n.in[1]].needs_grad) {
                    auto& g = grad_buf(n.in[1]);
                    for (std::size_t i = 0; i < gy.size(); ++i) g[i] -= gy[i];
                }
                break;
            }
            case OpKind::kMul: {
                const Tensor& A = in_val(n, 0);
                const Tensor& B = in_val(n, 1);
                if (nodes_[n.in[0]].needs_grad) {
                    auto& g = grad_buf(n.in[0]);
                    for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * B.values[i];
                }
                if (nodes_[n.in[1]].needs_grad) {
                    auto& g = grad_buf(n.in[1]);
                    for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * A.values[i];
                }
                break;
            }
            case OpKind::kAddRowBias: {
                const Tensor& M = in_val(n, 0);
                const std::size_t rows = M.rows(), cols = M.cols();
                if (nodes_[n.in[0]].needs_grad) {
                    auto& g = grad_buf(n.in[0]);
                    for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
                }
                if (nodes_[n.in[1]].needs_grad) {
                    auto& g = grad_buf(n.in[1]);
                    for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < cols; ++j) g[j] += gy[i * cols + j];
                }
                break;
            }
            case OpKind::kScale: {
                if (!nodes_[n.in[0]].needs_grad) break;
                auto& g = grad_buf(n.in[0]);
                for (std::size_t i = 0; i < gy.size(); ++i) g[i] += n.scalar * gy[i];
                break;
            }
            case OpKind::kScaleBy: {
                const Tensor& A = in_val(n, 0);
                const double s = in_val(n, 1).values[0];
                if (nodes_[n.in[0]].needs_grad) {
                    auto& g = grad_buf(n.in[0]);
                    for (std::size_t i = 0; i < gy.size(); ++i) g[i] += s * gy[i];
                }
                if (nodes_[n.in[1]].needs_grad) {
                    auto& g = grad_buf(n.in[1]);
                    double acc = 0.0;
                    for (std::size_t i = 0; i < gy.size(); ++i) acc += gy[i] * A.values[i];
                    g[0] += acc;
                }
                break;
            }
            case OpKind::kReciprocal: {
                if (!nodes_[n.in[0]].needs_grad) break;
                const Tensor& A = in_val(n, 0);
                auto& g = grad_buf(n.in[0]);
                for (std::size_t i = 0; i < gy.size(); ++i) {
                    const double inv = 1.0 / A.values[i];
                    g[i] -= gy[i] * inv * inv;
                }
                break;
            }
            case OpKind::kTanh: {
                if (!nodes_[n.in[0]].needs_grad) break;
                auto& g = grad_buf(n.in[0]);
                for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * (1.0 - n.value.values[i] * n.value.values[i]);
                break;
            }
            case OpKind::kLogFloored: {
                if (!nodes_[n.in[0]].needs_grad) break;
                const Tensor& A = in_val(n, 0);
                auto& g = grad_buf(n.in[0]);
                for (std::size_t i = 0; i < gy.size(); ++i) {
                    if (A.values[i] > n.scalar) g[i] += gy[i] / A.values[i];
                }
                break;
            }
            case OpKind::kSoftmaxRows: {
                if (!nodes_[n.in[0]].needs_grad) break;
                auto& g = grad_buf(n.in[0]);
                std::size_t rows, cols;
                row_layout(n.value, rows, cols);
                for (std::size_t i = 0; i < rows; ++i) {
                    const double* s = n.value.values.data() + i * cols;
                    const double* gyr = gy.data() + i * cols;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) dot += gyr[j] * s[j];
                    for (std::size_t j = 0; j < cols; ++j) g[i * cols + j] += s[j] * (gyr[j] - dot);
                }
                break;
            }
            case OpKind::kLogSoftmaxRows: {
                if (!nodes_[n.in[0]].needs_grad) break;
                auto& g = grad_buf(n.in[0]);
                std::size_t rows, cols;
                row_layout(n.value, rows, cols);
                for (std::size_t i = 0; i < rows; ++i) {
                    const double* lp = n.value.values.data() + i * cols;
                    const double* gyr = gy.data() + i * cols;
                    double sum = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) sum += gyr[j];
                    for (std::size_t j = 0; j < cols; ++j) g[i * cols + j] += gyr[j] - std::exp(lp[j]) * sum;
                }
                break;
            }
            case OpKind::kSumAll: {
                if (!nodes_[n.in[0]].needs_grad) break;
                auto& g = grad_buf(n.in[0]);
                for (double& v : g) v += gy[0];
                break;
            }
            case OpKind::kMeanAll: {
                if (!nodes_[n.in[0]].needs_grad) break;
                auto& g = grad_buf(n.in[0]);
                const double w = gy[0] / static_cast<double>(g.size());
                for (double& v : g) v += w;
                break;
            }
            case OpKind::kMeanRows: {
                if (!nodes_[n.in[0]].needs_grad) break;
                const Tensor& A = in_val(n, 0);
                auto& g = grad_buf(n.in[0]);
                const std::size_t rows = A.rows(), cols = A.cols();
                const double inv = 1.0 / static_cast<double>(rows);
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j) g[i * cols + j] += gy[j] * inv;
                break;
            }
            case OpKind::kRow: {
                if (!nodes_[n.in[0]].needs_grad) break;
                const Tensor& A = in_val(n, 0);
                auto& g = grad_buf(n.in[0]);
                const std::size_t cols = A.cols();
                for (std::size_t j = 0; j < cols; ++j) g[n.index * cols + j] += gy[j];
                break;
            }
            case OpKind::kSelect: {
                if (!nodes_[n.in[0]].needs_grad) break;
                grad_buf(n.in[0])[n.index] += gy[0];
                break;
            }
            case OpKind::kLayerNorm: {
                const Tensor& X = in_val(n, 0);
                const Tensor& G = in_val(n, 1);
                std::size_t rows, cols;
                row_layout(X, rows, cols);
                const bool need_x = nodes_[n.in[0]].needs_grad;
                const bool need_g = nodes_[n.in[1]].needs_grad;
                const bool need_b = nodes_[n.in[2]].needs_grad;
                for (std::size_t i = 0; i < rows; ++i) {
                    const double mean = n.saved[2 * i];
                    const double inv_std = n.saved[2 * i + 1];
                    const double* xr = X.values.data() + i * cols;
                    const double* gyr = gy.data() + i * cols;
                    if (need_b) {
                        auto& gb = grad_buf(n.in[2]);
                        for (std::size_t j = 0; j < cols; ++j) gb[j] += gyr[j];
                    }
                    if (need_g) {
                        auto& gg = grad_buf(n.in[1]);
                        for (std::size_t j = 0; j < cols; ++j) gg[j] += gyr[j] * (xr[j] - mean) * inv_std;
                    }
                    if (need_x) {
                        auto& gx = grad_buf(n.in[0]);
                        double sum_dg = 0.0, sum_dgx = 0.0;
                        for (std::size_t j = 0; j < cols; ++j) {
                            const double dg = gyr[j] * G.values[j];
                            const double xh = (xr[j] - mean) * inv_std;
                            sum_dg += dg;
                            sum_dgx += dg * xh;
                        }
                        const double cinv = 1.0 / static_cast<double>(cols);
                        for (std::size_t j = 0; j < cols; ++j) {
                            const double dg = gyr[j] * G.values[j];
                            const double xh = (xr[j] - mean) * inv_std;
                            gx[i * cols + j] += inv_std * (dg - cinv * sum_dg - xh * cinv * sum_dgx);
                        }
                    }
                }
                break;
            }
            case OpKind::kEmbedding: {
                if (!nodes_[n.in[0]].needs_grad) break;
                const Tensor& T = in_val(n, 0);
                auto& g = grad_buf(n.in[0]);
                const std::size_t dim = T.cols();
                for (std::size_t i = 0; i < n.ids.size(); ++i) {
                    double* dst = g.data() + static_cast<std::size_t>(n.ids[i]) * dim;
                    const double* src = gy.data() + i * dim;
                    for (std::size_t j = 0; j < dim; ++j) dst[j] += src[j];
                }
                break;
            }
            case OpKind::kConcatRows: {
                const Tensor& A = in_val(n, 0);
                if (nodes_[n.in[0]].needs_grad) {
                    auto& g = grad_buf(n.in[0]);
                    for (std::size_t i = 0; i < A.size(); ++i) g[i] += gy[i];
                }
                if (nodes_[n.in[1]].needs_grad) {
                    auto& g = grad_buf(n.in[1]);
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[A.size() + i];
                }
                break;
            }
        }
    }
    ++backward_count_;
}

}  // namespace trusttune
