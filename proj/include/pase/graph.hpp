#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pase/tensor.hpp"

namespace pase {

enum class Op : std::uint8_t {
    Input,
    Matmul,
    Add,            // same shape, or bias broadcast (1 x cols over rows)
    Sub,
    Mul,            // elementwise
    ScalarMul,      // multiply by a compile-time constant
    Relu,
    Sigmoid,
    Exp,
    Log,
    SoftmaxRows,
    LogSoftmaxRows,
    MeanAll,
    SumAll,
    ConcatCols,
    L2NormalizeRows,
    Transpose,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Matmul: return "matmul";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "elementwise-mul";
        case Op::ScalarMul: return "scalar-mul";
        case Op::Relu: return "relu";
        case Op::Sigmoid: return "sigmoid";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::SoftmaxRows: return "softmax-rows";
        case Op::LogSoftmaxRows: return "log-softmax-rows";
        case Op::MeanAll: return "mean-all";
        case Op::SumAll: return "sum-all";
        case Op::ConcatCols: return "concat-cols";
        case Op::L2NormalizeRows: return "l2-normalize-rows";
        case Op::Transpose: return "transpose";
    }
    return "?";
}

struct NodeId {
    std::int32_t index = -1;
    bool valid() const { return index >= 0; }
};

/// Reverse-mode differentiation tape over Tensor2 values. Nodes are
/// appended in evaluation order, so parent ids always precede children;
/// backward() sweeps the tape once in reverse. Values are computed
/// eagerly on apply().
class Graph {
public:
    /// Leaf node that participates in differentiation.
    NodeId input(Tensor2 value) {
        nodes_.push_back(Node{Op::Input, -1, -1, 0.0, std::move(value), {}});
        return NodeId{static_cast<std::int32_t>(nodes_.size() - 1)};
    }

    /// Leaf whose gradient the caller ignores. Same mechanics as input();
    /// the distinct name marks stop-gradient data in calling code.
    NodeId constant(Tensor2 value) { return input(std::move(value)); }

    NodeId apply(Op op, std::span<const NodeId> inputs, double scalar = 0.0) {
        Node n;
        n.op = op;
        n.scalar = scalar;
        if (!inputs.empty()) n.a = check_id(inputs[0]);
        if (inputs.size() > 1) n.b = check_id(inputs[1]);
        if (inputs.size() > 2)
            throw std::invalid_argument(std::string(op_name(op)) +
                                        ": at most 2 inputs per node");
        n.value = forward(n);
        nodes_.push_back(std::move(n));
        return NodeId{static_cast<std::int32_t>(nodes_.size() - 1)};
    }

    NodeId matmul(NodeId a, NodeId b) { return apply2(Op::Matmul, a, b); }
    NodeId add(NodeId a, NodeId b) { return apply2(Op::Add, a, b); }
    NodeId sub(NodeId a, NodeId b) { return apply2(Op::Sub, a, b); }
    NodeId mul(NodeId a, NodeId b) { return apply2(Op::Mul, a, b); }
    NodeId scalar_mul(NodeId a, double s) {
        const NodeId in[] = {a};
        return apply(Op::ScalarMul, in, s);
    }
    NodeId relu(NodeId a) { return apply1(Op::Relu, a); }
    NodeId sigmoid(NodeId a) { return apply1(Op::Sigmoid, a); }
    NodeId exp(NodeId a) { return apply1(Op::Exp, a); }
    NodeId log(NodeId a) { return apply1(Op::Log, a); }
    NodeId softmax_rows(NodeId a) { return apply1(Op::SoftmaxRows, a); }
    NodeId log_softmax_rows(NodeId a) { return apply1(Op::LogSoftmaxRows, a); }
    NodeId mean_all(NodeId a) { return apply1(Op::MeanAll, a); }
    NodeId sum_all(NodeId a) { return apply1(Op::SumAll, a); }
    NodeId concat_cols(NodeId a, NodeId b) { return apply2(Op::ConcatCols, a, b); }
    NodeId l2_normalize_rows(NodeId a) { return apply1(Op::L2NormalizeRows, a); }
    NodeId transpose(NodeId a) { return apply1(Op::Transpose, a); }

    const Tensor2& value(NodeId id) const { return nodes_[check_id(id)].value; }

    const Tensor2& grad(NodeId id) const {
        if (!backward_done_)
            throw std::logic_error("Graph::grad: backward() has not run");
        return nodes_[check_id(id)].grad;
    }

    std::size_t size() const { return nodes_.size(); }

    /// Backpropagate from a scalar loss. Every node gets a gradient tensor;
    /// nodes the loss does not reach keep zeros.
    void backward(NodeId loss) {
        if (backward_done_)
            throw std::logic_error(
                "Graph::backward: called twice without reset_gradients()");
        const std::int32_t loss_id = check_id(loss);
        if (!nodes_[loss_id].value.is_scalar())
            throw std::invalid_argument("Graph::backward: loss must be 1x1, got " +
                                        nodes_[loss_id].value.shape_str());
        for (Node& n : nodes_)
            n.grad = Tensor2(n.value.rows, n.value.cols);
        nodes_[loss_id].grad.data[0] = 1.0;
        for (std::int32_t i = loss_id; i >= 0; --i) accumulate(nodes_[i]);
        backward_done_ = true;
    }

    void reset_gradients() {
        for (Node& n : nodes_) n.grad = Tensor2{};
        backward_done_ = false;
    }

private:
    struct Node {
        Op op = Op::Input;
        std::int32_t a = -1;
        std::int32_t b = -1;
        double scalar = 0.0;
        Tensor2 value;
        Tensor2 grad;
    };

    NodeId apply1(Op op, NodeId a) {
        const NodeId in[] = {a};
        return apply(op, in);
    }
    NodeId apply2(Op op, NodeId a, NodeId b) {
        const NodeId in[] = {a, b};
        return apply(op, in);
    }

    std::int32_t check_id(NodeId id) const {
        if (!id.valid() || static_cast<std::size_t>(id.index) >= nodes_.size())
            throw std::out_of_range("Graph: invalid node id " +
                                    std::to_string(id.index));
        return id.index;
    }

    [[noreturn]] static void shape_error(Op op, const Tensor2& a,
                                         const Tensor2& b) {
        throw std::invalid_argument(std::string(op_name(op)) +
                                    ": incompatible shapes " + a.shape_str() +
                                    " and " + b.shape_str());
    }

    static void require_finite(Op op, const Tensor2& out) {
        if (!all_finite(out))
            throw std::domain_error(std::string(op_name(op)) +
                                    ": produced non-finite output");
    }

    Tensor2 forward(const Node& n) const {
        switch (n.op) {
            case Op::Input:
                throw std::invalid_argument(
                    "Graph::apply: leaves are created via input()/constant()");
            case Op::Matmul: {
                const Tensor2& a = nodes_[n.a].value;
                const Tensor2& b = nodes_[n.b].value;
                if (a.cols != b.rows) shape_error(n.op, a, b);
                Tensor2 out(a.rows, b.cols);
                for (std::size_t i = 0; i < a.rows; ++i)
                    for (std::size_t k = 0; k < a.cols; ++k) {
                        const double aik = a.at(i, k);
                        if (aik == 0.0) continue;
                        for (std::size_t j = 0; j < b.cols; ++j)
                            out.at(i, j) += aik * b.at(k, j);
                    }
                return out;
            }
            case Op::Add: {
                const Tensor2& a = nodes_[n.a].value;
                const Tensor2& b = nodes_[n.b].value;
                if (a.same_shape(b)) {
                    Tensor2 out = a;
                    for (std::size_t i = 0; i < out.data.size(); ++i)
                        out.data[i] += b.data[i];
                    return out;
                }
                if (b.rows == 1 && b.cols == a.cols) {  // bias broadcast
                    Tensor2 out = a;
                    for (std::size_t i = 0; i < a.rows; ++i)
                        for (std::size_t j = 0; j < a.cols; ++j)
                            out.at(i, j) += b.data[j];
                    return out;
                }
                shape_error(n.op, a, b);
            }
            case Op::Sub: {
                const Tensor2& a = nodes_[n.a].value;
                const Tensor2& b = nodes_[n.b].value;
                if (!a.same_shape(b)) shape_error(n.op, a, b);
                Tensor2 out = a;
                for (std::size_t i = 0; i < out.data.size(); ++i)
                    out.data[i] -= b.data[i];
                return out;
            }
            case Op::Mul: {
                const Tensor2& a = nodes_[n.a].value;
                const Tensor2& b = nodes_[n.b].value;
                if (!a.same_shape(b)) shape_error(n.op, a, b);
                Tensor2 out = a;
                for (std::size_t i = 0; i < out.data.size(); ++i)
                    out.data[i] *= b.data[i];
                return out;
            }
            case Op::ScalarMul: {
                Tensor2 out = nodes_[n.a].value;
                for (double& v : out.data) v *= n.scalar;
                return out;
            }
            case Op::Relu: {
                Tensor2 out = nodes_[n.a].value;
                for (double& v : out.data) v = v > 0.0 ? v : 0.0;
                return out;
            }
            case Op::Sigmoid: {
                Tensor2 out = nodes_[n.a].value;
                for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
                return out;
            }
            case Op::Exp: {
                Tensor2 out = nodes_[n.a].value;
                for (double& v : out.data) v = std::exp(v);
                require_finite(n.op, out);
                return out;
            }
            case Op::Log: {
                Tensor2 out = nodes_[n.a].value;
                for (double& v : out.data) v = std::log(v);
                require_finite(n.op, out);
                return out;
            }
            case Op::SoftmaxRows: {
                Tensor2 out = log_softmax(nodes_[n.a].value);
                for (double& v : out.data) v = std::exp(v);
                require_finite(n.op, out);
                return out;
            }
            case Op::LogSoftmaxRows: {
                Tensor2 out = log_softmax(nodes_[n.a].value);
                require_finite(n.op, out);
                return out;
            }
            case Op::MeanAll: {
                const Tensor2& a = nodes_[n.a].value;
                double s = 0.0;
                for (double v : a.data) s += v;
                return Tensor2::scalar(s / static_cast<double>(a.size()));
            }
            case Op::SumAll: {
                const Tensor2& a = nodes_[n.a].value;
                double s = 0.0;
                for (double v : a.data) s += v;
                return Tensor2::scalar(s);
            }
            case Op::ConcatCols: {
                const Tensor2& a = nodes_[n.a].value;
                const Tensor2& b = nodes_[n.b].value;
                if (a.rows != b.rows) shape_error(n.op, a, b);
                Tensor2 out(a.rows, a.cols + b.cols);
                for (std::size_t i = 0; i < a.rows; ++i) {
                    for (std::size_t j = 0; j < a.cols; ++j)
                        out.at(i, j) = a.at(i, j);
                    for (std::size_t j = 0; j < b.cols; ++j)
                        out.at(i, a.cols + j) = b.at(i, j);
                }
                return out;
            }
            case Op::L2NormalizeRows: {
                const Tensor2& a = nodes_[n.a].value;
                Tensor2 out(a.rows, a.cols);
                for (std::size_t i = 0; i < a.rows; ++i) {
                    double sq = 0.0;
                    for (std::size_t j = 0; j < a.cols; ++j)
                        sq += a.at(i, j) * a.at(i, j);
                    const double norm = std::sqrt(sq);
                    if (norm < kNormFloor) continue;  // zero row stays zero
                    for (std::size_t j = 0; j < a.cols; ++j)
                        out.at(i, j) = a.at(i, j) / norm;
                }
                return out;
            }
            case Op::Transpose: {
                const Tensor2& a = nodes_[n.a].value;
                Tensor2 out(a.cols, a.rows);
                for (std::size_t i = 0; i < a.rows; ++i)
                    for (std::size_t j = 0; j < a.cols; ++j)
                        out.at(j, i) = a.at(i, j);
                return out;
            }
        }
        throw std::logic_error("Graph::forward: unknown op");
    }

    static Tensor2 log_softmax(const Tensor2& a) {
        Tensor2 out(a.rows, a.cols);
        for (std::size_t i = 0; i < a.rows; ++i) {
            double mx = a.at(i, 0);
            for (std::size_t j = 1; j < a.cols; ++j)
                mx = std::max(mx, a.at(i, j));
            double sum = 0.0;
            for (std::size_t j = 0; j < a.cols; ++j)
                sum += std::exp(a.at(i, j) - mx);
            const double lse = mx + std::log(sum);
            for (std::size_t j = 0; j < a.cols; ++j)
                out.at(i, j) = a.at(i, j) - lse;
        }
        return out;
    }

    void accumulate(Node& n) {
        const Tensor2& g = n.grad;
        switch (n.op) {
            case Op::Input:
                return;
            case Op::Matmul: {
                const Tensor2& a = nodes_[n.a].value;
                const Tensor2& b = nodes_[n.b].value;
                Tensor2& da = nodes_[n.a].grad;
                Tensor2& db = nodes_[n.b].grad;
                // dA += g * B^T ; dB += A^T * g
                for (std::size_t i = 0; i < a.rows; ++i)
                    for (std::size_t j = 0; j < b.cols; ++j) {
                        const double gij = g.at(i, j);
                        if (gij == 0.0) continue;
                        for (std::size_t k = 0; k < a.cols; ++k) {
                            da.at(i, k) += gij * b.at(k, j);
                            db.at(k, j) += a.at(i, k) * gij;
                        }
                    }
                return;
            }
            case Op::Add: {
                Tensor2& da = nodes_[n.a].grad;
                Tensor2& db = nodes_[n.b].grad;
                for (std::size_t i = 0; i < da.data.size(); ++i)
                    da.data[i] += g.data[i];
                if (db.same_shape(g)) {
                    for (std::size_t i = 0; i < db.data.size(); ++i)
                        db.data[i] += g.data[i];
                } else {  // bias broadcast: column-reduce
                    for (std::size_t i = 0; i < g.rows; ++i)
                        for (std::size_t j = 0; j < g.cols; ++j)
                            db.data[j] += g.at(i, j);
                }
                return;
            }
            case Op::Sub: {
                Tensor2& da = nodes_[n.a].grad;
                Tensor2& db = nodes_[n.b].grad;
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    da.data[i] += g.data[i];
                    db.data[i] -= g.data[i];
                }
                return;
            }
            case Op::Mul: {
                const Tensor2& a = nodes_[n.a].value;
                const Tensor2& b = nodes_[n.b].value;
                Tensor2& da = nodes_[n.a].grad;
                Tensor2& db = nodes_[n.b].grad;
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    da.data[i] += g.data[i] * b.data[i];
                    db.data[i] += g.data[i] * a.data[i];
                }
                return;
            }
            case Op::ScalarMul: {
                Tensor2& da = nodes_[n.a].grad;
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    da.data[i] += g.data[i] * n.scalar;
                return;
            }
            case Op::Relu: {
                const Tensor2& a = nodes_[n.a].value;
                Tensor2& da = nodes_[n.a].grad;
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    if (a.data[i] > 0.0) da.data[i] += g.data[i];
                return;
            }
            case Op::Sigmoid: {
                Tensor2& da = nodes_[n.a].grad;
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    const double y = n.value.data[i];
                    da.data[i] += g.data[i] * y * (1.0 - y);
                }
                return;
            }
            case Op::Exp: {
                Tensor2& da = nodes_[n.a].grad;
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    da.data[i] += g.data[i] * n.value.data[i];
                return;
            }
            case Op::Log: {
                const Tensor2& a = nodes_[n.a].value;
                Tensor2& da = nodes_[n.a].grad;
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    da.data[i] += g.data[i] / a.data[i];
                return;
            }
            case Op::SoftmaxRows: {
                // dX_ij = y_ij * (g_ij - sum_k g_ik y_ik)
                Tensor2& da = nodes_[n.a].grad;
                const Tensor2& y = n.value;
                for (std::size_t i = 0; i < y.rows; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < y.cols; ++j)
                        dot += g.at(i, j) * y.at(i, j);
                    for (std::size_t j = 0; j < y.cols; ++j)
                        da.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
                }
                return;
            }
            case Op::LogSoftmaxRows: {
                // dX_ij = g_ij - softmax_ij * sum_k g_ik
                Tensor2& da = nodes_[n.a].grad;
                const Tensor2& y = n.value;
                for (std::size_t i = 0; i < y.rows; ++i) {
                    double rowsum = 0.0;
                    for (std::size_t j = 0; j < y.cols; ++j)
                        rowsum += g.at(i, j);
                    for (std::size_t j = 0; j < y.cols; ++j)
                        da.at(i, j) += g.at(i, j) - std::exp(y.at(i, j)) * rowsum;
                }
                return;
            }
            case Op::MeanAll: {
                Tensor2& da = nodes_[n.a].grad;
                const double s =
                    g.data[0] / static_cast<double>(da.data.size());
                for (double& v : da.data) v += s;
                return;
            }
            case Op::SumAll: {
                Tensor2& da = nodes_[n.a].grad;
                for (double& v : da.data) v += g.data[0];
                return;
            }
            case Op::ConcatCols: {
                Tensor2& da = nodes_[n.a].grad;
                Tensor2& db = nodes_[n.b].grad;
                for (std::size_t i = 0; i < da.rows; ++i) {
                    for (std::size_t j = 0; j < da.cols; ++j)
                        da.at(i, j) += g.at(i, j);
                    for (std::size_t j = 0; j < db.cols; ++j)
                        db.at(i, j) += g.at(i, da.cols + j);
                }
                return;
            }
            case Op::L2NormalizeRows: {
                // dX_i = (g_i - (g_i . y_i) y_i) / ||x_i||
                const Tensor2& a = nodes_[n.a].value;
                const Tensor2& y = n.value;
                Tensor2& da = nodes_[n.a].grad;
                for (std::size_t i = 0; i < a.rows; ++i) {
                    double sq = 0.0;
                    for (std::size_t j = 0; j < a.cols; ++j)
                        sq += a.at(i, j) * a.at(i, j);
                    const double norm = std::sqrt(sq);
                    if (norm < kNormFloor) continue;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < a.cols; ++j)
                        dot += g.at(i, j) * y.at(i, j);
                    for (std::size_t j = 0; j < a.cols; ++j)
                        da.at(i, j) += (g.at(i, j) - dot * y.at(i, j)) / norm;
                }
                return;
            }
            case Op::Transpose: {
                Tensor2& da = nodes_[n.a].grad;
                for (std::size_t i = 0; i < g.rows; ++i)
                    for (std::size_t j = 0; j < g.cols; ++j)
                        da.at(j, i) += g.at(i, j);
                return;
            }
        }
    }

    static constexpr double kNormFloor = 1e-12;

    // deque keeps value()/grad() references stable while nodes append
    std::deque<Node> nodes_;
    bool backward_done_ = false;
};

}  // namespace pase
