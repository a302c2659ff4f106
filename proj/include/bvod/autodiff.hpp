#pragma once

#include <algorithm>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "bvod/error.hpp"
#include "bvod/tensor.hpp"

namespace bvod {

enum class Op {
    leaf,
    matmul,
    add,
    relu,
    sigmoid,
    mul,
    exp,
    log,
    sum,
    mean,
    square,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::matmul: return "matmul";
        case Op::add: return "add";
        case Op::relu: return "relu";
        case Op::sigmoid: return "sigmoid";
        case Op::mul: return "mul";
        case Op::exp: return "exp";
        case Op::log: return "log";
        case Op::sum: return "sum";
        case Op::mean: return "mean";
        case Op::square: return "square";
    }
    return "?";
}

/// Operand shapes incompatible with the requested op.
struct ShapeError : Error {
    ShapeError(Op op, const Tensor& a, const Tensor& b)
        : Error(std::string(op_name(op)) + ": incompatible shapes " + a.shape_str() + " and " +
                b.shape_str()),
          op(op) {}
    ShapeError(Op op, const std::string& msg) : Error(std::string(op_name(op)) + ": " + msg), op(op) {}
    Op op;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the computation graph. Values are computed eagerly when the
/// graph is built; forward() recomputes them after leaf mutation and
/// backward() fills the grad fields.
struct Node {
    Op op = Op::leaf;
    std::vector<NodePtr> inputs;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;  // true for parameters and their descendants
    std::string name;            // set for parameters, used in diagnostics

    Node(Op o, std::vector<NodePtr> in) : op(o), inputs(std::move(in)) {}
    Node(Tensor v, bool rg, std::string n)
        : value(std::move(v)), requires_grad(rg), name(std::move(n)) {}
};

inline NodePtr constant(Tensor v) { return std::make_shared<Node>(std::move(v), false, ""); }

inline NodePtr parameter(Tensor v, std::string name) {
    return std::make_shared<Node>(std::move(v), true, std::move(name));
}

namespace detail {

// Broadcast classes for the binary ops: equal shapes, single scalar on the
// right, or a {1, n} row applied to every row of a {m, n} left operand.
enum class Bcast { same, scalar, row };

inline Bcast classify(Op op, const Tensor& a, const Tensor& b) {
    if (a.shape == b.shape) return Bcast::same;
    if (b.size() == 1) return Bcast::scalar;
    if (a.rank() == 2 && b.rank() == 2 && b.shape[0] == 1 && b.shape[1] == a.shape[1])
        return Bcast::row;
    throw ShapeError(op, a, b);
}

inline void eval(Node& n) {
    switch (n.op) {
        case Op::leaf:
            return;
        case Op::matmul: {
            const Tensor& a = n.inputs[0]->value;
            const Tensor& b = n.inputs[1]->value;
            if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
                throw ShapeError(Op::matmul, a, b);
            const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
            if (n.value.shape != std::vector<std::size_t>{m, p}) n.value = Tensor({m, p});
            std::fill(n.value.data.begin(), n.value.data.end(), 0.0);
            for (std::size_t i = 0; i < m; ++i) {
                const double* arow = &a.data[i * k];
                double* crow = &n.value.data[i * p];
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const double av = arow[kk];
                    if (av == 0.0) continue;
                    const double* brow = &b.data[kk * p];
                    for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
                }
            }
            return;
        }
        case Op::add:
        case Op::mul: {
            const Tensor& a = n.inputs[0]->value;
            const Tensor& b = n.inputs[1]->value;
            const Bcast bc = classify(n.op, a, b);
            if (n.value.shape != a.shape) n.value = Tensor(a.shape);
            const bool is_add = n.op == Op::add;
            switch (bc) {
                case Bcast::same:
                    for (std::size_t i = 0; i < a.size(); ++i)
                        n.value.data[i] = is_add ? a.data[i] + b.data[i] : a.data[i] * b.data[i];
                    break;
                case Bcast::scalar: {
                    const double s = b.data[0];
                    for (std::size_t i = 0; i < a.size(); ++i)
                        n.value.data[i] = is_add ? a.data[i] + s : a.data[i] * s;
                    break;
                }
                case Bcast::row: {
                    const std::size_t cols = a.cols();
                    for (std::size_t i = 0; i < a.size(); ++i) {
                        const double s = b.data[i % cols];
                        n.value.data[i] = is_add ? a.data[i] + s : a.data[i] * s;
                    }
                    break;
                }
            }
            return;
        }
        case Op::relu:
        case Op::sigmoid:
        case Op::exp:
        case Op::log:
        case Op::square: {
            const Tensor& a = n.inputs[0]->value;
            if (n.value.shape != a.shape) n.value = Tensor(a.shape);
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double x = a.data[i];
                switch (n.op) {
                    case Op::relu: n.value.data[i] = x > 0.0 ? x : 0.0; break;
                    case Op::sigmoid: n.value.data[i] = 1.0 / (1.0 + std::exp(-x)); break;
                    case Op::exp: n.value.data[i] = std::exp(x); break;
                    case Op::log: n.value.data[i] = std::log(x); break;
                    case Op::square: n.value.data[i] = x * x; break;
                    default: break;
                }
            }
            return;
        }
        case Op::sum:
        case Op::mean: {
            const Tensor& a = n.inputs[0]->value;
            if (n.value.size() != 1) n.value = Tensor({1});
            double acc = 0.0;
            for (double v : a.data) acc += v;
            n.value.data[0] = n.op == Op::sum ? acc : acc / static_cast<double>(a.size());
            return;
        }
    }
}

inline NodePtr make(Op op, std::vector<NodePtr> inputs) {
    auto n = std::make_shared<Node>(op, std::move(inputs));
    for (const NodePtr& in : n->inputs)
        if (in->requires_grad) n->requires_grad = true;
    eval(*n);
    return n;
}

}  // namespace detail

inline NodePtr matmul(NodePtr a, NodePtr b) { return detail::make(Op::matmul, {std::move(a), std::move(b)}); }
inline NodePtr add(NodePtr a, NodePtr b) { return detail::make(Op::add, {std::move(a), std::move(b)}); }
inline NodePtr mul(NodePtr a, NodePtr b) { return detail::make(Op::mul, {std::move(a), std::move(b)}); }
inline NodePtr relu(NodePtr a) { return detail::make(Op::relu, {std::move(a)}); }
inline NodePtr sigmoid(NodePtr a) { return detail::make(Op::sigmoid, {std::move(a)}); }
inline NodePtr exp(NodePtr a) { return detail::make(Op::exp, {std::move(a)}); }
inline NodePtr log(NodePtr a) { return detail::make(Op::log, {std::move(a)}); }
inline NodePtr square(NodePtr a) { return detail::make(Op::square, {std::move(a)}); }
inline NodePtr sum(NodePtr a) { return detail::make(Op::sum, {std::move(a)}); }
inline NodePtr mean(NodePtr a) { return detail::make(Op::mean, {std::move(a)}); }

inline NodePtr add_scalar(NodePtr a, double c) { return add(std::move(a), constant(Tensor::scalar(c))); }
inline NodePtr scale(NodePtr a, double c) { return mul(std::move(a), constant(Tensor::scalar(c))); }
inline NodePtr sub(NodePtr a, NodePtr b) { return add(std::move(a), scale(std::move(b), -1.0)); }

/// x clamped to [lo, hi], built from two relu hinges:
/// lo + relu(x - lo) - relu(x - hi). Gradient is 1 inside the band, 0 outside.
inline NodePtr clamp(NodePtr x, double lo, double hi) {
    NodePtr inner = relu(add_scalar(x, -lo));
    NodePtr over = relu(add_scalar(std::move(x), -hi));
    return add_scalar(sub(std::move(inner), std::move(over)), lo);
}

/// x @ w + b with the bias row applied to every row of the product.
inline NodePtr affine(NodePtr x, NodePtr w, NodePtr b) {
    return add(matmul(std::move(x), std::move(w)), std::move(b));
}

/// Nodes reachable from root, parents before children reversed: the returned
/// order has every node after all of its inputs.
inline std::vector<Node*> topo_order(const NodePtr& root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* in = node->inputs[next++].get();
            if (seen.insert(in).second) stack.emplace_back(in, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

/// Recomputes every non-leaf value in dependency order and returns the root
/// value. Call after mutating leaf tensors in an already built graph.
inline Tensor forward(const NodePtr& root) {
    for (Node* n : topo_order(root)) detail::eval(*n);
    return root->value;
}

namespace detail {

inline void accumulate_binary_grad(Node& n) {
    Node& a = *n.inputs[0];
    Node& b = *n.inputs[1];
    const Bcast bc = classify(n.op, a.value, b.value);
    const bool is_add = n.op == Op::add;
    if (a.requires_grad) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            double g = n.grad.data[i];
            if (!is_add) {
                switch (bc) {
                    case Bcast::same: g *= b.value.data[i]; break;
                    case Bcast::scalar: g *= b.value.data[0]; break;
                    case Bcast::row: g *= b.value.data[i % b.value.cols()]; break;
                }
            }
            a.grad.data[i] += g;
        }
    }
    if (b.requires_grad) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            double g = n.grad.data[i];
            if (!is_add) g *= a.value.data[i];
            switch (bc) {
                case Bcast::same: b.grad.data[i] += g; break;
                case Bcast::scalar: b.grad.data[0] += g; break;
                case Bcast::row: b.grad.data[i % b.value.cols()] += g; break;
            }
        }
    }
}

inline void accumulate_matmul_grad(Node& n) {
    Node& a = *n.inputs[0];
    Node& b = *n.inputs[1];
    const std::size_t m = a.value.rows(), k = a.value.cols(), p = b.value.cols();
    if (a.requires_grad) {
        // dA += dC @ B^T
        for (std::size_t i = 0; i < m; ++i) {
            const double* grow = &n.grad.data[i * p];
            double* arow = &a.grad.data[i * k];
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double* brow = &b.value.data[kk * p];
                double acc = 0.0;
                for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
                arow[kk] += acc;
            }
        }
    }
    if (b.requires_grad) {
        // dB += A^T @ dC
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = &a.value.data[i * k];
            const double* grow = &n.grad.data[i * p];
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double av = arow[kk];
                if (av == 0.0) continue;
                double* brow = &b.grad.data[kk * p];
                for (std::size_t j = 0; j < p; ++j) brow[j] += av * grow[j];
            }
        }
    }
}

}  // namespace detail

/// Reverse pass from a scalar root. Fills node.grad with d(root)/d(node) for
/// every node that leads to a parameter; each node is visited exactly once.
inline void backward(const NodePtr& root) {
    if (root->value.size() != 1)
        throw Error("backward requires a scalar root, got shape " + root->value.shape_str());
    std::vector<Node*> order = topo_order(root);
    for (Node* n : order) {
        if (n->grad.shape != n->value.shape)
            n->grad = Tensor(n->value.shape);
        else
            std::fill(n->grad.data.begin(), n->grad.data.end(), 0.0);
    }
    root->grad.data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node& n = **it;
        if (!n.requires_grad || n.op == Op::leaf) continue;
        switch (n.op) {
            case Op::matmul:
                detail::accumulate_matmul_grad(n);
                break;
            case Op::add:
            case Op::mul:
                detail::accumulate_binary_grad(n);
                break;
            case Op::relu: {
                Node& a = *n.inputs[0];
                if (!a.requires_grad) break;
                for (std::size_t i = 0; i < n.grad.size(); ++i)
                    if (a.value.data[i] > 0.0) a.grad.data[i] += n.grad.data[i];
                break;
            }
            case Op::sigmoid: {
                Node& a = *n.inputs[0];
                if (!a.requires_grad) break;
                for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    const double s = n.value.data[i];
                    a.grad.data[i] += n.grad.data[i] * s * (1.0 - s);
                }
                break;
            }
            case Op::exp: {
                Node& a = *n.inputs[0];
                if (!a.requires_grad) break;
                for (std::size_t i = 0; i < n.grad.size(); ++i)
                    a.grad.data[i] += n.grad.data[i] * n.value.data[i];
                break;
            }
            case Op::log: {
                Node& a = *n.inputs[0];
                if (!a.requires_grad) break;
                for (std::size_t i = 0; i < n.grad.size(); ++i)
                    a.grad.data[i] += n.grad.data[i] / a.value.data[i];
                break;
            }
            case Op::square: {
                Node& a = *n.inputs[0];
                if (!a.requires_grad) break;
                for (std::size_t i = 0; i < n.grad.size(); ++i)
                    a.grad.data[i] += n.grad.data[i] * 2.0 * a.value.data[i];
                break;
            }
            case Op::sum: {
                Node& a = *n.inputs[0];
                if (!a.requires_grad) break;
                const double g = n.grad.data[0];
                for (std::size_t i = 0; i < a.grad.size(); ++i) a.grad.data[i] += g;
                break;
            }
            case Op::mean: {
                Node& a = *n.inputs[0];
                if (!a.requires_grad) break;
                const double g = n.grad.data[0] / static_cast<double>(a.value.size());
                for (std::size_t i = 0; i < a.grad.size(); ++i) a.grad.data[i] += g;
                break;
            }
            case Op::leaf:
                break;
        }
    }
}

/// Runs backward and returns one gradient per requested parameter, keyed by
/// parameter name. Parameters that do not feed the root get a zero gradient.
inline std::unordered_map<std::string, Tensor> gradients(const NodePtr& root,
                                                         const std::vector<NodePtr>& params) {
    backward(root);
    std::unordered_set<Node*> reachable;
    for (Node* n : topo_order(root)) reachable.insert(n);
    std::unordered_map<std::string, Tensor> out;
    for (const NodePtr& p : params) {
        if (reachable.count(p.get()))
            out[p->name] = p->grad;
        else
            out[p->name] = Tensor(p->value.shape);
    }
    return out;
}

}  // namespace bvod
