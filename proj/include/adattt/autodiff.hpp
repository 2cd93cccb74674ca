#pragma once

// Reverse-mode automatic differentiation over dense real vectors/matrices.
// A Tape owns Node records in creation (topological) order; backward walks
// the tape in reverse, accumulating adjoints for parameters and inputs
// alike. Accumulation order is fixed by the tape order, so identical tapes
// and inputs reproduce bitwise identical values and adjoints.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace adattt::ad {

using Tensor = Eigen::MatrixXd;
using NodeId = std::int32_t;

enum class Op : std::uint8_t {
    Leaf,          // input, collects gradient
    Constant,      // no gradient
    MatVec,        // W (m×n) · x (n×1)
    Add,           // a + b, same shape
    Sub,           // a − b
    Mul,           // a ⊙ b
    AddConst,      // a + aux
    MulConst,      // a ⊙ aux
    Scale,         // a · scalar
    Relu,          // max(a, 0); subgradient at 0 is 0
    Sigmoid,       // 1 / (1 + e^−a)
    Softplus,      // log(1 + e^a), overflow-safe
    SqDiff,        // (a − b)², elementwise
    Sum,           // Σ entries → 1×1
    Mean,          // Σ entries / n → 1×1
    DotConst,      // Σ a_i · aux_i → 1×1
    Decay,         // exp(−a ⊙ aux); aux is the (nonneg) staleness vector
    SqDistRows,    // a = z (d×1), b = P (k×d) → k×1 of ‖z − P_j‖²
    Softmax,       // column vector
    Select,        // a[idx] → 1×1
    BceWithLogit,  // binary cross-entropy of sigmoid(a) against aux label
};

struct Node {
    Op op;
    NodeId a = -1;
    NodeId b = -1;
    Tensor value;
    Tensor adjoint;   // same shape as value; zero until backward
    Tensor aux;       // constant operand, where the op uses one
    double scalar = 0.0;
    bool requires_grad = false;
};

class Tape {
public:
    NodeId input(Tensor v);
    NodeId constant(Tensor v);

    NodeId matvec(NodeId w, NodeId x);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId add_const(NodeId a, Tensor c);
    NodeId mul_const(NodeId a, Tensor c);
    NodeId scale(NodeId a, double s);
    NodeId relu(NodeId a);
    NodeId sigmoid(NodeId a);
    NodeId softplus(NodeId a);
    NodeId sqdiff(NodeId a, NodeId b);
    NodeId sum(NodeId a);
    NodeId mean(NodeId a);
    NodeId dot_const(NodeId a, Tensor w);
    NodeId decay(NodeId rates, Tensor dt);
    NodeId sqdist_rows(NodeId z, NodeId p);
    NodeId softmax(NodeId v);
    NodeId select(NodeId v, int idx);
    NodeId bce_with_logit(NodeId logit, double label);

    // Populates adjoints of every node reachable from `out`. `out` must be
    // scalar (1×1). A second call without reset_adjoints() is an error.
    void backward(NodeId out);
    void reset_adjoints();

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    const Tensor& adjoint(NodeId id) const { return nodes_[id].adjoint; }
    double value_scalar(NodeId id) const;
    bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }

    int size() const { return static_cast<int>(nodes_.size()); }
    void reserve(int n) { nodes_.reserve(static_cast<std::size_t>(n)); }

private:
    NodeId push(Node n);
    NodeId unary(Op op, NodeId a);
    NodeId binary(Op op, NodeId a, NodeId b);
    const Node& at(NodeId id) const;

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// Shared forward kernels; the value-level model forward uses the same
// expressions so that graph and direct evaluation agree bitwise.
namespace kernels {
inline Tensor relu(const Tensor& x) { return x.cwiseMax(0.0); }
inline Tensor sigmoid(const Tensor& x) {
    return ((-x.array()).exp() + 1.0).inverse().matrix();
}
inline Tensor softplus(const Tensor& x) {
    // x + log1p(e^−x) for x > 0, log1p(e^x) otherwise
    return x.unaryExpr([](double v) {
        return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    });
}
inline Tensor decay_gate(const Tensor& rates, const Tensor& dt) {
    return (-(rates.array() * dt.array())).exp().matrix();
}
}  // namespace kernels

struct GradCheckReport {
    bool pass = false;
    double max_rel_err = 0.0;
    Eigen::Index worst_index = -1;
    bool nonfinite = false;
    Eigen::Index nonfinite_index = -1;
};

// Builds the graph at `point` (flat column vector leaf), runs backward, and
// compares against central finite differences coordinate-wise. Relative
// error uses a unit floor in the denominator so near-zero gradients are
// compared absolutely.
using ScalarFn = std::function<NodeId(Tape&, NodeId)>;
GradCheckReport grad_check(const ScalarFn& f, const Tensor& point, double tol,
                           double step = 1e-5);

}  // namespace adattt::ad
