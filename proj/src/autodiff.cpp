#include "adattt/autodiff.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace adattt::ad {

namespace {

std::string shape_of(const Tensor& t) {
    std::ostringstream os;
    os << t.rows() << "x" << t.cols();
    return os.str();
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_of(a) +
                                " vs " + shape_of(b));
}

void require_column(const char* op, const Tensor& t) {
    if (t.cols() != 1)
        throw std::invalid_argument(std::string(op) + ": expected column vector, got " +
                                    shape_of(t));
}

}  // namespace

const Node& Tape::at(NodeId id) const {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
        throw std::invalid_argument("Tape: node id out of range");
    return nodes_[id];
}

NodeId Tape::push(Node n) {
    n.adjoint = Tensor::Zero(n.value.rows(), n.value.cols());
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::input(Tensor v) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(v);
    n.requires_grad = true;
    return push(std::move(n));
}

NodeId Tape::constant(Tensor v) {
    Node n;
    n.op = Op::Constant;
    n.value = std::move(v);
    n.requires_grad = false;
    return push(std::move(n));
}

NodeId Tape::unary(Op op, NodeId a) {
    Node n;
    n.op = op;
    n.a = a;
    n.requires_grad = at(a).requires_grad;
    const Tensor& x = at(a).value;
    switch (op) {
        case Op::Relu: n.value = kernels::relu(x); break;
        case Op::Sigmoid: n.value = kernels::sigmoid(x); break;
        case Op::Softplus: n.value = kernels::softplus(x); break;
        case Op::Sum: n.value = Tensor::Constant(1, 1, x.sum()); break;
        case Op::Mean: n.value = Tensor::Constant(1, 1, x.mean()); break;
        case Op::Softmax: {
            require_column("softmax", x);
            const double m = x.maxCoeff();
            Eigen::ArrayXd e = (x.col(0).array() - m).exp();
            n.value = (e / e.sum()).matrix();
            break;
        }
        default: throw std::logic_error("unary: bad op");
    }
    return push(std::move(n));
}

NodeId Tape::binary(Op op, NodeId a, NodeId b) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.requires_grad = at(a).requires_grad || at(b).requires_grad;
    const Tensor& x = at(a).value;
    const Tensor& y = at(b).value;
    switch (op) {
        case Op::Add:
        case Op::Sub:
        case Op::Mul:
        case Op::SqDiff:
            if (x.rows() != y.rows() || x.cols() != y.cols())
                shape_error("elementwise", x, y);
            break;
        default: break;
    }
    switch (op) {
        case Op::Add: n.value = x + y; break;
        case Op::Sub: n.value = x - y; break;
        case Op::Mul: n.value = x.cwiseProduct(y); break;
        case Op::SqDiff: n.value = (x - y).array().square().matrix(); break;
        case Op::MatVec:
            require_column("matvec", y);
            if (x.cols() != y.rows()) shape_error("matvec", x, y);
            n.value = x * y;
            break;
        case Op::SqDistRows: {
            require_column("sqdist_rows", x);
            if (y.cols() != x.rows()) shape_error("sqdist_rows", y, x);
            Tensor out(y.rows(), 1);
            for (Eigen::Index j = 0; j < y.rows(); ++j)
                out(j, 0) = (x.col(0).transpose() - y.row(j)).squaredNorm();
            n.value = std::move(out);
            break;
        }
        default: throw std::logic_error("binary: bad op");
    }
    return push(std::move(n));
}

NodeId Tape::matvec(NodeId w, NodeId x) { return binary(Op::MatVec, w, x); }
NodeId Tape::add(NodeId a, NodeId b) { return binary(Op::Add, a, b); }
NodeId Tape::sub(NodeId a, NodeId b) { return binary(Op::Sub, a, b); }
NodeId Tape::mul(NodeId a, NodeId b) { return binary(Op::Mul, a, b); }
NodeId Tape::sqdiff(NodeId a, NodeId b) { return binary(Op::SqDiff, a, b); }
NodeId Tape::sqdist_rows(NodeId z, NodeId p) { return binary(Op::SqDistRows, z, p); }
NodeId Tape::relu(NodeId a) { return unary(Op::Relu, a); }
NodeId Tape::sigmoid(NodeId a) { return unary(Op::Sigmoid, a); }
NodeId Tape::softplus(NodeId a) { return unary(Op::Softplus, a); }
NodeId Tape::sum(NodeId a) { return unary(Op::Sum, a); }
NodeId Tape::mean(NodeId a) { return unary(Op::Mean, a); }
NodeId Tape::softmax(NodeId v) { return unary(Op::Softmax, v); }

NodeId Tape::add_const(NodeId a, Tensor c) {
    const Tensor& x = at(a).value;
    if (x.rows() != c.rows() || x.cols() != c.cols()) shape_error("add_const", x, c);
    Node n;
    n.op = Op::AddConst;
    n.a = a;
    n.requires_grad = at(a).requires_grad;
    n.value = x + c;
    n.aux = std::move(c);
    return push(std::move(n));
}

NodeId Tape::mul_const(NodeId a, Tensor c) {
    const Tensor& x = at(a).value;
    if (x.rows() != c.rows() || x.cols() != c.cols()) shape_error("mul_const", x, c);
    Node n;
    n.op = Op::MulConst;
    n.a = a;
    n.requires_grad = at(a).requires_grad;
    n.value = x.cwiseProduct(c);
    n.aux = std::move(c);
    return push(std::move(n));
}

NodeId Tape::scale(NodeId a, double s) {
    Node n;
    n.op = Op::Scale;
    n.a = a;
    n.requires_grad = at(a).requires_grad;
    n.value = at(a).value * s;
    n.scalar = s;
    return push(std::move(n));
}

NodeId Tape::dot_const(NodeId a, Tensor w) {
    const Tensor& x = at(a).value;
    if (x.rows() != w.rows() || x.cols() != w.cols()) shape_error("dot_const", x, w);
    Node n;
    n.op = Op::DotConst;
    n.a = a;
    n.requires_grad = at(a).requires_grad;
    n.value = Tensor::Constant(1, 1, x.cwiseProduct(w).sum());
    n.aux = std::move(w);
    return push(std::move(n));
}

NodeId Tape::decay(NodeId rates, Tensor dt) {
    const Tensor& s = at(rates).value;
    if (s.rows() != dt.rows() || s.cols() != dt.cols()) shape_error("decay", s, dt);
    if ((dt.array() < 0.0).any())
        throw std::invalid_argument("decay: negative staleness");
    Node n;
    n.op = Op::Decay;
    n.a = rates;
    n.requires_grad = at(rates).requires_grad;
    n.value = kernels::decay_gate(s, dt);
    n.aux = std::move(dt);
    return push(std::move(n));
}

NodeId Tape::select(NodeId v, int idx) {
    const Tensor& x = at(v).value;
    require_column("select", x);
    if (idx < 0 || idx >= x.rows())
        throw std::invalid_argument("select: index out of range");
    Node n;
    n.op = Op::Select;
    n.a = v;
    n.requires_grad = at(v).requires_grad;
    n.value = Tensor::Constant(1, 1, x(idx, 0));
    n.scalar = static_cast<double>(idx);
    return push(std::move(n));
}

NodeId Tape::bce_with_logit(NodeId logit, double label) {
    const Tensor& x = at(logit).value;
    if (x.size() != 1)
        throw std::invalid_argument("bce_with_logit: logit must be scalar");
    const double l = x(0, 0);
    // max(l,0) − l·y + log1p(e^−|l|): stable for any logit magnitude
    const double loss = std::max(l, 0.0) - l * label + std::log1p(std::exp(-std::abs(l)));
    Node n;
    n.op = Op::BceWithLogit;
    n.a = logit;
    n.requires_grad = at(logit).requires_grad;
    n.value = Tensor::Constant(1, 1, loss);
    n.scalar = label;
    return push(std::move(n));
}

double Tape::value_scalar(NodeId id) const {
    const Tensor& v = at(id).value;
    if (v.size() != 1) throw std::invalid_argument("value_scalar: node is not scalar");
    return v(0, 0);
}

void Tape::reset_adjoints() {
    for (Node& n : nodes_) n.adjoint.setZero();
    backward_done_ = false;
}

void Tape::backward(NodeId out) {
    const Node& o = at(out);
    if (o.value.size() != 1)
        throw std::invalid_argument("backward: output must be scalar, got " +
                                    shape_of(o.value));
    if (backward_done_)
        throw std::logic_error("backward: adjoints already populated; reset first");
    backward_done_ = true;
    nodes_[out].adjoint(0, 0) = 1.0;

    for (NodeId id = out; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.requires_grad) continue;
        const Tensor& g = n.adjoint;
        switch (n.op) {
            case Op::Leaf:
            case Op::Constant:
                break;
            case Op::MatVec: {
                Node& w = nodes_[n.a];
                Node& x = nodes_[n.b];
                if (w.requires_grad) w.adjoint.noalias() += g * x.value.transpose();
                if (x.requires_grad) x.adjoint.noalias() += w.value.transpose() * g;
                break;
            }
            case Op::Add: {
                if (nodes_[n.a].requires_grad) nodes_[n.a].adjoint += g;
                if (nodes_[n.b].requires_grad) nodes_[n.b].adjoint += g;
                break;
            }
            case Op::Sub: {
                if (nodes_[n.a].requires_grad) nodes_[n.a].adjoint += g;
                if (nodes_[n.b].requires_grad) nodes_[n.b].adjoint -= g;
                break;
            }
            case Op::Mul: {
                if (nodes_[n.a].requires_grad)
                    nodes_[n.a].adjoint += g.cwiseProduct(nodes_[n.b].value);
                if (nodes_[n.b].requires_grad)
                    nodes_[n.b].adjoint += g.cwiseProduct(nodes_[n.a].value);
                break;
            }
            case Op::AddConst:
                nodes_[n.a].adjoint += g;
                break;
            case Op::MulConst:
                nodes_[n.a].adjoint += g.cwiseProduct(n.aux);
                break;
            case Op::Scale:
                nodes_[n.a].adjoint += g * n.scalar;
                break;
            case Op::Relu: {
                const Tensor& x = nodes_[n.a].value;
                // subgradient at 0 defined as 0
                nodes_[n.a].adjoint +=
                    g.cwiseProduct(x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
                break;
            }
            case Op::Sigmoid: {
                const Tensor& y = n.value;
                nodes_[n.a].adjoint +=
                    g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix()));
                break;
            }
            case Op::Softplus:
                nodes_[n.a].adjoint += g.cwiseProduct(kernels::sigmoid(nodes_[n.a].value));
                break;
            case Op::SqDiff: {
                const Tensor d = nodes_[n.a].value - nodes_[n.b].value;
                if (nodes_[n.a].requires_grad)
                    nodes_[n.a].adjoint += 2.0 * g.cwiseProduct(d);
                if (nodes_[n.b].requires_grad)
                    nodes_[n.b].adjoint -= 2.0 * g.cwiseProduct(d);
                break;
            }
            case Op::Sum:
                nodes_[n.a].adjoint.array() += g(0, 0);
                break;
            case Op::Mean:
                nodes_[n.a].adjoint.array() += g(0, 0) / static_cast<double>(nodes_[n.a].value.size());
                break;
            case Op::DotConst:
                nodes_[n.a].adjoint += g(0, 0) * n.aux;
                break;
            case Op::Decay:
                // d/ds exp(−s·Δt) = −Δt · exp(−s·Δt)
                nodes_[n.a].adjoint -= g.cwiseProduct(n.aux).cwiseProduct(n.value);
                break;
            case Op::SqDistRows: {
                Node& z = nodes_[n.a];
                Node& p = nodes_[n.b];
                for (Eigen::Index j = 0; j < p.value.rows(); ++j) {
                    const double gj = g(j, 0);
                    if (gj == 0.0) continue;
                    const Tensor diff = z.value.col(0) - p.value.row(j).transpose();
                    if (z.requires_grad) z.adjoint.col(0) += 2.0 * gj * diff;
                    if (p.requires_grad) p.adjoint.row(j) -= 2.0 * gj * diff.transpose();
                }
                break;
            }
            case Op::Softmax: {
                const Tensor& y = n.value;
                const double dot = g.cwiseProduct(y).sum();
                nodes_[n.a].adjoint += y.cwiseProduct((g.array() - dot).matrix());
                break;
            }
            case Op::Select:
                nodes_[n.a].adjoint(static_cast<Eigen::Index>(n.scalar), 0) += g(0, 0);
                break;
            case Op::BceWithLogit: {
                const double l = nodes_[n.a].value(0, 0);
                const double p = 1.0 / (1.0 + std::exp(-l));
                nodes_[n.a].adjoint(0, 0) += g(0, 0) * (p - n.scalar);
                break;
            }
        }
    }
}

GradCheckReport grad_check(const ScalarFn& f, const Tensor& point, double tol, double step) {
    GradCheckReport rep;
    if (point.cols() != 1)
        throw std::invalid_argument("grad_check: point must be a column vector");

    Tape tape;
    const NodeId x = tape.input(point);
    const NodeId y = f(tape, x);
    if (!std::isfinite(tape.value_scalar(y))) {
        rep.nonfinite = true;
        return rep;
    }
    tape.backward(y);
    const Tensor grad = tape.adjoint(x);

    rep.pass = true;
    for (Eigen::Index i = 0; i < point.rows(); ++i) {
        Tensor hi = point, lo = point;
        hi(i, 0) += step;
        lo(i, 0) -= step;
        Tape th, tl;
        const double fh = th.value_scalar(f(th, th.input(hi)));
        const double fl = tl.value_scalar(f(tl, tl.input(lo)));
        if (!std::isfinite(fh) || !std::isfinite(fl) || !std::isfinite(grad(i, 0))) {
            rep.nonfinite = true;
            rep.nonfinite_index = i;
            rep.pass = false;
            continue;
        }
        const double fd = (fh - fl) / (2.0 * step);
        const double denom = std::max({std::abs(fd), std::abs(grad(i, 0)), 1.0});
        const double rel = std::abs(fd - grad(i, 0)) / denom;
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_index = i;
        }
    }
    if (rep.max_rel_err > tol) rep.pass = false;
    return rep;
}

}  // namespace adattt::ad
