#include "dsplat/ad.hpp"
#include "dsplat/rng.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dsplat::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat as_matrix(const Array& a) {
    return ConstMapMat(a.data.data(), a.rows(), a.cols());
}

MapMat as_matrix(Array& a) { return MapMat(a.data.data(), a.rows(), a.cols()); }

[[noreturn]] void contract_violation(const std::string& msg) {
    throw std::invalid_argument("tape: " + msg);
}

bool is_scalar_like(const Array& a) { return a.size() == 1; }

} // namespace

int64_t shape_size(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

Array::Array(Shape s, Eigen::ArrayXd d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_size(shape))
        contract_violation("array data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
}

Array Array::zeros(Shape s) {
    Array a;
    a.data = Eigen::ArrayXd::Zero(shape_size(s));
    a.shape = std::move(s);
    return a;
}

Array Array::full(Shape s, double v) {
    Array a;
    a.data = Eigen::ArrayXd::Constant(shape_size(s), v);
    a.shape = std::move(s);
    return a;
}

Array Array::scalar(double v) {
    Array a;
    a.shape = {};
    a.data = Eigen::ArrayXd::Constant(1, v);
    return a;
}

Array Array::from(Shape s, std::initializer_list<double> values) {
    Array a;
    a.shape = std::move(s);
    a.data.resize(int64_t(values.size()));
    int64_t i = 0;
    for (double v : values) a.data[i++] = v;
    if (a.data.size() != shape_size(a.shape))
        contract_violation("initializer length does not match shape " +
                           shape_str(a.shape));
    return a;
}

const char* op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
        case Op::Matmul: return "matmul";
        case Op::Sin: return "sin";
        case Op::Cos: return "cos";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Sigmoid: return "sigmoid";
        case Op::Relu: return "relu";
        case Op::Clamp: return "clamp";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::Abs: return "abs";
        case Op::NormL1: return "norm-l1";
        case Op::NormL2: return "norm-l2";
        case Op::Concat: return "concat";
        case Op::Gather: return "index-gather";
        case Op::StopGradient: return "stop-gradient";
        case Op::Custom: return "custom";
    }
    return "?";
}

Tape::Node& Tape::node(Ref r) {
    if (!r.valid() || r.idx >= int32_t(nodes_.size()))
        contract_violation("invalid node reference");
    return nodes_[size_t(r.idx)];
}

const Tape::Node& Tape::node(Ref r) const {
    if (!r.valid() || r.idx >= int32_t(nodes_.size()))
        contract_violation("invalid node reference");
    return nodes_[size_t(r.idx)];
}

Ref Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return Ref{int32_t(nodes_.size() - 1)};
}

Ref Tape::input(Array value, bool requires_grad) {
    Node n;
    n.op = Op::Input;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.needs_grad = requires_grad;
    return push(std::move(n));
}

Ref Tape::constant(Array value) { return input(std::move(value), false); }

const Array& Tape::value(Ref r) const { return node(r).value; }

bool Tape::has_grad(Ref r) const { return node(r).adjoint.size() > 0; }

const Array& Tape::grad(Ref r) const {
    const Node& n = node(r);
    if (n.adjoint.size() > 0) return n.adjoint;
    // Never-reached node: expose a zero adjoint of the right shape.
    if (empty_grad_.shape != n.value.shape ||
        empty_grad_.data.size() != n.value.data.size())
        const_cast<Tape*>(this)->empty_grad_ = Array::zeros(n.value.shape);
    return empty_grad_;
}

void Tape::accumulate(Ref r, const Array& contribution) {
    Node& n = node(r);
    if (!n.needs_grad) return;
    if (n.adjoint.size() == 0) n.adjoint = Array::zeros(n.value.shape);
    n.adjoint.data += contribution.data;
}

namespace {

// Broadcast classes for binary elementwise ops.
enum class Bcast { Same, ALeft, BLeft, Row, RowFlip };

Bcast classify(const Array& a, const Array& b, Op op) {
    if (a.shape == b.shape) return Bcast::Same;
    if (is_scalar_like(b)) return Bcast::ALeft;  // a op scalar
    if (is_scalar_like(a)) return Bcast::BLeft;  // scalar op b
    if (a.rank() == 2 && b.rank() == 2 && a.cols() == b.cols()) {
        if (b.rows() == 1) return Bcast::Row;      // (N,M) op (1,M)
        if (a.rows() == 1) return Bcast::RowFlip;  // (1,M) op (N,M)
    }
    contract_violation(std::string(op_name(op)) + ": shape mismatch " +
                       shape_str(a.shape) + " vs " + shape_str(b.shape));
}

Eigen::ArrayXd broadcast_row(const Array& row, int64_t n_rows) {
    const int64_t m = row.size();
    Eigen::ArrayXd out(n_rows * m);
    for (int64_t i = 0; i < n_rows; ++i)
        out.segment(i * m, m) = row.data;
    return out;
}

Eigen::ArrayXd reduce_rows(const Eigen::ArrayXd& full, int64_t n_rows, int64_t m) {
    Eigen::ArrayXd out = Eigen::ArrayXd::Zero(m);
    for (int64_t i = 0; i < n_rows; ++i)
        out += full.segment(i * m, m);
    return out;
}

} // namespace

Ref Tape::record(Op op, std::span<const Ref> inputs) {
    Node n;
    n.op = op;
    n.in.assign(inputs.begin(), inputs.end());
    for (Ref r : n.in) n.needs_grad = n.needs_grad || node(r).needs_grad;
    if (op == Op::StopGradient) n.needs_grad = false;

    auto unary = [&](auto f) {
        const Array& x = node(n.in.at(0)).value;
        n.value = Array{x.shape, f(x.data)};
    };

    switch (op) {
        case Op::Input:
            contract_violation("record(input) is not valid; use Tape::input");
        case Op::Add:
        case Op::Sub:
        case Op::Mul:
        case Op::Div: {
            if (n.in.size() != 2)
                contract_violation(std::string(op_name(op)) + ": expects 2 inputs");
            const Array& a = node(n.in[0]).value;
            const Array& b = node(n.in[1]).value;
            const Bcast bc = classify(a, b, op);
            Eigen::ArrayXd av = a.data, bv = b.data;
            Shape out_shape = a.shape;
            switch (bc) {
                case Bcast::Same: break;
                case Bcast::ALeft:
                    bv = Eigen::ArrayXd::Constant(a.size(), b.data[0]);
                    break;
                case Bcast::BLeft:
                    av = Eigen::ArrayXd::Constant(b.size(), a.data[0]);
                    out_shape = b.shape;
                    break;
                case Bcast::Row:
                    bv = broadcast_row(b, a.rows());
                    break;
                case Bcast::RowFlip:
                    av = broadcast_row(a, b.rows());
                    out_shape = b.shape;
                    break;
            }
            Eigen::ArrayXd out;
            if (op == Op::Add) out = av + bv;
            else if (op == Op::Sub) out = av - bv;
            else if (op == Op::Mul) out = av * bv;
            else out = av / bv;
            n.value = Array{std::move(out_shape), std::move(out)};
            break;
        }
        case Op::Matmul: {
            if (n.in.size() != 2)
                contract_violation("matmul: expects 2 inputs");
            const Array& a = node(n.in[0]).value;
            const Array& b = node(n.in[1]).value;
            if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
                contract_violation("matmul: shape mismatch " + shape_str(a.shape) +
                                   " vs " + shape_str(b.shape));
            Array out = Array::zeros({a.rows(), b.cols()});
            as_matrix(out) = as_matrix(a) * as_matrix(b);
            n.value = std::move(out);
            break;
        }
        case Op::Sin: unary([](const Eigen::ArrayXd& x) { return x.sin().eval(); }); break;
        case Op::Cos: unary([](const Eigen::ArrayXd& x) { return x.cos().eval(); }); break;
        case Op::Exp: unary([](const Eigen::ArrayXd& x) { return x.exp().eval(); }); break;
        case Op::Log: unary([](const Eigen::ArrayXd& x) { return x.log().eval(); }); break;
        case Op::Sigmoid:
            unary([](const Eigen::ArrayXd& x) {
                return (0.5 * (0.5 * x).tanh() + 0.5).eval();
            });
            break;
        case Op::Relu:
            unary([](const Eigen::ArrayXd& x) { return x.max(0.0).eval(); });
            break;
        case Op::Abs:
            unary([](const Eigen::ArrayXd& x) { return x.abs().eval(); });
            break;
        case Op::Sum: {
            const Array& x = node(n.in.at(0)).value;
            n.value = Array::scalar(x.data.sum());
            break;
        }
        case Op::Mean: {
            const Array& x = node(n.in.at(0)).value;
            if (x.size() == 0) contract_violation("mean: empty input");
            n.value = Array::scalar(x.data.mean());
            break;
        }
        case Op::NormL1: {
            const Array& x = node(n.in.at(0)).value;
            n.value = Array::scalar(x.data.abs().sum());
            break;
        }
        case Op::NormL2: {
            const Array& x = node(n.in.at(0)).value;
            n.value = Array::scalar(std::sqrt((x.data * x.data).sum()));
            break;
        }
        case Op::StopGradient: {
            n.value = node(n.in.at(0)).value;
            break;
        }
        case Op::Clamp:
        case Op::Concat:
        case Op::Gather:
        case Op::Custom:
            contract_violation(std::string(op_name(op)) +
                               ": use the dedicated recording entry");
    }
    if (n.value.size() == 0 && op != Op::StopGradient)
        contract_violation(std::string(op_name(op)) + ": empty result");
    return push(std::move(n));
}

Ref Tape::record_clamp(Ref x, double lo, double hi) {
    Node n;
    n.op = Op::Clamp;
    n.in = {x};
    n.needs_grad = node(x).needs_grad;
    n.lo = lo;
    n.hi = hi;
    const Array& v = node(x).value;
    n.value = Array{v.shape, v.data.max(lo).min(hi)};
    return push(std::move(n));
}

Ref Tape::record_concat(Ref a, Ref b, int axis) {
    Node n;
    n.op = Op::Concat;
    n.in = {a, b};
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    n.axis = axis;
    const Array& av = node(a).value;
    const Array& bv = node(b).value;
    if (axis == 0) {
        // Rank-1 append, or rank-2 row stack with equal column counts.
        if (av.rank() == 1 && bv.rank() == 1) {
            Array out = Array::zeros({av.size() + bv.size()});
            out.data << av.data, bv.data;
            n.value = std::move(out);
        } else if (av.rank() == 2 && bv.rank() == 2 && av.cols() == bv.cols()) {
            Array out = Array::zeros({av.rows() + bv.rows(), av.cols()});
            out.data << av.data, bv.data;
            n.value = std::move(out);
        } else {
            contract_violation("concat axis 0: shape mismatch " +
                               shape_str(av.shape) + " vs " + shape_str(bv.shape));
        }
    } else if (axis == 1) {
        if (av.rank() != 2 || bv.rank() != 2 || av.rows() != bv.rows())
            contract_violation("concat axis 1: shape mismatch " +
                               shape_str(av.shape) + " vs " + shape_str(bv.shape));
        const int64_t n_rows = av.rows(), ca = av.cols(), cb = bv.cols();
        Array out = Array::zeros({n_rows, ca + cb});
        for (int64_t i = 0; i < n_rows; ++i) {
            out.data.segment(i * (ca + cb), ca) = av.data.segment(i * ca, ca);
            out.data.segment(i * (ca + cb) + ca, cb) = bv.data.segment(i * cb, cb);
        }
        n.value = std::move(out);
    } else {
        contract_violation("concat: axis must be 0 or 1");
    }
    return push(std::move(n));
}

Ref Tape::record_gather(Ref x, std::shared_ptr<const std::vector<int64_t>> idx,
                        Shape out_shape) {
    Node n;
    n.op = Op::Gather;
    n.in = {x};
    n.needs_grad = node(x).needs_grad;
    n.index = std::move(idx);
    const Array& v = node(x).value;
    if (int64_t(n.index->size()) != shape_size(out_shape))
        contract_violation("index-gather: index count " +
                           std::to_string(n.index->size()) +
                           " does not match output shape " + shape_str(out_shape));
    Array out = Array::zeros(out_shape);
    const int64_t limit = v.size();
    for (size_t i = 0; i < n.index->size(); ++i) {
        const int64_t j = (*n.index)[i];
        if (j < 0 || j >= limit)
            contract_violation("index-gather: index " + std::to_string(j) +
                               " out of range for input of size " +
                               std::to_string(limit));
        out.data[int64_t(i)] = v.data[j];
    }
    n.value = std::move(out);
    return push(std::move(n));
}

Ref Tape::record_custom(std::shared_ptr<CustomOp> op, std::vector<Ref> inputs) {
    Node n;
    n.op = Op::Custom;
    n.in = std::move(inputs);
    for (Ref r : n.in) n.needs_grad = n.needs_grad || node(r).needs_grad;
    std::vector<const Array*> in_values;
    in_values.reserve(n.in.size());
    for (Ref r : n.in) in_values.push_back(&node(r).value);
    n.value = op->forward(in_values);
    n.custom = std::move(op);
    return push(std::move(n));
}

void Tape::backprop_node(int32_t i) {
    Node& n = nodes_[size_t(i)];
    const Array& g = n.adjoint;

    auto in_val = [&](size_t k) -> const Array& { return node(n.in[k]).value; };

    switch (n.op) {
        case Op::Input:
        case Op::StopGradient:
            return;
        case Op::Add:
        case Op::Sub:
        case Op::Mul:
        case Op::Div: {
            const Array& a = in_val(0);
            const Array& b = in_val(1);
            const Bcast bc = classify(a, b, n.op);
            // Full-shape partials, then reduce for the broadcast operand.
            Eigen::ArrayXd da, db;
            switch (n.op) {
                case Op::Add:
                    da = g.data;
                    db = g.data;
                    break;
                case Op::Sub:
                    da = g.data;
                    db = -g.data;
                    break;
                case Op::Mul: {
                    Eigen::ArrayXd av = a.data, bv = b.data;
                    if (bc == Bcast::ALeft) bv = Eigen::ArrayXd::Constant(a.size(), b.data[0]);
                    if (bc == Bcast::BLeft) av = Eigen::ArrayXd::Constant(b.size(), a.data[0]);
                    if (bc == Bcast::Row) bv = broadcast_row(b, a.rows());
                    if (bc == Bcast::RowFlip) av = broadcast_row(a, b.rows());
                    da = g.data * bv;
                    db = g.data * av;
                    break;
                }
                case Op::Div: {
                    Eigen::ArrayXd av = a.data, bv = b.data;
                    if (bc == Bcast::ALeft) bv = Eigen::ArrayXd::Constant(a.size(), b.data[0]);
                    if (bc == Bcast::BLeft) av = Eigen::ArrayXd::Constant(b.size(), a.data[0]);
                    if (bc == Bcast::Row) bv = broadcast_row(b, a.rows());
                    if (bc == Bcast::RowFlip) av = broadcast_row(a, b.rows());
                    da = g.data / bv;
                    db = -g.data * av / (bv * bv);
                    break;
                }
                default: return;
            }
            auto reduce_to = [&](const Eigen::ArrayXd& full, const Array& target) {
                if (target.shape == n.value.shape)
                    return Array{target.shape, full};
                if (is_scalar_like(target))
                    return Array{target.shape, Eigen::ArrayXd::Constant(1, full.sum())};
                // (1,M) row operand against (N,M) output.
                return Array{target.shape,
                             reduce_rows(full, n.value.rows(), n.value.cols())};
            };
            accumulate(n.in[0], reduce_to(da, a));
            accumulate(n.in[1], reduce_to(db, b));
            return;
        }
        case Op::Matmul: {
            const Array& a = in_val(0);
            const Array& b = in_val(1);
            if (node(n.in[0]).needs_grad) {
                Array da = Array::zeros(a.shape);
                as_matrix(da) = ConstMapMat(g.data.data(), a.rows(), b.cols()) *
                                as_matrix(b).transpose();
                accumulate(n.in[0], da);
            }
            if (node(n.in[1]).needs_grad) {
                Array db = Array::zeros(b.shape);
                as_matrix(db) = as_matrix(a).transpose() *
                                ConstMapMat(g.data.data(), a.rows(), b.cols());
                accumulate(n.in[1], db);
            }
            return;
        }
        case Op::Sin: {
            const Array& x = in_val(0);
            accumulate(n.in[0], Array{x.shape, (g.data * x.data.cos()).eval()});
            return;
        }
        case Op::Cos: {
            const Array& x = in_val(0);
            accumulate(n.in[0], Array{x.shape, (-g.data * x.data.sin()).eval()});
            return;
        }
        case Op::Exp:
            accumulate(n.in[0], Array{n.value.shape, (g.data * n.value.data).eval()});
            return;
        case Op::Log: {
            const Array& x = in_val(0);
            accumulate(n.in[0], Array{x.shape, (g.data / x.data).eval()});
            return;
        }
        case Op::Sigmoid: {
            const Eigen::ArrayXd& s = n.value.data;
            accumulate(n.in[0], Array{n.value.shape, (g.data * s * (1.0 - s)).eval()});
            return;
        }
        case Op::Relu: {
            const Array& x = in_val(0);
            accumulate(n.in[0],
                       Array{x.shape, (g.data * (x.data > 0.0).cast<double>()).eval()});
            return;
        }
        case Op::Clamp: {
            const Array& x = in_val(0);
            Eigen::ArrayXd pass =
                ((x.data > n.lo) && (x.data < n.hi)).cast<double>();
            accumulate(n.in[0], Array{x.shape, (g.data * pass).eval()});
            return;
        }
        case Op::Sum: {
            const Array& x = in_val(0);
            accumulate(n.in[0],
                       Array{x.shape, Eigen::ArrayXd::Constant(x.size(), g.data[0])});
            return;
        }
        case Op::Mean: {
            const Array& x = in_val(0);
            accumulate(n.in[0],
                       Array{x.shape, Eigen::ArrayXd::Constant(
                                          x.size(), g.data[0] / double(x.size()))});
            return;
        }
        case Op::Abs: {
            const Array& x = in_val(0);
            Eigen::ArrayXd sign = (x.data > 0.0).cast<double>() -
                                  (x.data < 0.0).cast<double>();
            accumulate(n.in[0], Array{x.shape, (g.data * sign).eval()});
            return;
        }
        case Op::NormL1: {
            const Array& x = in_val(0);
            Eigen::ArrayXd sign = (x.data > 0.0).cast<double>() -
                                  (x.data < 0.0).cast<double>();
            accumulate(n.in[0], Array{x.shape, (g.data[0] * sign).eval()});
            return;
        }
        case Op::NormL2: {
            const Array& x = in_val(0);
            const double norm = n.value.data[0];
            if (norm > 0.0)
                accumulate(n.in[0],
                           Array{x.shape, (g.data[0] / norm * x.data).eval()});
            return;
        }
        case Op::Concat: {
            const Array& a = in_val(0);
            const Array& b = in_val(1);
            if (n.axis == 0) {
                accumulate(n.in[0], Array{a.shape, g.data.head(a.size()).eval()});
                accumulate(n.in[1], Array{b.shape, g.data.tail(b.size()).eval()});
            } else {
                const int64_t n_rows = a.rows(), ca = a.cols(), cb = b.cols();
                Array da = Array::zeros(a.shape);
                Array db = Array::zeros(b.shape);
                for (int64_t i = 0; i < n_rows; ++i) {
                    da.data.segment(i * ca, ca) = g.data.segment(i * (ca + cb), ca);
                    db.data.segment(i * cb, cb) =
                        g.data.segment(i * (ca + cb) + ca, cb);
                }
                accumulate(n.in[0], da);
                accumulate(n.in[1], db);
            }
            return;
        }
        case Op::Gather: {
            // Scatter-add; colliding indices accumulate.
            const Array& x = in_val(0);
            Array dx = Array::zeros(x.shape);
            for (size_t k = 0; k < n.index->size(); ++k)
                dx.data[(*n.index)[k]] += g.data[int64_t(k)];
            accumulate(n.in[0], dx);
            return;
        }
        case Op::Custom: {
            std::vector<const Array*> in_values;
            std::vector<Array*> in_adjoints;
            in_values.reserve(n.in.size());
            in_adjoints.reserve(n.in.size());
            // Pre-size adjoints of inputs that want gradients; pass nullptr
            // for the rest so the op can skip them.
            for (Ref r : n.in) {
                Node& m = node(r);
                in_values.push_back(&m.value);
                if (m.needs_grad) {
                    if (m.adjoint.size() == 0) m.adjoint = Array::zeros(m.value.shape);
                    in_adjoints.push_back(&m.adjoint);
                } else {
                    in_adjoints.push_back(nullptr);
                }
            }
            n.custom->backward(g, in_values, in_adjoints);
            return;
        }
    }
}

void Tape::backward(Ref output) {
    Node& out = node(output);
    if (out.value.size() != 1)
        contract_violation("backward: output must be scalar, got shape " +
                           shape_str(out.value.shape));
    // Reset adjoints from any previous pass.
    for (Node& n : nodes_) n.adjoint = Array{};
    out.adjoint = Array::full(out.value.shape, 1.0);
    for (int32_t i = output.idx; i >= 0; --i) {
        Node& n = nodes_[size_t(i)];
        if (!n.needs_grad && n.op != Op::Input) continue;
        if (n.adjoint.size() == 0) continue;
        backprop_node(i);
    }
}

// ---------------------------------------------------------------------------
// Recording surface

namespace {
Ref rec2(Tape& t, Op op, Ref a, Ref b) {
    const Ref in[2] = {a, b};
    return t.record(op, in);
}
Ref rec1(Tape& t, Op op, Ref x) {
    const Ref in[1] = {x};
    return t.record(op, in);
}
} // namespace

Ref add(Tape& t, Ref a, Ref b) { return rec2(t, Op::Add, a, b); }
Ref sub(Tape& t, Ref a, Ref b) { return rec2(t, Op::Sub, a, b); }
Ref mul(Tape& t, Ref a, Ref b) { return rec2(t, Op::Mul, a, b); }
Ref div(Tape& t, Ref a, Ref b) { return rec2(t, Op::Div, a, b); }
Ref matmul(Tape& t, Ref a, Ref b) { return rec2(t, Op::Matmul, a, b); }
Ref sin(Tape& t, Ref x) { return rec1(t, Op::Sin, x); }
Ref cos(Tape& t, Ref x) { return rec1(t, Op::Cos, x); }
Ref exp(Tape& t, Ref x) { return rec1(t, Op::Exp, x); }
Ref log(Tape& t, Ref x) { return rec1(t, Op::Log, x); }
Ref sigmoid(Tape& t, Ref x) { return rec1(t, Op::Sigmoid, x); }
Ref relu(Tape& t, Ref x) { return rec1(t, Op::Relu, x); }
Ref clamp(Tape& t, Ref x, double lo, double hi) { return t.record_clamp(x, lo, hi); }
Ref sum(Tape& t, Ref x) { return rec1(t, Op::Sum, x); }
Ref mean(Tape& t, Ref x) { return rec1(t, Op::Mean, x); }
Ref abs(Tape& t, Ref x) { return rec1(t, Op::Abs, x); }
Ref norm_l1(Tape& t, Ref x) { return rec1(t, Op::NormL1, x); }
Ref norm_l2(Tape& t, Ref x) { return rec1(t, Op::NormL2, x); }
Ref concat(Tape& t, Ref a, Ref b, int axis) { return t.record_concat(a, b, axis); }
Ref gather(Tape& t, Ref x, std::shared_ptr<const std::vector<int64_t>> idx,
           Shape out_shape) {
    return t.record_gather(x, std::move(idx), std::move(out_shape));
}
Ref stop_gradient(Tape& t, Ref x) { return rec1(t, Op::StopGradient, x); }

Ref add_scalar(Tape& t, Ref a, double s) { return add(t, a, t.constant(s)); }
Ref scale(Tape& t, Ref a, double s) { return mul(t, a, t.constant(s)); }

Ref column(Tape& t, Ref m, int64_t c) {
    const Array& v = t.value(m);
    if (v.rank() != 2 || c < 0 || c >= v.cols())
        throw std::invalid_argument("column: bad column " + std::to_string(c) +
                                    " for shape " + shape_str(v.shape));
    auto idx = std::make_shared<std::vector<int64_t>>();
    idx->reserve(size_t(v.rows()));
    for (int64_t i = 0; i < v.rows(); ++i) idx->push_back(i * v.cols() + c);
    return gather(t, m, std::move(idx), Shape{v.rows()});
}

Ref stack_columns(Tape& t, std::span<const Ref> cols) {
    if (cols.empty()) throw std::invalid_argument("stack_columns: no columns");
    Ref acc = cols[0];
    const int64_t n = t.value(cols[0]).size();
    // Build (N,k) by concatenating (N,1) views.
    auto as_col = [&](Ref r) {
        auto idx = std::make_shared<std::vector<int64_t>>();
        idx->reserve(size_t(n));
        for (int64_t i = 0; i < n; ++i) idx->push_back(i);
        return gather(t, r, std::move(idx), Shape{n, 1});
    };
    acc = as_col(cols[0]);
    for (size_t k = 1; k < cols.size(); ++k)
        acc = concat(t, acc, as_col(cols[k]), 1);
    return acc;
}

double check_gradients(const std::function<Ref(Tape&, Ref)>& f,
                       const Array& point, double h) {
    std::vector<Array> pts = {point};
    return check_gradients_multi(
        [&f](Tape& t, const std::vector<Ref>& in) { return f(t, in[0]); }, pts, h);
}

double check_gradients_multi(
    const std::function<Ref(Tape&, const std::vector<Ref>&)>& f,
    const std::vector<Array>& points, double h, int64_t sample_per_input,
    uint64_t sample_seed) {
    // Analytic pass.
    Tape t;
    std::vector<Ref> leaves;
    leaves.reserve(points.size());
    for (const Array& p : points) leaves.push_back(t.input(p));
    Ref out = f(t, leaves);
    if (t.value(out).size() != 1)
        throw std::invalid_argument("check_gradients: function must be scalar");
    t.backward(out);

    auto eval_at = [&](const std::vector<Array>& pts) {
        Tape s;
        std::vector<Ref> ls;
        ls.reserve(pts.size());
        for (const Array& p : pts) ls.push_back(s.input(p));
        return s.value(f(s, ls)).data[0];
    };

    Rng rng(sample_seed);
    double max_err = 0.0;
    std::vector<Array> work(points);
    for (size_t k = 0; k < points.size(); ++k) {
        const Array& g = t.grad(leaves[k]);
        std::vector<int64_t> coords;
        const int64_t n = points[k].size();
        if (sample_per_input > 0 && n > sample_per_input) {
            for (int64_t s = 0; s < sample_per_input; ++s)
                coords.push_back(int64_t(rng.uniform_int(uint64_t(n))));
        } else {
            coords.resize(size_t(n));
            for (int64_t i = 0; i < n; ++i) coords[size_t(i)] = i;
        }
        for (int64_t c : coords) {
            const double saved = work[k].data[c];
            work[k].data[c] = saved + h;
            const double fp = eval_at(work);
            work[k].data[c] = saved - h;
            const double fm = eval_at(work);
            work[k].data[c] = saved;
            const double fd = (fp - fm) / (2.0 * h);
            const double err = std::abs(g.data[c] - fd) / std::max(1.0, std::abs(fd));
            if (err > max_err) max_err = err;
        }
    }
    return max_err;
}

} // namespace dsplat::ad
