#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dsplat::ad {

using Shape = std::vector<int64_t>;

int64_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major float64 array. Rank 0 holds a single scalar.
struct Array {
    Shape shape;
    Eigen::ArrayXd data;

    Array() = default;
    Array(Shape s, Eigen::ArrayXd d);

    static Array zeros(Shape s);
    static Array full(Shape s, double v);
    static Array scalar(double v);
    static Array from(Shape s, std::initializer_list<double> values);

    int64_t size() const { return data.size(); }
    int64_t rank() const { return int64_t(shape.size()); }
    // Rank-2 accessors.
    int64_t rows() const { return shape.at(0); }
    int64_t cols() const { return shape.at(1); }
    double& operator()(int64_t i) { return data[i]; }
    double operator()(int64_t i) const { return data[i]; }

    bool same_shape(const Array& o) const { return shape == o.shape; }
    bool all_finite() const { return data.isFinite().all(); }
};

enum class Op : uint8_t {
    Input,
    Add,
    Sub,
    Mul,
    Div,
    Matmul,
    Sin,
    Cos,
    Exp,
    Log,
    Sigmoid,
    Relu,
    Clamp,
    Sum,
    Mean,
    Abs,
    NormL1,
    NormL2,
    Concat,
    Gather,
    StopGradient,
    Custom,
};

const char* op_name(Op op);

// Fused operation with a hand-written vector-Jacobian product. Used for the
// hot paths (rasterization, hash-grid lookup, hard masking) where composing
// scalar primitives would dominate the tape.
struct CustomOp {
    virtual ~CustomOp() = default;
    virtual std::string name() const = 0;
    virtual Array forward(const std::vector<const Array*>& inputs) = 0;
    // `input_adjoints[i]` is pre-sized to the input shape; accumulate into it.
    virtual void backward(const Array& out_adjoint,
                          const std::vector<const Array*>& inputs,
                          const std::vector<Array*>& input_adjoints) = 0;
};

struct Ref {
    int32_t idx = -1;
    bool valid() const { return idx >= 0; }
};

// Reverse-mode tape. Nodes are recorded in topological order by construction;
// backward() walks them once in reverse. Single-threaded during recording.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Ref input(Array value, bool requires_grad = true);
    Ref constant(Array value);
    Ref constant(double v) { return constant(Array::scalar(v)); }

    // Generic recording entry for payload-free primitives.
    Ref record(Op op, std::span<const Ref> inputs);
    Ref record_custom(std::shared_ptr<CustomOp> op, std::vector<Ref> inputs);

    const Array& value(Ref r) const;
    // Adjoint accumulated by backward(); zeros if the node was never reached.
    const Array& grad(Ref r) const;
    bool has_grad(Ref r) const;

    // Populates adjoints of every node that can influence `output`.
    // `output` must be a scalar (rank 0 or single-element) array.
    void backward(Ref output);

    int64_t node_count() const { return int64_t(nodes_.size()); }

    // Internal recording with payloads; exposed for the op builders below.
    Ref record_clamp(Ref x, double lo, double hi);
    Ref record_concat(Ref a, Ref b, int axis);
    Ref record_gather(Ref x, std::shared_ptr<const std::vector<int64_t>> idx,
                      Shape out_shape);

private:
    struct Node {
        Op op = Op::Input;
        std::vector<Ref> in;
        Array value;
        Array adjoint; // lazily sized on first accumulation
        bool requires_grad = false;
        bool needs_grad = false; // reachable from a requires_grad leaf
        // payloads
        double lo = 0.0, hi = 0.0;                          // Clamp
        int axis = 0;                                       // Concat
        std::shared_ptr<const std::vector<int64_t>> index;  // Gather
        std::shared_ptr<CustomOp> custom;
    };

    Node& node(Ref r);
    const Node& node(Ref r) const;
    Ref push(Node n);
    void accumulate(Ref r, const Array& contribution);
    void backprop_node(int32_t i);

    std::vector<Node> nodes_;
    Array empty_grad_;
};

// Recording surface. Binary elementwise ops broadcast a scalar operand or a
// (1,M) row against an (N,M) matrix.
Ref add(Tape& t, Ref a, Ref b);
Ref sub(Tape& t, Ref a, Ref b);
Ref mul(Tape& t, Ref a, Ref b);
Ref div(Tape& t, Ref a, Ref b);
Ref matmul(Tape& t, Ref a, Ref b);
Ref sin(Tape& t, Ref x);
Ref cos(Tape& t, Ref x);
Ref exp(Tape& t, Ref x);
Ref log(Tape& t, Ref x);
Ref sigmoid(Tape& t, Ref x);
Ref relu(Tape& t, Ref x);
Ref clamp(Tape& t, Ref x, double lo, double hi);
Ref sum(Tape& t, Ref x);
Ref mean(Tape& t, Ref x);
Ref abs(Tape& t, Ref x);
Ref norm_l1(Tape& t, Ref x);
Ref norm_l2(Tape& t, Ref x);
Ref concat(Tape& t, Ref a, Ref b, int axis);
Ref gather(Tape& t, Ref x, std::shared_ptr<const std::vector<int64_t>> idx,
           Shape out_shape);
Ref stop_gradient(Tape& t, Ref x);

// Convenience wrappers over constants.
Ref add_scalar(Tape& t, Ref a, double s);
Ref scale(Tape& t, Ref a, double s);

// Extracts column `c` of a rank-2 node as a length-N vector.
Ref column(Tape& t, Ref m, int64_t c);
// Stacks k same-length vectors into an (N,k) matrix.
Ref stack_columns(Tape& t, std::span<const Ref> cols);

// Max over coordinates of |analytic - central difference| / max(1, |central
// difference|) for a scalar-valued recorded function of one array.
double check_gradients(const std::function<Ref(Tape&, Ref)>& f,
                       const Array& point, double h = 1e-5);

// Multi-input variant; `sample_per_input` > 0 probes only that many
// coordinates of each input (chosen round-robin), for large weight arrays.
double check_gradients_multi(
    const std::function<Ref(Tape&, const std::vector<Ref>&)>& f,
    const std::vector<Array>& points, double h = 1e-5,
    int64_t sample_per_input = 0, uint64_t sample_seed = 0);

} // namespace dsplat::ad
