#include "dsplat/mask.hpp"

#include <cmath>
#include <stdexcept>

namespace dsplat {

using ad::Ref;
using ad::Tape;

namespace {
inline Scalar sigmoid(Scalar x) { return 0.5 * std::tanh(0.5 * x) + 0.5; }
} // namespace

ad::Array BinaryMaskOp::forward(const std::vector<const ad::Array*>& inputs) {
    if (inputs.size() != 1)
        throw std::invalid_argument("binary-mask: expects 1 input");
    const ad::Array& m = *inputs[0];
    ad::Array out = ad::Array::zeros(m.shape);
    for (int64_t i = 0; i < m.size(); ++i)
        out.data[i] = sigmoid(m.data[i]) > epsilon_ ? 1.0 : 0.0;
    return out;
}

void BinaryMaskOp::backward(const ad::Array& out_adjoint,
                            const std::vector<const ad::Array*>& inputs,
                            const std::vector<ad::Array*>& input_adjoints) {
    if (!input_adjoints[0]) return;
    const ad::Array& m = *inputs[0];
    for (int64_t i = 0; i < m.size(); ++i) {
        const Scalar s = sigmoid(m.data[i]);
        input_adjoints[0]->data[i] += out_adjoint.data[i] * s * (1.0 - s);
    }
}

Ref binary_mask(Tape& t, Ref mask_logits, Scalar epsilon) {
    return t.record_custom(std::make_shared<BinaryMaskOp>(epsilon), {mask_logits});
}

MaskedParams apply_mask(Tape& t, Ref scale_linear, Ref opacity, Ref d_scale,
                        Ref mask) {
    const int64_t n = t.value(mask).size();
    if (t.value(scale_linear).rows() != n || t.value(d_scale).rows() != n ||
        t.value(opacity).size() != n)
        throw std::invalid_argument("apply_mask: size mismatch");

    const Ref mask_sg = ad::stop_gradient(t, mask);
    Ref cols[3];
    for (int c = 0; c < 3; ++c) {
        const Ref s_c = ad::column(t, scale_linear, c);
        const Ref d_c = ad::column(t, d_scale, c);
        cols[c] = ad::add(t, ad::mul(t, mask, s_c), ad::mul(t, mask_sg, d_c));
    }
    MaskedParams out;
    out.scale = ad::stack_columns(t, cols);
    out.opacity = ad::mul(t, mask, opacity);
    return out;
}

std::vector<int64_t> masked_keep_indices(const ad::Array& mask_logits,
                                         Scalar epsilon) {
    std::vector<int64_t> keep;
    keep.reserve(size_t(mask_logits.size()));
    for (int64_t i = 0; i < mask_logits.size(); ++i)
        if (sigmoid(mask_logits.data[i]) > epsilon) keep.push_back(i);
    return keep;
}

ad::Array take_rows(const ad::Array& a, const std::vector<int64_t>& rows) {
    const int64_t width = a.rank() == 2 ? a.cols() : 1;
    ad::Shape shape = a.shape;
    shape[0] = int64_t(rows.size());
    ad::Array out = ad::Array::zeros(shape);
    for (size_t r = 0; r < rows.size(); ++r)
        out.data.segment(int64_t(r) * width, width) =
            a.data.segment(rows[r] * width, width);
    return out;
}

std::vector<int64_t> prune_masked(GaussianCloud& cloud, Scalar epsilon) {
    std::vector<int64_t> keep = masked_keep_indices(cloud.mask_logit, epsilon);
    if (keep.empty())
        throw std::runtime_error("prune_masked: every point is masked off");
    if (int64_t(keep.size()) == cloud.count()) return keep;
    cloud.mu = take_rows(cloud.mu, keep);
    cloud.rot = take_rows(cloud.rot, keep);
    cloud.log_scale = take_rows(cloud.log_scale, keep);
    cloud.opacity_logit = take_rows(cloud.opacity_logit, keep);
    cloud.mask_logit = take_rows(cloud.mask_logit, keep);
    return keep;
}

} // namespace dsplat
