#pragma once

#include "dsplat/ad.hpp"
#include "dsplat/gaussians.hpp"

#include <cstdint>
#include <vector>

namespace dsplat {

inline constexpr Scalar kMaskEpsilon = 0.01;
// Masks start "on" (sigmoid = 0.9) and must learn to switch points off.
inline constexpr Scalar kMaskInitLogit = 2.1972245773362196;

// Hard mask with a straight-through backward: forward emits exactly 0 or 1
// (1 iff sigmoid(m) > epsilon), backward passes the derivative of the
// continuous surrogate sigmoid(m).
class BinaryMaskOp : public ad::CustomOp {
public:
    explicit BinaryMaskOp(Scalar epsilon) : epsilon_(epsilon) {}
    std::string name() const override { return "binary-mask"; }
    ad::Array forward(const std::vector<const ad::Array*>& inputs) override;
    void backward(const ad::Array& out_adjoint,
                  const std::vector<const ad::Array*>& inputs,
                  const std::vector<ad::Array*>& input_adjoints) override;

private:
    Scalar epsilon_;
};

ad::Ref binary_mask(ad::Tape& t, ad::Ref mask_logits,
                    Scalar epsilon = kMaskEpsilon);

struct MaskedParams {
    ad::Ref scale;   // (N,3) = M*s + sg(M)*d_scale
    ad::Ref opacity; // (N)   = M*o
};

// `scale_linear` and `d_scale` are (N,3); `opacity` is the activated (N)
// opacity. Gradient reaches the logits through M*s and M*o only.
MaskedParams apply_mask(ad::Tape& t, ad::Ref scale_linear, ad::Ref opacity,
                        ad::Ref d_scale, ad::Ref mask);

// Indices of points whose hard mask is on (sigmoid(m) > epsilon).
std::vector<int64_t> masked_keep_indices(const ad::Array& mask_logits,
                                         Scalar epsilon = kMaskEpsilon);

// Physically removes M = 0 points. Throws if nothing survives. Returns the
// kept old indices so per-point side state (optimizer moments, statistics)
// can be compacted consistently.
std::vector<int64_t> prune_masked(GaussianCloud& cloud,
                                  Scalar epsilon = kMaskEpsilon);

// Row compaction helper shared by pruning and densification bookkeeping.
ad::Array take_rows(const ad::Array& a, const std::vector<int64_t>& rows);

} // namespace dsplat
