#pragma once

#include "dsplat/ad.hpp"
#include "dsplat/rng.hpp"
#include "dsplat/types.hpp"

#include <vector>

namespace dsplat {

// gamma(p) = (sin(2^k pi p), cos(2^k pi p)) for k = 0..order-1, optionally
// prefixed by the raw input. Output blocks are ordered
// [input?, sin_k0, cos_k0, sin_k1, cos_k1, ...] with all input dimensions
// inside each block.
struct FreqEncoding {
    int order = 1;
    bool include_input = false;

    int output_dim(int input_dim) const {
        return input_dim * 2 * order + (include_input ? input_dim : 0);
    }
};

VecX freq_encode(const VecX& x, const FreqEncoding& enc);

// Batched tape version over an (N,k) matrix.
ad::Ref freq_encode(ad::Tape& t, ad::Ref x, const FreqEncoding& enc);

// Deformation field: 8 hidden layers of width 256 with ReLU and a skip
// connection re-injecting the encoded input at layer 4. Four zero-initialized
// output heads produce per-point offsets, so a fresh network deforms nothing.
struct DeformNet {
    static constexpr int kDepth = 8;
    static constexpr int kWidth = 256;
    static constexpr int kSkipLayer = 4; // input of this layer is [h, enc]

    FreqEncoding pos_enc{10, true};
    FreqEncoding time_enc{6, false};

    std::vector<ad::Array> w, b; // kDepth hidden layers
    ad::Array w_mu, b_mu;        // -> (N,3)
    ad::Array w_rot, b_rot;      // -> (N,4)
    ad::Array w_scale, b_scale;  // -> (N,3)
    ad::Array w_color, b_color;  // -> (N,3)

    int encoded_dim() const {
        return pos_enc.output_dim(3) + time_enc.output_dim(1);
    }

    void init(Rng& rng);
    std::vector<ad::Array*> params();
    std::vector<const ad::Array*> params() const;
};

struct DeformNetLeaves {
    std::vector<ad::Ref> w, b;
    ad::Ref w_mu, b_mu, w_rot, b_rot, w_scale, b_scale, w_color, b_color;
};

DeformNetLeaves make_leaves(ad::Tape& t, const DeformNet& net);

struct DeformRefs; // from gaussians.hpp

// Builds the offset graph for all points at timestamp `time`. The positional
// input is detached: gradients reach the canonical positions only through the
// composed mu + d_mu, never through gamma(mu). During warm-up
// (iteration < warmup_iters) returns exact zero constants without touching
// the network.
DeformRefs deform(ad::Tape& t, const DeformNetLeaves& net_leaves,
                  const DeformNet& net, ad::Ref mu, Scalar time,
                  int64_t iteration, int64_t warmup_iters);

} // namespace dsplat
