#include "dsplat/deform.hpp"
#include "dsplat/gaussians.hpp"

#include <cmath>
#include <stdexcept>

namespace dsplat {

using ad::Ref;
using ad::Tape;

namespace {
constexpr double kPi = 3.14159265358979323846;
}

VecX freq_encode(const VecX& x, const FreqEncoding& enc) {
    if (enc.order < 1)
        throw std::invalid_argument("freq_encode: order must be >= 1");
    const int d = int(x.size());
    VecX out(enc.output_dim(d));
    int64_t at = 0;
    if (enc.include_input) {
        out.head(d) = x;
        at = d;
    }
    for (int k = 0; k < enc.order; ++k) {
        const double f = std::ldexp(kPi, k); // 2^k * pi
        for (int i = 0; i < d; ++i) out[at + i] = std::sin(f * x[i]);
        at += d;
        for (int i = 0; i < d; ++i) out[at + i] = std::cos(f * x[i]);
        at += d;
    }
    return out;
}

Ref freq_encode(Tape& t, Ref x, const FreqEncoding& enc) {
    if (enc.order < 1)
        throw std::invalid_argument("freq_encode: order must be >= 1");
    Ref out;
    bool have = false;
    auto append = [&](Ref block) {
        out = have ? ad::concat(t, out, block, 1) : block;
        have = true;
    };
    if (enc.include_input) append(x);
    for (int k = 0; k < enc.order; ++k) {
        const Ref scaled = ad::scale(t, x, std::ldexp(kPi, k));
        append(ad::sin(t, scaled));
        append(ad::cos(t, scaled));
    }
    return out;
}

void DeformNet::init(Rng& rng) {
    auto uniform_fill = [&rng](ad::Array& a, double bound) {
        for (int64_t i = 0; i < a.size(); ++i)
            a.data[i] = rng.uniform(-bound, bound);
    };
    auto linear = [&](int in, int out, ad::Array& weight, ad::Array& bias,
                      bool zero) {
        weight = ad::Array::zeros({in, out});
        bias = ad::Array::zeros({1, out});
        if (!zero) {
            const double bound = 1.0 / std::sqrt(double(in));
            uniform_fill(weight, bound);
            uniform_fill(bias, bound);
        }
    };

    const int enc = encoded_dim();
    w.assign(kDepth, ad::Array{});
    b.assign(kDepth, ad::Array{});
    linear(enc, kWidth, w[0], b[0], false);
    for (int l = 1; l < kDepth; ++l) {
        const int in = (l == kSkipLayer) ? kWidth + enc : kWidth;
        linear(in, kWidth, w[l], b[l], false);
    }
    linear(kWidth, 3, w_mu, b_mu, true);
    linear(kWidth, 4, w_rot, b_rot, true);
    linear(kWidth, 3, w_scale, b_scale, true);
    linear(kWidth, 3, w_color, b_color, true);
}

std::vector<ad::Array*> DeformNet::params() {
    std::vector<ad::Array*> out;
    for (int l = 0; l < kDepth; ++l) {
        out.push_back(&w[size_t(l)]);
        out.push_back(&b[size_t(l)]);
    }
    for (ad::Array* a : {&w_mu, &b_mu, &w_rot, &b_rot, &w_scale, &b_scale,
                         &w_color, &b_color})
        out.push_back(a);
    return out;
}

std::vector<const ad::Array*> DeformNet::params() const {
    auto mut = const_cast<DeformNet*>(this)->params();
    return {mut.begin(), mut.end()};
}

DeformNetLeaves make_leaves(Tape& t, const DeformNet& net) {
    DeformNetLeaves l;
    for (int i = 0; i < DeformNet::kDepth; ++i) {
        l.w.push_back(t.input(net.w[size_t(i)]));
        l.b.push_back(t.input(net.b[size_t(i)]));
    }
    l.w_mu = t.input(net.w_mu);
    l.b_mu = t.input(net.b_mu);
    l.w_rot = t.input(net.w_rot);
    l.b_rot = t.input(net.b_rot);
    l.w_scale = t.input(net.w_scale);
    l.b_scale = t.input(net.b_scale);
    l.w_color = t.input(net.w_color);
    l.b_color = t.input(net.b_color);
    return l;
}

DeformRefs deform(Tape& t, const DeformNetLeaves& leaves, const DeformNet& net,
                  Ref mu, Scalar time, int64_t iteration, int64_t warmup_iters) {
    const int64_t n = t.value(mu).rows();
    if (iteration < warmup_iters) {
        DeformRefs zero;
        zero.d_mu = t.constant(ad::Array::zeros({n, 3}));
        zero.d_rot = t.constant(ad::Array::zeros({n, 4}));
        zero.d_scale = t.constant(ad::Array::zeros({n, 3}));
        zero.d_color = t.constant(ad::Array::zeros({n, 3}));
        return zero;
    }

    const Ref pos = ad::stop_gradient(t, mu);
    const Ref enc_pos = freq_encode(t, pos, net.pos_enc);

    // Time is a per-frame constant; its encoding is a constant row repeated
    // for every point.
    VecX tvec(1);
    tvec[0] = time;
    const VecX enc_t = freq_encode(tvec, net.time_enc);
    ad::Array enc_time = ad::Array::zeros({n, enc_t.size()});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < enc_t.size(); ++j)
            enc_time.data[i * enc_t.size() + j] = enc_t[j];

    const Ref enc = ad::concat(t, enc_pos, t.constant(std::move(enc_time)), 1);

    Ref h = enc;
    for (int l = 0; l < DeformNet::kDepth; ++l) {
        if (l == DeformNet::kSkipLayer) h = ad::concat(t, h, enc, 1);
        h = ad::relu(t, ad::add(t, ad::matmul(t, h, leaves.w[size_t(l)]),
                                leaves.b[size_t(l)]));
    }

    auto head = [&](Ref weight, Ref bias) {
        return ad::add(t, ad::matmul(t, h, weight), bias);
    };
    DeformRefs out;
    out.d_mu = head(leaves.w_mu, leaves.b_mu);
    out.d_rot = head(leaves.w_rot, leaves.b_rot);
    out.d_scale = head(leaves.w_scale, leaves.b_scale);
    out.d_color = head(leaves.w_color, leaves.b_color);
    return out;
}

} // namespace dsplat
