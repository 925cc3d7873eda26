#include "dsplat/losses.hpp"
#include "dsplat/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dsplat {

using ad::Ref;
using ad::Tape;

void SlidingWindowStats::snapshot(const Eigen::ArrayXd& masked_scale,
                                  const Eigen::ArrayXd& masked_opacity) {
    if (masked_scale.size() != masked_opacity.size() * 3)
        throw std::invalid_argument("sliding window: size mismatch");
    scale_snaps.push_back(masked_scale);
    opacity_snaps.push_back(masked_opacity);
    while (int64_t(scale_snaps.size()) > capacity) {
        scale_snaps.pop_front();
        opacity_snaps.pop_front();
    }
}

void SlidingWindowStats::compact(const std::vector<int64_t>& keep) {
    for (auto& snap : scale_snaps) {
        Eigen::ArrayXd next(int64_t(keep.size()) * 3);
        for (size_t r = 0; r < keep.size(); ++r)
            next.segment(int64_t(r) * 3, 3) = snap.segment(keep[r] * 3, 3);
        snap = std::move(next);
    }
    for (auto& snap : opacity_snaps) {
        Eigen::ArrayXd next(int64_t(keep.size()));
        for (size_t r = 0; r < keep.size(); ++r) next[int64_t(r)] = snap[keep[r]];
        snap = std::move(next);
    }
}

void SlidingWindowStats::append_points(int64_t added) {
    if (added <= 0) return;
    const Scalar nan = std::numeric_limits<Scalar>::quiet_NaN();
    for (auto& snap : scale_snaps) {
        Eigen::ArrayXd next(snap.size() + added * 3);
        next.head(snap.size()) = snap;
        next.tail(added * 3).setConstant(nan);
        snap = std::move(next);
    }
    for (auto& snap : opacity_snaps) {
        Eigen::ArrayXd next(snap.size() + added);
        next.head(snap.size()) = snap;
        next.tail(added).setConstant(nan);
        snap = std::move(next);
    }
}

void SlidingWindowStats::expectations(int64_t n, Eigen::ArrayXd& e_scale,
                                      Eigen::ArrayXd& e_opacity,
                                      Eigen::ArrayXd& valid) const {
    e_scale = Eigen::ArrayXd::Zero(n * 3);
    e_opacity = Eigen::ArrayXd::Zero(n);
    valid = Eigen::ArrayXd::Zero(n);
    if (empty()) return;
    Eigen::ArrayXd counts = Eigen::ArrayXd::Zero(n);
    for (size_t s = 0; s < opacity_snaps.size(); ++s) {
        const Eigen::ArrayXd& os = opacity_snaps[s];
        const Eigen::ArrayXd& ss = scale_snaps[s];
        for (int64_t i = 0; i < n; ++i) {
            if (i >= os.size() || std::isnan(os[i])) continue;
            counts[i] += 1.0;
            e_opacity[i] += os[i];
            e_scale.segment(i * 3, 3) += ss.segment(i * 3, 3);
        }
    }
    for (int64_t i = 0; i < n; ++i) {
        if (counts[i] <= 0.0) continue;
        valid[i] = 1.0;
        e_opacity[i] /= counts[i];
        e_scale.segment(i * 3, 3) /= counts[i];
    }
}

namespace {

// Valid-window blur matrices: left (H-10,H) over rows, right (W,W-10) over
// columns; constant band structure from the shared SSIM window.
ad::Array blur_matrix_left(int64_t h) {
    const std::vector<Scalar> win = ssim_window_1d();
    const int64_t k = kSsimWindow;
    ad::Array m = ad::Array::zeros({h - k + 1, h});
    for (int64_t r = 0; r < h - k + 1; ++r)
        for (int64_t i = 0; i < k; ++i) m.data[r * h + r + i] = win[size_t(i)];
    return m;
}

ad::Array blur_matrix_right(int64_t w) {
    const std::vector<Scalar> win = ssim_window_1d();
    const int64_t k = kSsimWindow;
    ad::Array m = ad::Array::zeros({w, w - k + 1});
    for (int64_t c = 0; c < w - k + 1; ++c)
        for (int64_t i = 0; i < k; ++i)
            m.data[(c + i) * (w - k + 1) + c] = win[size_t(i)];
    return m;
}

Ref channel_plane(Tape& t, Ref rgb, int channel, int64_t h, int64_t w) {
    auto idx = std::make_shared<std::vector<int64_t>>();
    idx->reserve(size_t(h * w));
    for (int64_t p = 0; p < h * w; ++p) idx->push_back(p * 3 + channel);
    return ad::gather(t, rgb, std::move(idx), ad::Shape{h, w});
}

} // namespace

namespace {

void check_image_shape(Tape& t, Ref rgb, const ImageF& target, const char* op) {
    const ad::Array& img = t.value(rgb);
    if (img.rank() != 3 || img.shape[0] != target.height ||
        img.shape[1] != target.width || img.shape[2] != 3)
        throw std::invalid_argument(std::string(op) + ": image shape mismatch");
}

} // namespace

Ref l1_loss(Tape& t, Ref rgb, const ImageF& target) {
    check_image_shape(t, rgb, target, "l1_loss");
    const Ref tgt =
        t.constant(ad::Array{{target.height, target.width, 3}, target.data});
    return ad::mean(t, ad::abs(t, ad::sub(t, rgb, tgt)));
}

Ref dssim_loss(Tape& t, Ref rgb, const ImageF& target) {
    check_image_shape(t, rgb, target, "dssim_loss");
    const int64_t h = target.height, w = target.width;
    if (h < kSsimWindow || w < kSsimWindow)
        throw std::invalid_argument("dssim_loss: image smaller than the window");

    const Ref tgt = t.constant(ad::Array{{h, w, 3}, target.data});
    const Ref left = t.constant(blur_matrix_left(h));
    const Ref right = t.constant(blur_matrix_right(w));
    auto blur = [&](Ref plane) {
        return ad::matmul(t, ad::matmul(t, left, plane), right);
    };
    const Scalar c1 = kSsimK1 * kSsimK1;
    const Scalar c2 = kSsimK2 * kSsimK2;

    Ref ssim_sum;
    for (int c = 0; c < 3; ++c) {
        const Ref pa = channel_plane(t, rgb, c, h, w);
        const Ref pb = channel_plane(t, tgt, c, h, w);
        const Ref mu_a = blur(pa);
        const Ref mu_b = blur(pb);
        const Ref va = ad::sub(t, blur(ad::mul(t, pa, pa)), ad::mul(t, mu_a, mu_a));
        const Ref vb = ad::sub(t, blur(ad::mul(t, pb, pb)), ad::mul(t, mu_b, mu_b));
        const Ref cov = ad::sub(t, blur(ad::mul(t, pa, pb)), ad::mul(t, mu_a, mu_b));
        const Ref num =
            ad::mul(t, ad::add_scalar(t, ad::scale(t, ad::mul(t, mu_a, mu_b), 2.0), c1),
                    ad::add_scalar(t, ad::scale(t, cov, 2.0), c2));
        const Ref den = ad::mul(
            t,
            ad::add_scalar(t, ad::add(t, ad::mul(t, mu_a, mu_a), ad::mul(t, mu_b, mu_b)), c1),
            ad::add_scalar(t, ad::add(t, va, vb), c2));
        const Ref m = ad::mean(t, ad::div(t, num, den));
        ssim_sum = (c == 0) ? m : ad::add(t, ssim_sum, m);
    }
    const Ref ssim_mean = ad::scale(t, ssim_sum, 1.0 / 3.0);
    // (1 - ssim) / 2
    return ad::scale(t, ad::sub(t, t.constant(1.0), ssim_mean), 0.5);
}

Ref photometric_loss(Tape& t, Ref rgb, const ImageF& target,
                     Scalar lambda_dssim) {
    const Ref l1 = l1_loss(t, rgb, target);
    if (lambda_dssim <= 0.0 || target.height < kSsimWindow ||
        target.width < kSsimWindow)
        return l1;
    const Ref dssim = dssim_loss(t, rgb, target);
    return ad::add(t, ad::scale(t, l1, 1.0 - lambda_dssim),
                   ad::scale(t, dssim, lambda_dssim));
}

Ref denoise_loss(Tape& t, Ref masked_scale, Ref masked_opacity,
                 const SlidingWindowStats& stats) {
    const int64_t n = t.value(masked_opacity).size();
    if (stats.empty()) return t.constant(0.0);

    Eigen::ArrayXd e_scale, e_opacity, valid;
    stats.expectations(n, e_scale, e_opacity, valid);
    const Scalar n_valid = valid.sum();
    if (n_valid <= 0.0) return t.constant(0.0);

    Eigen::ArrayXd valid3(n * 3);
    for (int64_t i = 0; i < n; ++i) valid3.segment(i * 3, 3).setConstant(valid[i]);

    const Ref es = t.constant(ad::Array{{n, 3}, e_scale});
    const Ref eo = t.constant(ad::Array{{n}, e_opacity});
    const Ref vs = t.constant(ad::Array{{n, 3}, valid3});
    const Ref vo = t.constant(ad::Array{{n}, valid});

    const Ref scale_term =
        ad::sum(t, ad::mul(t, vs, ad::abs(t, ad::sub(t, es, masked_scale))));
    const Ref opac_term =
        ad::sum(t, ad::mul(t, vo, ad::abs(t, ad::sub(t, eo, masked_opacity))));
    return ad::scale(t, ad::add(t, scale_term, opac_term), 1.0 / n_valid);
}

Ref mask_loss(Tape& t, Ref mask_logits) {
    return ad::mean(t, ad::sigmoid(t, mask_logits));
}

namespace {

Ref l1_norm_rows(Tape& t, Ref d_mu) {
    const Ref ax = ad::abs(t, ad::column(t, d_mu, 0));
    const Ref ay = ad::abs(t, ad::column(t, d_mu, 1));
    const Ref az = ad::abs(t, ad::column(t, d_mu, 2));
    return ad::add(t, ad::add(t, ax, ay), az);
}

} // namespace

Ref static_loss(Tape& t, Ref d_mu, Scalar threshold) {
    const Ref norms = l1_norm_rows(t, d_mu);
    const Eigen::ArrayXd fwd = t.value(norms).data;
    const int64_t n = fwd.size();

    Eigen::ArrayXd weights = Eigen::ArrayXd::Zero(n);
    Scalar beta_sum = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        if (fwd[i] < threshold) {
            weights[i] = 1.0 / (fwd[i] + kStaticWeightDelta);
            beta_sum += weights[i];
        }
    }
    if (beta_sum <= 0.0) return t.constant(0.0);
    weights /= beta_sum;

    const Ref w = t.constant(ad::Array{{n}, weights});
    return ad::sum(t, ad::mul(t, w, norms));
}

Ref consistency_loss(Tape& t, Ref d_mu) {
    Ref total = t.constant(0.0);
    for (int axis = 0; axis < 3; ++axis) {
        const Ref comp = ad::column(t, d_mu, axis);
        // Copy: recording below may reallocate the tape's node storage.
        const Eigen::ArrayXd fwd = t.value(comp).data;
        for (int sign = 0; sign < 2; ++sign) {
            std::vector<int64_t> group;
            for (int64_t i = 0; i < fwd.size(); ++i) {
                const Scalar v = fwd[i];
                if ((sign == 0 && v > 0.0) || (sign == 1 && v < 0.0))
                    group.push_back(i);
            }
            if (group.empty()) continue;
            // Min-shifted mean: exact when every member is equal, so a
            // uniform group contributes an exact zero.
            Scalar lo = fwd[group[0]];
            for (int64_t i : group) lo = std::min(lo, fwd[i]);
            Scalar shifted = 0.0;
            for (int64_t i : group) shifted += fwd[i] - lo;
            const Scalar group_mean = lo + shifted / Scalar(group.size());

            auto idx = std::make_shared<std::vector<int64_t>>(group);
            const Ref members =
                ad::gather(t, comp, std::move(idx), ad::Shape{int64_t(group.size())});
            const Ref dev =
                ad::abs(t, ad::add_scalar(t, members, -group_mean));
            total = ad::add(t, total, ad::scale(t, ad::sum(t, dev),
                                                1.0 / Scalar(group.size())));
        }
    }
    return total;
}

} // namespace dsplat
