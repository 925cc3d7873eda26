#pragma once

#include "dsplat/ad.hpp"
#include "dsplat/image.hpp"

#include <deque>
#include <vector>

namespace dsplat {

struct LossWeights {
    Scalar w_dn = 1e-2;
    Scalar w_s = 1e-3;
    Scalar w_con = 1e-3;
    Scalar w_m = 5e-4;
    Scalar lambda_dssim = 0.2;
};

inline constexpr Scalar kStaticThreshold = 0.1; // scene units, L1 norm
inline constexpr Scalar kStaticWeightDelta = 1e-8;

// Ring of historical post-mask scale/opacity snapshots. Expectations are
// arithmetic means over stored snapshots and enter the loss as constants.
// Entries for points created after a snapshot was taken are NaN and excluded
// from the means.
struct SlidingWindowStats {
    int64_t capacity = 50;
    int64_t stride = 10;

    std::deque<Eigen::ArrayXd> scale_snaps;   // each (N*3)
    std::deque<Eigen::ArrayXd> opacity_snaps; // each (N)

    bool empty() const { return scale_snaps.empty(); }
    void snapshot(const Eigen::ArrayXd& masked_scale,
                  const Eigen::ArrayXd& masked_opacity);
    // Point-set maintenance: keep a row subset, then append fresh rows.
    void compact(const std::vector<int64_t>& keep);
    void append_points(int64_t added);
    // Per-point means and a 0/1 validity flag (0 = no history yet).
    void expectations(int64_t n, Eigen::ArrayXd& e_scale,
                      Eigen::ArrayXd& e_opacity, Eigen::ArrayXd& valid) const;
};

// Mean absolute error over all pixels and channels.
ad::Ref l1_loss(ad::Tape& t, ad::Ref rgb, const ImageF& target);

// (1 - SSIM)/2 over valid 11x11 windows, averaged across channels; same
// window and constants as metrics::ssim. Requires image >= the window.
ad::Ref dssim_loss(ad::Tape& t, ad::Ref rgb, const ImageF& target);

// (1-lambda)*L1 + lambda*(1-SSIM)/2 against a fixed target. The D-SSIM term
// requires at least one valid 11x11 window; below that size the loss falls
// back to pure L1.
ad::Ref photometric_loss(ad::Tape& t, ad::Ref rgb, const ImageF& target,
                         Scalar lambda_dssim);

// Mean L1 gap between windowed expectations and the current masked values.
// Zero when the window is empty.
ad::Ref denoise_loss(ad::Tape& t, ad::Ref masked_scale, ad::Ref masked_opacity,
                     const SlidingWindowStats& stats);

// Mean sigmoid of the mask logits.
ad::Ref mask_loss(ad::Tape& t, ad::Ref mask_logits);

// Inverse-norm weighted pull of small offsets toward zero. Points with
// L1 offset norm >= threshold are excluded; the normalized weights are
// constants. Zero when no point is static.
ad::Ref static_loss(ad::Tape& t, ad::Ref d_mu,
                    Scalar threshold = kStaticThreshold);

// Sum over the six (axis, sign) groups of the mean absolute deviation from
// the group mean; group membership and means are constants. Empty groups
// contribute zero.
ad::Ref consistency_loss(ad::Tape& t, ad::Ref d_mu);

} // namespace dsplat
