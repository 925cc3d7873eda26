#pragma once

#include "dsplat/image.hpp"

#include <vector>

namespace dsplat {

inline constexpr int kSsimWindow = 11;
inline constexpr Scalar kSsimSigma = 1.5;
inline constexpr Scalar kSsimK1 = 0.01;
inline constexpr Scalar kSsimK2 = 0.03;
inline constexpr Scalar kPsnrCap = 100.0; // identical images

// 10*log10(1/MSE) over all pixels and channels, capped at kPsnrCap.
// Inputs must share dimensions; values are expected in [0,1].
Scalar psnr(const ImageF& a, const ImageF& b);

// Gaussian-weighted SSIM over valid 11x11 windows, computed per channel and
// averaged. Throws if the image is smaller than the window.
Scalar ssim(const ImageF& a, const ImageF& b);

// Normalized 1D window used by both the metric and the training loss.
std::vector<Scalar> ssim_window_1d();

} // namespace dsplat
