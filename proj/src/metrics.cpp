#include "dsplat/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace dsplat {

Scalar psnr(const ImageF& a, const ImageF& b) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument("psnr: image dimensions differ");
    const Scalar mse = (a.data - b.data).square().mean();
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

std::vector<Scalar> ssim_window_1d() {
    std::vector<Scalar> w(kSsimWindow);
    const int half = kSsimWindow / 2;
    Scalar sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const Scalar d = Scalar(i - half);
        w[size_t(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += w[size_t(i)];
    }
    for (Scalar& v : w) v /= sum;
    return w;
}

namespace {

// Separable Gaussian blur restricted to valid windows:
// out is (H-10) x (W-10).
MatX blur_valid(const MatX& img, const std::vector<Scalar>& win) {
    const int64_t h = img.rows(), w = img.cols();
    const int64_t k = kSsimWindow;
    MatX rows(h, w - k + 1);
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x + k <= w; ++x) {
            Scalar acc = 0.0;
            for (int64_t i = 0; i < k; ++i) acc += win[size_t(i)] * img(y, x + i);
            rows(y, x) = acc;
        }
    }
    MatX out(h - k + 1, w - k + 1);
    for (int64_t y = 0; y + k <= h; ++y) {
        for (int64_t x = 0; x < out.cols(); ++x) {
            Scalar acc = 0.0;
            for (int64_t i = 0; i < k; ++i) acc += win[size_t(i)] * rows(y + i, x);
            out(y, x) = acc;
        }
    }
    return out;
}

MatX channel_plane(const ImageF& img, int c) {
    MatX out(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) out(y, x) = img.at(y, x, c);
    return out;
}

} // namespace

Scalar ssim(const ImageF& a, const ImageF& b) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument("ssim: image dimensions differ");
    if (a.width < kSsimWindow || a.height < kSsimWindow)
        throw std::invalid_argument("ssim: image smaller than the window");

    const std::vector<Scalar> win = ssim_window_1d();
    const Scalar c1 = kSsimK1 * kSsimK1; // dynamic range 1
    const Scalar c2 = kSsimK2 * kSsimK2;

    Scalar total = 0.0;
    for (int c = 0; c < 3; ++c) {
        const MatX pa = channel_plane(a, c);
        const MatX pb = channel_plane(b, c);
        const MatX mu_a = blur_valid(pa, win);
        const MatX mu_b = blur_valid(pb, win);
        const MatX aa = blur_valid(pa.cwiseProduct(pa), win);
        const MatX bb = blur_valid(pb.cwiseProduct(pb), win);
        const MatX ab = blur_valid(pa.cwiseProduct(pb), win);

        Scalar acc = 0.0;
        for (int64_t y = 0; y < mu_a.rows(); ++y) {
            for (int64_t x = 0; x < mu_a.cols(); ++x) {
                const Scalar ma = mu_a(y, x), mb = mu_b(y, x);
                const Scalar va = aa(y, x) - ma * ma;
                const Scalar vb = bb(y, x) - mb * mb;
                const Scalar cov = ab(y, x) - ma * mb;
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                       ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
        total += acc / Scalar(mu_a.rows() * mu_a.cols());
    }
    return total / 3.0;
}

} // namespace dsplat
