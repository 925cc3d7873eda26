#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dsplat/metrics.hpp"
#include "dsplat/rng.hpp"

#include <cmath>

using namespace dsplat;

namespace {

ImageF random_image(Rng& rng, int w, int h) {
    ImageF img;
    img.width = w;
    img.height = h;
    img.data.resize(int64_t(w) * h * 3);
    for (int64_t i = 0; i < img.data.size(); ++i) img.data[i] = rng.uniform(0, 1);
    return img;
}

// Direct O(H*W*121) sliding-window SSIM.
double ssim_naive(const ImageF& a, const ImageF& b) {
    const std::vector<Scalar> win = ssim_window_1d();
    const double c1 = kSsimK1 * kSsimK1, c2 = kSsimK2 * kSsimK2;
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        int count = 0;
        for (int y = 0; y + kSsimWindow <= a.height; ++y) {
            for (int x = 0; x + kSsimWindow <= a.width; ++x) {
                double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
                for (int i = 0; i < kSsimWindow; ++i) {
                    for (int j = 0; j < kSsimWindow; ++j) {
                        const double w = win[size_t(i)] * win[size_t(j)];
                        const double va = a.at(y + i, x + j, c);
                        const double vb = b.at(y + i, x + j, c);
                        ma += w * va;
                        mb += w * vb;
                        aa += w * va * va;
                        bb += w * vb * vb;
                        ab += w * va * vb;
                    }
                }
                const double var_a = aa - ma * ma;
                const double var_b = bb - mb * mb;
                const double cov = ab - ma * mb;
                acc += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                       ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
                ++count;
            }
        }
        total += acc / count;
    }
    return total / 3.0;
}

} // namespace

TEST_CASE("psnr closed forms") {
    Rng rng(1);
    const ImageF img = random_image(rng, 12, 9);
    CHECK(psnr(img, img) == kPsnrCap);

    ImageF shifted = img;
    shifted.data = img.data * 0.0 + 0.5;
    ImageF target = shifted;
    target.data += 0.1; // uniform error 0.1 -> MSE 0.01 -> 20 dB
    CHECK(psnr(shifted, target) == doctest::Approx(20.0));
}

TEST_CASE("psnr matches the elementwise MSE computation") {
    Rng rng(3);
    const ImageF a = random_image(rng, 10, 7);
    const ImageF b = random_image(rng, 10, 7);
    const double mse = (a.data - b.data).square().mean();
    CHECK(psnr(a, b) == doctest::Approx(10.0 * std::log10(1.0 / mse)));
}

TEST_CASE("psnr drops monotonically with noise magnitude") {
    Rng rng(5);
    const ImageF base = random_image(rng, 16, 16);
    double prev = 1e18;
    for (double mag : {0.01, 0.03, 0.1, 0.3}) {
        ImageF noisy = base;
        Rng nrng(7);
        for (int64_t i = 0; i < noisy.data.size(); ++i)
            noisy.data[i] =
                std::min(1.0, std::max(0.0, noisy.data[i] + mag * nrng.uniform(-1, 1)));
        const double p = psnr(base, noisy);
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("psnr rejects mismatched shapes") {
    Rng rng(9);
    CHECK_THROWS(psnr(random_image(rng, 8, 8), random_image(rng, 9, 8)));
}

TEST_CASE("ssim of identical images is one") {
    Rng rng(11);
    const ImageF img = random_image(rng, 16, 13);
    CHECK(ssim(img, img) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ssim of an inverted binary image is strongly negative") {
    Rng rng(13);
    ImageF a;
    a.width = 16;
    a.height = 16;
    a.data.resize(16 * 16 * 3);
    for (int64_t i = 0; i < a.data.size(); ++i)
        a.data[i] = rng.uniform(0, 1) > 0.5 ? 1.0 : 0.0;
    ImageF b = a;
    b.data = 1.0 - a.data;
    CHECK(ssim(a, b) < -0.5);
}

TEST_CASE("ssim matches the naive sliding-window oracle") {
    Rng rng(17);
    for (int trial = 0; trial < 4; ++trial) {
        const ImageF a = random_image(rng, 18, 15);
        const ImageF b = random_image(rng, 18, 15);
        CHECK(ssim(a, b) == doctest::Approx(ssim_naive(a, b)).epsilon(1e-10));
    }
}

TEST_CASE("ssim is symmetric") {
    Rng rng(19);
    const ImageF a = random_image(rng, 14, 14);
    const ImageF b = random_image(rng, 14, 14);
    CHECK(std::abs(ssim(a, b) - ssim(b, a)) <= 1e-12);
}

TEST_CASE("ssim rejects images smaller than the window") {
    Rng rng(23);
    const ImageF a = random_image(rng, 8, 8);
    CHECK_THROWS(ssim(a, a));
}
