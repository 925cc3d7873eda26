#pragma once

#include "dsplat/types.hpp"

#include <Eigen/Core>
#include <string>

namespace dsplat {

// Floating-point RGB image, values in [0,1], row-major (y, x, channel).
struct ImageF {
    int width = 0, height = 0;
    Eigen::ArrayXd data; // height*width*3

    static ImageF filled(int width, int height, const Vec3& color);
    Scalar at(int y, int x, int c) const {
        return data[(int64_t(y) * width + x) * 3 + c];
    }
    Scalar& at(int y, int x, int c) {
        return data[(int64_t(y) * width + x) * 3 + c];
    }
    int64_t pixel_count() const { return int64_t(width) * height; }
};

// Lossless 8-bit round trip: values are quantized with round(v*255) on write
// and mapped back with v/255 on read. PNG (8-bit RGB/RGBA, via zlib) and
// binary PPM (P6) are chosen by file extension.
void write_image(const std::string& path, const ImageF& image);
ImageF read_image(const std::string& path);

void write_ppm(const std::string& path, const ImageF& image);
ImageF read_ppm(const std::string& path);
void write_png(const std::string& path, const ImageF& image);
ImageF read_png(const std::string& path);

// Min-max normalized grayscale rendering of a scalar field (used for depth
// maps); pixels where `weight` is ~0 are painted black.
ImageF normalize_to_image(const Eigen::ArrayXd& values,
                          const Eigen::ArrayXd& weight, int width, int height);

} // namespace dsplat
