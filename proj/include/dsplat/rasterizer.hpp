#pragma once

#include "dsplat/ad.hpp"
#include "dsplat/gaussians.hpp"
#include "dsplat/types.hpp"

#include <cstdint>
#include <vector>

namespace dsplat {

inline constexpr Scalar kAlphaFloor = 1.0 / 255.0;
inline constexpr Scalar kAlphaCeil = 0.99;
inline constexpr Scalar kTransmittanceFloor = 1e-4;
inline constexpr int kTileSize = 16;

// Screen-space point set with plain values, ready to rasterize.
struct RenderablePointSet {
    VecX mu_x, mu_y;             // pixel centers of the projected Gaussians
    VecX inv_a, inv_b, inv_c;    // inverse 2x2 screen covariance [[a,b],[b,c]]
    VecX alpha_base;             // per-point opacity factor in [0,1)
    VecX col_r, col_g, col_b;    // colors in [0,1]
    VecX depth;                  // camera-space z
    VecX radius_px;              // conservative pixel radius for binning
    std::vector<uint8_t> valid;

    int64_t count() const { return mu_x.size(); }
};

struct RasterSettings {
    int width = 0, height = 0;
    Vec3 background = Vec3::Zero();
};

struct RenderOutput {
    int width = 0, height = 0;
    Eigen::ArrayXd rgb;             // (H*W*3), row-major (y, x, channel)
    Eigen::ArrayXd depth;           // (H*W) transmittance-weighted expected depth
    Eigen::ArrayXd alpha;           // (H*W) accumulated opacity
    std::vector<int32_t> contributors; // (H*W) diagnostics

    Scalar rgb_at(int y, int x, int c) const {
        return rgb[(int64_t(y) * width + x) * 3 + c];
    }
};

// alpha = alpha_base * exp(-0.5 d^T Sigma'^{-1} d), clamped to kAlphaCeil.
// Values below kAlphaFloor are treated as zero by the compositors.
Scalar pixel_alpha(const Vec2& p, const Vec2& mu2d, const Mat2& sigma2d_inv,
                   Scalar alpha_base);

struct Contribution {
    Scalar alpha; // already clamped, >= kAlphaFloor
    Vec3 color;
    Scalar depth;
};

struct CompositeResult {
    Vec3 rgb;
    Scalar alpha;
    Scalar depth;
};

// Front-to-back over contributions sorted by depth ascending; asserts the
// ordering in debug builds. Stops once transmittance drops below
// kTransmittanceFloor.
CompositeResult composite(const std::vector<Contribution>& sorted,
                          const Vec3& background);

// Brute-force oracle: every pixel walks all valid points in global
// (depth, index) order; shares only the alpha-floor and transmittance rules
// with the tiled path.
RenderOutput render_reference(const RenderablePointSet& points,
                              const RasterSettings& settings);

// Tile-binned path. Bit-identical to render_reference by construction: per
// pixel both walk the same (depth, index)-ordered contributor sequence, and
// binning only drops points whose alpha is below kAlphaFloor everywhere in
// the tile.
RenderOutput render_tiled(const RenderablePointSet& points,
                          const RasterSettings& settings);

// ---------------------------------------------------------------------------
// Fused tape op. Inputs, in order:
//   mu_x, mu_y, inv_a, inv_b, inv_c, alpha_base, col_r, col_g, col_b
// Output: (H, W, 3) rgb. Depth map, alpha map and densification statistics
// are exposed as side products. Depth/valid/radius are forward-only data
// (sorting and binning are piecewise constant in the parameters).
class RasterizeOp : public ad::CustomOp {
public:
    RasterizeOp(RasterSettings settings, VecX depth, VecX radius_px,
                std::vector<uint8_t> valid);

    std::string name() const override { return "rasterize"; }
    ad::Array forward(const std::vector<const ad::Array*>& inputs) override;
    void backward(const ad::Array& out_adjoint,
                  const std::vector<const ad::Array*>& inputs,
                  const std::vector<ad::Array*>& input_adjoints) override;

    const RenderOutput& output() const { return output_; }
    // Per-point L2 norm of the accumulated screen-position gradient, and
    // whether the point contributed to any pixel. Valid after backward /
    // forward respectively.
    const VecX& grad_mu2d_norm() const { return grad_mu2d_norm_; }
    const std::vector<uint8_t>& contributed() const { return contributed_; }

private:
    RasterSettings settings_;
    VecX depth_, radius_;
    std::vector<uint8_t> valid_;

    RenderablePointSet points_;            // cached at forward
    std::vector<int32_t> order_;           // global depth sort of valid points
    std::vector<int32_t> tile_offsets_;    // CSR over tiles
    std::vector<int32_t> tile_points_;
    int tiles_x_ = 0, tiles_y_ = 0;

    RenderOutput output_;
    VecX grad_mu2d_norm_;
    std::vector<uint8_t> contributed_;
};

// Convenience: records the op and returns (node, op pointer).
std::pair<ad::Ref, std::shared_ptr<RasterizeOp>> rasterize(
    ad::Tape& t, const ScreenPoints& screen, ad::Ref alpha_base, ad::Ref col_r,
    ad::Ref col_g, ad::Ref col_b, const RasterSettings& settings);

} // namespace dsplat
