#pragma once

#include "dsplat/ad.hpp"
#include "dsplat/types.hpp"

#include <cstdint>
#include <vector>

namespace dsplat {

// Canonical time-independent scene model. Scales are stored in log space and
// opacities as logits so positivity/range hold without constrained updates.
// All arrays are row-major with one row per point.
struct GaussianCloud {
    ad::Array mu;            // (N,3) world positions
    ad::Array rot;           // (N,4) quaternions, (w,x,y,z)
    ad::Array log_scale;     // (N,3)
    ad::Array opacity_logit; // (N)
    ad::Array mask_logit;    // (N)

    int64_t count() const { return mu.size() ? mu.rows() : 0; }
    static GaussianCloud with_count(int64_t n);
    void validate() const; // throws on inconsistent row counts
};

struct Camera {
    Mat4 world_to_cam = Mat4::Identity();
    Scalar fx = 1.0, fy = 1.0;
    Scalar cx = 0.0, cy = 0.0;
    int width = 0, height = 0;
    Scalar near = 0.01, far = 100.0;
    Scalar time = 0.0; // normalized timestamp in [0,1]

    Mat3 rotation() const { return world_to_cam.topLeftCorner<3, 3>(); }
    Vec3 translation() const { return world_to_cam.topRightCorner<3, 1>(); }

    static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up,
                          Scalar fov_x, int width, int height);
};

// Sigma = R diag(s)^2 R^T. Quaternion is normalized internally; throws on a
// zero quaternion. Scales must be positive.
Mat3 covariance_3d(const Vec4& quat, const Vec3& scale);

Mat3 quat_to_rotation(const Vec4& quat);

struct ProjectedPoint {
    Vec2 mu2d = Vec2::Zero();  // pixels
    Mat2 sigma2d = Mat2::Zero();
    Scalar depth = 0.0;        // camera-space z
    bool in_front = false;     // false = culled, not an error
};

// EWA projection: affine Jacobian of the perspective map at the camera-space
// point, sigma2d = J Rc Sigma Rc^T J^T plus a 0.3 px^2 low-pass dilation on
// the diagonal.
ProjectedPoint project(const Vec3& mu, const Mat3& sigma, const Camera& cam);

inline constexpr Scalar kScreenDilation = 0.3;

// ---------------------------------------------------------------------------
// Tape-side batched pipeline. Geometry is carried column-wise (length-N
// vectors) so every step is an elementwise primitive.

struct CloudLeaves {
    ad::Ref mu, rot, log_scale, opacity_logit, mask_logit;
};

struct DeformRefs {
    ad::Ref d_mu, d_rot, d_scale, d_color; // (N,3),(N,4),(N,3),(N,3)
};

// Deformed and masked point set, still on tape. Scale follows
// M*exp(log_scale) + sg(M)*d_scale; opacity is M*sigmoid(opacity_logit);
// rotation is normalize(rot + d_rot).
struct ComposedPoints {
    ad::Ref pos_x, pos_y, pos_z;          // world, deformed
    ad::Ref quat_w, quat_x, quat_y, quat_z; // normalized
    ad::Ref scale_x, scale_y, scale_z;     // masked linear scale
    ad::Ref opacity;                       // masked, in [0,1)
    ad::Ref masked_scale;                  // (N,3) aggregate of scale_*
    int64_t count = 0;
};

ComposedPoints compose_deformed(ad::Tape& t, const CloudLeaves& cloud,
                                const DeformRefs& offsets, ad::Ref mask_values);

// Screen-space quantities for the rasterizer. Depth, validity and the
// conservative pixel radius are forward-only values (sorting and binning are
// piecewise constant in the parameters).
struct ScreenPoints {
    ad::Ref mu_x, mu_y;          // pixel coordinates
    ad::Ref inv_a, inv_b, inv_c; // inverse 2x2 screen covariance [[a,b],[b,c]]
    std::vector<Scalar> depth;
    std::vector<Scalar> radius_px;
    std::vector<uint8_t> valid;
    int64_t count = 0;
};

ScreenPoints project_points(ad::Tape& t, const ComposedPoints& pts,
                            const Camera& cam);

} // namespace dsplat
