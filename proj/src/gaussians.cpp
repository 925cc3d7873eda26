#include "dsplat/gaussians.hpp"
#include "dsplat/mask.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <stdexcept>

namespace dsplat {

using ad::Ref;
using ad::Tape;

GaussianCloud GaussianCloud::with_count(int64_t n) {
    GaussianCloud c;
    c.mu = ad::Array::zeros({n, 3});
    c.rot = ad::Array::zeros({n, 4});
    for (int64_t i = 0; i < n; ++i) c.rot.data[i * 4] = 1.0; // identity quats
    c.log_scale = ad::Array::zeros({n, 3});
    c.opacity_logit = ad::Array::zeros({n});
    c.mask_logit = ad::Array::zeros({n});
    return c;
}

void GaussianCloud::validate() const {
    const int64_t n = count();
    if (mu.rank() != 2 || mu.cols() != 3 || rot.rows() != n || rot.cols() != 4 ||
        log_scale.rows() != n || log_scale.cols() != 3 ||
        opacity_logit.size() != n || mask_logit.size() != n)
        throw std::invalid_argument("GaussianCloud: inconsistent array sizes");
}

Mat3 quat_to_rotation(const Vec4& quat) {
    const Scalar norm = quat.norm();
    if (norm <= 0.0)
        throw std::invalid_argument("covariance_3d: zero quaternion");
    const Scalar w = quat[0] / norm, x = quat[1] / norm, y = quat[2] / norm,
                 z = quat[3] / norm;
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Mat3 covariance_3d(const Vec4& quat, const Vec3& scale) {
    if (!(scale.array() > 0.0).all())
        throw std::invalid_argument("covariance_3d: scales must be positive");
    const Mat3 r = quat_to_rotation(quat);
    const Mat3 m = r * scale.asDiagonal();
    return m * m.transpose();
}

ProjectedPoint project(const Vec3& mu, const Mat3& sigma, const Camera& cam) {
    ProjectedPoint out;
    const Mat3 rc = cam.rotation();
    const Vec3 q = rc * mu + cam.translation();
    out.depth = q.z();
    if (q.z() <= cam.near) return out; // culled
    out.in_front = true;

    const Scalar inv_z = 1.0 / q.z();
    out.mu2d = Vec2(cam.cx + cam.fx * q.x() * inv_z,
                    cam.cy + cam.fy * q.y() * inv_z);

    Eigen::Matrix<Scalar, 2, 3> jac;
    jac << cam.fx * inv_z, 0, -cam.fx * q.x() * inv_z * inv_z,
        0, cam.fy * inv_z, -cam.fy * q.y() * inv_z * inv_z;
    const Mat3 sigma_cam = rc * sigma * rc.transpose();
    out.sigma2d = jac * sigma_cam * jac.transpose();
    out.sigma2d(0, 0) += kScreenDilation;
    out.sigma2d(1, 1) += kScreenDilation;
    return out;
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up,
                       Scalar fov_x, int width, int height) {
    Camera cam;
    Vec3 z_c = (target - eye).normalized();
    Vec3 x_c = z_c.cross(up);
    if (x_c.norm() < 1e-9) x_c = z_c.cross(Vec3(1, 0, 0));
    x_c.normalize();
    const Vec3 y_c = z_c.cross(x_c);
    Mat3 rot_c2w;
    rot_c2w.col(0) = x_c;
    rot_c2w.col(1) = y_c;
    rot_c2w.col(2) = z_c;
    cam.world_to_cam = Mat4::Identity();
    cam.world_to_cam.topLeftCorner<3, 3>() = rot_c2w.transpose();
    cam.world_to_cam.topRightCorner<3, 1>() = -rot_c2w.transpose() * eye;
    cam.width = width;
    cam.height = height;
    cam.fx = 0.5 * Scalar(width) / std::tan(0.5 * fov_x);
    cam.fy = cam.fx;
    cam.cx = 0.5 * Scalar(width);
    cam.cy = 0.5 * Scalar(height);
    return cam;
}

// ---------------------------------------------------------------------------
// Tape pipeline

ComposedPoints compose_deformed(Tape& t, const CloudLeaves& cloud,
                                const DeformRefs& offsets, Ref mask_values) {
    ComposedPoints out;
    const int64_t n = t.value(cloud.mu).rows();
    out.count = n;
    if (t.value(offsets.d_mu).rows() != n || t.value(offsets.d_rot).rows() != n ||
        t.value(offsets.d_scale).rows() != n ||
        t.value(mask_values).size() != n)
        throw std::invalid_argument("compose_deformed: size mismatch");

    const Ref pos = ad::add(t, cloud.mu, offsets.d_mu);
    out.pos_x = ad::column(t, pos, 0);
    out.pos_y = ad::column(t, pos, 1);
    out.pos_z = ad::column(t, pos, 2);

    // normalize(rot + d_rot); 1/norm via exp(-0.5 log |q|^2), |q| > 0.
    const Ref q = ad::add(t, cloud.rot, offsets.d_rot);
    const Ref qw = ad::column(t, q, 0);
    const Ref qx = ad::column(t, q, 1);
    const Ref qy = ad::column(t, q, 2);
    const Ref qz = ad::column(t, q, 3);
    Ref n2 = ad::add(t, ad::mul(t, qw, qw), ad::mul(t, qx, qx));
    n2 = ad::add(t, n2, ad::mul(t, qy, qy));
    n2 = ad::add(t, n2, ad::mul(t, qz, qz));
    const Ref inv_norm = ad::exp(t, ad::scale(t, ad::log(t, n2), -0.5));
    out.quat_w = ad::mul(t, qw, inv_norm);
    out.quat_x = ad::mul(t, qx, inv_norm);
    out.quat_y = ad::mul(t, qy, inv_norm);
    out.quat_z = ad::mul(t, qz, inv_norm);

    const Ref s_lin = ad::exp(t, cloud.log_scale);
    const Ref opacity = ad::sigmoid(t, cloud.opacity_logit);
    const MaskedParams masked =
        apply_mask(t, s_lin, opacity, offsets.d_scale, mask_values);
    out.masked_scale = masked.scale;
    out.scale_x = ad::column(t, masked.scale, 0);
    out.scale_y = ad::column(t, masked.scale, 1);
    out.scale_z = ad::column(t, masked.scale, 2);
    out.opacity = masked.opacity;
    return out;
}

namespace {

// c0*a + c1*b with scalar constants folded in.
Ref lincomb(Tape& t, std::initializer_list<std::pair<double, Ref>> terms) {
    Ref acc;
    bool first = true;
    for (const auto& [c, r] : terms) {
        if (c == 0.0) continue;
        const Ref term = (c == 1.0) ? r : ad::scale(t, r, c);
        acc = first ? term : ad::add(t, acc, term);
        first = false;
    }
    return acc;
}

} // namespace

ScreenPoints project_points(Tape& t, const ComposedPoints& pts, const Camera& cam) {
    ScreenPoints out;
    const int64_t n = pts.count;
    out.count = n;

    // Rotation entries from the normalized quaternion.
    const Ref w = pts.quat_w, x = pts.quat_x, y = pts.quat_y, z = pts.quat_z;
    const Ref xx = ad::mul(t, x, x), yy = ad::mul(t, y, y), zz = ad::mul(t, z, z);
    const Ref xy = ad::mul(t, x, y), xz = ad::mul(t, x, z), yz = ad::mul(t, y, z);
    const Ref wx = ad::mul(t, w, x), wy = ad::mul(t, w, y), wz = ad::mul(t, w, z);
    const Ref one = t.constant(ad::Array::full({n}, 1.0));

    Ref r[3][3];
    r[0][0] = ad::sub(t, one, ad::scale(t, ad::add(t, yy, zz), 2.0));
    r[0][1] = ad::scale(t, ad::sub(t, xy, wz), 2.0);
    r[0][2] = ad::scale(t, ad::add(t, xz, wy), 2.0);
    r[1][0] = ad::scale(t, ad::add(t, xy, wz), 2.0);
    r[1][1] = ad::sub(t, one, ad::scale(t, ad::add(t, xx, zz), 2.0));
    r[1][2] = ad::scale(t, ad::sub(t, yz, wx), 2.0);
    r[2][0] = ad::scale(t, ad::sub(t, xz, wy), 2.0);
    r[2][1] = ad::scale(t, ad::add(t, yz, wx), 2.0);
    r[2][2] = ad::sub(t, one, ad::scale(t, ad::add(t, xx, yy), 2.0));

    const Ref s[3] = {pts.scale_x, pts.scale_y, pts.scale_z};
    Ref m[3][3];
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m[i][j] = ad::mul(t, r[i][j], s[j]);

    // World covariance, 6 unique entries of M M^T.
    auto dot_rows = [&](int a, int b) {
        Ref acc = ad::mul(t, m[a][0], m[b][0]);
        acc = ad::add(t, acc, ad::mul(t, m[a][1], m[b][1]));
        return ad::add(t, acc, ad::mul(t, m[a][2], m[b][2]));
    };
    const Ref sig[3][3] = {
        {dot_rows(0, 0), dot_rows(0, 1), dot_rows(0, 2)},
        {Ref{}, dot_rows(1, 1), dot_rows(1, 2)},
        {Ref{}, Ref{}, dot_rows(2, 2)},
    };
    auto sig_at = [&](int i, int j) { return (i <= j) ? sig[i][j] : sig[j][i]; };

    // Camera frame: q = Rc p + tc, sigma_cam = Rc sigma Rc^T (Rc constant).
    const Mat3 rc = cam.rotation();
    const Vec3 tc = cam.translation();
    Ref q_cam[3];
    for (int a = 0; a < 3; ++a) {
        q_cam[a] = lincomb(t, {{rc(a, 0), pts.pos_x},
                               {rc(a, 1), pts.pos_y},
                               {rc(a, 2), pts.pos_z}});
        q_cam[a] = ad::add_scalar(t, q_cam[a], tc[a]);
    }
    auto sigma_cam = [&](int a, int b) {
        Ref acc;
        bool first = true;
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                const double coeff = rc(a, i) * rc(b, j);
                if (coeff == 0.0) continue;
                const Ref term = ad::scale(t, sig_at(i, j), coeff);
                acc = first ? term : ad::add(t, acc, term);
                first = false;
            }
        }
        return acc;
    };
    const Ref sc00 = sigma_cam(0, 0), sc01 = sigma_cam(0, 1), sc02 = sigma_cam(0, 2);
    const Ref sc11 = sigma_cam(1, 1), sc12 = sigma_cam(1, 2), sc22 = sigma_cam(2, 2);

    // Perspective Jacobian entries.
    const Ref inv_z = ad::div(t, one, q_cam[2]);
    const Ref inv_z2 = ad::mul(t, inv_z, inv_z);
    const Ref j00 = ad::scale(t, inv_z, cam.fx);
    const Ref j11 = ad::scale(t, inv_z, cam.fy);
    const Ref j02 = ad::scale(t, ad::mul(t, q_cam[0], inv_z2), -cam.fx);
    const Ref j12 = ad::scale(t, ad::mul(t, q_cam[1], inv_z2), -cam.fy);

    auto mul3 = [&](Ref a, Ref b, Ref c) { return ad::mul(t, ad::mul(t, a, b), c); };
    Ref s2d00 = ad::add(t, mul3(j00, j00, sc00),
                        ad::add(t, ad::scale(t, mul3(j00, j02, sc02), 2.0),
                                mul3(j02, j02, sc22)));
    Ref s2d11 = ad::add(t, mul3(j11, j11, sc11),
                        ad::add(t, ad::scale(t, mul3(j11, j12, sc12), 2.0),
                                mul3(j12, j12, sc22)));
    Ref s2d01 = ad::add(t, ad::add(t, mul3(j00, j11, sc01), mul3(j00, j12, sc02)),
                        ad::add(t, mul3(j02, j11, sc12), mul3(j02, j12, sc22)));
    s2d00 = ad::add_scalar(t, s2d00, kScreenDilation);
    s2d11 = ad::add_scalar(t, s2d11, kScreenDilation);

    const Ref det = ad::sub(t, ad::mul(t, s2d00, s2d11), ad::mul(t, s2d01, s2d01));
    out.inv_a = ad::div(t, s2d11, det);
    out.inv_b = ad::scale(t, ad::div(t, s2d01, det), -1.0);
    out.inv_c = ad::div(t, s2d00, det);

    out.mu_x = ad::add_scalar(t, ad::scale(t, ad::mul(t, q_cam[0], inv_z), cam.fx),
                              cam.cx);
    out.mu_y = ad::add_scalar(t, ad::scale(t, ad::mul(t, q_cam[1], inv_z), cam.fy),
                              cam.cy);

    // Forward-only: depth, validity, conservative pixel radius.
    out.depth.resize(size_t(n));
    out.radius_px.resize(size_t(n));
    out.valid.assign(size_t(n), 0);
    const ad::Array& zv = t.value(q_cam[2]);
    const ad::Array& a00 = t.value(s2d00);
    const ad::Array& a01 = t.value(s2d01);
    const ad::Array& a11 = t.value(s2d11);
    const ad::Array& dv = t.value(det);
    for (int64_t i = 0; i < n; ++i) {
        out.depth[size_t(i)] = zv.data[i];
        const Scalar mid = 0.5 * (a00.data[i] + a11.data[i]);
        const Scalar off = 0.5 * (a00.data[i] - a11.data[i]);
        const Scalar lam_max = mid + std::sqrt(off * off + a01.data[i] * a01.data[i]);
        out.radius_px[size_t(i)] = 3.5 * std::sqrt(std::max(lam_max, Scalar(0)));
        out.valid[size_t(i)] =
            (zv.data[i] > cam.near && dv.data[i] > 1e-12) ? 1 : 0;
    }
    return out;
}

} // namespace dsplat
