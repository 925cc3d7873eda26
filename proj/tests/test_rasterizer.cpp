#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dsplat/rasterizer.hpp"
#include "dsplat/rng.hpp"

#include <cmath>

using namespace dsplat;
using ad::Array;
using ad::Ref;
using ad::Tape;

namespace {

RenderablePointSet random_scene(Rng& rng, int64_t n, int width, int height) {
    RenderablePointSet p;
    p.mu_x.resize(n);
    p.mu_y.resize(n);
    p.inv_a.resize(n);
    p.inv_b.resize(n);
    p.inv_c.resize(n);
    p.alpha_base.resize(n);
    p.col_r.resize(n);
    p.col_g.resize(n);
    p.col_b.resize(n);
    p.depth.resize(n);
    p.radius_px.resize(n);
    p.valid.assign(size_t(n), 1);
    for (int64_t i = 0; i < n; ++i) {
        p.mu_x[i] = rng.uniform(-4.0, width + 4.0);
        p.mu_y[i] = rng.uniform(-4.0, height + 4.0);
        // Random SPD screen covariance from an angle and two eigenvalues.
        const Scalar theta = rng.uniform(0.0, 6.28);
        const Scalar l1 = rng.uniform(0.5, 25.0), l2 = rng.uniform(0.5, 25.0);
        const Scalar c = std::cos(theta), s = std::sin(theta);
        const Scalar s00 = c * c * l1 + s * s * l2;
        const Scalar s01 = c * s * (l1 - l2);
        const Scalar s11 = s * s * l1 + c * c * l2;
        const Scalar det = s00 * s11 - s01 * s01;
        p.inv_a[i] = s11 / det;
        p.inv_b[i] = -s01 / det;
        p.inv_c[i] = s00 / det;
        p.alpha_base[i] = rng.uniform(0.0, 0.995);
        p.col_r[i] = rng.uniform(0.0, 1.0);
        p.col_g[i] = rng.uniform(0.0, 1.0);
        p.col_b[i] = rng.uniform(0.0, 1.0);
        p.depth[i] = rng.uniform(1.0, 10.0);
        const Scalar lam = std::max(l1, l2);
        p.radius_px[i] = 3.5 * std::sqrt(lam);
    }
    return p;
}

RenderablePointSet single_point(Scalar x, Scalar y, Scalar sigma_px,
                                Scalar alpha, const Vec3& color, Scalar depth) {
    RenderablePointSet p;
    p.mu_x = VecX::Constant(1, x);
    p.mu_y = VecX::Constant(1, y);
    p.inv_a = VecX::Constant(1, 1.0 / (sigma_px * sigma_px));
    p.inv_b = VecX::Constant(1, 0.0);
    p.inv_c = VecX::Constant(1, 1.0 / (sigma_px * sigma_px));
    p.alpha_base = VecX::Constant(1, alpha);
    p.col_r = VecX::Constant(1, color.x());
    p.col_g = VecX::Constant(1, color.y());
    p.col_b = VecX::Constant(1, color.z());
    p.depth = VecX::Constant(1, depth);
    p.radius_px = VecX::Constant(1, 3.5 * sigma_px);
    p.valid = {1};
    return p;
}

void append_point(RenderablePointSet& dst, const RenderablePointSet& src) {
    auto cat = [](VecX& a, const VecX& b) {
        VecX out(a.size() + b.size());
        out << a, b;
        a = out;
    };
    cat(dst.mu_x, src.mu_x);
    cat(dst.mu_y, src.mu_y);
    cat(dst.inv_a, src.inv_a);
    cat(dst.inv_b, src.inv_b);
    cat(dst.inv_c, src.inv_c);
    cat(dst.alpha_base, src.alpha_base);
    cat(dst.col_r, src.col_r);
    cat(dst.col_g, src.col_g);
    cat(dst.col_b, src.col_b);
    cat(dst.depth, src.depth);
    cat(dst.radius_px, src.radius_px);
    dst.valid.insert(dst.valid.end(), src.valid.begin(), src.valid.end());
}

} // namespace

TEST_CASE("pixel_alpha closed forms") {
    const Vec2 mu(10.0, 10.0);
    Mat2 inv;
    inv << 0.25, 0.0, 0.0, 0.25; // sigma = 2 px isotropic
    CHECK(pixel_alpha(mu, mu, inv, 0.7) == doctest::Approx(0.7));
    CHECK(pixel_alpha(Vec2(12, 10), mu, inv, 0.0) == 0.0);
    // One Mahalanobis unit: d^T inv d = 1.
    CHECK(pixel_alpha(Vec2(12, 10), mu, inv, 0.8) ==
          doctest::Approx(0.8 * std::exp(-0.5)));
    // Clamp at the ceiling.
    CHECK(pixel_alpha(mu, mu, inv, 0.9999) == doctest::Approx(kAlphaCeil));
}

TEST_CASE("composite closed forms") {
    const Vec3 bg = Vec3::Zero();
    {
        std::vector<Contribution> c = {{1.0, Vec3(0.3, 0.6, 0.9), 2.0}};
        const CompositeResult r = composite(c, bg);
        // alpha clamps to 0.99; colour follows.
        CHECK(r.rgb.x() == doctest::Approx(0.99 * 0.3));
        CHECK(r.depth == doctest::Approx(2.0));
    }
    {
        std::vector<Contribution> c = {{0.5, Vec3(1, 0, 0), 1.0},
                                       {0.5, Vec3(0, 1, 0), 2.0}};
        const CompositeResult r = composite(c, bg);
        CHECK(r.rgb.x() == doctest::Approx(0.5));
        CHECK(r.rgb.y() == doctest::Approx(0.25));
        CHECK(r.rgb.z() == doctest::Approx(0.0));
        CHECK(r.alpha == doctest::Approx(0.75));
    }
}

TEST_CASE("composite matches a high-precision sequential reference") {
    Rng rng(71);
    std::vector<Contribution> contribs;
    Scalar depth = 0.5;
    for (int i = 0; i < 50; ++i) {
        depth += rng.uniform(0.01, 0.2);
        contribs.push_back({rng.uniform(0.0, 0.9),
                            Vec3(rng.uniform(0, 1), rng.uniform(0, 1),
                                 rng.uniform(0, 1)),
                            depth});
    }
    const Vec3 bg(0.1, 0.2, 0.3);
    const CompositeResult r = composite(contribs, bg);

    long double t = 1.0L, cr = 0.0L, cg = 0.0L, cb = 0.0L;
    for (const Contribution& c : contribs) {
        if (c.alpha < kAlphaFloor) continue;
        cr += t * (long double)c.alpha * c.color.x();
        cg += t * (long double)c.alpha * c.color.y();
        cb += t * (long double)c.alpha * c.color.z();
        t *= 1.0L - (long double)c.alpha;
        if (t < (long double)kTransmittanceFloor) break;
    }
    cr += t * (long double)bg.x();
    cg += t * (long double)bg.y();
    cb += t * (long double)bg.z();
    CHECK(std::abs(r.rgb.x() - (double)cr) <= 1e-12);
    CHECK(std::abs(r.rgb.y() - (double)cg) <= 1e-12);
    CHECK(std::abs(r.rgb.z() - (double)cb) <= 1e-12);
}

TEST_CASE("empty scene renders the background") {
    RasterSettings s;
    s.width = 8;
    s.height = 8;
    s.background = Vec3(0.0, 0.0, 0.0);
    RenderablePointSet none;
    none.valid.clear();
    const RenderOutput out = render_tiled(none, s);
    CHECK(out.rgb.abs().maxCoeff() == 0.0);

    s.background = Vec3(0.2, 0.4, 0.6);
    const RenderOutput out2 = render_reference(none, s);
    CHECK(out2.rgb_at(3, 3, 0) == doctest::Approx(0.2));
    CHECK(out2.rgb_at(3, 3, 2) == doctest::Approx(0.6));
}

TEST_CASE("one opaque point colors its center pixel") {
    RasterSettings s;
    s.width = 17;
    s.height = 17;
    const RenderablePointSet p =
        single_point(8.5, 8.5, 3.0, 0.99, Vec3(0.8, 0.1, 0.4), 3.0);
    const RenderOutput out = render_tiled(p, s);
    CHECK(out.rgb_at(8, 8, 0) == doctest::Approx(0.99 * 0.8));
    CHECK(out.rgb_at(8, 8, 1) == doctest::Approx(0.99 * 0.1));
    CHECK(out.contributors[8 * 17 + 8] == 1);
}

TEST_CASE("tiled equals reference on random scenes") {
    Rng rng(101);
    for (int scene = 0; scene < 25; ++scene) {
        RasterSettings s;
        s.width = 32;
        s.height = 32;
        s.background = Vec3(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1));
        const RenderablePointSet p =
            random_scene(rng, 1 + int64_t(rng.uniform_int(200)), s.width, s.height);
        const RenderOutput a = render_tiled(p, s);
        const RenderOutput b = render_reference(p, s);
        CHECK((a.rgb - b.rgb).abs().maxCoeff() <= 1e-5);
        CHECK((a.depth - b.depth).abs().maxCoeff() <= 1e-5);
        CHECK((a.alpha - b.alpha).abs().maxCoeff() <= 1e-5);
    }
}

TEST_CASE("reference render is deterministic and order-independent") {
    Rng rng(131);
    RasterSettings s;
    s.width = 24;
    s.height = 16;
    const RenderablePointSet p = random_scene(rng, 60, s.width, s.height);
    const RenderOutput a = render_reference(p, s);
    const RenderOutput b = render_reference(p, s);
    CHECK((a.rgb - b.rgb).abs().maxCoeff() == 0.0);

    // Permute the points; the global depth sort canonicalizes the order.
    std::vector<int64_t> perm(60);
    for (int64_t i = 0; i < 60; ++i) perm[size_t(i)] = i;
    Rng shuffle_rng(7);
    shuffle_rng.shuffle(perm);
    RenderablePointSet q = p;
    for (int64_t i = 0; i < 60; ++i) {
        const int64_t j = perm[size_t(i)];
        q.mu_x[i] = p.mu_x[j];
        q.mu_y[i] = p.mu_y[j];
        q.inv_a[i] = p.inv_a[j];
        q.inv_b[i] = p.inv_b[j];
        q.inv_c[i] = p.inv_c[j];
        q.alpha_base[i] = p.alpha_base[j];
        q.col_r[i] = p.col_r[j];
        q.col_g[i] = p.col_g[j];
        q.col_b[i] = p.col_b[j];
        q.depth[i] = p.depth[j];
        q.radius_px[i] = p.radius_px[j];
    }
    const RenderOutput c = render_reference(q, s);
    CHECK((a.rgb - c.rgb).abs().maxCoeff() == 0.0);
}

TEST_CASE("alpha stays in [0,1] and rgb is bounded by contributors") {
    Rng rng(151);
    RasterSettings s;
    s.width = 32;
    s.height = 32;
    s.background = Vec3(0.3, 0.3, 0.3);
    const RenderablePointSet p = random_scene(rng, 120, s.width, s.height);
    const RenderOutput out = render_tiled(p, s);
    CHECK(out.alpha.minCoeff() >= 0.0);
    CHECK(out.alpha.maxCoeff() <= 1.0 + 1e-12);
    const Scalar max_color =
        std::max({p.col_r.maxCoeff(), p.col_g.maxCoeff(), p.col_b.maxCoeff(), 0.3});
    CHECK(out.rgb.maxCoeff() <= max_color + 1e-12);
    CHECK(out.rgb.minCoeff() >= 0.0);
}

TEST_CASE("depth at the overlap of two opaque points is the nearer depth") {
    RasterSettings s;
    s.width = 16;
    s.height = 16;
    // Both centered on pixel (8,8)'s center so alpha hits the 0.99 ceiling.
    RenderablePointSet p = single_point(8.5, 8.5, 2.5, 0.99, Vec3(1, 0, 0), 4.0);
    append_point(p, single_point(8.5, 8.5, 2.5, 0.99, Vec3(0, 1, 0), 4.05));
    const RenderOutput out = render_reference(p, s);
    // Expected depth mixes ~1% of the farther point.
    CHECK(std::abs(out.depth[8 * 16 + 8] - 4.0) <= 1e-3);
    CHECK(std::abs(out.depth[8 * 16 + 8] - 4.0) >= 1e-7); // not exactly equal
}

namespace {

struct OpFixture {
    RasterSettings settings;
    RenderablePointSet scene;
    std::vector<Array> inputs; // 9 arrays

    OpFixture(Rng& rng, int64_t n, int w, int h) {
        settings.width = w;
        settings.height = h;
        settings.background = Vec3(0.05, 0.1, 0.15);
        scene = random_scene(rng, n, w, h);
        for (int64_t i = 0; i < n; ++i)
            scene.alpha_base[i] = 0.1 + 0.4 * scene.alpha_base[i];
        auto arr = [&](const VecX& v) {
            Array a = Array::zeros({n});
            a.data = v.array();
            return a;
        };
        inputs = {arr(scene.mu_x),  arr(scene.mu_y),  arr(scene.inv_a),
                  arr(scene.inv_b), arr(scene.inv_c), arr(scene.alpha_base),
                  arr(scene.col_r), arr(scene.col_g), arr(scene.col_b)};
    }

    // The alpha floor is a jump in the rendered function; finite differences
    // must not straddle it. Same for the transmittance cutoff.
    bool finite_difference_safe() const {
        for (int y = 0; y < settings.height; ++y) {
            for (int x = 0; x < settings.width; ++x) {
                Scalar t = 1.0;
                for (int64_t i = 0; i < scene.count(); ++i) {
                    const Scalar dx = (x + 0.5) - scene.mu_x[i];
                    const Scalar dy = (y + 0.5) - scene.mu_y[i];
                    const Scalar e =
                        -0.5 * (scene.inv_a[i] * dx * dx +
                                2 * scene.inv_b[i] * dx * dy +
                                scene.inv_c[i] * dy * dy);
                    const Scalar alpha = scene.alpha_base[i] * std::exp(e);
                    if (std::abs(alpha - kAlphaFloor) < 1e-3) return false;
                    if (alpha >= kAlphaFloor) t *= 1.0 - alpha;
                }
                if (std::abs(t - kTransmittanceFloor) < 1e-3) return false;
            }
        }
        return true;
    }

    Ref build(Tape& t, const std::vector<Ref>& in) const {
        auto op = std::make_shared<RasterizeOp>(settings, scene.depth,
                                                scene.radius_px, scene.valid);
        return t.record_custom(op, in);
    }
};

} // namespace

TEST_CASE("rasterize op gradients match finite differences") {
    uint64_t seed = 171;
    Rng rng(seed);
    OpFixture fx(rng, 8, 8, 8);
    while (!fx.finite_difference_safe()) {
        Rng next(++seed);
        fx = OpFixture(next, 8, 8, 8);
    }
    auto f = [&](Tape& t, const std::vector<Ref>& in) {
        const Ref img = fx.build(t, in);
        // Weighted sum keeps the objective sensitive to every channel.
        Array w = Array::zeros({8, 8, 3});
        Rng wr(5);
        for (int64_t i = 0; i < w.size(); ++i) w.data[i] = wr.uniform(0.2, 1.0);
        return ad::sum(t, ad::mul(t, img, t.constant(w)));
    };
    const double err = ad::check_gradients_multi(f, fx.inputs, 1e-5);
    CHECK(err <= 1e-4);
}

TEST_CASE("fused rasterizer agrees with a tape-composed compositor") {
    Rng rng(191);
    const int w = 6, h = 6;
    const int64_t n = 4;
    OpFixture fx(rng, n, w, h);

    // The same weighted-sum objective through both paths.
    Array weights = Array::zeros({h, w, 3});
    Rng wr(9);
    for (int64_t i = 0; i < weights.size(); ++i)
        weights.data[i] = wr.uniform(0.2, 1.0);

    // Fused path.
    Tape tf;
    std::vector<Ref> fused_in;
    for (const Array& a : fx.inputs) fused_in.push_back(tf.input(a));
    const Ref img = fx.build(tf, fused_in);
    const Ref obj = ad::sum(tf, ad::mul(tf, img, tf.constant(weights)));
    tf.backward(obj);

    // Tape-composed path: per pixel, per point, generic primitives only.
    Tape tc;
    std::vector<Ref> in;
    for (const Array& a : fx.inputs) in.push_back(tc.input(a));
    std::vector<int32_t> order(static_cast<size_t>(n));
    for (int32_t i = 0; i < n; ++i) order[size_t(i)] = i;
    std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
        return fx.scene.depth[a] < fx.scene.depth[b];
    });

    auto point_scalar = [&](Ref vec, int32_t i) {
        auto idx = std::make_shared<std::vector<int64_t>>(1, i);
        return ad::gather(tc, vec, idx, ad::Shape{});
    };
    Ref total = tc.constant(0.0);
    int64_t weight_at = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            Ref t_trans = tc.constant(1.0);
            Ref rgb[3] = {tc.constant(0.0), tc.constant(0.0), tc.constant(0.0)};
            double t_fwd = 1.0;
            for (int32_t i : order) {
                const Ref dx =
                    ad::sub(tc, tc.constant(x + 0.5), point_scalar(in[0], i));
                const Ref dy =
                    ad::sub(tc, tc.constant(y + 0.5), point_scalar(in[1], i));
                Ref e = ad::mul(tc, ad::mul(tc, dx, dx), point_scalar(in[2], i));
                e = ad::add(tc, e,
                            ad::scale(tc,
                                      ad::mul(tc, ad::mul(tc, dx, dy),
                                              point_scalar(in[3], i)),
                                      2.0));
                e = ad::add(tc, e,
                            ad::mul(tc, ad::mul(tc, dy, dy), point_scalar(in[4], i)));
                const Ref alpha = ad::mul(tc, point_scalar(in[5], i),
                                          ad::exp(tc, ad::scale(tc, e, -0.5)));
                const double alpha_fwd = tc.value(alpha).data[0];
                if (alpha_fwd < kAlphaFloor || alpha_fwd >= kAlphaCeil) continue;
                const Ref wgt = ad::mul(tc, t_trans, alpha);
                for (int c = 0; c < 3; ++c)
                    rgb[c] = ad::add(tc, rgb[c],
                                     ad::mul(tc, wgt, point_scalar(in[6 + c], i)));
                t_trans = ad::mul(tc, t_trans,
                                  ad::sub(tc, tc.constant(1.0), alpha));
                t_fwd *= 1.0 - alpha_fwd;
                if (t_fwd < kTransmittanceFloor) break;
            }
            for (int c = 0; c < 3; ++c) {
                rgb[c] = ad::add(
                    tc, rgb[c],
                    ad::scale(tc, t_trans, fx.settings.background[c]));
                total = ad::add(
                    tc, total,
                    ad::scale(tc, rgb[c], weights.data[weight_at++]));
            }
        }
    }
    tc.backward(total);

    CHECK(tf.value(obj).data[0] ==
          doctest::Approx(tc.value(total).data[0]).epsilon(1e-12));
    for (size_t k = 0; k < 9; ++k) {
        const Array& ga = tf.grad(fused_in[k]);
        const Array& gb = tc.grad(in[k]);
        for (int64_t i = 0; i < n; ++i)
            CHECK(ga.data[i] == doctest::Approx(gb.data[i]).epsilon(1e-9));
    }
}

TEST_CASE("rasterize op exposes screen-gradient statistics") {
    Rng rng(211);
    OpFixture fx(rng, 6, 8, 8);
    Tape t;
    std::vector<Ref> in;
    for (const Array& a : fx.inputs) in.push_back(t.input(a));
    auto op = std::make_shared<RasterizeOp>(fx.settings, fx.scene.depth,
                                            fx.scene.radius_px, fx.scene.valid);
    const Ref img = t.record_custom(op, in);
    t.backward(ad::sum(t, img));
    bool any_grad = false, any_seen = false;
    for (int64_t i = 0; i < 6; ++i) {
        if (op->grad_mu2d_norm()[i] > 0) any_grad = true;
        if (op->contributed()[size_t(i)]) any_seen = true;
    }
    CHECK(any_grad);
    CHECK(any_seen);
}
