#include "dsplat/rasterizer.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>

namespace dsplat {

namespace {

// Shared accumulation state so the oracle, the tiled path and composite()
// perform the identical arithmetic in the identical order.
struct PixelAccum {
    Scalar t = 1.0;
    Scalar r = 0.0, g = 0.0, b = 0.0;
    Scalar depth_sum = 0.0, weight_sum = 0.0;
    int32_t contribs = 0;

    // Returns false once transmittance is exhausted.
    bool add(Scalar alpha, Scalar cr, Scalar cg, Scalar cb, Scalar d) {
        const Scalar w = t * alpha;
        r += w * cr;
        g += w * cg;
        b += w * cb;
        depth_sum += w * d;
        weight_sum += w;
        ++contribs;
        t *= 1.0 - alpha;
        return t >= kTransmittanceFloor;
    }

    void finish(const Vec3& bg) {
        r += t * bg.x();
        g += t * bg.y();
        b += t * bg.z();
    }

    Scalar depth() const { return depth_sum / std::max(weight_sum, Scalar(1e-10)); }
};

inline Scalar raw_alpha(Scalar dx, Scalar dy, Scalar a, Scalar b, Scalar c,
                        Scalar alpha_base) {
    const Scalar e = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
    if (e > 0.0) return 0.0; // non-PSD guard; cannot fire for valid points
    return alpha_base * std::exp(e);
}

std::vector<int32_t> depth_order(const RenderablePointSet& p) {
    std::vector<int32_t> order;
    order.reserve(size_t(p.count()));
    for (int32_t i = 0; i < p.count(); ++i)
        if (p.valid[size_t(i)]) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
        if (p.depth[a] != p.depth[b]) return p.depth[a] < p.depth[b];
        return a < b;
    });
    return order;
}

// Walks one pixel over a depth-ordered candidate list. Marking contributions
// is optional (used for visibility statistics).
template <typename OnContribution>
void walk_pixel(const RenderablePointSet& p, Scalar px, Scalar py,
                const int32_t* cand, size_t n_cand, PixelAccum& acc,
                OnContribution&& on_contribution) {
    for (size_t k = 0; k < n_cand; ++k) {
        const int32_t i = cand[k];
        const Scalar dx = px - p.mu_x[i];
        const Scalar dy = py - p.mu_y[i];
        const Scalar raw =
            raw_alpha(dx, dy, p.inv_a[i], p.inv_b[i], p.inv_c[i], p.alpha_base[i]);
        const Scalar alpha = std::min(raw, kAlphaCeil);
        if (alpha < kAlphaFloor) continue;
        on_contribution(i, alpha);
        if (!acc.add(alpha, p.col_r[i], p.col_g[i], p.col_b[i], p.depth[i]))
            break;
    }
}

struct TileIndex {
    int tiles_x = 0, tiles_y = 0;
    std::vector<int32_t> offsets; // CSR: tiles_x*tiles_y + 1
    std::vector<int32_t> points;  // depth-ordered within each tile
};

TileIndex build_tiles(const RenderablePointSet& p,
                      const std::vector<int32_t>& order, int width, int height) {
    TileIndex idx;
    idx.tiles_x = (width + kTileSize - 1) / kTileSize;
    idx.tiles_y = (height + kTileSize - 1) / kTileSize;
    const int n_tiles = idx.tiles_x * idx.tiles_y;

    auto tile_span = [&](int32_t i, int& tx0, int& tx1, int& ty0, int& ty1) {
        const Scalar r = p.radius_px[i];
        const int x0 = std::max(0, int(std::floor(p.mu_x[i] - r)));
        const int x1 = std::min(width - 1, int(std::ceil(p.mu_x[i] + r)));
        const int y0 = std::max(0, int(std::floor(p.mu_y[i] - r)));
        const int y1 = std::min(height - 1, int(std::ceil(p.mu_y[i] + r)));
        if (x0 > x1 || y0 > y1) return false;
        tx0 = x0 / kTileSize;
        tx1 = x1 / kTileSize;
        ty0 = y0 / kTileSize;
        ty1 = y1 / kTileSize;
        return true;
    };

    std::vector<int32_t> counts(size_t(n_tiles), 0);
    for (int32_t i : order) {
        int tx0, tx1, ty0, ty1;
        if (!tile_span(i, tx0, tx1, ty0, ty1)) continue;
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx)
                ++counts[size_t(ty * idx.tiles_x + tx)];
    }
    idx.offsets.assign(size_t(n_tiles) + 1, 0);
    for (int tt = 0; tt < n_tiles; ++tt)
        idx.offsets[size_t(tt) + 1] = idx.offsets[size_t(tt)] + counts[size_t(tt)];
    idx.points.resize(size_t(idx.offsets.back()));
    std::vector<int32_t> cursor(idx.offsets.begin(), idx.offsets.end() - 1);
    // Filling in global depth order keeps every tile list depth-ordered.
    for (int32_t i : order) {
        int tx0, tx1, ty0, ty1;
        if (!tile_span(i, tx0, tx1, ty0, ty1)) continue;
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx)
                idx.points[size_t(cursor[size_t(ty * idx.tiles_x + tx)]++)] = i;
    }
    return idx;
}

RenderOutput make_output(const RasterSettings& s) {
    RenderOutput out;
    out.width = s.width;
    out.height = s.height;
    const int64_t n_px = int64_t(s.width) * s.height;
    out.rgb = Eigen::ArrayXd::Zero(n_px * 3);
    out.depth = Eigen::ArrayXd::Zero(n_px);
    out.alpha = Eigen::ArrayXd::Zero(n_px);
    out.contributors.assign(size_t(n_px), 0);
    return out;
}

void store_pixel(RenderOutput& out, int y, int x, const PixelAccum& acc) {
    const int64_t px = int64_t(y) * out.width + x;
    out.rgb[px * 3 + 0] = acc.r;
    out.rgb[px * 3 + 1] = acc.g;
    out.rgb[px * 3 + 2] = acc.b;
    out.depth[px] = acc.depth();
    out.alpha[px] = acc.weight_sum;
    out.contributors[size_t(px)] = acc.contribs;
}

} // namespace

Scalar pixel_alpha(const Vec2& p, const Vec2& mu2d, const Mat2& sigma2d_inv,
                   Scalar alpha_base) {
    const Scalar dx = p.x() - mu2d.x();
    const Scalar dy = p.y() - mu2d.y();
    const Scalar raw = raw_alpha(dx, dy, sigma2d_inv(0, 0), sigma2d_inv(0, 1),
                                 sigma2d_inv(1, 1), alpha_base);
    return std::min(raw, kAlphaCeil);
}

CompositeResult composite(const std::vector<Contribution>& sorted,
                          const Vec3& background) {
#ifndef NDEBUG
    for (size_t k = 1; k < sorted.size(); ++k)
        assert(sorted[k - 1].depth <= sorted[k].depth &&
               "composite: contributions must be depth-sorted");
#endif
    PixelAccum acc;
    for (const Contribution& c : sorted) {
        if (c.alpha < kAlphaFloor) continue;
        if (!acc.add(std::min(c.alpha, kAlphaCeil), c.color.x(), c.color.y(),
                     c.color.z(), c.depth))
            break;
    }
    acc.finish(background);
    return {Vec3(acc.r, acc.g, acc.b), acc.weight_sum, acc.depth()};
}

RenderOutput render_reference(const RenderablePointSet& points,
                              const RasterSettings& settings) {
    RenderOutput out = make_output(settings);
    const std::vector<int32_t> order = depth_order(points);
    for (int y = 0; y < settings.height; ++y) {
        for (int x = 0; x < settings.width; ++x) {
            PixelAccum acc;
            walk_pixel(points, Scalar(x) + 0.5, Scalar(y) + 0.5, order.data(),
                       order.size(), acc, [](int32_t, Scalar) {});
            acc.finish(settings.background);
            store_pixel(out, y, x, acc);
        }
    }
    return out;
}

RenderOutput render_tiled(const RenderablePointSet& points,
                          const RasterSettings& settings) {
    RenderOutput out = make_output(settings);
    const std::vector<int32_t> order = depth_order(points);
    const TileIndex tiles = build_tiles(points, order, settings.width, settings.height);
    for (int ty = 0; ty < tiles.tiles_y; ++ty) {
        for (int tx = 0; tx < tiles.tiles_x; ++tx) {
            const int32_t* cand = tiles.points.data() + tiles.offsets[size_t(ty * tiles.tiles_x + tx)];
            const size_t n_cand =
                size_t(tiles.offsets[size_t(ty * tiles.tiles_x + tx) + 1] -
                       tiles.offsets[size_t(ty * tiles.tiles_x + tx)]);
            const int y1 = std::min(settings.height, (ty + 1) * kTileSize);
            const int x1 = std::min(settings.width, (tx + 1) * kTileSize);
            for (int y = ty * kTileSize; y < y1; ++y) {
                for (int x = tx * kTileSize; x < x1; ++x) {
                    PixelAccum acc;
                    walk_pixel(points, Scalar(x) + 0.5, Scalar(y) + 0.5, cand,
                               n_cand, acc, [](int32_t, Scalar) {});
                    acc.finish(settings.background);
                    store_pixel(out, y, x, acc);
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// RasterizeOp

RasterizeOp::RasterizeOp(RasterSettings settings, VecX depth, VecX radius_px,
                         std::vector<uint8_t> valid)
    : settings_(std::move(settings)),
      depth_(std::move(depth)),
      radius_(std::move(radius_px)),
      valid_(std::move(valid)) {}

ad::Array RasterizeOp::forward(const std::vector<const ad::Array*>& inputs) {
    if (inputs.size() != 9)
        throw std::invalid_argument("rasterize: expects 9 inputs");
    const int64_t n = inputs[0]->size();
    for (const ad::Array* a : inputs)
        if (a->size() != n)
            throw std::invalid_argument("rasterize: input length mismatch");
    if (int64_t(valid_.size()) != n || depth_.size() != n || radius_.size() != n)
        throw std::invalid_argument("rasterize: metadata length mismatch");

    points_.mu_x = inputs[0]->data.matrix();
    points_.mu_y = inputs[1]->data.matrix();
    points_.inv_a = inputs[2]->data.matrix();
    points_.inv_b = inputs[3]->data.matrix();
    points_.inv_c = inputs[4]->data.matrix();
    points_.alpha_base = inputs[5]->data.matrix();
    points_.col_r = inputs[6]->data.matrix();
    points_.col_g = inputs[7]->data.matrix();
    points_.col_b = inputs[8]->data.matrix();
    points_.depth = depth_;
    points_.radius_px = radius_;
    points_.valid = valid_;

    order_ = depth_order(points_);
    const TileIndex tiles =
        build_tiles(points_, order_, settings_.width, settings_.height);
    tiles_x_ = tiles.tiles_x;
    tiles_y_ = tiles.tiles_y;
    tile_offsets_ = tiles.offsets;
    tile_points_ = tiles.points;

    contributed_.assign(size_t(n), 0);
    output_ = make_output(settings_);
    for (int ty = 0; ty < tiles_y_; ++ty) {
        for (int tx = 0; tx < tiles_x_; ++tx) {
            const int32_t* cand = tile_points_.data() + tile_offsets_[size_t(ty * tiles_x_ + tx)];
            const size_t n_cand = size_t(tile_offsets_[size_t(ty * tiles_x_ + tx) + 1] -
                                         tile_offsets_[size_t(ty * tiles_x_ + tx)]);
            const int y1 = std::min(settings_.height, (ty + 1) * kTileSize);
            const int x1 = std::min(settings_.width, (tx + 1) * kTileSize);
            for (int y = ty * kTileSize; y < y1; ++y) {
                for (int x = tx * kTileSize; x < x1; ++x) {
                    PixelAccum acc;
                    walk_pixel(points_, Scalar(x) + 0.5, Scalar(y) + 0.5, cand,
                               n_cand, acc,
                               [&](int32_t i, Scalar) { contributed_[size_t(i)] = 1; });
                    acc.finish(settings_.background);
                    store_pixel(output_, y, x, acc);
                }
            }
        }
    }

    ad::Array out;
    out.shape = {settings_.height, settings_.width, 3};
    out.data = output_.rgb;
    return out;
}

void RasterizeOp::backward(const ad::Array& out_adjoint,
                           const std::vector<const ad::Array*>& inputs,
                           const std::vector<ad::Array*>& input_adjoints) {
    const int64_t n = inputs[0]->size();
    // Own accumulators: keeps the densification statistic separable from
    // other consumers of the same tape nodes.
    std::vector<Eigen::ArrayXd> grads(9, Eigen::ArrayXd::Zero(n));
    grad_mu2d_norm_ = VecX::Zero(n);

    const Vec3 bg = settings_.background;
    struct Entry {
        int32_t idx;
        Scalar alpha, raw, t_before, dx, dy;
    };
    std::vector<Entry> stack;
    stack.reserve(256);

    for (int ty = 0; ty < tiles_y_; ++ty) {
        for (int tx = 0; tx < tiles_x_; ++tx) {
            const int32_t* cand = tile_points_.data() + tile_offsets_[size_t(ty * tiles_x_ + tx)];
            const size_t n_cand = size_t(tile_offsets_[size_t(ty * tiles_x_ + tx) + 1] -
                                         tile_offsets_[size_t(ty * tiles_x_ + tx)]);
            const int y1 = std::min(settings_.height, (ty + 1) * kTileSize);
            const int x1 = std::min(settings_.width, (tx + 1) * kTileSize);
            for (int y = ty * kTileSize; y < y1; ++y) {
                for (int x = tx * kTileSize; x < x1; ++x) {
                    const int64_t px_i = int64_t(y) * settings_.width + x;
                    const Scalar gr = out_adjoint.data[px_i * 3 + 0];
                    const Scalar gg = out_adjoint.data[px_i * 3 + 1];
                    const Scalar gb = out_adjoint.data[px_i * 3 + 2];
                    if (gr == 0.0 && gg == 0.0 && gb == 0.0) continue;

                    // Re-walk forward, keeping the contribution stack.
                    const Scalar px = Scalar(x) + 0.5;
                    const Scalar py = Scalar(y) + 0.5;
                    stack.clear();
                    Scalar t = 1.0;
                    for (size_t k = 0; k < n_cand; ++k) {
                        const int32_t i = cand[k];
                        const Scalar dx = px - points_.mu_x[i];
                        const Scalar dy = py - points_.mu_y[i];
                        const Scalar raw =
                            raw_alpha(dx, dy, points_.inv_a[i], points_.inv_b[i],
                                      points_.inv_c[i], points_.alpha_base[i]);
                        const Scalar alpha = std::min(raw, kAlphaCeil);
                        if (alpha < kAlphaFloor) continue;
                        stack.push_back({i, alpha, raw, t, dx, dy});
                        t *= 1.0 - alpha;
                        if (t < kTransmittanceFloor) break;
                    }
                    const Scalar t_final = t;

                    // Reverse walk with suffix color accumulators.
                    Scalar suf_r = 0.0, suf_g = 0.0, suf_b = 0.0;
                    for (size_t k = stack.size(); k-- > 0;) {
                        const Entry& e = stack[k];
                        const int32_t i = e.idx;
                        const Scalar w = e.t_before * e.alpha;
                        // d rgb / d color_i = T_i alpha_i
                        grads[6][i] += w * gr;
                        grads[7][i] += w * gg;
                        grads[8][i] += w * gb;
                        // d rgb / d alpha_i
                        const Scalar inv_om = 1.0 / (1.0 - e.alpha);
                        const Scalar d_alpha =
                            gr * (e.t_before * points_.col_r[i] -
                                  (suf_r + t_final * bg.x()) * inv_om) +
                            gg * (e.t_before * points_.col_g[i] -
                                  (suf_g + t_final * bg.y()) * inv_om) +
                            gb * (e.t_before * points_.col_b[i] -
                                  (suf_b + t_final * bg.z()) * inv_om);
                        suf_r += w * points_.col_r[i];
                        suf_g += w * points_.col_g[i];
                        suf_b += w * points_.col_b[i];
                        if (e.raw >= kAlphaCeil) continue; // clamped: no flow
                        // raw = alpha_base * exp(exponent)
                        const Scalar gauss = e.raw / points_.alpha_base[i];
                        grads[5][i] += d_alpha * gauss;
                        const Scalar d_expo = d_alpha * e.raw;
                        const Scalar ax = points_.inv_a[i] * e.dx + points_.inv_b[i] * e.dy;
                        const Scalar ay = points_.inv_b[i] * e.dx + points_.inv_c[i] * e.dy;
                        const Scalar gx = d_expo * ax; // d/d mu_x = +ax * d_expo
                        const Scalar gy = d_expo * ay;
                        grads[0][i] += gx;
                        grads[1][i] += gy;
                        grads[2][i] += d_expo * (-0.5 * e.dx * e.dx);
                        grads[3][i] += d_expo * (-e.dx * e.dy);
                        grads[4][i] += d_expo * (-0.5 * e.dy * e.dy);
                    }
                }
            }
        }
    }

    for (int64_t i = 0; i < n; ++i)
        grad_mu2d_norm_[i] = std::hypot(grads[0][i], grads[1][i]);
    for (size_t k = 0; k < 9; ++k)
        if (input_adjoints[k]) input_adjoints[k]->data += grads[k];
}

std::pair<ad::Ref, std::shared_ptr<RasterizeOp>> rasterize(
    ad::Tape& t, const ScreenPoints& screen, ad::Ref alpha_base, ad::Ref col_r,
    ad::Ref col_g, ad::Ref col_b, const RasterSettings& settings) {
    VecX depth(screen.count), radius(screen.count);
    for (int64_t i = 0; i < screen.count; ++i) {
        depth[i] = screen.depth[size_t(i)];
        radius[i] = screen.radius_px[size_t(i)];
    }
    auto op = std::make_shared<RasterizeOp>(settings, std::move(depth),
                                            std::move(radius), screen.valid);
    const ad::Ref node = t.record_custom(
        op, {screen.mu_x, screen.mu_y, screen.inv_a, screen.inv_b, screen.inv_c,
             alpha_base, col_r, col_g, col_b});
    return {node, op};
}

} // namespace dsplat
