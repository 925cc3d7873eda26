#include "dsplat/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace dsplat {

using ad::Ref;
using ad::Tape;

TrainConfig TrainConfig::full_scale() { return TrainConfig{}; }

TrainConfig TrainConfig::desk_scale() {
    TrainConfig cfg;
    cfg.total_iters = 5000;
    cfg.densify_from = 62;
    cfg.densify_until = 2500;
    cfg.densify_interval = 12;
    cfg.opacity_reset_interval = 375;
    cfg.hash_table_log2 = 16;
    cfg.max_points = 4000;
    return cfg;
}

Scalar lr_at(int64_t iteration, Scalar lr_start, Scalar lr_end,
             int64_t total_iters) {
    if (iteration <= 0) return lr_start;
    if (iteration >= total_iters) return lr_end;
    const Scalar f = Scalar(iteration) / Scalar(total_iters);
    return lr_start * std::pow(lr_end / lr_start, f);
}

namespace {

Scalar logit(Scalar p) { return std::log(p / (1.0 - p)); }
Scalar sigmoid(Scalar x) { return 0.5 * std::tanh(0.5 * x) + 0.5; }

} // namespace

GaussianCloud init_scene(const MatX& positions, Scalar fallback_scale) {
    const int64_t n = positions.rows();
    if (n < 1) throw std::invalid_argument("init_scene: empty seed set");
    GaussianCloud cloud = GaussianCloud::with_count(n);
    for (int64_t i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) cloud.mu.data[i * 3 + c] = positions(i, c);

    for (int64_t i = 0; i < n; ++i) {
        Scalar scale = fallback_scale;
        if (n >= 4) {
            // Mean distance to the 3 nearest neighbours.
            Scalar best[3] = {std::numeric_limits<Scalar>::infinity(),
                              std::numeric_limits<Scalar>::infinity(),
                              std::numeric_limits<Scalar>::infinity()};
            for (int64_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const Scalar d = (positions.row(j) - positions.row(i)).norm();
                if (d < best[0]) {
                    best[2] = best[1];
                    best[1] = best[0];
                    best[0] = d;
                } else if (d < best[1]) {
                    best[2] = best[1];
                    best[1] = d;
                } else if (d < best[2]) {
                    best[2] = d;
                }
            }
            scale = std::max((best[0] + best[1] + best[2]) / 3.0, Scalar(1e-7));
        }
        const Scalar ls = std::log(scale);
        for (int c = 0; c < 3; ++c) cloud.log_scale.data[i * 3 + c] = ls;
        cloud.opacity_logit.data[i] = logit(0.1);
        cloud.mask_logit.data[i] = kMaskInitLogit;
    }
    return cloud;
}

GaussianCloud init_scene_random(int64_t count, const Vec3& lo, const Vec3& hi,
                                Rng& rng, Scalar fallback_scale) {
    if (count < 1) throw std::invalid_argument("init_scene_random: zero count");
    MatX positions(count, 3);
    for (int64_t i = 0; i < count; ++i)
        for (int c = 0; c < 3; ++c)
            positions(i, c) = rng.uniform(lo[c], hi[c]);
    return init_scene(positions, fallback_scale);
}

void write_loss_csv_header(std::ostream& out) {
    out << "iteration,l1,dssim,photometric,denoise,mask,static,consistency,total\n";
}

void write_loss_csv_row(std::ostream& out, const LossRecord& r) {
    out << r.iteration << ',' << r.l1 << ',' << r.dssim << ',' << r.photometric
        << ',' << r.denoise << ',' << r.mask << ',' << r.static_c << ','
        << r.consistency << ',' << r.total << '\n';
}

Trainer::Trainer(TrainConfig cfg, std::vector<FrameData> frames)
    : config(cfg), frames_(std::move(frames)) {
    if (frames_.empty()) throw std::invalid_argument("trainer: no frames");
    Rng master(cfg.seed);
    init_rng_ = master.fork(1);
    shuffle_rng_ = master.fork(2);
    densify_rng_ = master.fork(3);
    window.capacity = cfg.window_capacity;
    window.stride = cfg.snapshot_stride;
}

void Trainer::setup_field_and_groups(const MatX& positions) {
    Vec3 lo = positions.colwise().minCoeff().transpose();
    Vec3 hi = positions.colwise().maxCoeff().transpose();
    const Vec3 span = (hi - lo).cwiseMax(1e-3);
    lo -= config.aabb_margin * span;
    hi += config.aabb_margin * span;
    scene_extent = std::max(0.5 * span.norm(), 1e-3);
    field.init(lo, hi, config.hash_table_log2, init_rng_);
    net.init(init_rng_);
    rebuild_groups();
    reset_densify_stats();
}

void Trainer::init_from_points(const MatX& positions) {
    cloud = init_scene(positions, config.fallback_point_scale);
    setup_field_and_groups(positions);
}

void Trainer::init_random(int64_t count) {
    // Box from the cameras' look-at span; fall back to the unit cube around
    // the origin when degenerate.
    Vec3 lo(-1, -1, -1), hi(1, 1, 1);
    MatX positions(count, 3);
    for (int64_t i = 0; i < count; ++i)
        for (int c = 0; c < 3; ++c)
            positions(i, c) = init_rng_.uniform(lo[c], hi[c]);
    cloud = init_scene(positions, config.fallback_point_scale);
    setup_field_and_groups(positions);
}

void Trainer::attach(GaussianCloud c, DeformNet n, HashColorField f,
                     uint64_t start_iteration) {
    cloud = std::move(c);
    net = std::move(n);
    field = std::move(f);
    iteration = start_iteration;
    MatX positions(cloud.count(), 3);
    for (int64_t i = 0; i < cloud.count(); ++i)
        for (int c2 = 0; c2 < 3; ++c2) positions(i, c2) = cloud.mu.data[i * 3 + c2];
    Vec3 lo = positions.colwise().minCoeff().transpose();
    Vec3 hi = positions.colwise().maxCoeff().transpose();
    scene_extent = std::max(0.5 * (hi - lo).cwiseMax(1e-3).norm(), 1e-3);
    rebuild_groups();
    reset_densify_stats();
}

void Trainer::inject_points(const GaussianCloud& extra) {
    extra.validate();
    const int64_t added = extra.count();
    auto append = [](ad::Array& dst, const ad::Array& src) {
        ad::Shape shape = dst.shape;
        shape[0] += src.shape[0];
        Eigen::ArrayXd data(dst.data.size() + src.data.size());
        data << dst.data, src.data;
        dst = ad::Array{shape, std::move(data)};
    };
    append(cloud.mu, extra.mu);
    append(cloud.rot, extra.rot);
    append(cloud.log_scale, extra.log_scale);
    append(cloud.opacity_logit, extra.opacity_logit);
    append(cloud.mask_logit, extra.mask_logit);
    std::vector<int64_t> keep(size_t(cloud.count() - added));
    for (size_t i = 0; i < keep.size(); ++i) keep[i] = int64_t(i);
    apply_point_maps(keep, added);
}

void Trainer::rebuild_groups() {
    groups_.clear();
    auto add_group = [&](std::string name, std::vector<ad::Array*> params,
                         Scalar lr_start, Scalar lr_end, bool exponential,
                         bool per_point) {
        ParamGroup g;
        g.name = std::move(name);
        g.params = std::move(params);
        for (ad::Array* p : g.params)
            g.state.push_back({Eigen::ArrayXd::Zero(p->size()),
                               Eigen::ArrayXd::Zero(p->size())});
        g.lr_start = lr_start;
        g.lr_end = lr_end;
        g.exponential = exponential;
        g.per_point = per_point;
        groups_.push_back(std::move(g));
    };
    add_group("position", {&cloud.mu}, config.lr_position_start * scene_extent,
              config.lr_position_end * scene_extent, true, true);
    add_group("rotation", {&cloud.rot}, config.lr_rotation, config.lr_rotation,
              false, true);
    add_group("scale", {&cloud.log_scale}, config.lr_scale, config.lr_scale,
              false, true);
    add_group("opacity", {&cloud.opacity_logit}, config.lr_opacity,
              config.lr_opacity, false, true);
    add_group("mask", {&cloud.mask_logit}, config.lr_mask, config.lr_mask,
              false, true);
    add_group("deform", net.params(), config.lr_deform_start,
              config.lr_deform_end, true, false);
    add_group("hash", field.params(), config.lr_hash_start, config.lr_hash_end,
              true, false);
}

PipelineSettings Trainer::pipeline_settings(const Camera& cam) const {
    PipelineSettings ps;
    ps.raster.width = cam.width;
    ps.raster.height = cam.height;
    ps.raster.background = config.background;
    ps.warmup_iters = config.warmup_iters;
    ps.ablate_deform = config.ablate_deform;
    return ps;
}

RenderOutput Trainer::render(const Camera& cam) const {
    return render_frame(cloud, net, field, cam, pipeline_settings(cam),
                        int64_t(iteration));
}

int64_t Trainer::next_frame() {
    if (frame_cursor_ >= frame_order_.size()) {
        frame_order_.resize(frames_.size());
        for (size_t i = 0; i < frames_.size(); ++i) frame_order_[i] = int64_t(i);
        shuffle_rng_.shuffle(frame_order_);
        frame_cursor_ = 0;
    }
    return frame_order_[frame_cursor_++];
}

void Trainer::adam_step(
    const std::vector<std::pair<ad::Array*, const ad::Array*>>& grads) {
    std::unordered_map<const ad::Array*, const ad::Array*> lookup;
    for (const auto& [param, grad] : grads) lookup[param] = grad;

    const Scalar b1 = config.adam_beta1, b2 = config.adam_beta2;
    const int64_t t_step = int64_t(iteration) + 1;
    const Scalar bias1 = 1.0 - std::pow(b1, Scalar(t_step));
    const Scalar bias2 = 1.0 - std::pow(b2, Scalar(t_step));

    for (ParamGroup& g : groups_) {
        const Scalar lr =
            g.exponential
                ? lr_at(int64_t(iteration), g.lr_start, g.lr_end, config.total_iters)
                : g.lr_start;
        for (size_t k = 0; k < g.params.size(); ++k) {
            ad::Array* p = g.params[k];
            AdamArrayState& st = g.state[k];
            auto it = lookup.find(p);
            const ad::Array* grad = it == lookup.end() ? nullptr : it->second;
            const int64_t n = p->size();
            for (int64_t i = 0; i < n; ++i) {
                const Scalar gi = grad ? grad->data[i] : 0.0;
                if (gi == 0.0 && st.m[i] == 0.0 && st.v[i] == 0.0) continue;
                st.m[i] = b1 * st.m[i] + (1.0 - b1) * gi;
                st.v[i] = b2 * st.v[i] + (1.0 - b2) * gi * gi;
                p->data[i] -= lr * (st.m[i] / bias1) /
                              (std::sqrt(st.v[i] / bias2) + config.adam_eps);
            }
        }
    }
}

LossRecord Trainer::step() {
    if (cloud.count() == 0) throw std::runtime_error("trainer: empty cloud");
    const FrameData& frame = frames_[size_t(next_frame())];

    Tape t;
    const PipelineSettings ps = pipeline_settings(frame.camera);
    const RenderGraph g = build_render_graph(t, cloud, net, field, frame.camera,
                                             ps, int64_t(iteration));

    LossRecord rec;
    rec.iteration = int64_t(iteration);

    const bool ssim_ok = frame.camera.width >= 11 && frame.camera.height >= 11;
    const Ref l1 = l1_loss(t, g.image, frame.image);
    Ref photometric = l1;
    rec.l1 = t.value(l1).data[0];
    if (ssim_ok && config.weights.lambda_dssim > 0.0) {
        const Ref dssim = dssim_loss(t, g.image, frame.image);
        rec.dssim = t.value(dssim).data[0];
        photometric =
            ad::add(t, ad::scale(t, l1, 1.0 - config.weights.lambda_dssim),
                    ad::scale(t, dssim, config.weights.lambda_dssim));
    }
    rec.photometric = t.value(photometric).data[0];

    Ref total = photometric;
    if (config.weights.w_m > 0.0) {
        const Ref lm = mask_loss(t, g.cloud.mask_logit);
        rec.mask = t.value(lm).data[0];
        total = ad::add(t, total, ad::scale(t, lm, config.weights.w_m));
    }
    if (rec.iteration >= config.activate_static) {
        if (config.weights.w_s > 0.0) {
            const Ref ls = static_loss(t, g.offsets.d_mu, config.static_threshold);
            rec.static_c = t.value(ls).data[0];
            total = ad::add(t, total, ad::scale(t, ls, config.weights.w_s));
        }
        if (config.weights.w_con > 0.0) {
            const Ref lc = consistency_loss(t, g.offsets.d_mu);
            rec.consistency = t.value(lc).data[0];
            total = ad::add(t, total, ad::scale(t, lc, config.weights.w_con));
        }
    }
    if (rec.iteration >= config.activate_denoise && config.weights.w_dn > 0.0) {
        const Ref ldn = denoise_loss(t, g.masked.scale, g.masked.opacity, window);
        rec.denoise = t.value(ldn).data[0];
        total = ad::add(t, total, ad::scale(t, ldn, config.weights.w_dn));
    }
    rec.total = t.value(total).data[0];
    if (!std::isfinite(rec.total)) {
        std::ostringstream os;
        os << "non-finite loss at iteration " << rec.iteration << ": l1=" << rec.l1
           << " dssim=" << rec.dssim << " dn=" << rec.denoise << " m=" << rec.mask
           << " s=" << rec.static_c << " con=" << rec.consistency;
        throw std::runtime_error(os.str());
    }

    t.backward(total);

    std::vector<std::pair<ad::Array*, const ad::Array*>> grads;
    auto take = [&](ad::Array* param, Ref leaf) {
        if (t.has_grad(leaf)) grads.emplace_back(param, &t.grad(leaf));
    };
    take(&cloud.mu, g.cloud.mu);
    take(&cloud.rot, g.cloud.rot);
    take(&cloud.log_scale, g.cloud.log_scale);
    take(&cloud.opacity_logit, g.cloud.opacity_logit);
    take(&cloud.mask_logit, g.cloud.mask_logit);
    for (int l = 0; l < DeformNet::kDepth; ++l) {
        take(&net.w[size_t(l)], g.net.w[size_t(l)]);
        take(&net.b[size_t(l)], g.net.b[size_t(l)]);
    }
    take(&net.w_mu, g.net.w_mu);
    take(&net.b_mu, g.net.b_mu);
    take(&net.w_rot, g.net.w_rot);
    take(&net.b_rot, g.net.b_rot);
    take(&net.w_scale, g.net.w_scale);
    take(&net.b_scale, g.net.b_scale);
    take(&net.w_color, g.net.w_color);
    take(&net.b_color, g.net.b_color);
    for (size_t l = 0; l < field.tables.size(); ++l)
        take(&field.tables[l], g.field.tables[l]);
    take(&field.dec_w0, g.field.dec_w0);
    take(&field.dec_b0, g.field.dec_b0);
    take(&field.dec_w1, g.field.dec_w1);
    take(&field.dec_b1, g.field.dec_b1);
    take(&field.dec_w2, g.field.dec_w2);
    take(&field.dec_b2, g.field.dec_b2);

    // Densification statistics come from the rasterizer's own accumulation.
    const VecX& g2d = g.raster_op->grad_mu2d_norm();
    const std::vector<uint8_t>& seen = g.raster_op->contributed();
    const ad::Array& g3d =
        t.has_grad(g.cloud.mu) ? t.grad(g.cloud.mu) : ad::Array::zeros({cloud.count(), 3});
    for (int64_t i = 0; i < cloud.count(); ++i) {
        grad2d_accum_[i] += g2d[i];
        seen_count_[i] += seen[size_t(i)] ? 1.0 : 0.0;
        grad3d_accum_.segment(i * 3, 3) += g3d.data.segment(i * 3, 3);
    }

    // Post-mask snapshot of the current frame's values.
    const int64_t completed = rec.iteration + 1;
    if (completed % window.stride == 0)
        window.snapshot(t.value(g.masked.scale).data, t.value(g.masked.opacity).data);

    adam_step(grads);

    if (completed >= config.densify_from && completed <= config.densify_until &&
        config.densify_interval > 0 && completed % config.densify_interval == 0)
        densify_and_prune();

    if (config.opacity_reset_interval > 0 &&
        completed % config.opacity_reset_interval == 0 &&
        completed <= config.densify_until) {
        const Scalar cap = logit(0.01);
        for (int64_t i = 0; i < cloud.count(); ++i)
            cloud.opacity_logit.data[i] = std::min(cloud.opacity_logit.data[i], cap);
        for (ParamGroup& grp : groups_)
            if (grp.name == "opacity")
                for (AdamArrayState& st : grp.state) {
                    st.m.setZero();
                    st.v.setZero();
                }
    }

    if (completed > config.activate_denoise && config.mask_prune_interval > 0 &&
        completed % config.mask_prune_interval == 0) {
        const int64_t before = cloud.count();
        const std::vector<int64_t> keep = prune_masked(cloud);
        if (int64_t(keep.size()) != before) {
            pruned_by_mask += before - int64_t(keep.size());
            apply_point_maps(keep, 0);
        }
    }

    ++iteration;
    return rec;
}

void Trainer::run(std::ostream* loss_csv) {
    if (loss_csv) write_loss_csv_header(*loss_csv);
    while (int64_t(iteration) < config.total_iters) {
        const LossRecord rec = step();
        if (loss_csv) write_loss_csv_row(*loss_csv, rec);
    }
}

namespace {

Eigen::ArrayXd take_rows_flat(const Eigen::ArrayXd& data, int64_t width,
                              const std::vector<int64_t>& rows) {
    Eigen::ArrayXd out(int64_t(rows.size()) * width);
    for (size_t r = 0; r < rows.size(); ++r)
        out.segment(int64_t(r) * width, width) =
            data.segment(rows[r] * width, width);
    return out;
}

} // namespace

void Trainer::apply_point_maps(const std::vector<int64_t>& keep, int64_t appended) {
    const int64_t new_count = int64_t(keep.size()) + appended;
    for (ParamGroup& g : groups_) {
        if (!g.per_point) continue;
        for (size_t k = 0; k < g.params.size(); ++k) {
            const int64_t width = g.params[k]->size() / new_count;
            AdamArrayState& st = g.state[k];
            Eigen::ArrayXd m = take_rows_flat(st.m, width, keep);
            Eigen::ArrayXd v = take_rows_flat(st.v, width, keep);
            st.m = Eigen::ArrayXd::Zero(new_count * width);
            st.v = Eigen::ArrayXd::Zero(new_count * width);
            st.m.head(m.size()) = m;
            st.v.head(v.size()) = v;
        }
    }
    window.compact(keep);
    window.append_points(appended);
    reset_densify_stats();
}

void Trainer::reset_densify_stats() {
    const int64_t n = cloud.count();
    grad2d_accum_ = Eigen::ArrayXd::Zero(n);
    grad3d_accum_ = Eigen::ArrayXd::Zero(n * 3);
    seen_count_ = Eigen::ArrayXd::Zero(n);
}

void Trainer::densify_and_prune() {
    ++densify_events;
    const int64_t n = cloud.count();
    const Scalar split_above = config.split_scale_fraction * scene_extent;

    std::vector<int64_t> keep;
    keep.reserve(size_t(n));
    struct NewPoint {
        Vec3 mu;
        Vec4 rot;
        Vec3 log_scale;
        Scalar opacity_logit, mask_logit;
    };
    std::vector<NewPoint> added;

    int64_t budget = config.max_points - n;
    for (int64_t i = 0; i < n; ++i) {
        const Scalar avg = seen_count_[i] > 0.0 ? grad2d_accum_[i] / seen_count_[i] : 0.0;
        const bool candidate = avg > config.densify_grad_threshold;
        const Vec3 scale = cloud.log_scale.data.segment(i * 3, 3).exp();
        const bool split = candidate && scale.maxCoeff() > split_above;
        const bool prune =
            sigmoid(cloud.opacity_logit.data[i]) < config.opacity_prune_threshold;

        NewPoint base;
        base.mu = Vec3(cloud.mu.data[i * 3], cloud.mu.data[i * 3 + 1],
                       cloud.mu.data[i * 3 + 2]);
        base.rot = Vec4(cloud.rot.data[i * 4], cloud.rot.data[i * 4 + 1],
                        cloud.rot.data[i * 4 + 2], cloud.rot.data[i * 4 + 3]);
        base.log_scale =
            Vec3(cloud.log_scale.data[i * 3], cloud.log_scale.data[i * 3 + 1],
                 cloud.log_scale.data[i * 3 + 2]);
        base.opacity_logit = cloud.opacity_logit.data[i];
        base.mask_logit = cloud.mask_logit.data[i];

        if (split && !prune) {
            if (budget >= 1) {
                // Two children sampled inside the parent, scales shrunk.
                const Mat3 rot_m = quat_to_rotation(base.rot);
                for (int child = 0; child < 2; ++child) {
                    Vec3 z(densify_rng_.normal(), densify_rng_.normal(),
                           densify_rng_.normal());
                    NewPoint np = base;
                    np.mu = base.mu + rot_m * (scale.asDiagonal() * z);
                    np.log_scale = base.log_scale.array() - std::log(1.6);
                    added.push_back(np);
                }
                budget -= 1; // two children replace one parent
                continue;    // parent dropped
            }
            keep.push_back(i); // no room: keep the parent untouched
            continue;
        }
        if (prune) continue;
        keep.push_back(i);
        if (candidate && budget >= 1) {
            // Clone, stepping down the accumulated position gradient.
            Vec3 dir(grad3d_accum_[i * 3], grad3d_accum_[i * 3 + 1],
                     grad3d_accum_[i * 3 + 2]);
            const Scalar norm = dir.norm();
            NewPoint np = base;
            if (norm > 0.0)
                np.mu = base.mu - (0.5 * scale.mean() / norm) * dir;
            added.push_back(np);
            budget -= 1;
        }
    }
    if (budget <= 0 && !warned_cap_) {
        std::fprintf(stderr,
                     "warning: point cap %lld reached; densification paused\n",
                     (long long)config.max_points);
        warned_cap_ = true;
    }
    if (keep.empty() && added.empty())
        throw std::runtime_error("densify: all points pruned");

    const int64_t appended = int64_t(added.size());
    const int64_t new_count = int64_t(keep.size()) + appended;
    GaussianCloud next = GaussianCloud::with_count(new_count);
    next.mu.data.head(int64_t(keep.size()) * 3) =
        take_rows_flat(cloud.mu.data, 3, keep);
    next.rot.data.head(int64_t(keep.size()) * 4) =
        take_rows_flat(cloud.rot.data, 4, keep);
    next.log_scale.data.head(int64_t(keep.size()) * 3) =
        take_rows_flat(cloud.log_scale.data, 3, keep);
    next.opacity_logit.data.head(int64_t(keep.size())) =
        take_rows_flat(cloud.opacity_logit.data, 1, keep);
    next.mask_logit.data.head(int64_t(keep.size())) =
        take_rows_flat(cloud.mask_logit.data, 1, keep);
    for (int64_t a = 0; a < appended; ++a) {
        const NewPoint& np = added[size_t(a)];
        const int64_t row = int64_t(keep.size()) + a;
        for (int c = 0; c < 3; ++c) {
            next.mu.data[row * 3 + c] = np.mu[c];
            next.log_scale.data[row * 3 + c] = np.log_scale[c];
        }
        for (int c = 0; c < 4; ++c) next.rot.data[row * 4 + c] = np.rot[c];
        next.opacity_logit.data[row] = np.opacity_logit;
        next.mask_logit.data[row] = np.mask_logit;
    }
    cloud = std::move(next);
    apply_point_maps(keep, appended);
}

} // namespace dsplat
