#include "dsplat/pipeline.hpp"

#include <limits>

namespace dsplat {

using ad::Ref;
using ad::Tape;

RenderGraph build_render_graph(Tape& t, const GaussianCloud& cloud,
                               const DeformNet& net, const HashColorField& field,
                               const Camera& cam, const PipelineSettings& settings,
                               int64_t iteration) {
    cloud.validate();
    RenderGraph g;
    g.cloud.mu = t.input(cloud.mu);
    g.cloud.rot = t.input(cloud.rot);
    g.cloud.log_scale = t.input(cloud.log_scale);
    g.cloud.opacity_logit = t.input(cloud.opacity_logit);
    g.cloud.mask_logit = t.input(cloud.mask_logit);
    g.net = make_leaves(t, net);
    g.field = make_leaves(t, field);

    const int64_t eff_iter = settings.ablate_deform ? 0 : iteration;
    const int64_t eff_warmup =
        settings.ablate_deform ? std::numeric_limits<int64_t>::max()
                               : settings.warmup_iters;
    g.offsets = deform(t, g.net, net, g.cloud.mu, cam.time, eff_iter, eff_warmup);
    g.mask_values = binary_mask(t, g.cloud.mask_logit, settings.mask_epsilon);
    g.composed = compose_deformed(t, g.cloud, g.offsets, g.mask_values);
    g.masked.scale = g.composed.masked_scale;
    g.masked.opacity = g.composed.opacity;

    // Color rides the deformed point: the field is looked up at mu + d_mu.
    const Ref base = base_color(t, field, g.field, g.composed.pos_x,
                                g.composed.pos_y, g.composed.pos_z);
    g.color = ad::clamp(t, ad::add(t, base, g.offsets.d_color), 0.0, 1.0);

    const ScreenPoints screen = project_points(t, g.composed, cam);
    auto [image, op] = rasterize(t, screen, g.composed.opacity,
                                 ad::column(t, g.color, 0),
                                 ad::column(t, g.color, 1),
                                 ad::column(t, g.color, 2), settings.raster);
    g.image = image;
    g.raster_op = std::move(op);
    return g;
}

RenderOutput render_frame(const GaussianCloud& cloud, const DeformNet& net,
                          const HashColorField& field, const Camera& cam,
                          const PipelineSettings& settings, int64_t iteration) {
    Tape t;
    const RenderGraph g =
        build_render_graph(t, cloud, net, field, cam, settings, iteration);
    return g.raster_op->output();
}

} // namespace dsplat
