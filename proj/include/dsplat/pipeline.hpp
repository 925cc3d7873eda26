#pragma once

#include "dsplat/deform.hpp"
#include "dsplat/gaussians.hpp"
#include "dsplat/hashenc.hpp"
#include "dsplat/mask.hpp"
#include "dsplat/rasterizer.hpp"

#include <memory>

namespace dsplat {

// One frame's forward graph: deform -> mask -> compose -> hash color ->
// project -> rasterize. Leaves are exposed so the trainer can read gradients
// back for each parameter group.
struct RenderGraph {
    CloudLeaves cloud;
    DeformNetLeaves net;
    HashFieldLeaves field;

    DeformRefs offsets;
    ad::Ref mask_values;   // hard mask M
    MaskedParams masked;   // (N,3) scale, (N) opacity
    ComposedPoints composed;
    ad::Ref color;         // (N,3) clamp(base + d_color, 0, 1)
    ad::Ref image;         // (H,W,3)
    std::shared_ptr<RasterizeOp> raster_op;
};

struct PipelineSettings {
    RasterSettings raster;
    int64_t warmup_iters = 1500;
    Scalar mask_epsilon = kMaskEpsilon;
    bool ablate_deform = false; // hold every offset at zero
};

RenderGraph build_render_graph(ad::Tape& t, const GaussianCloud& cloud,
                               const DeformNet& net, const HashColorField& field,
                               const Camera& cam, const PipelineSettings& settings,
                               int64_t iteration);

// Forward-only convenience render (inference path; same graph, no backward).
RenderOutput render_frame(const GaussianCloud& cloud, const DeformNet& net,
                          const HashColorField& field, const Camera& cam,
                          const PipelineSettings& settings,
                          int64_t iteration = INT64_MAX);

} // namespace dsplat
