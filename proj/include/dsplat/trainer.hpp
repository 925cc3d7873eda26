#pragma once

#include "dsplat/gaussians.hpp"
#include "dsplat/hashenc.hpp"
#include "dsplat/losses.hpp"
#include "dsplat/pipeline.hpp"
#include "dsplat/rng.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dsplat {

struct TrainConfig {
    int64_t total_iters = 40000;
    int64_t warmup_iters = 1500;      // deformation held at zero
    int64_t activate_static = 3000;   // static + consistency constraints
    int64_t activate_denoise = 5000;

    LossWeights weights;
    Scalar static_threshold = kStaticThreshold;

    // Learning rates. Exponential groups follow
    // lr(i) = start * (end/start)^(i/total_iters).
    Scalar lr_deform_start = 8e-4, lr_deform_end = 1.6e-6;
    Scalar lr_hash_start = 8e-4, lr_hash_end = 3.2e-4;
    Scalar lr_position_start = 1.6e-4, lr_position_end = 1.6e-6; // x scene extent
    Scalar lr_rotation = 1e-3;
    Scalar lr_scale = 5e-3;
    Scalar lr_opacity = 0.05;
    Scalar lr_mask = 1e-2;
    Scalar adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-15;

    // Densification (3D-GS defaults at full scale).
    int64_t densify_from = 500, densify_until = 15000, densify_interval = 100;
    Scalar densify_grad_threshold = 2e-4;
    Scalar split_scale_fraction = 0.01; // x scene extent separates clone/split
    Scalar opacity_prune_threshold = 0.005;
    int64_t opacity_reset_interval = 3000;
    int64_t max_points = 500000;
    int64_t mask_prune_interval = 1000; // active once the denoise loss is

    int hash_table_log2 = 20;
    Scalar aabb_margin = 0.1; // scene box expansion around the seed points
    Scalar fallback_point_scale = 0.1;

    uint64_t seed = 0;
    Vec3 background = Vec3::Zero();
    bool ablate_deform = false; // keeps offsets at zero for the whole run

    int64_t snapshot_stride = 10;
    int64_t window_capacity = 50;

    // Full-scale schedule (40k iterations).
    static TrainConfig full_scale();
    // 5k iterations; warm-up and loss activations stay absolute, the
    // densify/reset cadence shrinks by 8x, hash table shrinks to 2^16.
    static TrainConfig desk_scale();
};

Scalar lr_at(int64_t iteration, Scalar lr_start, Scalar lr_end,
             int64_t total_iters);

struct FrameData {
    Camera camera;
    ImageF image;
};

// Scales from the mean distance to the 3 nearest neighbours (fallback for
// degenerate clouds), opacity sigmoid at 0.1, masks on, identity rotations.
GaussianCloud init_scene(const MatX& positions, Scalar fallback_scale);
GaussianCloud init_scene_random(int64_t count, const Vec3& lo, const Vec3& hi,
                                Rng& rng, Scalar fallback_scale);

struct LossRecord {
    int64_t iteration = 0;
    Scalar l1 = 0, dssim = 0, photometric = 0;
    Scalar denoise = 0, mask = 0, static_c = 0, consistency = 0;
    Scalar total = 0;
};

void write_loss_csv_header(std::ostream& out);
void write_loss_csv_row(std::ostream& out, const LossRecord& rec);

struct AdamArrayState {
    Eigen::ArrayXd m, v;
};

struct ParamGroup {
    std::string name;
    std::vector<ad::Array*> params;
    std::vector<AdamArrayState> state;
    Scalar lr_start = 0, lr_end = 0;
    bool exponential = false;
    bool per_point = false; // moments follow densify/prune row maps
};

class Trainer {
public:
    Trainer(TrainConfig cfg, std::vector<FrameData> frames);

    void init_from_points(const MatX& positions);
    void init_random(int64_t count);
    // Resume from checkpoint state (fresh optimizer moments).
    void attach(GaussianCloud cloud, DeformNet net, HashColorField field,
                uint64_t start_iteration);
    // Adds externally built points (fresh moments, no history); used by the
    // noise-injection studies.
    void inject_points(const GaussianCloud& extra);

    LossRecord step();
    void run(std::ostream* loss_csv = nullptr);

    RenderOutput render(const Camera& cam) const;
    PipelineSettings pipeline_settings(const Camera& cam) const;

    TrainConfig config;
    GaussianCloud cloud;
    DeformNet net;
    HashColorField field;
    SlidingWindowStats window;
    uint64_t iteration = 0;
    Scalar scene_extent = 1.0;

    int64_t densify_events = 0;
    int64_t pruned_by_mask = 0;

private:
    void setup_field_and_groups(const MatX& positions);
    void rebuild_groups();
    void adam_step(const std::vector<std::pair<ad::Array*, const ad::Array*>>& grads);
    void densify_and_prune();
    void apply_point_maps(const std::vector<int64_t>& keep, int64_t appended);
    void reset_densify_stats();
    int64_t next_frame();

    std::vector<FrameData> frames_;
    std::vector<ParamGroup> groups_;
    Rng shuffle_rng_, densify_rng_, init_rng_;
    std::vector<int64_t> frame_order_;
    size_t frame_cursor_ = 0;
    Eigen::ArrayXd grad2d_accum_;  // per point
    Eigen::ArrayXd grad3d_accum_;  // per point x3
    Eigen::ArrayXd seen_count_;
    bool warned_cap_ = false;
};

} // namespace dsplat
