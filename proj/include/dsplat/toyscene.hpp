#pragma once

#include "dsplat/dataio.hpp"
#include "dsplat/rasterizer.hpp"

#include <string>
#include <vector>

namespace dsplat {

struct ToyConfig {
    int n_blobs = 12;
    int n_static = 4;
    int n_train_cams = 20;
    int n_test_cams = 5;
    int n_timestamps = 8;
    int width = 64, height = 64;
    Scalar fov_x = 0.7;       // radians
    Scalar cam_radius = 4.0;
    Scalar blob_spread = 0.9; // canonical centers inside [-spread, spread]^3
    Scalar blob_scale_min = 0.07, blob_scale_max = 0.13;
    Scalar motion_amplitude = 0.35;
    int seeds_per_blob = 5;
    Vec3 background = Vec3::Zero();

    static ToyConfig preset_default() { return ToyConfig{}; }
};

struct ToyBlob {
    Vec3 center;     // canonical position
    Vec3 amplitude;  // zero for static blobs
    Scalar phase = 0.0;
    Vec3 scale;
    Vec4 rot;
    Vec3 color;
    Scalar opacity = 0.95;
    bool is_static = false;

    // Smooth displacement over t in [0,1], zero at t = 0.5.
    Vec3 position(Scalar t) const {
        return center + amplitude * std::sin(3.14159265358979323846 * (t - 0.5) +
                                             phase);
    }
};

struct ToyScene {
    ToyConfig config;
    uint64_t seed = 0;
    std::vector<ToyBlob> blobs;
    SceneManifest train_manifest, test_manifest; // image paths empty in memory
    std::vector<ImageF> train_images, test_images;
    MatX seed_points; // jittered canonical blob positions
    std::vector<int> seed_blob; // blob index per seed point
};

// Everything (blobs, cameras, images) is a pure function of (seed, config);
// ground truth is rendered with render_reference.
ToyScene make_toy_scene(uint64_t seed, const ToyConfig& config);

// Renders the true blobs at (camera, t); shared by generation and tests.
RenderOutput render_toy_truth(const ToyScene& scene, const Camera& cam);

// Writes manifest.json + test_manifest.json, PNG frames, seed_points.txt and
// trajectories.json under `dir`.
void write_toy_scene(const std::string& dir, const ToyScene& scene);

} // namespace dsplat
