#include "dsplat/toyscene.hpp"
#include "dsplat/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

namespace dsplat {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr Scalar kPi = 3.14159265358979323846;

Camera toy_camera(const ToyConfig& cfg, Scalar azimuth, Scalar elevation,
                  Scalar time) {
    const Vec3 eye(cfg.cam_radius * std::cos(elevation) * std::cos(azimuth),
                   cfg.cam_radius * std::cos(elevation) * std::sin(azimuth),
                   cfg.cam_radius * std::sin(elevation));
    Camera cam = Camera::look_at(eye, Vec3::Zero(), Vec3(0, 0, 1), cfg.fov_x,
                                 cfg.width, cfg.height);
    cam.near = 0.05;
    cam.far = 3.0 * cfg.cam_radius;
    cam.time = time;
    return cam;
}

Mat4 cam_to_world(const Camera& cam) {
    const Mat3 rot = cam.rotation();
    const Vec3 t = cam.translation();
    Mat4 c2w = Mat4::Identity();
    c2w.topLeftCorner<3, 3>() = rot.transpose();
    c2w.topRightCorner<3, 1>() = -rot.transpose() * t;
    return c2w;
}

RenderablePointSet blobs_to_points(const std::vector<ToyBlob>& blobs,
                                   const Camera& cam) {
    const int64_t n = int64_t(blobs.size());
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
    p.valid.assign(size_t(n), 0);
    for (int64_t i = 0; i < n; ++i) {
        const ToyBlob& blob = blobs[size_t(i)];
        const Mat3 sigma = covariance_3d(blob.rot, blob.scale);
        const ProjectedPoint proj = project(blob.position(cam.time), sigma, cam);
        p.depth[i] = proj.depth;
        if (!proj.in_front) continue;
        const Mat2 s2 = proj.sigma2d;
        const Scalar det = s2(0, 0) * s2(1, 1) - s2(0, 1) * s2(0, 1);
        if (det <= 1e-12) continue;
        p.valid[size_t(i)] = 1;
        p.mu_x[i] = proj.mu2d.x();
        p.mu_y[i] = proj.mu2d.y();
        p.inv_a[i] = s2(1, 1) / det;
        p.inv_b[i] = -s2(0, 1) / det;
        p.inv_c[i] = s2(0, 0) / det;
        p.alpha_base[i] = blob.opacity;
        p.col_r[i] = blob.color.x();
        p.col_g[i] = blob.color.y();
        p.col_b[i] = blob.color.z();
        const Scalar mid = 0.5 * (s2(0, 0) + s2(1, 1));
        const Scalar off = 0.5 * (s2(0, 0) - s2(1, 1));
        const Scalar lam =
            mid + std::sqrt(off * off + s2(0, 1) * s2(0, 1));
        p.radius_px[i] = 3.5 * std::sqrt(std::max(lam, Scalar(0)));
    }
    return p;
}

ImageF to_image(const RenderOutput& out) {
    ImageF img;
    img.width = out.width;
    img.height = out.height;
    img.data = out.rgb;
    return img;
}

} // namespace

RenderOutput render_toy_truth(const ToyScene& scene, const Camera& cam) {
    RasterSettings settings;
    settings.width = cam.width;
    settings.height = cam.height;
    settings.background = scene.config.background;
    return render_reference(blobs_to_points(scene.blobs, cam), settings);
}

ToyScene make_toy_scene(uint64_t seed, const ToyConfig& config) {
    ToyScene scene;
    scene.config = config;
    scene.seed = seed;
    Rng master(seed);
    Rng blob_rng = master.fork(11);
    Rng cam_rng = master.fork(12);
    Rng seed_rng = master.fork(13);

    // Dynamic blobs share one motion direction (with per-blob gain) so the
    // motion-consistency prior holds on this scene.
    Vec3 shared_dir(blob_rng.uniform(-1, 1), blob_rng.uniform(-1, 1),
                    blob_rng.uniform(-0.5, 0.5));
    shared_dir.normalize();

    for (int i = 0; i < config.n_blobs; ++i) {
        ToyBlob blob;
        blob.is_static = i < config.n_static;
        for (int c = 0; c < 3; ++c)
            blob.center[c] = blob_rng.uniform(-config.blob_spread, config.blob_spread);
        const Scalar s = blob_rng.uniform(config.blob_scale_min, config.blob_scale_max);
        for (int c = 0; c < 3; ++c)
            blob.scale[c] = s * blob_rng.uniform(0.85, 1.15);
        // Mild random orientation.
        blob.rot = Vec4(1.0, 0.3 * blob_rng.uniform(-1, 1),
                        0.3 * blob_rng.uniform(-1, 1), 0.3 * blob_rng.uniform(-1, 1));
        blob.rot.normalize();
        for (int c = 0; c < 3; ++c) blob.color[c] = blob_rng.uniform(0.15, 0.95);
        blob.opacity = blob_rng.uniform(0.88, 0.97);
        if (blob.is_static) {
            blob.amplitude = Vec3::Zero();
            blob.phase = 0.0;
        } else {
            const Scalar gain = blob_rng.uniform(0.7, 1.3);
            blob.amplitude = config.motion_amplitude * gain * shared_dir;
            blob.phase = blob_rng.uniform(-0.15, 0.15);
        }
        scene.blobs.push_back(blob);
    }

    // Jittered seed points around the canonical centers.
    const int64_t n_seeds = int64_t(config.n_blobs) * config.seeds_per_blob;
    scene.seed_points.resize(n_seeds, 3);
    scene.seed_blob.resize(size_t(n_seeds));
    for (int i = 0; i < config.n_blobs; ++i) {
        const ToyBlob& blob = scene.blobs[size_t(i)];
        for (int k = 0; k < config.seeds_per_blob; ++k) {
            const int64_t row = int64_t(i) * config.seeds_per_blob + k;
            for (int c = 0; c < 3; ++c)
                scene.seed_points(row, c) =
                    blob.center[c] + 0.5 * blob.scale[c] * seed_rng.normal();
            scene.seed_blob[size_t(row)] = i;
        }
    }

    auto make_split = [&](int n_cams, Scalar azimuth_offset, SceneManifest& man,
                          std::vector<ImageF>& images) {
        man.width = config.width;
        man.height = config.height;
        man.fov_x = config.fov_x;
        man.near = 0.05;
        man.far = 3.0 * config.cam_radius;
        for (int k = 0; k < n_cams; ++k) {
            const Scalar azimuth =
                azimuth_offset + 2.0 * kPi * Scalar(k) / Scalar(n_cams) +
                0.05 * cam_rng.uniform(-1, 1);
            const Scalar elevation =
                (k % 2 == 0 ? 0.15 : 0.42) + 0.05 * cam_rng.uniform(-1, 1);
            for (int s = 0; s < config.n_timestamps; ++s) {
                const Scalar t = config.n_timestamps > 1
                                     ? Scalar(s) / Scalar(config.n_timestamps - 1)
                                     : 0.0;
                const Camera cam = toy_camera(config, azimuth, elevation, t);
                FrameSpec frame;
                frame.cam_to_world = cam_to_world(cam);
                frame.time = t;
                man.frames.push_back(frame);
                images.push_back(to_image(render_toy_truth(scene, cam)));
            }
        }
    };
    make_split(config.n_train_cams, 0.0, scene.train_manifest, scene.train_images);
    make_split(config.n_test_cams, kPi / Scalar(config.n_train_cams),
               scene.test_manifest, scene.test_images);

    // Scene box: canonical centers plus motion extremes.
    Vec3 lo = scene.blobs[0].center, hi = scene.blobs[0].center;
    for (const ToyBlob& b : scene.blobs) {
        for (Scalar t : {0.0, 0.5, 1.0}) {
            const Vec3 p = b.position(t);
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
    }
    for (SceneManifest* man : {&scene.train_manifest, &scene.test_manifest}) {
        man->has_aabb = true;
        man->aabb_min = lo - Vec3::Constant(0.3);
        man->aabb_max = hi + Vec3::Constant(0.3);
    }
    return scene;
}

void write_toy_scene(const std::string& dir, const ToyScene& scene) {
    fs::create_directories(dir);
    fs::create_directories(fs::path(dir) / "train");
    fs::create_directories(fs::path(dir) / "test");

    SceneManifest train = scene.train_manifest;
    SceneManifest test = scene.test_manifest;
    for (size_t i = 0; i < train.frames.size(); ++i) {
        const std::string rel = "train/frame_" + std::to_string(i) + ".png";
        const std::string full = (fs::path(dir) / rel).string();
        write_image(full, scene.train_images[i]);
        train.frames[i].image_path = rel;
    }
    for (size_t i = 0; i < test.frames.size(); ++i) {
        const std::string rel = "test/frame_" + std::to_string(i) + ".png";
        const std::string full = (fs::path(dir) / rel).string();
        write_image(full, scene.test_images[i]);
        test.frames[i].image_path = rel;
    }
    save_seed_points((fs::path(dir) / "seed_points.txt").string(),
                     scene.seed_points);
    train.seed_points_path = "seed_points.txt";

    // save_manifest writes image paths relative via filename only; here the
    // frames live in subdirectories, so write the manifests directly.
    auto dump_manifest = [&](const SceneManifest& man, const std::string& name) {
        json doc;
        doc["width"] = man.width;
        doc["height"] = man.height;
        doc["fov_x"] = man.fov_x;
        doc["near"] = man.near;
        doc["far"] = man.far;
        doc["aabb_min"] = {man.aabb_min[0], man.aabb_min[1], man.aabb_min[2]};
        doc["aabb_max"] = {man.aabb_max[0], man.aabb_max[1], man.aabb_max[2]};
        if (!man.seed_points_path.empty()) doc["seed_points"] = man.seed_points_path;
        doc["frames"] = json::array();
        for (const FrameSpec& f : man.frames) {
            json jf;
            jf["image"] = f.image_path;
            jf["time"] = f.time;
            json rows = json::array();
            for (int r = 0; r < 4; ++r)
                rows.push_back({f.cam_to_world(r, 0), f.cam_to_world(r, 1),
                                f.cam_to_world(r, 2), f.cam_to_world(r, 3)});
            jf["camera_to_world"] = rows;
            doc["frames"].push_back(jf);
        }
        std::ofstream out(fs::path(dir) / name);
        if (!out) throw std::runtime_error("cannot write manifest in " + dir);
        out << doc.dump(1) << "\n";
    };
    dump_manifest(train, "manifest.json");
    dump_manifest(test, "test_manifest.json");

    json traj;
    traj["seed"] = scene.seed;
    traj["blobs"] = json::array();
    for (const ToyBlob& b : scene.blobs) {
        json jb;
        jb["center"] = {b.center[0], b.center[1], b.center[2]};
        jb["amplitude"] = {b.amplitude[0], b.amplitude[1], b.amplitude[2]};
        jb["phase"] = b.phase;
        jb["scale"] = {b.scale[0], b.scale[1], b.scale[2]};
        jb["color"] = {b.color[0], b.color[1], b.color[2]};
        jb["opacity"] = b.opacity;
        jb["static"] = b.is_static;
        json positions = json::array();
        for (int s = 0; s < scene.config.n_timestamps; ++s) {
            const Scalar t = scene.config.n_timestamps > 1
                                 ? Scalar(s) / Scalar(scene.config.n_timestamps - 1)
                                 : 0.0;
            const Vec3 p = b.position(t);
            positions.push_back({t, p[0], p[1], p[2]});
        }
        jb["trajectory"] = positions;
        traj["blobs"].push_back(jb);
    }
    std::ofstream tout(fs::path(dir) / "trajectories.json");
    tout << traj.dump(1) << "\n";
}

} // namespace dsplat
