#pragma once

#include "dsplat/deform.hpp"
#include "dsplat/gaussians.hpp"
#include "dsplat/hashenc.hpp"
#include "dsplat/image.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dsplat {

struct FrameSpec {
    std::string image_path; // resolved relative to the manifest directory
    Mat4 cam_to_world = Mat4::Identity();
    Scalar time = 0.0;
};

struct SceneManifest {
    int width = 0, height = 0; // 0 = read from the first image
    Scalar fov_x = 0.0;        // radians; exactly one of fov_x/focal set
    Scalar focal = 0.0;        // pixels
    Scalar near = 0.01, far = 100.0;
    bool has_aabb = false;
    Vec3 aabb_min = Vec3::Zero(), aabb_max = Vec3::Zero();
    std::string seed_points_path;
    std::vector<FrameSpec> frames;

    Camera camera(size_t frame) const;
};

// Neutral JSON schema with documented aliases for the transforms layout used
// by the D-NeRF family (camera_angle_x / file_path / transform_matrix, with
// the OpenGL-to-CV axis flip applied). Validates rotations (orthonormal to
// 1e-6) and normalizes frame-index timestamps into [0,1].
SceneManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const SceneManifest& manifest);

// xyz or xyz-rgb rows, whitespace separated; '#' comments.
MatX load_seed_points(const std::string& path);
void save_seed_points(const std::string& path, const MatX& positions);

// ---------------------------------------------------------------------------
// Checkpoints: "DSPL" magic, versioned little-endian sections with length
// prefixes and per-section CRC32. Profile 0 stores f64 (training), profile 1
// stores the compact f32 export measured by the storage report. Layout
// details in docs/formats.md.

inline constexpr uint32_t kCheckpointVersion = 1;
inline constexpr uint32_t kProfileTrain = 0;
inline constexpr uint32_t kProfileExport = 1;

// Per-point export record: mu(3) rot(4) log_scale(3) opacity(1) mask(1) and
// two padding slots, 14 values total.
inline constexpr int64_t kPointRecordValues = 14;
// The representation this format replaces: 11 geometric floats plus 48
// third-order SH color coefficients per point.
inline constexpr int64_t kShBaselineValues = 59;

struct CheckpointData {
    GaussianCloud cloud;
    DeformNet net;
    HashColorField field;
    std::string config_text;
    uint64_t iteration = 0;
    uint32_t profile = kProfileTrain;
};

void save_checkpoint(const std::string& path, const CheckpointData& data,
                     uint32_t profile);
CheckpointData load_checkpoint(const std::string& path);

struct StorageReport {
    int64_t point_count = 0;
    int64_t per_point_bytes = 0;
    int64_t point_payload_bytes = 0;
    int64_t deform_bytes = 0;
    int64_t hash_table_bytes = 0;
    int64_t decoder_bytes = 0;
    int64_t shared_bytes = 0; // deform + hash + decoder
    int64_t total_bytes = 0;  // point payload + shared
    int64_t sh_baseline_bytes = 0;
    double ratio_vs_baseline = 0.0;
};

// Export-profile accounting (f32). `override_point_count` > 0 recomputes the
// per-point figures for a hypothetical cloud size.
StorageReport storage_report(const CheckpointData& data,
                             int64_t override_point_count = 0);

std::string format_storage_report(const StorageReport& r);
std::string storage_report_json(const StorageReport& r);

} // namespace dsplat
