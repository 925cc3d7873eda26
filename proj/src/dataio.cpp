#include "dsplat/dataio.hpp"

#include <json.hpp>
#include <zlib.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dsplat {

namespace fs = std::filesystem;
using nlohmann::json;

Camera SceneManifest::camera(size_t frame) const {
    if (frame >= frames.size())
        throw std::out_of_range("manifest: frame index out of range");
    const FrameSpec& f = frames[frame];
    Camera cam;
    const Mat3 rot = f.cam_to_world.topLeftCorner<3, 3>();
    const Vec3 pos = f.cam_to_world.topRightCorner<3, 1>();
    cam.world_to_cam = Mat4::Identity();
    cam.world_to_cam.topLeftCorner<3, 3>() = rot.transpose();
    cam.world_to_cam.topRightCorner<3, 1>() = -rot.transpose() * pos;
    cam.width = width;
    cam.height = height;
    if (focal > 0.0) {
        cam.fx = cam.fy = focal;
    } else {
        cam.fx = cam.fy = 0.5 * Scalar(width) / std::tan(0.5 * fov_x);
    }
    cam.cx = 0.5 * Scalar(width);
    cam.cy = 0.5 * Scalar(height);
    cam.near = near;
    cam.far = far;
    cam.time = f.time;
    return cam;
}

namespace {

Mat4 parse_matrix(const json& m, size_t frame_idx) {
    if (!m.is_array() || m.size() != 4)
        throw std::runtime_error("manifest frame " + std::to_string(frame_idx) +
                                 ": camera matrix must be 4x4");
    Mat4 out;
    for (int r = 0; r < 4; ++r) {
        const json& row = m[size_t(r)];
        if (!row.is_array() || row.size() != 4)
            throw std::runtime_error("manifest frame " + std::to_string(frame_idx) +
                                     ": camera matrix must be 4x4");
        for (int c = 0; c < 4; ++c) out(r, c) = row[size_t(c)].get<double>();
    }
    return out;
}

void check_rigid(const Mat4& m, size_t frame_idx) {
    const Mat3 rot = m.topLeftCorner<3, 3>();
    const Mat3 err = rot.transpose() * rot - Mat3::Identity();
    if (err.cwiseAbs().maxCoeff() > 1e-6)
        throw std::runtime_error("manifest frame " + std::to_string(frame_idx) +
                                 ": rotation is not orthonormal (field "
                                 "camera_to_world/transform_matrix)");
}

} // namespace

SceneManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw std::runtime_error("manifest parse error in " + path + ": " +
                                 e.what());
    }

    SceneManifest m;
    const bool alias_mode = doc.contains("camera_angle_x");
    if (doc.contains("width")) m.width = doc["width"].get<int>();
    if (doc.contains("height")) m.height = doc["height"].get<int>();
    if (doc.contains("fov_x")) m.fov_x = doc["fov_x"].get<double>();
    if (doc.contains("camera_angle_x")) m.fov_x = doc["camera_angle_x"].get<double>();
    if (doc.contains("focal")) m.focal = doc["focal"].get<double>();
    if (doc.contains("near")) m.near = doc["near"].get<double>();
    if (doc.contains("far")) m.far = doc["far"].get<double>();
    if (doc.contains("aabb_min") && doc.contains("aabb_max")) {
        m.has_aabb = true;
        for (int c = 0; c < 3; ++c) {
            m.aabb_min[c] = doc["aabb_min"][size_t(c)].get<double>();
            m.aabb_max[c] = doc["aabb_max"][size_t(c)].get<double>();
        }
    }
    const fs::path base = fs::path(path).parent_path();
    if (doc.contains("seed_points"))
        m.seed_points_path = (base / doc["seed_points"].get<std::string>()).string();

    if (!doc.contains("frames") || !doc["frames"].is_array() ||
        doc["frames"].empty())
        throw std::runtime_error("manifest has no frames: " + path);

    bool any_time = false;
    size_t idx = 0;
    for (const json& jf : doc["frames"]) {
        FrameSpec f;
        std::string rel;
        if (jf.contains("image")) rel = jf["image"].get<std::string>();
        else if (jf.contains("file_path")) rel = jf["file_path"].get<std::string>();
        else
            throw std::runtime_error("manifest frame " + std::to_string(idx) +
                                     ": missing image/file_path");
        fs::path img = base / rel;
        if (!img.has_extension()) img += ".png";
        f.image_path = img.string();

        if (jf.contains("camera_to_world")) {
            f.cam_to_world = parse_matrix(jf["camera_to_world"], idx);
        } else if (jf.contains("transform_matrix")) {
            f.cam_to_world = parse_matrix(jf["transform_matrix"], idx);
            // OpenGL convention (-z forward, y up) to CV (+z forward, y down).
            f.cam_to_world.col(1).head<3>() *= -1.0;
            f.cam_to_world.col(2).head<3>() *= -1.0;
        } else {
            throw std::runtime_error("manifest frame " + std::to_string(idx) +
                                     ": missing camera_to_world/transform_matrix");
        }
        check_rigid(f.cam_to_world, idx);

        if (jf.contains("time")) {
            f.time = jf["time"].get<double>();
            any_time = true;
        } else {
            f.time = double(idx);
        }
        m.frames.push_back(f);
        ++idx;
    }
    if (!any_time && m.frames.size() > 1) {
        // No timestamps given: spread frame indices over [0,1].
        for (size_t i = 0; i < m.frames.size(); ++i)
            m.frames[i].time = double(i) / double(m.frames.size() - 1);
    }
    Scalar max_time = 0.0;
    for (const FrameSpec& f : m.frames) {
        if (f.time < 0.0)
            throw std::runtime_error("manifest: negative timestamp (field time)");
        max_time = std::max(max_time, f.time);
    }
    if (max_time > 1.0)
        for (FrameSpec& f : m.frames) f.time /= max_time;

    if (m.fov_x <= 0.0 && m.focal <= 0.0)
        throw std::runtime_error("manifest: needs fov_x/camera_angle_x or focal");
    if (m.width <= 0 || m.height <= 0) {
        const ImageF first = read_image(m.frames[0].image_path);
        m.width = first.width;
        m.height = first.height;
    }
    return m;
}

void save_manifest(const std::string& path, const SceneManifest& m) {
    json doc;
    doc["width"] = m.width;
    doc["height"] = m.height;
    if (m.fov_x > 0.0) doc["fov_x"] = m.fov_x;
    if (m.focal > 0.0) doc["focal"] = m.focal;
    doc["near"] = m.near;
    doc["far"] = m.far;
    if (m.has_aabb) {
        doc["aabb_min"] = {m.aabb_min[0], m.aabb_min[1], m.aabb_min[2]};
        doc["aabb_max"] = {m.aabb_max[0], m.aabb_max[1], m.aabb_max[2]};
    }
    if (!m.seed_points_path.empty())
        doc["seed_points"] =
            fs::path(m.seed_points_path).filename().string();
    doc["frames"] = json::array();
    for (const FrameSpec& f : m.frames) {
        json jf;
        jf["image"] = fs::path(f.image_path).filename().string();
        jf["time"] = f.time;
        json rows = json::array();
        for (int r = 0; r < 4; ++r)
            rows.push_back({f.cam_to_world(r, 0), f.cam_to_world(r, 1),
                            f.cam_to_world(r, 2), f.cam_to_world(r, 3)});
        jf["camera_to_world"] = rows;
        doc["frames"].push_back(jf);
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    out << doc.dump(1) << "\n";
}

MatX load_seed_points(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open seed points: " + path);
    std::vector<Vec3> pts;
    std::string line;
    while (std::getline(in, line)) {
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        double x, y, z;
        if (!(ls >> x >> y >> z)) continue;
        pts.emplace_back(x, y, z); // trailing rgb columns ignored
    }
    if (pts.empty()) throw std::runtime_error("no seed points in " + path);
    MatX out(int64_t(pts.size()), 3);
    for (size_t i = 0; i < pts.size(); ++i) out.row(int64_t(i)) = pts[i].transpose();
    return out;
}

void save_seed_points(const std::string& path, const MatX& positions) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write seed points: " + path);
    out.precision(17);
    out << "# x y z\n";
    for (int64_t i = 0; i < positions.rows(); ++i)
        out << positions(i, 0) << " " << positions(i, 1) << " "
            << positions(i, 2) << "\n";
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'D', 'S', 'P', 'L'};

enum SectionId : uint32_t {
    kSectionCloud = 1,
    kSectionDeform = 2,
    kSectionHash = 3,
    kSectionConfig = 4,
    kSectionIteration = 5,
};

struct Writer {
    std::vector<uint8_t> bytes;
    void raw(const void* p, size_t n) {
        const uint8_t* b = static_cast<const uint8_t*>(p);
        bytes.insert(bytes.end(), b, b + n);
    }
    void u32(uint32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
    void i64(int64_t v) { raw(&v, 8); }
    void f64(double v) { raw(&v, 8); }
    void f32(float v) { raw(&v, 4); }
    void value(double v, bool as_f32) {
        if (as_f32) f32(float(v));
        else f64(v);
    }
};

struct Reader {
    const uint8_t* p;
    const uint8_t* end;
    void raw(void* out, size_t n) {
        if (p + n > end) throw std::runtime_error("checkpoint: truncated data");
        std::memcpy(out, p, n);
        p += n;
    }
    uint32_t u32() { uint32_t v; raw(&v, 4); return v; }
    uint64_t u64() { uint64_t v; raw(&v, 8); return v; }
    int64_t i64() { int64_t v; raw(&v, 8); return v; }
    double f64() { double v; raw(&v, 8); return v; }
    float f32() { float v; raw(&v, 4); return v; }
    double value(bool as_f32) { return as_f32 ? double(f32()) : f64(); }
};

void write_array(Writer& w, const ad::Array& a, bool as_f32) {
    w.u32(uint32_t(a.rank()));
    for (int64_t d : a.shape) w.i64(d);
    for (int64_t i = 0; i < a.size(); ++i) w.value(a.data[i], as_f32);
}

ad::Array read_array(Reader& r, bool as_f32) {
    const uint32_t rank = r.u32();
    if (rank > 4) throw std::runtime_error("checkpoint: bad array rank");
    ad::Shape shape;
    for (uint32_t d = 0; d < rank; ++d) shape.push_back(r.i64());
    ad::Array out = ad::Array::zeros(shape);
    for (int64_t i = 0; i < out.size(); ++i) out.data[i] = r.value(as_f32);
    return out;
}

void append_section(std::vector<uint8_t>& file, uint32_t id,
                    const std::vector<uint8_t>& payload) {
    Writer head;
    head.u32(id);
    head.u64(payload.size());
    file.insert(file.end(), head.bytes.begin(), head.bytes.end());
    file.insert(file.end(), payload.begin(), payload.end());
    const uint32_t crc =
        uint32_t(crc32(0, payload.data(), uInt(payload.size())));
    Writer tail;
    tail.u32(crc);
    file.insert(file.end(), tail.bytes.begin(), tail.bytes.end());
}

} // namespace

void save_checkpoint(const std::string& path, const CheckpointData& data,
                     uint32_t profile) {
    const bool f32 = profile == kProfileExport;
    std::vector<uint8_t> file;
    file.insert(file.end(), kMagic, kMagic + 4);
    {
        Writer head;
        head.u32(kCheckpointVersion);
        head.u32(profile);
        file.insert(file.end(), head.bytes.begin(), head.bytes.end());
    }

    {
        Writer w;
        const GaussianCloud& c = data.cloud;
        const int64_t n = c.count();
        w.u64(uint64_t(n));
        for (int64_t i = 0; i < n; ++i) {
            for (int k = 0; k < 3; ++k) w.value(c.mu.data[i * 3 + k], f32);
            for (int k = 0; k < 4; ++k) w.value(c.rot.data[i * 4 + k], f32);
            for (int k = 0; k < 3; ++k) w.value(c.log_scale.data[i * 3 + k], f32);
            w.value(c.opacity_logit.data[i], f32);
            w.value(c.mask_logit.data[i], f32);
            w.value(0.0, f32); // padding to the 14-value record
            w.value(0.0, f32);
        }
        append_section(file, kSectionCloud, w.bytes);
    }
    {
        Writer w;
        const auto params = data.net.params();
        w.u32(uint32_t(params.size()));
        for (const ad::Array* a : params) write_array(w, *a, f32);
        append_section(file, kSectionDeform, w.bytes);
    }
    {
        Writer w;
        const HashColorField& fld = data.field;
        for (int c = 0; c < 3; ++c) w.f64(fld.aabb_min[c]);
        for (int c = 0; c < 3; ++c) w.f64(fld.aabb_max[c]);
        w.u32(uint32_t(fld.base_resolution));
        w.u32(uint32_t(fld.max_resolution));
        w.u32(uint32_t(fld.table_log2));
        w.u32(uint32_t(fld.tables.size()));
        for (const ad::Array& t : fld.tables) write_array(w, t, f32);
        for (const ad::Array* a : {&fld.dec_w0, &fld.dec_b0, &fld.dec_w1,
                                   &fld.dec_b1, &fld.dec_w2, &fld.dec_b2})
            write_array(w, *a, f32);
        append_section(file, kSectionHash, w.bytes);
    }
    {
        Writer w;
        w.raw(data.config_text.data(), data.config_text.size());
        append_section(file, kSectionConfig, w.bytes);
    }
    {
        Writer w;
        w.u64(data.iteration);
        append_section(file, kSectionIteration, w.bytes);
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(reinterpret_cast<const char*>(file.data()),
              std::streamsize(file.size()));
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::vector<uint8_t> file(size_t(in.tellg()));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(file.data()), std::streamsize(file.size()));
    if (!in) throw std::runtime_error("checkpoint read failed: " + path);

    if (file.size() < 12 || std::memcmp(file.data(), kMagic, 4) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    Reader header{file.data() + 4, file.data() + file.size()};
    const uint32_t version = header.u32();
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint version " + std::to_string(version) +
                                 " unsupported (expected " +
                                 std::to_string(kCheckpointVersion) + "): " + path);
    CheckpointData data;
    data.profile = header.u32();
    const bool f32 = data.profile == kProfileExport;

    bool saw_cloud = false, saw_deform = false, saw_hash = false;
    const uint8_t* at = header.p;
    const uint8_t* end = file.data() + file.size();
    while (at < end) {
        Reader sec{at, end};
        const uint32_t id = sec.u32();
        const uint64_t len = sec.u64();
        if (sec.p + len + 4 > end)
            throw std::runtime_error("checkpoint: truncated section: " + path);
        const uint8_t* payload = sec.p;
        const uint32_t stored_crc =
            (uint32_t(payload[len]) | (uint32_t(payload[len + 1]) << 8) |
             (uint32_t(payload[len + 2]) << 16) |
             (uint32_t(payload[len + 3]) << 24));
        const uint32_t crc = uint32_t(crc32(0, payload, uInt(len)));
        if (crc != stored_crc)
            throw std::runtime_error("checkpoint: checksum failure in section " +
                                     std::to_string(id) + ": " + path);
        Reader r{payload, payload + len};
        switch (id) {
            case kSectionCloud: {
                const int64_t n = int64_t(r.u64());
                GaussianCloud c = GaussianCloud::with_count(n);
                for (int64_t i = 0; i < n; ++i) {
                    for (int k = 0; k < 3; ++k) c.mu.data[i * 3 + k] = r.value(f32);
                    for (int k = 0; k < 4; ++k) c.rot.data[i * 4 + k] = r.value(f32);
                    for (int k = 0; k < 3; ++k)
                        c.log_scale.data[i * 3 + k] = r.value(f32);
                    c.opacity_logit.data[i] = r.value(f32);
                    c.mask_logit.data[i] = r.value(f32);
                    r.value(f32);
                    r.value(f32);
                }
                data.cloud = std::move(c);
                saw_cloud = true;
                break;
            }
            case kSectionDeform: {
                const uint32_t count = r.u32();
                data.net.w.assign(DeformNet::kDepth, ad::Array{});
                data.net.b.assign(DeformNet::kDepth, ad::Array{});
                const auto params = data.net.params();
                if (count != params.size())
                    throw std::runtime_error(
                        "checkpoint: unexpected deform array count");
                for (ad::Array* a : params) *a = read_array(r, f32);
                saw_deform = true;
                break;
            }
            case kSectionHash: {
                HashColorField& fld = data.field;
                for (int c = 0; c < 3; ++c) fld.aabb_min[c] = r.f64();
                for (int c = 0; c < 3; ++c) fld.aabb_max[c] = r.f64();
                fld.base_resolution = int(r.u32());
                fld.max_resolution = int(r.u32());
                const int table_log2 = int(r.u32());
                fld.configure(fld.aabb_min, fld.aabb_max, table_log2);
                const uint32_t n_tables = r.u32();
                if (n_tables != fld.tables.size())
                    throw std::runtime_error("checkpoint: unexpected table count");
                for (ad::Array& t : fld.tables) t = read_array(r, f32);
                for (ad::Array* a : {&fld.dec_w0, &fld.dec_b0, &fld.dec_w1,
                                     &fld.dec_b1, &fld.dec_w2, &fld.dec_b2})
                    *a = read_array(r, f32);
                saw_hash = true;
                break;
            }
            case kSectionConfig: {
                data.config_text.assign(reinterpret_cast<const char*>(payload),
                                        size_t(len));
                break;
            }
            case kSectionIteration: {
                data.iteration = r.u64();
                break;
            }
            default:
                throw std::runtime_error("checkpoint: unknown section " +
                                         std::to_string(id));
        }
        at = payload + len + 4;
    }
    if (!saw_cloud || !saw_deform || !saw_hash)
        throw std::runtime_error("checkpoint: missing sections: " + path);
    return data;
}

StorageReport storage_report(const CheckpointData& data,
                             int64_t override_point_count) {
    StorageReport r;
    r.point_count =
        override_point_count > 0 ? override_point_count : data.cloud.count();
    r.per_point_bytes = kPointRecordValues * 4;
    r.point_payload_bytes = r.point_count * r.per_point_bytes;

    auto array_bytes = [](const std::vector<const ad::Array*>& arrays) {
        int64_t total = 0;
        for (const ad::Array* a : arrays) total += a->size() * 4;
        return total;
    };
    r.deform_bytes = array_bytes(data.net.params());
    for (const ad::Array& t : data.field.tables) r.hash_table_bytes += t.size() * 4;
    r.decoder_bytes =
        array_bytes({&data.field.dec_w0, &data.field.dec_b0, &data.field.dec_w1,
                     &data.field.dec_b1, &data.field.dec_w2, &data.field.dec_b2});
    r.shared_bytes = r.deform_bytes + r.hash_table_bytes + r.decoder_bytes;
    r.total_bytes = r.point_payload_bytes + r.shared_bytes;
    r.sh_baseline_bytes = r.point_count * kShBaselineValues * 4;
    r.ratio_vs_baseline =
        double(r.point_payload_bytes) / double(r.sh_baseline_bytes);
    return r;
}

std::string format_storage_report(const StorageReport& r) {
    std::ostringstream os;
    const auto mb = [](int64_t bytes) { return double(bytes) / 1e6; };
    os << "points:               " << r.point_count << "\n";
    os << "per-point bytes:      " << r.per_point_bytes << " ("
       << kPointRecordValues << " x f32)\n";
    os << "point payload:        " << r.point_payload_bytes << " B  ("
       << mb(r.point_payload_bytes) << " MB)\n";
    os << "deformation network:  " << r.deform_bytes << " B  ("
       << mb(r.deform_bytes) << " MB)\n";
    os << "hash tables:          " << r.hash_table_bytes << " B  ("
       << mb(r.hash_table_bytes) << " MB)\n";
    os << "color decoder:        " << r.decoder_bytes << " B  ("
       << mb(r.decoder_bytes) << " MB)\n";
    os << "shared networks:      " << r.shared_bytes << " B  ("
       << mb(r.shared_bytes) << " MB)\n";
    os << "total:                " << r.total_bytes << " B  ("
       << mb(r.total_bytes) << " MB)\n";
    os << "SH baseline payload:  " << r.sh_baseline_bytes << " B  ("
       << mb(r.sh_baseline_bytes) << " MB, " << kShBaselineValues
       << " x f32 per point)\n";
    os << "point payload ratio:  " << r.ratio_vs_baseline << "\n";
    return os.str();
}

std::string storage_report_json(const StorageReport& r) {
    json doc;
    doc["point_count"] = r.point_count;
    doc["per_point_bytes"] = r.per_point_bytes;
    doc["point_payload_bytes"] = r.point_payload_bytes;
    doc["deform_bytes"] = r.deform_bytes;
    doc["hash_table_bytes"] = r.hash_table_bytes;
    doc["decoder_bytes"] = r.decoder_bytes;
    doc["shared_bytes"] = r.shared_bytes;
    doc["total_bytes"] = r.total_bytes;
    doc["sh_baseline_bytes"] = r.sh_baseline_bytes;
    doc["ratio_vs_baseline"] = r.ratio_vs_baseline;
    return doc.dump(1);
}

} // namespace dsplat
