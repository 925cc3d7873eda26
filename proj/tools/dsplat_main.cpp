#include "dsplat/config.hpp"
#include "dsplat/dataio.hpp"
#include "dsplat/metrics.hpp"
#include "dsplat/pipeline.hpp"
#include "dsplat/toyscene.hpp"
#include "dsplat/trainer.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace dsplat;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<FrameData> load_frames(const SceneManifest& manifest) {
    std::vector<FrameData> frames;
    frames.reserve(manifest.frames.size());
    for (size_t i = 0; i < manifest.frames.size(); ++i) {
        FrameData f;
        f.camera = manifest.camera(i);
        f.image = read_image(manifest.frames[i].image_path);
        if (f.image.width != manifest.width || f.image.height != manifest.height)
            throw std::runtime_error("frame " + std::to_string(i) +
                                     ": image size does not match manifest");
        frames.push_back(std::move(f));
    }
    return frames;
}

int cmd_train(const RunConfig& cfg) {
    if (cfg.dataset.empty())
        throw UsageError("train: missing dataset path (--dataset or config)");
    if (!fs::exists(cfg.dataset))
        throw UsageError("train: dataset not found: " + cfg.dataset);

    const SceneManifest manifest = load_manifest(cfg.dataset);
    Trainer trainer(cfg.train, load_frames(manifest));
    if (!manifest.seed_points_path.empty()) {
        trainer.init_from_points(load_seed_points(manifest.seed_points_path));
    } else if (cfg.random_init_count > 0) {
        trainer.init_random(cfg.random_init_count);
    } else {
        throw UsageError("train: no seed points and random_init_count is 0");
    }

    fs::create_directories(cfg.out);
    std::ofstream loss_csv(fs::path(cfg.out) / "loss.csv");
    write_loss_csv_header(loss_csv);

    const std::string config_echo = serialize_config(cfg);
    auto checkpoint = [&](const std::string& name, uint32_t profile) {
        CheckpointData data;
        data.cloud = trainer.cloud;
        data.net = trainer.net;
        data.field = trainer.field;
        data.config_text = config_echo;
        data.iteration = trainer.iteration;
        save_checkpoint((fs::path(cfg.out) / name).string(), data, profile);
    };

    while (int64_t(trainer.iteration) < cfg.train.total_iters) {
        const LossRecord rec = trainer.step();
        write_loss_csv_row(loss_csv, rec);
        if (cfg.checkpoint_interval > 0 &&
            int64_t(trainer.iteration) % cfg.checkpoint_interval == 0 &&
            int64_t(trainer.iteration) < cfg.train.total_iters)
            checkpoint("ckpt_" + std::to_string(trainer.iteration) + ".dsplat",
                       kProfileTrain);
    }
    checkpoint("final.dsplat", kProfileTrain);
    checkpoint("export.dsplat", kProfileExport);
    std::cout << "trained " << trainer.iteration << " iterations, "
              << trainer.cloud.count() << " points\n";
    return kExitOk;
}

int cmd_render(const std::string& ckpt_path, const std::string& manifest_path,
               size_t frame_idx, double time_override, bool has_time,
               const std::string& out_path, bool want_depth) {
    const CheckpointData ckpt = load_checkpoint(ckpt_path);
    const SceneManifest manifest = load_manifest(manifest_path);
    if (frame_idx >= manifest.frames.size())
        throw UsageError("render: frame index out of range");
    Camera cam = manifest.camera(frame_idx);
    if (has_time) {
        if (time_override < 0.0 || time_override > 1.0)
            throw UsageError("render: time must be in [0,1]");
        cam.time = time_override;
    }

    PipelineSettings ps;
    ps.raster.width = cam.width;
    ps.raster.height = cam.height;
    const RenderOutput out =
        render_frame(ckpt.cloud, ckpt.net, ckpt.field, cam, ps);

    ImageF img;
    img.width = out.width;
    img.height = out.height;
    img.data = out.rgb;
    write_image(out_path, img);
    std::cout << "wrote " << out_path << "\n";
    if (want_depth) {
        const fs::path p(out_path);
        const std::string depth_path =
            (p.parent_path() / (p.stem().string() + "_depth" + p.extension().string()))
                .string();
        write_image(depth_path,
                    normalize_to_image(out.depth, out.alpha, out.width, out.height));
        std::cout << "wrote " << depth_path << "\n";
    }
    return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& manifest_path,
             const std::string& out_csv) {
    const CheckpointData ckpt = load_checkpoint(ckpt_path);
    const SceneManifest manifest = load_manifest(manifest_path);

    std::ostringstream csv;
    csv << "frame,psnr,ssim\n";
    double sum_psnr = 0.0, sum_ssim = 0.0;
    double render_seconds = 0.0;
    for (size_t i = 0; i < manifest.frames.size(); ++i) {
        const Camera cam = manifest.camera(i);
        const ImageF target = read_image(manifest.frames[i].image_path);
        PipelineSettings ps;
        ps.raster.width = cam.width;
        ps.raster.height = cam.height;
        const auto start = std::chrono::steady_clock::now();
        const RenderOutput out =
            render_frame(ckpt.cloud, ckpt.net, ckpt.field, cam, ps);
        render_seconds +=
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                .count();
        ImageF img;
        img.width = out.width;
        img.height = out.height;
        img.data = out.rgb;
        const double p = psnr(img, target);
        const double s = ssim(img, target);
        sum_psnr += p;
        sum_ssim += s;
        csv << i << ',' << p << ',' << s << '\n';
    }
    const double n = double(manifest.frames.size());
    csv << "mean," << sum_psnr / n << ',' << sum_ssim / n << '\n';
    const double fps = n / std::max(render_seconds, 1e-9);
    std::cout << "mean psnr " << sum_psnr / n << " dB, mean ssim " << sum_ssim / n
              << ", " << fps << " fps\n";
    if (!out_csv.empty()) {
        std::ofstream out(out_csv);
        if (!out) throw std::runtime_error("cannot write " + out_csv);
        out << csv.str() << "fps," << fps << ",\n";
        std::cout << "wrote " << out_csv << "\n";
    } else {
        std::cout << csv.str();
    }
    return kExitOk;
}

int cmd_info(const std::string& ckpt_path, bool as_json, int64_t hypothetical_n) {
    const CheckpointData ckpt = load_checkpoint(ckpt_path);
    const StorageReport report = storage_report(ckpt, hypothetical_n);
    if (as_json) std::cout << storage_report_json(report) << "\n";
    else std::cout << format_storage_report(report);
    return kExitOk;
}

int cmd_make_toy(const std::string& out_dir, uint64_t seed) {
    const ToyScene scene = make_toy_scene(seed, ToyConfig::preset_default());
    write_toy_scene(out_dir, scene);
    std::cout << "wrote toy scene (" << scene.train_manifest.frames.size()
              << " train / " << scene.test_manifest.frames.size()
              << " test frames) to " << out_dir << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"deformable 3D Gaussian splatting trainer/renderer"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "optimize a scene");
    std::string train_config, train_dataset, train_out;
    int64_t train_iters = -1;
    int64_t train_seed = -1;
    std::string train_preset;
    train->add_option("--config", train_config, "config file (key = value)");
    train->add_option("--dataset", train_dataset, "manifest path");
    train->add_option("--out", train_out, "output directory");
    train->add_option("--iters", train_iters, "override total iterations");
    train->add_option("--seed", train_seed, "override run seed");
    train->add_option("--preset", train_preset, "schedule preset (full|desk)");

    // render
    auto* render = app.add_subcommand("render", "render a checkpoint");
    std::string render_ckpt, render_manifest, render_out = "render.png";
    size_t render_frame_idx = 0;
    double render_time = 0.0;
    bool render_depth = false;
    render->add_option("--checkpoint", render_ckpt, "checkpoint path")->required();
    render->add_option("--manifest", render_manifest, "manifest for cameras")
        ->required();
    render->add_option("--frame", render_frame_idx, "camera frame index");
    auto* time_opt =
        render->add_option("--time", render_time, "timestamp override in [0,1]");
    render->add_flag("--depth", render_depth, "also write a depth map");
    render->add_option("--out", render_out, "output image (png/ppm)");

    // eval
    auto* eval = app.add_subcommand("eval", "PSNR/SSIM against a manifest");
    std::string eval_ckpt, eval_manifest, eval_out;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
    eval->add_option("--manifest", eval_manifest, "manifest with target images")
        ->required();
    eval->add_option("--out", eval_out, "report CSV path");

    // info
    auto* info = app.add_subcommand("info", "storage report for a checkpoint");
    std::string info_ckpt;
    bool info_json = false;
    int64_t info_n = 0;
    info->add_option("--checkpoint", info_ckpt, "checkpoint path")->required();
    info->add_flag("--json", info_json, "machine-readable output");
    info->add_option("--hypothetical-n", info_n,
                     "recompute point payload for this point count");

    // make-toy
    auto* toy = app.add_subcommand("make-toy", "generate the toy dataset");
    std::string toy_out;
    uint64_t toy_seed = 0;
    toy->add_option("--out", toy_out, "output directory")->required();
    toy->add_option("--seed", toy_seed, "generator seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (train->parsed()) {
            RunConfig cfg;
            if (!train_config.empty()) {
                if (!fs::exists(train_config))
                    throw UsageError("train: config not found: " + train_config);
                cfg = load_config_file(train_config);
            }
            if (!train_preset.empty()) apply_config_value(cfg, "preset", train_preset);
            if (!train_dataset.empty()) cfg.dataset = train_dataset;
            if (!train_out.empty()) cfg.out = train_out;
            if (train_iters >= 0) cfg.train.total_iters = train_iters;
            if (train_seed >= 0) cfg.train.seed = uint64_t(train_seed);
            return cmd_train(cfg);
        }
        if (render->parsed())
            return cmd_render(render_ckpt, render_manifest, render_frame_idx,
                              render_time, time_opt->count() > 0, render_out,
                              render_depth);
        if (eval->parsed()) return cmd_eval(eval_ckpt, eval_manifest, eval_out);
        if (info->parsed()) return cmd_info(info_ckpt, info_json, info_n);
        if (toy->parsed()) return cmd_make_toy(toy_out, toy_seed);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
