#include "dsplat/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <type_traits>
#include <utility>

namespace dsplat {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    size_t b = s.find_last_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

struct Field {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    std::istringstream is(value);
    T out;
    if (!(is >> out))
        throw std::runtime_error("config: bad value for " + key + ": " + value);
    return out;
}

std::string format_number(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> f;
        auto num = [&f](const std::string& key, auto accessor) {
            f[key] = Field{
                [key, accessor](RunConfig& c, const std::string& v) {
                    using T = std::remove_reference_t<decltype(accessor(c))>;
                    accessor(c) = parse_number<T>(key, v);
                },
                [accessor](const RunConfig& c) {
                    using T = std::remove_reference_t<decltype(accessor(
                        std::declval<RunConfig&>()))>;
                    const T v = accessor(const_cast<RunConfig&>(c));
                    if constexpr (std::is_integral_v<T>)
                        return std::to_string(v);
                    else
                        return format_number(double(v));
                },
            };
        };
        f["preset"] = Field{
            [](RunConfig& c, const std::string& v) {
                if (v == "full") {
                    const TrainConfig base = TrainConfig::full_scale();
                    c.train = base;
                } else if (v == "desk") {
                    c.train = TrainConfig::desk_scale();
                } else {
                    throw std::runtime_error("config: unknown preset: " + v);
                }
                c.preset = v;
            },
            [](const RunConfig& c) { return c.preset; },
        };
        f["dataset"] = Field{
            [](RunConfig& c, const std::string& v) { c.dataset = v; },
            [](const RunConfig& c) { return c.dataset; },
        };
        f["out"] = Field{
            [](RunConfig& c, const std::string& v) { c.out = v; },
            [](const RunConfig& c) { return c.out; },
        };
        f["background"] = Field{
            [](RunConfig& c, const std::string& v) {
                std::istringstream is(v);
                if (!(is >> c.train.background[0] >> c.train.background[1] >>
                      c.train.background[2]))
                    throw std::runtime_error("config: background needs 3 values");
            },
            [](const RunConfig& c) {
                std::ostringstream os;
                os << c.train.background[0] << " " << c.train.background[1] << " "
                   << c.train.background[2];
                return os.str();
            },
        };
        f["ablate_deform"] = Field{
            [](RunConfig& c, const std::string& v) {
                c.train.ablate_deform = (v == "1" || v == "true");
            },
            [](const RunConfig& c) {
                return std::string(c.train.ablate_deform ? "true" : "false");
            },
        };
        num("seed", [](RunConfig& c) -> uint64_t& { return c.train.seed; });
        num("iters", [](RunConfig& c) -> int64_t& { return c.train.total_iters; });
        num("warmup_iters",
            [](RunConfig& c) -> int64_t& { return c.train.warmup_iters; });
        num("activate_static",
            [](RunConfig& c) -> int64_t& { return c.train.activate_static; });
        num("activate_denoise",
            [](RunConfig& c) -> int64_t& { return c.train.activate_denoise; });
        num("w_dn", [](RunConfig& c) -> Scalar& { return c.train.weights.w_dn; });
        num("w_s", [](RunConfig& c) -> Scalar& { return c.train.weights.w_s; });
        num("w_con", [](RunConfig& c) -> Scalar& { return c.train.weights.w_con; });
        num("w_m", [](RunConfig& c) -> Scalar& { return c.train.weights.w_m; });
        num("lambda_dssim",
            [](RunConfig& c) -> Scalar& { return c.train.weights.lambda_dssim; });
        num("static_threshold",
            [](RunConfig& c) -> Scalar& { return c.train.static_threshold; });
        num("lr_deform_start",
            [](RunConfig& c) -> Scalar& { return c.train.lr_deform_start; });
        num("lr_deform_end",
            [](RunConfig& c) -> Scalar& { return c.train.lr_deform_end; });
        num("lr_hash_start",
            [](RunConfig& c) -> Scalar& { return c.train.lr_hash_start; });
        num("lr_hash_end",
            [](RunConfig& c) -> Scalar& { return c.train.lr_hash_end; });
        num("lr_position_start",
            [](RunConfig& c) -> Scalar& { return c.train.lr_position_start; });
        num("lr_position_end",
            [](RunConfig& c) -> Scalar& { return c.train.lr_position_end; });
        num("lr_rotation",
            [](RunConfig& c) -> Scalar& { return c.train.lr_rotation; });
        num("lr_scale", [](RunConfig& c) -> Scalar& { return c.train.lr_scale; });
        num("lr_opacity",
            [](RunConfig& c) -> Scalar& { return c.train.lr_opacity; });
        num("lr_mask", [](RunConfig& c) -> Scalar& { return c.train.lr_mask; });
        num("densify_from",
            [](RunConfig& c) -> int64_t& { return c.train.densify_from; });
        num("densify_until",
            [](RunConfig& c) -> int64_t& { return c.train.densify_until; });
        num("densify_interval",
            [](RunConfig& c) -> int64_t& { return c.train.densify_interval; });
        num("densify_grad_threshold", [](RunConfig& c) -> Scalar& {
            return c.train.densify_grad_threshold;
        });
        num("split_scale_fraction", [](RunConfig& c) -> Scalar& {
            return c.train.split_scale_fraction;
        });
        num("opacity_prune_threshold", [](RunConfig& c) -> Scalar& {
            return c.train.opacity_prune_threshold;
        });
        num("opacity_reset_interval", [](RunConfig& c) -> int64_t& {
            return c.train.opacity_reset_interval;
        });
        num("max_points",
            [](RunConfig& c) -> int64_t& { return c.train.max_points; });
        num("mask_prune_interval",
            [](RunConfig& c) -> int64_t& { return c.train.mask_prune_interval; });
        num("hash_table_log2",
            [](RunConfig& c) -> int& { return c.train.hash_table_log2; });
        num("aabb_margin",
            [](RunConfig& c) -> Scalar& { return c.train.aabb_margin; });
        num("fallback_point_scale", [](RunConfig& c) -> Scalar& {
            return c.train.fallback_point_scale;
        });
        num("snapshot_stride",
            [](RunConfig& c) -> int64_t& { return c.train.snapshot_stride; });
        num("window_capacity",
            [](RunConfig& c) -> int64_t& { return c.train.window_capacity; });
        num("random_init_count",
            [](RunConfig& c) -> int64_t& { return c.random_init_count; });
        num("checkpoint_interval",
            [](RunConfig& c) -> int64_t& { return c.checkpoint_interval; });
        return f;
    }();
    return table;
}

} // namespace

void apply_config_value(RunConfig& cfg, const std::string& key,
                        const std::string& value) {
    auto it = fields().find(key);
    if (it == fields().end())
        throw std::runtime_error("config: unknown key: " + key);
    it->second.set(cfg, value);
}

RunConfig parse_config_text(const std::string& text) {
    // The preset resets the schedule baseline, so it applies first.
    std::vector<std::pair<std::string, std::string>> entries;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": expected key = value");
        entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    RunConfig cfg;
    for (const auto& [k, v] : entries)
        if (k == "preset") apply_config_value(cfg, k, v);
    for (const auto& [k, v] : entries)
        if (k != "preset") apply_config_value(cfg, k, v);
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config_text(text.str());
}

std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream os;
    // preset first so re-parsing applies the baseline before overrides.
    os << "preset = " << cfg.preset << "\n";
    for (const auto& [key, field] : fields()) {
        if (key == "preset") continue;
        os << key << " = " << field.get(cfg) << "\n";
    }
    return os.str();
}

} // namespace dsplat
