#pragma once

#include "dsplat/trainer.hpp"

#include <string>

namespace dsplat {

// Run settings around the trainer: `key = value` text, '#' comments, unknown
// keys rejected. `preset` (full | desk) picks the schedule baseline and is
// applied before the remaining keys. Keys are documented in docs/cli.md.
struct RunConfig {
    std::string preset = "full";
    TrainConfig train;
    std::string dataset;
    std::string out = "out";
    int64_t random_init_count = 0;
    int64_t checkpoint_interval = 0; // 0 = final checkpoint only
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);

// Single key override (CLI flags reuse the file grammar).
void apply_config_value(RunConfig& cfg, const std::string& key,
                        const std::string& value);

// Canonical echo of every key; parse(serialize(x)) == x.
std::string serialize_config(const RunConfig& cfg);

} // namespace dsplat
