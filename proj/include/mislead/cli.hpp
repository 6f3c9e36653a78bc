#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "mislead/common.hpp"
#include "mislead/data.hpp"
#include "mislead/metrics.hpp"
#include "mislead/synthgen.hpp"
#include "mislead/trainer.hpp"

namespace mislead::cli {

struct EmptyReport : ConfigError {
    using ConfigError::ConfigError;
};

// The run configuration file: one JSON object with four optional sections.
// Every key has a default, so {} is a complete configuration; unknown keys
// anywhere are an error.
struct Paths {
    std::string manifest;       // dataset manifest consumed by `train`
    std::string out_dir = ".";  // where `train` writes its artifacts
};

struct EvalOpts {
    data::Split split = data::Split::test;
    metrics::GroupBy group_by = metrics::GroupBy::subgroup;
    double threshold = metrics::kDefaultThreshold;
    std::uint64_t seed = 0;  // per-image disturbance seeds derive from this
};

struct RunConfig {
    synth::SynthConfig synth;  // subgroup_proportions defaults to 8 equal groups
    train::TrainConfig train;
    Paths paths;
    EvalOpts report;
};

// Reads the file as JSON; an empty path yields an empty object.
nlohmann::json load_config_tree(const std::string& path);

// Applies one `a.b.c=value` override, creating intermediate objects. The
// value is parsed as JSON when possible and kept as a string otherwise.
void apply_override(nlohmann::json& tree, const std::string& keyval);

RunConfig run_config_from_json(const nlohmann::json& tree);

// Full command dispatch; returns the process exit code (0 ok, 2 config
// error, 3 data error, 4 numerical failure).
int run_cli(int argc, const char* const* argv);

}  // namespace mislead::cli
