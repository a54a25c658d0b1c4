#pragma once

#include <cstdint>
#include <string>

#include "modalmeta/meta.hpp"
#include "modalmeta/taskgen.hpp"

namespace modalmeta {

/// Everything a run needs, bundled for the config file and the checkpoint
/// snapshot. All fields have working defaults; a config file only lists the
/// keys it overrides.
struct RunConfig {
    DistConfig dist;
    ModelConfig model;
    InnerConfig inner;
    MetaConfig meta;
    std::uint64_t seed = 0;
    std::size_t eval_every = 500;  // hook cadence during training (0 = never)
    std::size_t eval_tasks = 500;  // held-out task count for eval/embed

    RunConfig();  // default modes: sinusoid + linear

    void validate() const;  // throws std::invalid_argument
};

/// Strict JSON schema: unknown keys are rejected by name, values are
/// type-checked, and enums go through the *_from_name parsers. See README
/// for the full key list.
RunConfig parse_config_text(const std::string& text);

/// Canonical JSON rendering; parse_config_text(config_to_text(c)) == c.
std::string config_to_text(const RunConfig& config);

/// Reads and parses `path`; a missing or unreadable file is reported as a
/// config error naming the path.
RunConfig load_config_file(const std::string& path);

bool config_equal(const RunConfig& a, const RunConfig& b);

}  // namespace modalmeta
