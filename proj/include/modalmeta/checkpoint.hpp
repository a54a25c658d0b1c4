#pragma once

#include <string>

#include "modalmeta/config.hpp"
#include "modalmeta/meta.hpp"

namespace modalmeta {

inline constexpr int kCheckpointVersion = 1;

/// Serializable snapshot of a run: the config it was launched with plus the
/// full trainer state (parameters, Adam moments, iteration counter).
struct Checkpoint {
    int version = kCheckpointVersion;
    RunConfig config;
    TrainerState state;
};

/// JSON with full-precision decimal arrays; save -> load -> save is
/// byte-identical. Non-finite values are refused (JSON cannot round-trip
/// them), which also keeps diverged runs out of checkpoints.
void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);

/// Throws std::runtime_error on unreadable/corrupt files, on a version
/// mismatch (naming both versions), and on parameter groups that do not
/// match the snapshot config (e.g. missing generator arrays for a
/// modulated trainer). Never returns partial state.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace modalmeta
