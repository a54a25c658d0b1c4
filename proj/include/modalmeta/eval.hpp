#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modalmeta/meta.hpp"
#include "modalmeta/taskgen.hpp"
#include "modalmeta/tensor.hpp"

namespace modalmeta {

/// Mean query MSE at adaptation steps 0..eval_steps over a held-out task
/// set. Step 0 is the zero-update prediction (post-modulation for a
/// modulated trainer, the raw prior otherwise). `mse_by_step` scores
/// against the noisy query targets the tasks were sampled with;
/// `mse_clean_by_step` against the noise-free curve. The per-mode arrays
/// break the same sweeps down by ground-truth mode.
struct EvalReport {
    std::size_t n_tasks = 0;
    std::size_t eval_steps = 0;
    std::vector<double> mse_by_step;
    std::vector<double> mse_clean_by_step;
    std::vector<std::size_t> tasks_by_mode;
    std::vector<std::vector<double>> mode_mse_by_step;
    std::vector<std::vector<double>> mode_mse_clean_by_step;
};

/// Scores `state` on n_tasks held-out tasks drawn from streams keyed by
/// (seed, domain, task index). Multi-MAML routes by ground-truth mode;
/// MuMoMAML encodes and modulates before the sweep. Tasks run in parallel;
/// the reduction is fixed-order, so the report is worker-count independent.
EvalReport evaluate_model(const TrainerState& state, const DistConfig& dist, std::size_t n_tasks,
                          const InnerConfig& inner, std::uint64_t seed,
                          StreamDomain domain = StreamDomain::EvalTasks);

/// JSON rendering with full-precision decimals; re-parses to equal values.
std::string eval_report_json(const EvalReport& report);

/// One embedded task per row: ground-truth descriptor plus the encoder
/// output. Column layout is fixed per config: mode, family, a, w, b, c,
/// then 2*gru_hidden upsilon entries.
struct EmbeddingDump {
    std::size_t upsilon_dim = 0;
    std::vector<Task> tasks;
    std::vector<std::vector<double>> upsilon;
};

EmbeddingDump collect_embeddings(const TrainerState& state, const DistConfig& dist,
                                 std::size_t n_tasks, std::uint64_t seed);

/// Writes the dump as CSV (header row, LF endings, 17 significant digits).
void write_embeddings_csv(const EmbeddingDump& dump, const std::string& path);

/// collect + write; returns the dump for further analysis.
EmbeddingDump export_embeddings(const TrainerState& state, const DistConfig& dist,
                                std::size_t n_tasks, std::uint64_t seed, const std::string& path);

/// Top-2 principal directions via iterated power method with deflation.
/// Components are unit-norm rows of `components` ([2, d]), mutually
/// orthogonal, sign-fixed so each component's largest-magnitude entry is
/// positive; `coords` ([n, 2]) are the mean-centered projections.
/// Zero-variance input sets `degenerate` and returns all zeros.
struct PcaResult {
    Tensor coords;
    Tensor components;
    double variance[2] = {0.0, 0.0};
    bool degenerate = false;
};

PcaResult pca_project(const Tensor& rows);

/// Nearest-centroid label accuracy (Euclidean; ties go to the lowest mode
/// index). Every mode in [0, n_modes) must own at least one row.
double centroid_purity(const Tensor& rows, const std::vector<std::size_t>& labels,
                       std::size_t n_modes);

/// Writes a 201-point dense grid over [x_low, x_high]: columns x, true y,
/// then one prediction column per adaptation step 0..eval_steps.
void emit_curves(const TrainerState& state, const Task& task, const TaskData& data,
                 const DistConfig& dist, const InnerConfig& inner, const std::string& path);

/// iteration,loss,seconds rows, one per training record.
void write_train_log_csv(const TrainLog& log, const std::string& path);

}  // namespace modalmeta
