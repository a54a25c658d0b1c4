#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "modalmeta/graph.hpp"
#include "modalmeta/networks.hpp"
#include "modalmeta/taskgen.hpp"

namespace modalmeta {

enum class GradOrder : std::uint8_t { Second, First };
enum class TrainerKind : std::uint8_t { Maml, MultiMaml, MuMoMaml };

std::string order_name(GradOrder order);
GradOrder order_from_name(const std::string& name);
std::string trainer_name(TrainerKind kind);
TrainerKind trainer_from_name(const std::string& name);

struct InnerConfig {
    double alpha = 0.01;
    std::size_t train_steps = 1;
    std::size_t eval_steps = 5;

    void validate() const;
};

struct MetaConfig {
    double meta_lr = 0.001;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t meta_batch = 25;
    std::size_t iterations = 5000;
    GradOrder order = GradOrder::Second;
    TrainerKind trainer = TrainerKind::MuMoMaml;
    ModulationKind modulation = ModulationKind::Film;

    void validate() const;
};

struct ModelConfig {
    std::vector<std::size_t> widths{1, 100, 100, 100, 100, 1};
    std::size_t gru_hidden = 40;
    std::size_t generator_hidden = 100;

    void validate() const;
};

struct AdamState {
    std::uint64_t step = 0;
    std::vector<std::pair<std::string, Tensor>> m, v;

    static AdamState like(const ParamSet& params);
};

struct TrainRecord {
    std::size_t iteration = 0;
    double loss = 0.0;
    double seconds = 0.0;
};

struct TrainLog {
    std::vector<TrainRecord> records;
};

/// Whole-run mutable state: one learner for MAML/MuMoMAML, one per mode for
/// Multi-MAML; omega only for MuMoMAML. `iteration` is the next iteration to
/// run and also keys the task-sampling streams, so resumed runs draw the
/// same tasks the uninterrupted run would have.
struct TrainerState {
    TrainerKind kind = TrainerKind::Maml;
    ModulationKind modulation = ModulationKind::None;
    std::vector<ParamSet> learners;
    std::vector<AdamState> learner_states;
    ParamSet omega;
    AdamState omega_state;
    std::uint64_t iteration = 0;
};

/// One or more plain gradient steps on the support loss; tau (and omega
/// behind it) is held fixed. The returned parameters are graph expressions
/// that stay differentiable w.r.t. the inputs; order=First detaches the
/// gradient term so only the direct dependence remains. alpha=0 or steps=0
/// returns theta unchanged.
ParamSet inner_adapt(const ParamSet& theta, const Modulation& tau, const std::vector<double>& sx,
                     const std::vector<double>& sy, double alpha, std::size_t steps,
                     GradOrder order);

/// Mean over the batch of each task's post-adaptation query MSE, as one
/// differentiable scalar: embed support, generate modulation, adapt, score.
/// kind=None skips the encoder and omega entirely.
Expr meta_objective(const ParamSet& theta, const ParamSet& omega,
                    const std::vector<TaskData>& batch, ModulationKind kind,
                    const InnerConfig& inner, GradOrder order);

/// Standard bias-corrected Adam step. Returns fresh leaves; advances state.
ParamSet adam_update(const ParamSet& params, const ParamSet& grads, AdamState& state,
                     double meta_lr, double beta1, double beta2, double eps);

const ParamSet& multi_maml_route(const std::vector<ParamSet>& learners, std::size_t mode_index);

/// Fresh state with Glorot-initialized parameters. Learner m draws from the
/// init stream with counter m, so Multi-MAML with M=1, MAML, and MuMoMAML
/// all start from the same theta for one seed.
TrainerState init_trainer(const ModelConfig& model, const MetaConfig& meta, std::uint64_t seed,
                          std::size_t n_modes);

/// One outer iteration: sample meta_batch tasks on streams keyed by
/// (seed, iteration * meta_batch + slot), compute per-task meta-gradients in
/// parallel, reduce in slot order, and apply one Adam step per updated
/// parameter set (all gradients evaluated at the pre-update point). Throws
/// on a non-finite outer loss, naming the iteration.
TrainRecord meta_train_step(TrainerState& state, const InnerConfig& inner, const MetaConfig& meta,
                            const DistConfig& dist, std::uint64_t seed);

using TrainHook = std::function<void(const TrainerState&)>;

/// Runs meta_train_steps until meta.iterations; optional hook fires every
/// eval_every iterations (and after the last one).
TrainLog train(TrainerState& state, const InnerConfig& inner, const MetaConfig& meta,
               const DistConfig& dist, std::uint64_t seed, std::size_t eval_every = 0,
               const TrainHook& hook = {});

}  // namespace modalmeta
