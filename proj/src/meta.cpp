#include "modalmeta/meta.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "modalmeta/parallel.hpp"

namespace modalmeta {

namespace {

// init-stream counter for omega; learner m uses counter m, so keep far away
constexpr std::uint64_t kOmegaInitCounter = std::uint64_t{1} << 32;

Expr task_objective(const ParamSet& theta, const ParamSet& omega, const TaskData& data,
                    ModulationKind kind, const InnerConfig& inner, GradOrder order) {
    Modulation tau;
    if (kind != ModulationKind::None) {
        Expr ups = encode_task(omega, data.support_x, data.support_y);
        tau = generate_modulation(omega, ups, kind);
    }
    ParamSet adapted = inner_adapt(theta, tau, data.support_x, data.support_y, inner.alpha,
                                   inner.train_steps, order);
    Expr pred = forward(adapted, tau, column_tensor(data.query_x));
    return mean_all(square(sub(pred, column_tensor(data.query_y))));
}

struct TaskSlot {
    double loss = 0.0;
    std::size_t mode_index = 0;
    std::vector<Tensor> theta_grads;
    std::vector<Tensor> omega_grads;
};

// mean of the slot gradients at positions `picks`, wrapped as leaves
ParamSet reduce_grads(const ParamSet& params, const std::vector<TaskSlot>& slots,
                      const std::vector<std::size_t>& picks, bool omega_part) {
    const double inv = 1.0 / static_cast<double>(picks.size());
    ParamSet out;
    std::size_t pi = 0;
    for (const auto& [name, e] : params) {
        Tensor acc = Tensor::zeros(evaluate(e).shape());
        for (std::size_t b : picks) {
            const Tensor& g = omega_part ? slots[b].omega_grads[pi] : slots[b].theta_grads[pi];
            for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += g[k];
        }
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] *= inv;
        out.add(name, leaf(std::move(acc), name));
        ++pi;
    }
    return out;
}

}  // namespace

std::string order_name(GradOrder order) {
    return order == GradOrder::Second ? "second" : "first";
}

GradOrder order_from_name(const std::string& name) {
    if (name == "second") return GradOrder::Second;
    if (name == "first") return GradOrder::First;
    throw std::invalid_argument("unknown gradient order \"" + name +
                                "\" (expected second or first)");
}

std::string trainer_name(TrainerKind kind) {
    switch (kind) {
        case TrainerKind::Maml: return "maml";
        case TrainerKind::MultiMaml: return "multimaml";
        case TrainerKind::MuMoMaml: return "mumomaml";
    }
    throw std::invalid_argument("trainer_name: unknown kind");
}

TrainerKind trainer_from_name(const std::string& name) {
    if (name == "maml") return TrainerKind::Maml;
    if (name == "multimaml") return TrainerKind::MultiMaml;
    if (name == "mumomaml") return TrainerKind::MuMoMaml;
    throw std::invalid_argument("unknown trainer \"" + name +
                                "\" (expected maml, multimaml, or mumomaml)");
}

void InnerConfig::validate() const {
    if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
}

void MetaConfig::validate() const {
    if (!(meta_lr > 0.0)) throw std::invalid_argument("meta_lr must be > 0");
    if (meta_batch < 1) throw std::invalid_argument("meta_batch must be >= 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw std::invalid_argument("adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw std::invalid_argument("adam_eps must be > 0");
    if (trainer != TrainerKind::MuMoMaml && modulation != ModulationKind::None) {
        throw std::invalid_argument("modulation \"" + modulation_name(modulation) +
                                    "\" requires the mumomaml trainer");
    }
}

void ModelConfig::validate() const {
    if (widths.size() < 2) throw std::invalid_argument("widths needs at least input and output");
    for (std::size_t w : widths) {
        if (w == 0) throw std::invalid_argument("widths must be positive");
    }
    if (gru_hidden < 1) throw std::invalid_argument("gru_hidden must be >= 1");
    if (generator_hidden < 1) throw std::invalid_argument("generator_hidden must be >= 1");
}

AdamState AdamState::like(const ParamSet& params) {
    AdamState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const auto& [name, e] : params) {
        s.m.emplace_back(name, Tensor::zeros(evaluate(e).shape()));
        s.v.emplace_back(name, Tensor::zeros(evaluate(e).shape()));
    }
    return s;
}

ParamSet inner_adapt(const ParamSet& theta, const Modulation& tau, const std::vector<double>& sx,
                     const std::vector<double>& sy, double alpha, std::size_t steps,
                     GradOrder order) {
    if (alpha == 0.0 || steps == 0) return theta;
    Expr x = column_tensor(sx);
    Expr y = column_tensor(sy);
    ParamSet cur = theta;
    for (std::size_t s = 0; s < steps; ++s) {
        Expr loss = mean_all(square(sub(forward(cur, tau, x), y)));
        ParamSet grads = gradient(loss, cur);
        ParamSet next;
        for (const auto& [name, p] : cur) {
            Expr g = grads.at(name);
            if (order == GradOrder::First) g = detach(g);
            next.add(name, sub(p, scale(g, alpha)));
        }
        cur = std::move(next);
    }
    return cur;
}

Expr meta_objective(const ParamSet& theta, const ParamSet& omega,
                    const std::vector<TaskData>& batch, ModulationKind kind,
                    const InnerConfig& inner, GradOrder order) {
    if (batch.empty()) throw std::invalid_argument("meta_objective: empty batch");
    inner.validate();
    Expr total;
    for (const TaskData& data : batch) {
        Expr l = task_objective(theta, omega, data, kind, inner, order);
        total = total ? add(total, l) : l;
    }
    return scale(total, 1.0 / static_cast<double>(batch.size()));
}

ParamSet adam_update(const ParamSet& params, const ParamSet& grads, AdamState& state,
                     double meta_lr, double beta1, double beta2, double eps) {
    if (state.step == 0 && state.m.empty()) state = AdamState::like(params);
    if (state.m.size() != params.size()) {
        throw std::invalid_argument("adam_update: state tracks " + std::to_string(state.m.size()) +
                                    " parameters, got " + std::to_string(params.size()));
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    ParamSet out;
    std::size_t i = 0;
    for (const auto& [name, p] : params) {
        if (state.m[i].first != name) {
            throw std::invalid_argument("adam_update: state order mismatch at " + name);
        }
        const Tensor& pv = evaluate(p);
        const Tensor& g = evaluate(grads.at(name));
        if (g.shape() != pv.shape()) {
            throw std::invalid_argument("adam_update: gradient shape " +
                                        shape_to_string(g.shape()) + " for " + name);
        }
        Tensor& m = state.m[i].second;
        Tensor& v = state.v[i].second;
        Tensor np = pv;
        for (std::size_t k = 0; k < np.size(); ++k) {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            np[k] = pv[k] - meta_lr * mhat / (std::sqrt(vhat) + eps);
        }
        out.add(name, leaf(std::move(np), name));
        ++i;
    }
    return out;
}

const ParamSet& multi_maml_route(const std::vector<ParamSet>& learners, std::size_t mode_index) {
    if (mode_index >= learners.size()) {
        throw std::invalid_argument("multi_maml_route: mode " + std::to_string(mode_index) +
                                    " out of range for " + std::to_string(learners.size()) +
                                    " learners");
    }
    return learners[mode_index];
}

TrainerState init_trainer(const ModelConfig& model, const MetaConfig& meta, std::uint64_t seed,
                          std::size_t n_modes) {
    model.validate();
    meta.validate();
    if (n_modes < 1) throw std::invalid_argument("init_trainer: need at least one mode");
    TrainerState st;
    st.kind = meta.trainer;
    st.modulation = meta.trainer == TrainerKind::MuMoMaml ? meta.modulation
                                                          : ModulationKind::None;
    const std::size_t m_learners = meta.trainer == TrainerKind::MultiMaml ? n_modes : 1;
    for (std::size_t m = 0; m < m_learners; ++m) {
        RandomStream rs = RandomStream::keyed(seed, StreamDomain::Init, m);
        st.learners.push_back(init_learner(model.widths, rs));
        st.learner_states.push_back(AdamState::like(st.learners.back()));
    }
    if (meta.trainer == TrainerKind::MuMoMaml) {
        RandomStream rs = RandomStream::keyed(seed, StreamDomain::Init, kOmegaInitCounter);
        st.omega = init_encoder(model.gru_hidden, model.widths, model.generator_hidden,
                                st.modulation, rs);
        st.omega_state = AdamState::like(st.omega);
    }
    return st;
}

TrainRecord meta_train_step(TrainerState& state, const InnerConfig& inner, const MetaConfig& meta,
                            const DistConfig& dist, std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    inner.validate();
    meta.validate();
    dist.validate();
    if (state.learners.empty()) throw std::invalid_argument("meta_train_step: empty state");
    const std::size_t batch = meta.meta_batch;
    const bool modulated =
        state.kind == TrainerKind::MuMoMaml && state.modulation != ModulationKind::None;

    std::vector<TaskSlot> slots(batch);
    parallel_for_index(batch, [&](std::size_t b) {
        const std::uint64_t counter = state.iteration * batch + b;
        auto [task, data] = sample_task_with_data(dist, seed, StreamDomain::TrainTasks, counter);
        const ParamSet& learner = state.kind == TrainerKind::MultiMaml
                                      ? multi_maml_route(state.learners, task.mode_index)
                                      : state.learners[0];
        Expr loss = task_objective(learner, state.omega, data, state.modulation, inner,
                                   meta.order);
        std::vector<Expr> targets;
        targets.reserve(learner.size() + (modulated ? state.omega.size() : 0));
        for (const auto& [name, e] : learner) targets.push_back(e);
        if (modulated) {
            for (const auto& [name, e] : state.omega) targets.push_back(e);
        }
        std::vector<Expr> grads = gradient(loss, targets);

        TaskSlot& slot = slots[b];
        slot.loss = evaluate(loss).item();
        slot.mode_index = task.mode_index;
        slot.theta_grads.reserve(learner.size());
        for (std::size_t i = 0; i < learner.size(); ++i) {
            slot.theta_grads.push_back(evaluate(grads[i]));
        }
        if (modulated) {
            slot.omega_grads.reserve(state.omega.size());
            for (std::size_t j = 0; j < state.omega.size(); ++j) {
                slot.omega_grads.push_back(evaluate(grads[learner.size() + j]));
            }
        }
    });

    double mean_loss = 0.0;
    for (const TaskSlot& slot : slots) mean_loss += slot.loss;
    mean_loss /= static_cast<double>(batch);
    if (!std::isfinite(mean_loss)) {
        throw std::runtime_error("outer loss became non-finite at iteration " +
                                 std::to_string(state.iteration));
    }

    if (state.kind == TrainerKind::MultiMaml) {
        // gradients for every learner are reduced before any update lands
        std::vector<std::vector<std::size_t>> picks(state.learners.size());
        for (std::size_t b = 0; b < batch; ++b) picks[slots[b].mode_index].push_back(b);
        std::vector<ParamSet> reduced(state.learners.size());
        for (std::size_t m = 0; m < state.learners.size(); ++m) {
            if (!picks[m].empty()) {
                reduced[m] = reduce_grads(state.learners[m], slots, picks[m], false);
            }
        }
        for (std::size_t m = 0; m < state.learners.size(); ++m) {
            if (picks[m].empty()) continue;  // no routed task, no update
            state.learners[m] =
                adam_update(state.learners[m], reduced[m], state.learner_states[m], meta.meta_lr,
                            meta.adam_beta1, meta.adam_beta2, meta.adam_eps);
        }
    } else {
        std::vector<std::size_t> all(batch);
        for (std::size_t b = 0; b < batch; ++b) all[b] = b;
        ParamSet theta_grad = reduce_grads(state.learners[0], slots, all, false);
        ParamSet omega_grad;
        if (modulated) omega_grad = reduce_grads(state.omega, slots, all, true);
        state.learners[0] = adam_update(state.learners[0], theta_grad, state.learner_states[0],
                                        meta.meta_lr, meta.adam_beta1, meta.adam_beta2,
                                        meta.adam_eps);
        if (modulated) {
            state.omega = adam_update(state.omega, omega_grad, state.omega_state, meta.meta_lr,
                                      meta.adam_beta1, meta.adam_beta2, meta.adam_eps);
        }
    }

    TrainRecord rec;
    rec.iteration = static_cast<std::size_t>(state.iteration);
    rec.loss = mean_loss;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    state.iteration += 1;
    return rec;
}

TrainLog train(TrainerState& state, const InnerConfig& inner, const MetaConfig& meta,
               const DistConfig& dist, std::uint64_t seed, std::size_t eval_every,
               const TrainHook& hook) {
    meta.validate();
    TrainLog log;
    bool hook_fired_last = false;
    while (state.iteration < meta.iterations) {
        log.records.push_back(meta_train_step(state, inner, meta, dist, seed));
        hook_fired_last = false;
        if (hook && eval_every > 0 && state.iteration % eval_every == 0) {
            hook(state);
            hook_fired_last = true;
        }
    }
    if (hook && !log.records.empty() && !hook_fired_last) hook(state);
    return log;
}

}  // namespace modalmeta
