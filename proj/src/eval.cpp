#include "modalmeta/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "modalmeta/networks.hpp"
#include "modalmeta/parallel.hpp"

namespace modalmeta {
namespace {

std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::ofstream open_csv(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open \"" + path + "\" for writing");
    return out;
}

void finish_csv(std::ofstream& out, const std::string& path) {
    out.flush();
    if (!out) throw std::runtime_error("failed writing \"" + path + "\"");
}

const ParamSet& route_learner(const TrainerState& state, std::size_t mode_index) {
    if (state.kind == TrainerKind::MultiMaml) {
        return multi_maml_route(state.learners, mode_index);
    }
    return state.learners.front();
}

Modulation modulate_for(const TrainerState& state, const TaskData& data) {
    Modulation tau;
    if (state.kind == TrainerKind::MuMoMaml && state.modulation != ModulationKind::None) {
        Expr upsilon = encode_task(state.omega, data.support_x, data.support_y);
        tau = generate_modulation(state.omega, upsilon, state.modulation);
    }
    return tau;
}

}  // namespace

EvalReport evaluate_model(const TrainerState& state, const DistConfig& dist, std::size_t n_tasks,
                          const InnerConfig& inner, std::uint64_t seed, StreamDomain domain) {
    if (n_tasks < 1) throw std::invalid_argument("n_tasks must be >= 1");
    dist.validate();
    inner.validate();
    if (state.learners.empty()) throw std::invalid_argument("trainer state has no learners");

    const std::size_t steps = inner.eval_steps;
    struct Slot {
        std::size_t mode = 0;
        std::vector<double> noisy, clean;
    };
    std::vector<Slot> slots(n_tasks);

    // Per-task streams make the loop order-free; slots + fixed-order
    // reduction keep the report identical for every worker count.
    parallel_for_index(n_tasks, [&](std::size_t t) {
        auto [task, data] = sample_task_with_data(dist, seed, domain, t);
        const ParamSet& prior = route_learner(state, task.mode_index);
        const Modulation tau = modulate_for(state, data);

        Slot slot;
        slot.mode = task.mode_index;
        slot.noisy.reserve(steps + 1);
        slot.clean.reserve(steps + 1);
        const Expr qx = column_tensor(data.query_x);
        ParamSet theta = prior;
        for (std::size_t s = 0; s <= steps; ++s) {
            if (s > 0) {
                theta = inner_adapt(theta, tau, data.support_x, data.support_y, inner.alpha, 1,
                                    GradOrder::First);
            }
            const Tensor pred = evaluate(forward(theta, tau, qx));
            double noisy = 0.0, clean = 0.0;
            for (std::size_t i = 0; i < data.query_y.size(); ++i) {
                const double dn = pred[i] - data.query_y[i];
                const double dc = pred[i] - data.query_true[i];
                noisy += dn * dn;
                clean += dc * dc;
            }
            slot.noisy.push_back(noisy / static_cast<double>(data.query_y.size()));
            slot.clean.push_back(clean / static_cast<double>(data.query_y.size()));
        }
        slots[t] = std::move(slot);
    });

    const std::size_t n_modes = dist.modes.size();
    EvalReport report;
    report.n_tasks = n_tasks;
    report.eval_steps = steps;
    report.mse_by_step.assign(steps + 1, 0.0);
    report.mse_clean_by_step.assign(steps + 1, 0.0);
    report.tasks_by_mode.assign(n_modes, 0);
    report.mode_mse_by_step.assign(n_modes, std::vector<double>(steps + 1, 0.0));
    report.mode_mse_clean_by_step.assign(n_modes, std::vector<double>(steps + 1, 0.0));
    for (const Slot& slot : slots) {
        report.tasks_by_mode[slot.mode] += 1;
        for (std::size_t s = 0; s <= steps; ++s) {
            report.mse_by_step[s] += slot.noisy[s];
            report.mse_clean_by_step[s] += slot.clean[s];
            report.mode_mse_by_step[slot.mode][s] += slot.noisy[s];
            report.mode_mse_clean_by_step[slot.mode][s] += slot.clean[s];
        }
    }
    for (std::size_t s = 0; s <= steps; ++s) {
        report.mse_by_step[s] /= static_cast<double>(n_tasks);
        report.mse_clean_by_step[s] /= static_cast<double>(n_tasks);
    }
    for (std::size_t m = 0; m < n_modes; ++m) {
        if (report.tasks_by_mode[m] == 0) continue;
        const double count = static_cast<double>(report.tasks_by_mode[m]);
        for (std::size_t s = 0; s <= steps; ++s) {
            report.mode_mse_by_step[m][s] /= count;
            report.mode_mse_clean_by_step[m][s] /= count;
        }
    }
    return report;
}

std::string eval_report_json(const EvalReport& report) {
    nlohmann::json j;
    j["n_tasks"] = report.n_tasks;
    j["eval_steps"] = report.eval_steps;
    j["mse_by_step"] = report.mse_by_step;
    j["mse_clean_by_step"] = report.mse_clean_by_step;
    j["tasks_by_mode"] = report.tasks_by_mode;
    j["mode_mse_by_step"] = report.mode_mse_by_step;
    j["mode_mse_clean_by_step"] = report.mode_mse_clean_by_step;
    return j.dump(2) + "\n";
}

EmbeddingDump collect_embeddings(const TrainerState& state, const DistConfig& dist,
                                 std::size_t n_tasks, std::uint64_t seed) {
    if (n_tasks < 1) throw std::invalid_argument("n_tasks must be >= 1");
    if (state.kind != TrainerKind::MuMoMaml) {
        throw std::invalid_argument("embeddings require a mumomaml trainer state");
    }
    dist.validate();

    EmbeddingDump dump;
    dump.tasks.resize(n_tasks);
    dump.upsilon.resize(n_tasks);
    parallel_for_index(n_tasks, [&](std::size_t t) {
        auto [task, data] = sample_task_with_data(dist, seed, StreamDomain::Embedding, t);
        const Tensor u = evaluate(encode_task(state.omega, data.support_x, data.support_y));
        dump.tasks[t] = task;
        dump.upsilon[t] = u.values();
    });
    dump.upsilon_dim = dump.upsilon.front().size();
    return dump;
}

void write_embeddings_csv(const EmbeddingDump& dump, const std::string& path) {
    std::ofstream out = open_csv(path);
    out << "mode,family,a,w,b,c";
    for (std::size_t i = 0; i < dump.upsilon_dim; ++i) out << ",v" << i;
    out << '\n';
    for (std::size_t t = 0; t < dump.tasks.size(); ++t) {
        const Task& task = dump.tasks[t];
        out << task.mode_index << ',' << family_name(task.family) << ',' << g17(task.a) << ','
            << g17(task.w) << ',' << g17(task.b) << ',' << g17(task.c);
        for (double v : dump.upsilon[t]) out << ',' << g17(v);
        out << '\n';
    }
    finish_csv(out, path);
}

EmbeddingDump export_embeddings(const TrainerState& state, const DistConfig& dist,
                                std::size_t n_tasks, std::uint64_t seed, const std::string& path) {
    EmbeddingDump dump = collect_embeddings(state, dist, n_tasks, seed);
    write_embeddings_csv(dump, path);
    return dump;
}

PcaResult pca_project(const Tensor& rows) {
    const Shape& shape = rows.shape();
    if (shape.size() != 2) throw std::invalid_argument("pca input must be a matrix");
    const std::size_t n = shape[0], d = shape[1];
    if (n < 2) throw std::invalid_argument("pca needs at least 2 rows");
    if (d < 2) throw std::invalid_argument("pca needs at least 2 columns");

    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) mean[j] += rows[i * d + j];
    }
    for (double& m : mean) m /= static_cast<double>(n);
    std::vector<double> centered(n * d);
    double raw_ms = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            centered[i * d + j] = rows[i * d + j] - mean[j];
            raw_ms += rows[i * d + j] * rows[i * d + j];
        }
    }
    raw_ms /= static_cast<double>(n * d);

    std::vector<double> cov(d * d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const double cij = centered[i * d + j];
            if (cij == 0.0) continue;
            for (std::size_t k = 0; k < d; ++k) cov[j * d + k] += cij * centered[i * d + k];
        }
    }
    for (double& c : cov) c /= static_cast<double>(n - 1);

    PcaResult result;
    result.coords = Tensor::zeros({n, 2});
    result.components = Tensor::zeros({2, d});
    double trace = 0.0;
    for (std::size_t j = 0; j < d; ++j) trace += cov[j * d + j];
    if (!(trace > 1e-24 * (1.0 + raw_ms))) {
        result.degenerate = true;
        return result;
    }

    auto mat_vec = [&](const std::vector<double>& v) {
        std::vector<double> w(d, 0.0);
        for (std::size_t j = 0; j < d; ++j) {
            const double vj = v[j];
            if (vj == 0.0) continue;
            for (std::size_t k = 0; k < d; ++k) w[k] += cov[j * d + k] * vj;
        }
        return w;
    };
    auto norm = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x * x;
        return std::sqrt(s);
    };

    std::vector<std::vector<double>> comps;
    for (std::size_t k = 0; k < 2; ++k) {
        // Start from the heaviest covariance column; fall back to a basis
        // vector orthogonal to the first component if deflation left ~0.
        std::vector<double> v(d, 0.0);
        std::size_t start = 0;
        double best = -1.0;
        for (std::size_t j = 0; j < d; ++j) {
            double cn = 0.0;
            for (std::size_t i = 0; i < d; ++i) cn += cov[i * d + j] * cov[i * d + j];
            if (cn > best) {
                best = cn;
                start = j;
            }
        }
        for (std::size_t i = 0; i < d; ++i) v[i] = cov[i * d + start];
        if (norm(v) < 1e-300) v[start] = 1.0;
        for (const auto& prev : comps) {
            double dot = 0.0;
            for (std::size_t i = 0; i < d; ++i) dot += v[i] * prev[i];
            for (std::size_t i = 0; i < d; ++i) v[i] -= dot * prev[i];
        }
        double nv = norm(v);
        if (nv < 1e-300) {
            // Deterministic orthogonal fallback: basis vector least aligned
            // with the previous component, Gram-Schmidt'd against it.
            std::size_t pick = 0;
            double low = std::abs(comps[0][0]);
            for (std::size_t i = 1; i < d; ++i) {
                if (std::abs(comps[0][i]) < low) {
                    low = std::abs(comps[0][i]);
                    pick = i;
                }
            }
            std::fill(v.begin(), v.end(), 0.0);
            v[pick] = 1.0;
            for (std::size_t i = 0; i < d; ++i) v[i] -= comps[0][pick] * comps[0][i];
            nv = norm(v);
        }
        for (double& x : v) x /= nv;

        for (int iter = 0; iter < 1000; ++iter) {
            std::vector<double> w = mat_vec(v);
            for (const auto& prev : comps) {
                double dot = 0.0;
                for (std::size_t i = 0; i < d; ++i) dot += w[i] * prev[i];
                for (std::size_t i = 0; i < d; ++i) w[i] -= dot * prev[i];
            }
            const double nw = norm(w);
            if (nw < 1e-300) break;  // deflated to nothing; keep current v
            double delta = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                w[i] /= nw;
                delta += (w[i] - v[i]) * (w[i] - v[i]);
            }
            v = std::move(w);
            if (delta < 1e-28) break;
        }

        const std::vector<double> cv = mat_vec(v);
        double lambda = 0.0;
        for (std::size_t i = 0; i < d; ++i) lambda += v[i] * cv[i];
        result.variance[k] = lambda;
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) cov[i * d + j] -= lambda * v[i] * v[j];
        }
        comps.push_back(std::move(v));
    }

    if (result.variance[1] > result.variance[0]) {
        std::swap(comps[0], comps[1]);
        std::swap(result.variance[0], result.variance[1]);
    }
    for (std::size_t k = 0; k < 2; ++k) {
        std::size_t arg = 0;
        double mag = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            if (std::abs(comps[k][i]) > mag) {
                mag = std::abs(comps[k][i]);
                arg = i;
            }
        }
        if (comps[k][arg] < 0.0) {
            for (double& x : comps[k]) x = -x;
        }
        for (std::size_t i = 0; i < d; ++i) result.components[k * d + i] = comps[k][i];
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < 2; ++k) {
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += centered[i * d + j] * comps[k][j];
            result.coords[i * 2 + k] = dot;
        }
    }
    return result;
}

double centroid_purity(const Tensor& rows, const std::vector<std::size_t>& labels,
                       std::size_t n_modes) {
    const Shape& shape = rows.shape();
    if (shape.size() != 2) throw std::invalid_argument("purity input must be a matrix");
    const std::size_t n = shape[0], d = shape[1];
    if (labels.size() != n) throw std::invalid_argument("labels must match the row count");
    if (n_modes < 1) throw std::invalid_argument("n_modes must be >= 1");
    for (std::size_t label : labels) {
        if (label >= n_modes) throw std::invalid_argument("label out of range");
    }

    std::vector<double> centroid(n_modes * d, 0.0);
    std::vector<std::size_t> count(n_modes, 0);
    for (std::size_t i = 0; i < n; ++i) {
        count[labels[i]] += 1;
        for (std::size_t j = 0; j < d; ++j) centroid[labels[i] * d + j] += rows[i * d + j];
    }
    for (std::size_t m = 0; m < n_modes; ++m) {
        if (count[m] == 0) {
            throw std::invalid_argument("mode " + std::to_string(m) + " has no rows");
        }
        for (std::size_t j = 0; j < d; ++j) centroid[m * d + j] /= static_cast<double>(count[m]);
    }

    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        double best_dist = 0.0;
        for (std::size_t m = 0; m < n_modes; ++m) {
            double dist = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = rows[i * d + j] - centroid[m * d + j];
                dist += diff * diff;
            }
            if (m == 0 || dist < best_dist) {  // strict <: ties keep the lowest mode
                best_dist = dist;
                best = m;
            }
        }
        if (best == labels[i]) correct += 1;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

void emit_curves(const TrainerState& state, const Task& task, const TaskData& data,
                 const DistConfig& dist, const InnerConfig& inner, const std::string& path) {
    dist.validate();
    inner.validate();
    if (state.learners.empty()) throw std::invalid_argument("trainer state has no learners");

    constexpr std::size_t kGrid = 201;
    std::vector<double> grid(kGrid);
    for (std::size_t i = 0; i < kGrid; ++i) {
        grid[i] = dist.x_low + static_cast<double>(i) * (dist.x_high - dist.x_low) /
                                   static_cast<double>(kGrid - 1);
    }
    const Expr gx = column_tensor(grid);
    const Modulation tau = modulate_for(state, data);
    ParamSet theta = route_learner(state, task.mode_index);

    std::vector<Tensor> preds;
    preds.reserve(inner.eval_steps + 1);
    for (std::size_t s = 0; s <= inner.eval_steps; ++s) {
        if (s > 0) {
            theta = inner_adapt(theta, tau, data.support_x, data.support_y, inner.alpha, 1,
                                GradOrder::First);
        }
        preds.push_back(evaluate(forward(theta, tau, gx)));
    }

    std::ofstream out = open_csv(path);
    out << "x,true_y";
    for (std::size_t s = 0; s <= inner.eval_steps; ++s) out << ",step" << s;
    out << '\n';
    for (std::size_t i = 0; i < kGrid; ++i) {
        out << g17(grid[i]) << ',' << g17(true_value(task, grid[i]));
        for (const Tensor& pred : preds) out << ',' << g17(pred[i]);
        out << '\n';
    }
    finish_csv(out, path);
}

void write_train_log_csv(const TrainLog& log, const std::string& path) {
    std::ofstream out = open_csv(path);
    out << "iteration,loss,seconds\n";
    for (const TrainRecord& rec : log.records) {
        out << rec.iteration << ',' << g17(rec.loss) << ',' << g17(rec.seconds) << '\n';
    }
    finish_csv(out, path);
}

}  // namespace modalmeta
