#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "modalmeta/checkpoint.hpp"
#include "modalmeta/eval.hpp"
#include "modalmeta/networks.hpp"

using namespace modalmeta;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) rows.push_back(split(line, ','));
    return rows;
}

struct TempFile {
    std::string path;
    explicit TempFile(std::string p) : path(std::move(p)) {}
    ~TempFile() { std::remove(path.c_str()); }
};

struct ThreadsEnvGuard {
    ThreadsEnvGuard(const char* value) {
        if (value) {
            setenv("MODALMETA_THREADS", value, 1);
        } else {
            unsetenv("MODALMETA_THREADS");
        }
    }
    ~ThreadsEnvGuard() { unsetenv("MODALMETA_THREADS"); }
};

// One linear mode with all ranges collapsed: every sampled task is exactly
// y = slope*x + intercept.
DistConfig pinned_linear_dist(double slope, double intercept, double sigma) {
    ModeSpec mode = ModeSpec::linear();
    mode.a = {slope, slope};
    mode.b = {intercept, intercept};
    DistConfig dist;
    dist.modes = {mode};
    dist.noise_sigma = sigma;
    return dist;
}

TrainerState affine_state(double slope, double intercept) {
    TrainerState state;
    state.kind = TrainerKind::Maml;
    state.modulation = ModulationKind::None;
    ParamSet theta;
    theta.add("learner.block1.weight", leaf(Tensor({1, 1}, {slope}), "learner.block1.weight"));
    theta.add("learner.block1.bias", leaf(Tensor({1}, {intercept}), "learner.block1.bias"));
    state.learners.push_back(theta);
    state.learner_states.push_back(AdamState::like(theta));
    return state;
}

DistConfig two_mode_dist() {
    DistConfig dist;
    dist.modes = {ModeSpec::sinusoid(), ModeSpec::linear()};
    return dist;
}

TrainerState tiny_mumomaml(std::uint64_t seed, ModulationKind mod) {
    ModelConfig model;
    model.widths = {1, 8, 1};
    model.gru_hidden = 4;
    model.generator_hidden = 6;
    MetaConfig meta;
    meta.trainer = TrainerKind::MuMoMaml;
    meta.modulation = mod;
    return init_trainer(model, meta, seed, 2);
}

ParamSet snap_values(const ParamSet& params) {
    ParamSet out;
    for (const auto& [name, e] : params) out.add(name, leaf(evaluate(e), name));
    return out;
}

}  // namespace

TEST_CASE("perfect predictor scores zero MSE at every step") {
    const DistConfig dist = pinned_linear_dist(1.75, -0.5, 0.0);
    const TrainerState state = affine_state(1.75, -0.5);
    InnerConfig inner;  // alpha 0.01, eval_steps 5
    const EvalReport report = evaluate_model(state, dist, 20, inner, 11);
    REQUIRE(report.mse_by_step.size() == 6);
    REQUIRE(report.mse_clean_by_step.size() == 6);
    for (std::size_t s = 0; s <= 5; ++s) {
        // exact: residuals are identically zero, so inner gradients are too
        CHECK(report.mse_by_step[s] == 0.0);
        CHECK(report.mse_clean_by_step[s] == 0.0);
    }
    CHECK(report.n_tasks == 20);
    CHECK(report.tasks_by_mode == std::vector<std::size_t>{20});
}

TEST_CASE("zero predictor matches an independent mean(y^2) pass") {
    const DistConfig dist = two_mode_dist();
    TrainerState state = affine_state(0.0, 0.0);
    InnerConfig inner;
    inner.alpha = 0.0;  // freeze: every step must equal step 0 exactly
    const std::uint64_t seed = 29;
    const std::size_t n = 60;
    const EvalReport report = evaluate_model(state, dist, n, inner, seed);

    double want_noisy = 0.0, want_clean = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        auto [task, data] = sample_task_with_data(dist, seed, StreamDomain::EvalTasks, t);
        double sn = 0.0, sc = 0.0;
        for (std::size_t i = 0; i < data.query_y.size(); ++i) {
            sn += data.query_y[i] * data.query_y[i];
            sc += data.query_true[i] * data.query_true[i];
        }
        want_noisy += sn / static_cast<double>(data.query_y.size());
        want_clean += sc / static_cast<double>(data.query_true.size());
    }
    want_noisy /= static_cast<double>(n);
    want_clean /= static_cast<double>(n);

    CHECK(report.mse_by_step[0] == doctest::Approx(want_noisy).epsilon(1e-12));
    CHECK(report.mse_clean_by_step[0] == doctest::Approx(want_clean).epsilon(1e-12));
    for (std::size_t s = 1; s <= 5; ++s) {
        CHECK(report.mse_by_step[s] == report.mse_by_step[0]);
        CHECK(report.mse_clean_by_step[s] == report.mse_clean_by_step[0]);
    }
}

TEST_CASE("per-mode breakdown recombines to the overall sweep") {
    const DistConfig dist = two_mode_dist();
    const TrainerState state = tiny_mumomaml(5, ModulationKind::Film);
    InnerConfig inner;
    const std::size_t n = 80;
    const EvalReport report = evaluate_model(state, dist, n, inner, 17);

    std::size_t total = 0;
    for (std::size_t c : report.tasks_by_mode) total += c;
    CHECK(total == n);
    for (std::size_t s = 0; s <= report.eval_steps; ++s) {
        double mix = 0.0;
        for (std::size_t m = 0; m < dist.modes.size(); ++m) {
            mix += static_cast<double>(report.tasks_by_mode[m]) * report.mode_mse_by_step[m][s];
        }
        mix /= static_cast<double>(n);
        CHECK(report.mse_by_step[s] == doctest::Approx(mix).epsilon(1e-12));
    }
}

TEST_CASE("evaluation is deterministic across runs and worker counts") {
    const DistConfig dist = two_mode_dist();
    const TrainerState state = tiny_mumomaml(3, ModulationKind::Sigmoid);
    InnerConfig inner;
    EvalReport a, b;
    {
        ThreadsEnvGuard guard("1");
        a = evaluate_model(state, dist, 30, inner, 99);
    }
    {
        ThreadsEnvGuard guard("3");
        b = evaluate_model(state, dist, 30, inner, 99);
    }
    CHECK(a.mse_by_step == b.mse_by_step);
    CHECK(a.mse_clean_by_step == b.mse_clean_by_step);
    CHECK(a.tasks_by_mode == b.tasks_by_mode);
    CHECK(a.mode_mse_by_step == b.mode_mse_by_step);
}

TEST_CASE("fresh FiLM modulation evaluates exactly like the bare prior") {
    // generator output layers start at zero, so gamma=1, beta=0: the sweep
    // must match a MAML state sharing the same learner, bit for bit.
    const DistConfig dist = two_mode_dist();
    const TrainerState mumo = tiny_mumomaml(21, ModulationKind::Film);
    TrainerState maml;
    maml.kind = TrainerKind::Maml;
    maml.modulation = ModulationKind::None;
    maml.learners.push_back(mumo.learners[0]);
    maml.learner_states.push_back(AdamState::like(mumo.learners[0]));

    InnerConfig inner;
    const EvalReport a = evaluate_model(mumo, dist, 25, inner, 8);
    const EvalReport b = evaluate_model(maml, dist, 25, inner, 8);
    CHECK(a.mse_by_step == b.mse_by_step);
    CHECK(a.mse_clean_by_step == b.mse_clean_by_step);
}

TEST_CASE("eval report JSON re-parses to equal values") {
    const DistConfig dist = two_mode_dist();
    const TrainerState state = tiny_mumomaml(13, ModulationKind::Film);
    InnerConfig inner;
    const EvalReport report = evaluate_model(state, dist, 12, inner, 4);
    const nlohmann::json j = nlohmann::json::parse(eval_report_json(report));
    CHECK(j.at("n_tasks").get<std::size_t>() == report.n_tasks);
    CHECK(j.at("eval_steps").get<std::size_t>() == report.eval_steps);
    CHECK(j.at("mse_by_step").get<std::vector<double>>() == report.mse_by_step);
    CHECK(j.at("mse_clean_by_step").get<std::vector<double>>() == report.mse_clean_by_step);
    CHECK(j.at("tasks_by_mode").get<std::vector<std::size_t>>() == report.tasks_by_mode);
    CHECK(j.at("mode_mse_by_step").get<std::vector<std::vector<double>>>() ==
          report.mode_mse_by_step);
}

TEST_CASE("evaluate_model rejects bad arguments") {
    const DistConfig dist = two_mode_dist();
    const TrainerState state = affine_state(1.0, 0.0);
    InnerConfig inner;
    CHECK_THROWS_AS(evaluate_model(state, dist, 0, inner, 1), std::invalid_argument);
    CHECK_THROWS_AS(evaluate_model(TrainerState{}, dist, 5, inner, 1), std::invalid_argument);
}

TEST_CASE("embedding dump: shape, determinism, file bytes") {
    const DistConfig dist = two_mode_dist();
    const TrainerState state = tiny_mumomaml(2, ModulationKind::Film);
    const std::size_t n = 40;
    EmbeddingDump dump = collect_embeddings(state, dist, n, 77);
    CHECK(dump.tasks.size() == n);
    CHECK(dump.upsilon.size() == n);
    CHECK(dump.upsilon_dim == 8);  // 2 * gru_hidden
    for (const auto& row : dump.upsilon) CHECK(row.size() == 8);
    for (const Task& task : dump.tasks) CHECK(task.mode_index < 2);

    EmbeddingDump again = collect_embeddings(state, dist, n, 77);
    CHECK(again.upsilon == dump.upsilon);

    TempFile a("embed_a.csv"), b("embed_b.csv");
    write_embeddings_csv(dump, a.path);
    write_embeddings_csv(again, b.path);
    CHECK(slurp(a.path) == slurp(b.path));

    auto rows = read_csv(a.path);
    REQUIRE(rows.size() == n + 1);
    CHECK(rows[0].size() == 6 + 8);
    CHECK(rows[0][0] == "mode");
    CHECK(rows[0][6] == "v0");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        REQUIRE(rows[i].size() == 6 + 8);
        CHECK((rows[i][0] == "0" || rows[i][0] == "1"));
    }

    CHECK_THROWS_AS(collect_embeddings(affine_state(1.0, 0.0), dist, 5, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(write_embeddings_csv(dump, "/nonexistent/dir/e.csv"), std::runtime_error);
}

TEST_CASE("pca recovers a line exactly up to fp noise") {
    // rank-1 data along a fixed direction in R^5
    const std::vector<double> dir = {0.2, -0.4, 0.1, 0.8, -0.4};  // not normalized on purpose
    double dn = 0.0;
    for (double x : dir) dn += x * x;
    dn = std::sqrt(dn);
    const std::size_t n = 30;
    Tensor rows = Tensor::zeros({n, 5});
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) - 14.0;
        for (std::size_t j = 0; j < 5; ++j) rows[i * 5 + j] = 3.0 + t * dir[j];
    }
    const PcaResult pca = pca_project(rows);
    CHECK(!pca.degenerate);
    // component 1 is the line direction, sign fixed by the largest entry
    for (std::size_t j = 0; j < 5; ++j) {
        CHECK(pca.components[j] == doctest::Approx(dir[j] / dn).epsilon(1e-9));
    }
    // second coordinate vanishes on rank-1 data
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(std::abs(pca.coords[i * 2 + 1]) <= 1e-9);
    }
    CHECK(pca.variance[0] >= pca.variance[1]);
    CHECK(pca.variance[1] <= 1e-9);

    // orthonormality within 1e-9
    double n0 = 0.0, n1 = 0.0, dot = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
        n0 += pca.components[j] * pca.components[j];
        n1 += pca.components[5 + j] * pca.components[5 + j];
        dot += pca.components[j] * pca.components[5 + j];
    }
    CHECK(std::abs(n0 - 1.0) <= 1e-9);
    CHECK(std::abs(n1 - 1.0) <= 1e-9);
    CHECK(std::abs(dot) <= 1e-9);
}

TEST_CASE("pca satisfies the eigenpair equations on generic data") {
    RandomStream rng = RandomStream::keyed(5, StreamDomain::GradCheck, 123);
    const std::size_t n = 50, d = 6;
    Tensor rows = Tensor::zeros({n, d});
    for (std::size_t i = 0; i < n * d; ++i) rows[i] = rng.normal(0.0, 1.0);
    // stretch two directions so the spectrum has a clear top-2
    for (std::size_t i = 0; i < n; ++i) {
        rows[i * d + 0] *= 4.0;
        rows[i * d + 1] *= 2.5;
    }
    const PcaResult pca = pca_project(rows);
    CHECK(!pca.degenerate);
    CHECK(pca.variance[0] >= pca.variance[1]);
    CHECK(pca.variance[1] > 0.0);

    // independent covariance; C v = lambda v for both components
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) mean[j] += rows[i * d + j];
    }
    for (double& m : mean) m /= static_cast<double>(n);
    std::vector<double> cov(d * d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            for (std::size_t k = 0; k < d; ++k) {
                cov[j * d + k] += (rows[i * d + j] - mean[j]) * (rows[i * d + k] - mean[k]);
            }
        }
    }
    for (double& c : cov) c /= static_cast<double>(n - 1);
    for (std::size_t k = 0; k < 2; ++k) {
        for (std::size_t j = 0; j < d; ++j) {
            double cv = 0.0;
            for (std::size_t i = 0; i < d; ++i) cv += cov[j * d + i] * pca.components[k * d + i];
            CHECK(cv == doctest::Approx(pca.variance[k] * pca.components[k * d + j])
                            .epsilon(1e-6)
                            .scale(pca.variance[0]));
        }
        // projected variance equals the eigenvalue
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            var += pca.coords[i * 2 + k] * pca.coords[i * 2 + k];
        }
        var /= static_cast<double>(n - 1);
        CHECK(var == doctest::Approx(pca.variance[k]).epsilon(1e-9));
    }
}

TEST_CASE("pca flags zero-variance input and rejects bad shapes") {
    Tensor flat = Tensor::zeros({4, 3});
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 3; ++j) flat[i * 3 + j] = 2.0 + static_cast<double>(j);
    }
    const PcaResult pca = pca_project(flat);
    CHECK(pca.degenerate);
    for (std::size_t i = 0; i < 8; ++i) CHECK(pca.coords[i] == 0.0);
    for (std::size_t i = 0; i < 6; ++i) CHECK(pca.components[i] == 0.0);

    CHECK_THROWS_AS(pca_project(Tensor::zeros({1, 4})), std::invalid_argument);
    CHECK_THROWS_AS(pca_project(Tensor::zeros({4, 1})), std::invalid_argument);
    CHECK_THROWS_AS(pca_project(Tensor::zeros({8})), std::invalid_argument);
}

TEST_CASE("centroid purity: separation, ties, errors") {
    Tensor rows = Tensor::zeros({6, 2});
    std::vector<std::size_t> labels = {0, 0, 0, 1, 1, 1};
    for (std::size_t i = 0; i < 3; ++i) {
        rows[i * 2] = -10.0 + 0.1 * static_cast<double>(i);
        rows[(i + 3) * 2] = 10.0 - 0.1 * static_cast<double>(i);
    }
    CHECK(centroid_purity(rows, labels, 2) == 1.0);

    // swap one label: that row lands on the wrong centroid
    std::vector<std::size_t> noisy = labels;
    std::swap(noisy[0], noisy[3]);
    CHECK(centroid_purity(rows, noisy, 2) == doctest::Approx(4.0 / 6.0));

    // all rows identical: every distance ties, lowest mode wins
    Tensor same = Tensor::full({4, 3}, 1.5);
    CHECK(centroid_purity(same, {0, 0, 1, 1}, 2) == 0.5);

    CHECK_THROWS_WITH_AS(centroid_purity(rows, {0, 0, 0, 0, 0, 0}, 2),
                         doctest::Contains("mode 1"), std::invalid_argument);
    CHECK_THROWS_AS(centroid_purity(rows, {0, 1}, 2), std::invalid_argument);
    CHECK_THROWS_AS(centroid_purity(rows, {0, 0, 0, 1, 1, 2}, 2), std::invalid_argument);
}

TEST_CASE("curves: schema, alpha=0 identity, re-parse equality") {
    const DistConfig dist = pinned_linear_dist(2.0, 1.0, 0.0);
    const TrainerState state = affine_state(0.3, -0.2);
    auto [task, data] = sample_task_with_data(dist, 1, StreamDomain::Curves, 0);

    InnerConfig inner;
    inner.alpha = 0.0;
    TempFile file("curves_alpha0.csv");
    emit_curves(state, task, data, dist, inner, file.path);
    auto rows = read_csv(file.path);
    REQUIRE(rows.size() == 202);
    REQUIRE(rows[0].size() == 2 + 6);
    CHECK(rows[0][0] == "x");
    CHECK(rows[0][1] == "true_y");
    CHECK(rows[0][2] == "step0");
    CHECK(rows[0][7] == "step5");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        for (std::size_t s = 3; s < 8; ++s) CHECK(rows[i][s] == rows[i][2]);
    }
    // grid endpoints and %.17g re-parse: x spans [x_low, x_high]
    CHECK(std::strtod(rows[1][0].c_str(), nullptr) == dist.x_low);
    CHECK(std::strtod(rows[201][0].c_str(), nullptr) == dist.x_high);
    // first prediction column equals the in-memory forward pass exactly
    const double x0 = std::strtod(rows[1][0].c_str(), nullptr);
    const Expr gx = column_tensor({x0});
    const Tensor p = evaluate(forward(state.learners[0], Modulation{}, gx));
    CHECK(std::strtod(rows[1][2].c_str(), nullptr) == p[0]);

    CHECK_THROWS_AS(emit_curves(state, task, data, dist, inner, "/nonexistent/dir/c.csv"),
                    std::runtime_error);
}

TEST_CASE("curves overfit oracle: adapted predictions track the true curve") {
    const DistConfig dist = pinned_linear_dist(2.0, 1.0, 0.0);
    auto [task, data] = sample_task_with_data(dist, 9, StreamDomain::Curves, 0);
    REQUIRE(task.a == 2.0);
    REQUIRE(task.b == 1.0);

    // overfit an affine learner on the single support set by plain GD
    TrainerState state = affine_state(0.0, 0.0);
    Modulation none;
    for (int step = 0; step < 5000; ++step) {
        state.learners[0] = snap_values(inner_adapt(state.learners[0], none, data.support_x,
                                                    data.support_y, 0.02, 1, GradOrder::First));
    }

    InnerConfig inner;  // alpha 0.01, 5 eval steps on top of the overfit start
    TempFile file("curves_overfit.csv");
    emit_curves(state, task, data, dist, inner, file.path);
    auto rows = read_csv(file.path);
    REQUIRE(rows.size() == 202);
    double rms = 0.0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const double truth = std::strtod(rows[i][1].c_str(), nullptr);
        const double step5 = std::strtod(rows[i][7].c_str(), nullptr);
        rms += (step5 - truth) * (step5 - truth);
    }
    rms = std::sqrt(rms / 201.0);
    CHECK(rms <= 0.05);
}

TEST_CASE("train log CSV layout") {
    TrainLog log;
    log.records = {{0, 1.5, 0.25}, {1, 0.75, 0.5}};
    TempFile file("trainlog.csv");
    write_train_log_csv(log, file.path);
    auto rows = read_csv(file.path);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == std::vector<std::string>{"iteration", "loss", "seconds"});
    CHECK(rows[1][0] == "0");
    CHECK(std::strtod(rows[1][1].c_str(), nullptr) == 1.5);
    CHECK(rows[2][2] == "0.5");
}
