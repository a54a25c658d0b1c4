// Times the per-task meta-training loop with the serial reference path and
// with the OpenMP path, verifies the two produce bitwise-identical
// parameters, and reports the speedup.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>

#include <omp.h>

#include "modalmeta/meta.hpp"
#include "modalmeta/networks.hpp"

using namespace modalmeta;

namespace {

struct PhaseResult {
    double seconds = 0.0;
    TrainerState state;
};

PhaseResult run_phase(const ModelConfig& model, const MetaConfig& meta, const DistConfig& dist,
                      std::size_t iterations, const char* threads) {
    setenv("MODALMETA_THREADS", threads, 1);
    InnerConfig inner;
    PhaseResult result;
    result.state = init_trainer(model, meta, 1, dist.modes.size());
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < iterations; ++i) {
        meta_train_step(result.state, inner, meta, dist, 1);
    }
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

bool states_equal(const TrainerState& a, const TrainerState& b) {
    if (a.learners.size() != b.learners.size()) return false;
    for (std::size_t m = 0; m < a.learners.size(); ++m) {
        if (a.learners[m].size() != b.learners[m].size()) return false;
        for (std::size_t i = 0; i < a.learners[m].size(); ++i) {
            if (!(evaluate(a.learners[m].item(i).second) ==
                  evaluate(b.learners[m].item(i).second))) {
                return false;
            }
        }
    }
    if (a.omega.size() != b.omega.size()) return false;
    for (std::size_t i = 0; i < a.omega.size(); ++i) {
        if (!(evaluate(a.omega.item(i).second) == evaluate(b.omega.item(i).second))) return false;
    }
    return true;
}

}  // namespace

int main(int argc, char** argv) {
    std::size_t iterations = 30;
    int threads = omp_get_max_threads();
    if (argc > 1) iterations = static_cast<std::size_t>(std::strtoull(argv[1], nullptr, 10));
    if (argc > 2) threads = std::atoi(argv[2]);
    if (iterations == 0 || threads < 1) {
        std::fprintf(stderr, "usage: %s [iterations] [threads]\n", argv[0]);
        return 2;
    }

    ModelConfig model;
    model.widths = {1, 40, 40, 40, 40, 1};
    model.gru_hidden = 16;
    MetaConfig meta;
    meta.trainer = TrainerKind::MuMoMaml;
    meta.modulation = ModulationKind::Film;
    meta.meta_batch = 10;
    DistConfig dist;
    dist.modes = {ModeSpec::sinusoid(), ModeSpec::linear()};

    std::printf("mumomaml(film), widths [1,40,40,40,40,1], H=16, batch %zu, %zu iterations\n",
                meta.meta_batch, iterations);
    const PhaseResult serial = run_phase(model, meta, dist, iterations, "1");
    const PhaseResult parallel =
        run_phase(model, meta, dist, iterations, std::to_string(threads).c_str());
    unsetenv("MODALMETA_THREADS");

    const double serial_ms = 1e3 * serial.seconds / static_cast<double>(iterations);
    const double parallel_ms = 1e3 * parallel.seconds / static_cast<double>(iterations);
    std::printf("serial   (1 worker):   %8.2f ms/iteration\n", serial_ms);
    std::printf("parallel (%d workers): %8.2f ms/iteration\n", threads, parallel_ms);
    std::printf("speedup: %.2fx\n", serial_ms / parallel_ms);

    const bool identical = states_equal(serial.state, parallel.state);
    std::printf("bitwise identical results: %s\n", identical ? "yes" : "NO");
    return identical ? 0 : 1;
}
