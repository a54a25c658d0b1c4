#pragma once

#include <cstdint>

namespace modalmeta {

// Stream domains keep independent uses of the same seed decorrelated.
// Values are part of the reproducibility contract: changing them changes
// every sampled task.
enum class StreamDomain : std::uint64_t {
    Init = 1,
    TrainTasks = 2,
    EvalTasks = 3,
    Embedding = 4,
    Curves = 5,
    GradCheck = 6,
};

/// Counter-based pseudo-random stream (splitmix64 core). A stream is fully
/// determined by (seed, domain, counter), so streams for different tasks can
/// be created in any order, from any thread, and always produce the same
/// draws. Not cryptographic.
class RandomStream {
public:
    RandomStream() : state_(0) {}

    static RandomStream keyed(std::uint64_t seed, StreamDomain domain, std::uint64_t counter);

    std::uint64_t next_u64();

    // uniform in [0, 1), 53-bit resolution
    double next_unit();

    double uniform(double lo, double hi);

    // Box-Muller transform; consumes exactly two uniforms per call
    double normal(double mu, double sigma);

    // uniform integer in [0, n), n >= 1
    std::uint64_t below(std::uint64_t n);

private:
    explicit RandomStream(std::uint64_t state) : state_(state) {}
    std::uint64_t state_;
};

}  // namespace modalmeta
