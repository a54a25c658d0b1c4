#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "modalmeta/rng.hpp"

namespace modalmeta {

enum class Family : std::uint8_t { Sinusoid, Linear, Quadratic };

std::string family_name(Family f);
Family family_from_name(const std::string& name);  // throws std::invalid_argument

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

/// One mode of the task distribution: a function family plus its parameter
/// ranges. For Quadratic, `a` is the magnitude range; the sign is drawn
/// separately with probability 1/2 each.
struct ModeSpec {
    Family family = Family::Sinusoid;
    Range a, w, b, c;

    static ModeSpec sinusoid();   // y = A sin(w x + b)
    static ModeSpec linear();     // y = A x + b
    static ModeSpec quadratic();  // y = A (x - c)^2 + b
};

struct Task {
    std::size_t mode_index = 0;
    Family family = Family::Sinusoid;
    double a = 0.0, w = 0.0, b = 0.0, c = 0.0;
};

struct TaskData {
    std::vector<double> support_x, support_y;
    std::vector<double> query_x, query_y;
    std::vector<double> query_true;  // noise-free targets, kept for evaluation
};

struct DistConfig {
    std::vector<ModeSpec> modes;
    double noise_sigma = 0.3;
    std::size_t support_size = 5;  // K
    std::size_t query_size = 10;   // L
    double x_low = -5.0;
    double x_high = 5.0;

    void validate() const;  // throws std::invalid_argument
};

/// Uniform mode choice, then uniform parameters within the mode's ranges.
/// Draw order is part of the determinism contract.
Task sample_task(const DistConfig& config, RandomStream& rng);

double true_value(const Task& task, double x);

/// x ~ Uniform[x_low, x_high), y = f(x) + N(0, sigma^2); support first,
/// then query, one (x, noise) pair per point.
TaskData sample_dataset(const Task& task, const DistConfig& config, RandomStream& rng);

/// Task and data drawn from a private stream keyed by (seed, domain,
/// counter), so tasks can be generated in any order or in parallel.
std::pair<Task, TaskData> sample_task_with_data(const DistConfig& config, std::uint64_t seed,
                                                StreamDomain domain, std::uint64_t counter);

}  // namespace modalmeta
