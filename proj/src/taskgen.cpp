#include "modalmeta/taskgen.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace modalmeta {

std::string family_name(Family f) {
    switch (f) {
        case Family::Sinusoid: return "sinusoid";
        case Family::Linear: return "linear";
        case Family::Quadratic: return "quadratic";
    }
    throw std::invalid_argument("family_name: unknown family");
}

Family family_from_name(const std::string& name) {
    if (name == "sinusoid") return Family::Sinusoid;
    if (name == "linear") return Family::Linear;
    if (name == "quadratic") return Family::Quadratic;
    throw std::invalid_argument("unknown function family \"" + name +
                                "\" (expected sinusoid, linear, or quadratic)");
}

ModeSpec ModeSpec::sinusoid() {
    ModeSpec m;
    m.family = Family::Sinusoid;
    m.a = {0.1, 5.0};
    m.w = {0.5, 2.0};
    m.b = {0.0, 2.0 * std::numbers::pi};
    return m;
}

ModeSpec ModeSpec::linear() {
    ModeSpec m;
    m.family = Family::Linear;
    m.a = {-3.0, 3.0};
    m.b = {-3.0, 3.0};
    return m;
}

ModeSpec ModeSpec::quadratic() {
    ModeSpec m;
    m.family = Family::Quadratic;
    m.a = {0.02, 0.15};  // magnitude; sign drawn separately
    m.c = {-3.0, 3.0};
    m.b = {-3.0, 3.0};
    return m;
}

void DistConfig::validate() const {
    if (modes.empty()) throw std::invalid_argument("task distribution has no modes");
    if (!(x_low < x_high)) {
        throw std::invalid_argument("x range is empty: x_low must be below x_high");
    }
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise_sigma must be >= 0");
    if (support_size < 1) throw std::invalid_argument("support_size must be >= 1");
    if (query_size < 1) throw std::invalid_argument("query_size must be >= 1");
}

Task sample_task(const DistConfig& config, RandomStream& rng) {
    config.validate();
    Task t;
    t.mode_index = static_cast<std::size_t>(rng.below(config.modes.size()));
    const ModeSpec& mode = config.modes[t.mode_index];
    t.family = mode.family;
    switch (mode.family) {
        case Family::Sinusoid:
            t.a = rng.uniform(mode.a.lo, mode.a.hi);
            t.w = rng.uniform(mode.w.lo, mode.w.hi);
            t.b = rng.uniform(mode.b.lo, mode.b.hi);
            break;
        case Family::Linear:
            t.a = rng.uniform(mode.a.lo, mode.a.hi);
            t.b = rng.uniform(mode.b.lo, mode.b.hi);
            break;
        case Family::Quadratic: {
            const double sign = rng.below(2) == 0 ? 1.0 : -1.0;
            t.a = sign * rng.uniform(mode.a.lo, mode.a.hi);
            t.c = rng.uniform(mode.c.lo, mode.c.hi);
            t.b = rng.uniform(mode.b.lo, mode.b.hi);
            break;
        }
    }
    return t;
}

double true_value(const Task& task, double x) {
    switch (task.family) {
        case Family::Sinusoid: return task.a * std::sin(task.w * x + task.b);
        case Family::Linear: return task.a * x + task.b;
        case Family::Quadratic: {
            const double d = x - task.c;
            return task.a * d * d + task.b;
        }
    }
    throw std::invalid_argument("true_value: unknown family");
}

TaskData sample_dataset(const Task& task, const DistConfig& config, RandomStream& rng) {
    config.validate();
    TaskData data;
    data.support_x.reserve(config.support_size);
    data.support_y.reserve(config.support_size);
    for (std::size_t i = 0; i < config.support_size; ++i) {
        const double x = rng.uniform(config.x_low, config.x_high);
        const double y = true_value(task, x) + rng.normal(0.0, config.noise_sigma);
        data.support_x.push_back(x);
        data.support_y.push_back(y);
    }
    data.query_x.reserve(config.query_size);
    data.query_y.reserve(config.query_size);
    data.query_true.reserve(config.query_size);
    for (std::size_t i = 0; i < config.query_size; ++i) {
        const double x = rng.uniform(config.x_low, config.x_high);
        const double t = true_value(task, x);
        data.query_x.push_back(x);
        data.query_y.push_back(t + rng.normal(0.0, config.noise_sigma));
        data.query_true.push_back(t);
    }
    return data;
}

std::pair<Task, TaskData> sample_task_with_data(const DistConfig& config, std::uint64_t seed,
                                                StreamDomain domain, std::uint64_t counter) {
    RandomStream rng = RandomStream::keyed(seed, domain, counter);
    Task task = sample_task(config, rng);
    TaskData data = sample_dataset(task, config, rng);
    return {std::move(task), std::move(data)};
}

}  // namespace modalmeta
