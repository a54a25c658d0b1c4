#include "modalmeta/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace modalmeta {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// splitmix64 finalizer
std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
}

}  // namespace

RandomStream RandomStream::keyed(std::uint64_t seed, StreamDomain domain, std::uint64_t counter) {
    std::uint64_t s = mix64(seed + kGolden);
    s = mix64(s ^ (static_cast<std::uint64_t>(domain) * 0xBF58476D1CE4E5B9ull));
    s = mix64(s ^ (counter * 0x94D049BB133111EBull));
    return RandomStream(s);
}

std::uint64_t RandomStream::next_u64() {
    state_ += kGolden;
    return mix64(state_);
}

double RandomStream::next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomStream::uniform(double lo, double hi) {
    return lo + (hi - lo) * next_unit();
}

double RandomStream::normal(double mu, double sigma) {
    // u1 in (0, 1] keeps the log finite
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = next_unit();
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    return mu + sigma * z;
}

std::uint64_t RandomStream::below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("RandomStream.below: n must be >= 1");
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

}  // namespace modalmeta
