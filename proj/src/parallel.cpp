#include "modalmeta/parallel.hpp"

#include <omp.h>

#include <cstdlib>
#include <exception>
#include <stdexcept>
#include <string>

namespace modalmeta {

std::size_t worker_count() {
    if (const char* env = std::getenv("MODALMETA_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1) {
            throw std::invalid_argument("MODALMETA_THREADS must be a positive integer, got \"" +
                                        std::string(env) + "\"");
        }
        return static_cast<std::size_t>(v);
    }
    return static_cast<std::size_t>(omp_get_max_threads());
}

void serial_for_index(std::size_t n, const std::function<void(std::size_t)>& fn) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
}

void parallel_for_index(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = worker_count();
    if (workers <= 1 || n <= 1) {
        serial_for_index(n, fn);
        return;
    }
    std::exception_ptr error;
    std::size_t error_index = n;
#pragma omp parallel for schedule(static) num_threads(static_cast<int>(workers))
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        try {
            fn(static_cast<std::size_t>(i));
        } catch (...) {
#pragma omp critical(modalmeta_parallel_error)
            {
                if (static_cast<std::size_t>(i) < error_index) {
                    error_index = static_cast<std::size_t>(i);
                    error = std::current_exception();
                }
            }
        }
    }
    if (error) std::rethrow_exception(error);
}

}  // namespace modalmeta
