#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "modalmeta/parallel.hpp"

using namespace modalmeta;

namespace {

struct ThreadsEnvGuard {
    explicit ThreadsEnvGuard(const char* value) {
        if (value) {
            setenv("MODALMETA_THREADS", value, 1);
        } else {
            unsetenv("MODALMETA_THREADS");
        }
    }
    ~ThreadsEnvGuard() { unsetenv("MODALMETA_THREADS"); }
};

double slot_value(std::size_t i) {
    double x = 0.1 * static_cast<double>(i + 1);
    return std::sin(x) * std::exp(-x) + std::sqrt(x);
}

}  // namespace

TEST_CASE("worker_count reads MODALMETA_THREADS per call") {
    {
        ThreadsEnvGuard guard("3");
        CHECK(worker_count() == 3);
    }
    {
        ThreadsEnvGuard guard("1");
        CHECK(worker_count() == 1);
    }
    {
        ThreadsEnvGuard guard(nullptr);
        CHECK(worker_count() >= 1);
    }
    {
        ThreadsEnvGuard guard("0");
        CHECK_THROWS_AS(worker_count(), std::invalid_argument);
    }
    {
        ThreadsEnvGuard guard("banana");
        CHECK_THROWS_AS(worker_count(), std::invalid_argument);
    }
}

TEST_CASE("parallel_for_index visits every index exactly once") {
    ThreadsEnvGuard guard("4");
    std::vector<int> hits(257, 0);
    parallel_for_index(hits.size(), [&hits](std::size_t i) { hits[i] += 1; });
    for (int h : hits) CHECK(h == 1);
}

TEST_CASE("serial_for_index runs ascending") {
    std::vector<std::size_t> order;
    serial_for_index(5, [&order](std::size_t i) { order.push_back(i); });
    CHECK(order == std::vector<std::size_t>{0, 1, 2, 3, 4});
}

TEST_CASE("slot-and-reduce results do not depend on the worker count") {
    auto run = [](const char* threads) {
        ThreadsEnvGuard guard(threads);
        std::vector<double> slots(100, 0.0);
        parallel_for_index(slots.size(), [&slots](std::size_t i) { slots[i] = slot_value(i); });
        double acc = 0.0;
        for (double v : slots) acc += v;  // fixed reduction order
        return acc;
    };
    double one = run("1");
    double five = run("5");
    CHECK(one == five);  // bitwise
}

TEST_CASE("lowest-index exception wins") {
    ThreadsEnvGuard guard("4");
    auto boom = [](std::size_t i) {
        if (i == 3 || i == 7 || i == 11) {
            throw std::runtime_error("task " + std::to_string(i) + " failed");
        }
    };
    CHECK_THROWS_WITH_AS(parallel_for_index(16, boom), doctest::Contains("task 3"),
                         std::runtime_error);
}
