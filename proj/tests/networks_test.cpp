#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "modalmeta/gradcheck.hpp"
#include "modalmeta/networks.hpp"

using namespace modalmeta;

namespace {

ParamSet merge(const ParamSet& a, const ParamSet& b) {
    ParamSet out;
    for (const auto& [name, e] : a) out.add(name, e);
    for (const auto& [name, e] : b) out.add(name, e);
    return out;
}

ParamSet zero_encoder(std::size_t h) {
    RandomStream rs = RandomStream::keyed(0, StreamDomain::Init, 0);
    ParamSet omega = init_encoder(h, {1, 4, 1}, 4, ModulationKind::None, rs);
    ParamSet zeroed = omega;
    for (const auto& [name, e] : omega) {
        zeroed = zeroed.with_value(name, Tensor::zeros(evaluate(e).shape()));
    }
    return zeroed;
}

}  // namespace

TEST_CASE("init_learner follows the stated initialization") {
    std::vector<std::size_t> widths{1, 100, 100, 100, 100, 1};
    RandomStream rs1 = RandomStream::keyed(3, StreamDomain::Init, 0);
    ParamSet theta = init_learner(widths, rs1);
    CHECK(learner_block_count(theta) == 5);
    CHECK(learner_widths(theta) == widths);

    for (std::size_t i = 1; i <= 5; ++i) {
        const std::string key = "learner.block" + std::to_string(i);
        const Tensor& w = evaluate(theta.at(key + ".weight"));
        const Tensor& b = evaluate(theta.at(key + ".bias"));
        const double limit =
            std::sqrt(6.0 / static_cast<double>(widths[i - 1] + widths[i]));
        for (std::size_t k = 0; k < w.size(); ++k) {
            REQUIRE(w[k] >= -limit);
            REQUIRE(w[k] <= limit);
        }
        for (std::size_t k = 0; k < b.size(); ++k) REQUIRE(b[k] == 0.0);
    }

    RandomStream rs2 = RandomStream::keyed(3, StreamDomain::Init, 0);
    ParamSet again = init_learner(widths, rs2);
    for (const auto& [name, e] : theta) {
        CHECK(evaluate(e) == evaluate(again.at(name)));
    }

    RandomStream rs3 = RandomStream::keyed(3, StreamDomain::Init, 0);
    CHECK_THROWS_AS(init_learner({1, 0, 1}, rs3), std::invalid_argument);
    CHECK_THROWS_AS(init_learner({1}, rs3), std::invalid_argument);
}

TEST_CASE("forward computes the modulated blocks") {
    // identity single-block network
    ParamSet tiny;
    tiny.add("learner.block1.weight", leaf(Tensor({1, 1}, {1.0})));
    tiny.add("learner.block1.bias", leaf(Tensor({1}, {0.0})));
    Modulation none;
    Expr x = leaf(Tensor({1, 1}, {2.0}));
    CHECK(evaluate(forward(tiny, none, x)).item() == 2.0);

    // FiLM arithmetic on a fixed pre-activation: F=[1,2], gamma=[2,0.5],
    // beta=[-1,1] -> [1,2]
    ParamSet ident2;
    ident2.add("learner.block1.weight", leaf(Tensor({2, 2}, {1, 0, 0, 1})));
    ident2.add("learner.block1.bias", leaf(Tensor({2}, {0, 0})));
    Modulation film;
    film.kind = ModulationKind::Film;
    film.gamma.push_back(leaf(Tensor({1, 2}, {2.0, 0.5})));
    film.beta.push_back(leaf(Tensor({1, 2}, {-1.0, 1.0})));
    Tensor out = evaluate(forward(ident2, film, leaf(Tensor({1, 2}, {1.0, 2.0}))));
    CHECK(out == Tensor({1, 2}, {1.0, 2.0}));

    // input-width and modulation-width mismatches
    CHECK_THROWS_AS(forward(tiny, none, leaf(Tensor({1, 3}, {1, 2, 3}))),
                    std::invalid_argument);
    CHECK_THROWS_AS(forward(tiny, film, leaf(Tensor({1, 1}, {2.0}))),
                    std::invalid_argument);  // gamma is [1,2], block width is 1

    // modulation is shared across the batch rows
    Tensor batched = evaluate(forward(ident2, film, leaf(Tensor({2, 2}, {1, 2, 1, 2}))));
    CHECK(batched == Tensor({2, 2}, {1.0, 2.0, 1.0, 2.0}));
}

TEST_CASE("FiLM at identity equals the unmodulated forward bit-for-bit") {
    RandomStream rs = RandomStream::keyed(8, StreamDomain::Init, 1);
    std::vector<std::size_t> widths{1, 8, 8, 1};
    ParamSet theta = init_learner(widths, rs);
    Modulation none;
    Modulation film;
    film.kind = ModulationKind::Film;
    for (std::size_t i = 1; i < widths.size(); ++i) {
        film.gamma.push_back(leaf(Tensor::full({1, widths[i]}, 1.0)));
        film.beta.push_back(leaf(Tensor::zeros({1, widths[i]})));
    }
    Expr x = column_tensor({-3.0, -1.0, 0.5, 4.0});
    CHECK(evaluate(forward(theta, film, x)) == evaluate(forward(theta, none, x)));
}

TEST_CASE("zero-weight recurrent encoder fixes the embedding at zero") {
    ParamSet omega = zero_encoder(5);
    Expr ups = encode_task(omega, {1.0, 2.0, -0.5}, {0.3, -1.0, 2.0});
    CHECK(evaluate(ups) == Tensor::zeros({1, 10}));
}

TEST_CASE("embedding dimension is twice the hidden size") {
    RandomStream rs = RandomStream::keyed(9, StreamDomain::Init, 2);
    ParamSet omega = init_encoder(40, {1, 8, 1}, 10, ModulationKind::Film, rs);
    Expr ups = encode_task(omega, {0.1, 0.2}, {1.0, -1.0});
    CHECK(evaluate(ups).shape() == Shape{1, 80});

    // deterministic, and order-sensitive by construction
    Expr again = encode_task(omega, {0.1, 0.2}, {1.0, -1.0});
    CHECK(evaluate(again) == evaluate(ups));
    Expr flipped = encode_task(omega, {0.2, 0.1}, {-1.0, 1.0});
    CHECK_FALSE(evaluate(flipped) == evaluate(ups));

    CHECK_THROWS_AS(encode_task(omega, {}, {}), std::invalid_argument);
    CHECK_THROWS_AS(encode_task(omega, {0.1}, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("generator emits the advertised shapes and neutral start") {
    RandomStream rs = RandomStream::keyed(10, StreamDomain::Init, 3);
    std::vector<std::size_t> widths{1, 6, 4, 1};

    ParamSet omega_f = init_encoder(4, widths, 8, ModulationKind::Film, rs);
    Expr ups = encode_task(omega_f, {0.5, -0.5}, {1.0, 0.0});
    Modulation film = generate_modulation(omega_f, ups, ModulationKind::Film);
    REQUIRE(film.blocks() == 3);
    // zero output layers force the identity modulation exactly
    CHECK(evaluate(film.gamma[0]) == Tensor::full({1, 6}, 1.0));
    CHECK(evaluate(film.beta[0]) == Tensor::zeros({1, 6}));
    CHECK(evaluate(film.gamma[2]) == Tensor::full({1, 1}, 1.0));

    ParamSet omega_s = init_encoder(4, widths, 8, ModulationKind::Sigmoid, rs);
    // make the output layer nonzero so gates are informative
    ParamSet omega_s2 = omega_s.with_value(
        "generator.block1.out.weight", Tensor::full({8, 6}, 0.3));
    Expr ups_s = encode_task(omega_s2, {0.5, -0.5}, {1.0, 0.0});
    Modulation sig = generate_modulation(omega_s2, ups_s, ModulationKind::Sigmoid);
    REQUIRE(sig.blocks() == 3);
    for (const Expr& g : sig.gate) {
        const Tensor& t = evaluate(g);
        for (std::size_t i = 0; i < t.size(); ++i) {
            CHECK(t[i] > 0.0);
            CHECK(t[i] < 1.0);
        }
    }

    ParamSet omega_m = init_encoder(4, widths, 8, ModulationKind::Softmax, rs);
    ParamSet omega_m2 = omega_m.with_value(
        "generator.block2.out.weight", Tensor::full({8, 4}, -0.2));
    Expr ups_m = encode_task(omega_m2, {0.5, -0.5}, {1.0, 0.0});
    Modulation soft = generate_modulation(omega_m2, ups_m, ModulationKind::Softmax);
    REQUIRE(soft.blocks() == 3);
    for (std::size_t b = 0; b < 3; ++b) {
        const Tensor& t = evaluate(soft.gate[b]);
        CHECK(t.shape() == Shape{1, widths[b + 1]});
        double total = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            CHECK(t[i] > 0.0);
            total += t[i];
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
    }

    Modulation empty = generate_modulation(omega_f, ups, ModulationKind::None);
    CHECK(empty.blocks() == 0);
    CHECK_THROWS_AS(generate_modulation(zero_encoder(4), ups, ModulationKind::Film),
                    std::invalid_argument);
}

TEST_CASE("modulated forwards are differentiable end-to-end") {
    const std::vector<std::size_t> widths{1, 8, 8, 1};
    const std::vector<double> sx{-2.0, 0.7, 3.1};
    const std::vector<double> sy{0.4, -1.2, 0.9};
    const std::vector<double> qx{-4.0, -1.0, 1.5, 4.2};
    const std::vector<double> qy{1.0, 0.2, -0.7, 1.4};
    Expr qx_col = column_tensor(qx);
    Expr qy_col = column_tensor(qy);

    for (ModulationKind kind : {ModulationKind::Film, ModulationKind::Sigmoid,
                                ModulationKind::Softmax, ModulationKind::None}) {
        CAPTURE(modulation_name(kind));
        RandomStream rs = RandomStream::keyed(12, StreamDomain::GradCheck, 4);
        ParamSet theta = init_learner(widths, rs);
        ParamSet omega = init_encoder(4, widths, 6, kind, rs);
        // perturb generator output layers so the modulated paths carry signal
        if (kind != ModulationKind::None) {
            for (std::size_t i = 1; i < widths.size(); ++i) {
                const std::string key = "generator.block" + std::to_string(i) + ".out.weight";
                Tensor w = evaluate(omega.at(key));
                for (std::size_t k = 0; k < w.size(); ++k) w[k] = rs.uniform(-0.4, 0.4);
                omega = omega.with_value(key, std::move(w));
            }
        }
        ParamSet params = kind == ModulationKind::None ? theta : merge(theta, omega);

        auto builder = [&](const ParamSet& p) {
            Modulation tau;
            if (kind != ModulationKind::None) {
                Expr ups = encode_task(p, sx, sy);
                tau = generate_modulation(p, ups, kind);
            }
            Expr pred = forward(p, tau, qx_col);
            return mean_all(square(sub(pred, qy_col)));
        };
        GradCheckReport report = finite_difference_check(builder, params, 1e-5, 1e-6);
        CAPTURE(report.max_rel_error);
        CAPTURE(report.worst_param);
        CHECK(report.pass);
    }
}
