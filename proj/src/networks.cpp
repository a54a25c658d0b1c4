#include "modalmeta/networks.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace modalmeta {

namespace {

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, RandomStream& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
    return t;
}

std::string block_key(std::size_t i) { return "learner.block" + std::to_string(i); }
std::string gen_key(std::size_t i) { return "generator.block" + std::to_string(i); }

void check_widths(const std::vector<std::size_t>& widths) {
    if (widths.size() < 2) {
        throw std::invalid_argument("learner needs at least input and output widths");
    }
    for (std::size_t w : widths) {
        if (w == 0) throw std::invalid_argument("learner widths must be positive");
    }
}

}  // namespace

std::string modulation_name(ModulationKind kind) {
    switch (kind) {
        case ModulationKind::None: return "none";
        case ModulationKind::Film: return "film";
        case ModulationKind::Sigmoid: return "sigmoid";
        case ModulationKind::Softmax: return "softmax";
    }
    throw std::invalid_argument("modulation_name: unknown kind");
}

ModulationKind modulation_from_name(const std::string& name) {
    if (name == "none") return ModulationKind::None;
    if (name == "film") return ModulationKind::Film;
    if (name == "sigmoid") return ModulationKind::Sigmoid;
    if (name == "softmax") return ModulationKind::Softmax;
    throw std::invalid_argument("unknown modulation \"" + name +
                                "\" (expected none, film, sigmoid, or softmax)");
}

ParamSet init_learner(const std::vector<std::size_t>& widths, RandomStream& rng) {
    check_widths(widths);
    ParamSet theta;
    for (std::size_t i = 1; i < widths.size(); ++i) {
        const std::size_t fan_in = widths[i - 1], fan_out = widths[i];
        const std::string key = block_key(i);
        theta.add(key + ".weight",
                  leaf(glorot({fan_in, fan_out}, fan_in, fan_out, rng), key + ".weight"));
        theta.add(key + ".bias", leaf(Tensor::zeros({fan_out}), key + ".bias"));
    }
    return theta;
}

ParamSet init_encoder(std::size_t gru_hidden, const std::vector<std::size_t>& learner_widths,
                      std::size_t generator_hidden, ModulationKind kind, RandomStream& rng) {
    check_widths(learner_widths);
    if (gru_hidden < 1) throw std::invalid_argument("gru_hidden must be >= 1");
    const std::size_t h = gru_hidden;
    ParamSet omega;
    for (const char* dir : {"fwd", "bwd"}) {
        for (const char* gate : {"update", "reset", "cand"}) {
            const std::string key = std::string("encoder.") + dir + "." + gate;
            omega.add(key + ".w_in", leaf(glorot({2, h}, 2, h, rng), key + ".w_in"));
            omega.add(key + ".w_hid", leaf(glorot({h, h}, h, h, rng), key + ".w_hid"));
            omega.add(key + ".bias", leaf(Tensor::zeros({h}), key + ".bias"));
        }
    }
    if (kind == ModulationKind::None) return omega;
    if (generator_hidden < 1) throw std::invalid_argument("generator_hidden must be >= 1");
    const std::size_t g = generator_hidden;
    for (std::size_t i = 1; i < learner_widths.size(); ++i) {
        const std::size_t width = learner_widths[i];
        const std::size_t out_dim = (kind == ModulationKind::Film ? 2 : 1) * width;
        const std::string key = gen_key(i);
        omega.add(key + ".hidden.weight",
                  leaf(glorot({2 * h, g}, 2 * h, g, rng), key + ".hidden.weight"));
        omega.add(key + ".hidden.bias", leaf(Tensor::zeros({g}), key + ".hidden.bias"));
        // zero output layer: modulation starts at its neutral point
        omega.add(key + ".out.weight", leaf(Tensor::zeros({g, out_dim}), key + ".out.weight"));
        omega.add(key + ".out.bias", leaf(Tensor::zeros({out_dim}), key + ".out.bias"));
    }
    return omega;
}

std::size_t learner_block_count(const ParamSet& theta) {
    std::size_t n = 0;
    while (theta.contains(block_key(n + 1) + ".weight")) ++n;
    return n;
}

std::vector<std::size_t> learner_widths(const ParamSet& theta) {
    const std::size_t n = learner_block_count(theta);
    if (n == 0) throw std::invalid_argument("parameter set has no learner blocks");
    std::vector<std::size_t> widths;
    widths.push_back(evaluate(theta.at(block_key(1) + ".weight")).shape()[0]);
    for (std::size_t i = 1; i <= n; ++i) {
        widths.push_back(evaluate(theta.at(block_key(i) + ".weight")).shape()[1]);
    }
    return widths;
}

Expr forward(const ParamSet& theta, const Modulation& tau, const Expr& x) {
    if (!x) throw std::invalid_argument("forward: null input");
    if (evaluate(x).rank() != 2) {
        throw std::invalid_argument("forward: input shape " +
                                    shape_to_string(evaluate(x).shape()) + " is not [batch, width]");
    }
    const std::size_t n = learner_block_count(theta);
    if (n == 0) throw std::invalid_argument("forward: parameter set has no learner blocks");
    if (tau.kind != ModulationKind::None && tau.blocks() != n) {
        throw std::invalid_argument("forward: modulation covers " + std::to_string(tau.blocks()) +
                                    " blocks, learner has " + std::to_string(n));
    }
    auto check_mod = [](const Expr& v, std::size_t width, std::size_t block) {
        if (evaluate(v).shape() != Shape{1, width}) {
            throw std::invalid_argument("forward: modulation shape " +
                                        shape_to_string(evaluate(v).shape()) + " for block " +
                                        std::to_string(block) + " of width " +
                                        std::to_string(width));
        }
    };
    Expr h = x;
    for (std::size_t i = 1; i <= n; ++i) {
        const std::string key = block_key(i);
        const Expr& w = theta.at(key + ".weight");
        const std::size_t width = evaluate(w).shape()[1];
        Expr f = matmul(h, w);
        if (theta.contains(key + ".bias")) f = add(f, theta.at(key + ".bias"));
        switch (tau.kind) {
            case ModulationKind::None: break;
            case ModulationKind::Film:
                check_mod(tau.gamma[i - 1], width, i);
                check_mod(tau.beta[i - 1], width, i);
                f = add(mul(f, tau.gamma[i - 1]), tau.beta[i - 1]);
                break;
            case ModulationKind::Sigmoid:
            case ModulationKind::Softmax:
                check_mod(tau.gate[i - 1], width, i);
                f = mul(f, tau.gate[i - 1]);
                break;
        }
        h = i < n ? relu(f) : f;
    }
    return h;
}

Expr encode_task(const ParamSet& omega, const std::vector<double>& xs,
                 const std::vector<double>& ys) {
    if (xs.empty()) throw std::invalid_argument("encode_task: empty support set");
    if (xs.size() != ys.size()) {
        throw std::invalid_argument("encode_task: support sizes differ (" +
                                    std::to_string(xs.size()) + " x vs " +
                                    std::to_string(ys.size()) + " y)");
    }
    const std::size_t h_dim = evaluate(omega.at("encoder.fwd.update.bias")).size();
    const std::size_t k = xs.size();

    auto run_direction = [&](const std::string& dir, bool reversed) {
        struct GateRefs {
            const Expr *w_in, *w_hid, *bias;
        };
        auto gate = [&](const char* name) {
            const std::string key = "encoder." + dir + "." + name;
            return GateRefs{&omega.at(key + ".w_in"), &omega.at(key + ".w_hid"),
                            &omega.at(key + ".bias")};
        };
        const GateRefs update = gate("update"), reset = gate("reset"), cand = gate("cand");
        const Expr one = scalar_expr(1.0);
        Expr h = leaf(Tensor::zeros({1, h_dim}));
        for (std::size_t step = 0; step < k; ++step) {
            const std::size_t idx = reversed ? k - 1 - step : step;
            Expr in = leaf(Tensor({1, 2}, {xs[idx], ys[idx]}));
            Expr z = sigmoid(add(add(matmul(in, *update.w_in), matmul(h, *update.w_hid)),
                                 *update.bias));
            Expr r = sigmoid(add(add(matmul(in, *reset.w_in), matmul(h, *reset.w_hid)),
                                 *reset.bias));
            Expr candidate = tanh(add(add(matmul(in, *cand.w_in), matmul(mul(r, h), *cand.w_hid)),
                                      *cand.bias));
            h = add(mul(sub(one, z), candidate), mul(z, h));
        }
        return h;
    };

    Expr h_fwd = run_direction("fwd", false);
    Expr h_bwd = run_direction("bwd", true);
    return concat({h_fwd, h_bwd}, 1);
}

Modulation generate_modulation(const ParamSet& omega, const Expr& upsilon, ModulationKind kind) {
    Modulation m;
    m.kind = kind;
    if (kind == ModulationKind::None) return m;
    if (!upsilon) throw std::invalid_argument("generate_modulation: null embedding");
    if (evaluate(upsilon).rank() != 2 || evaluate(upsilon).shape()[0] != 1) {
        throw std::invalid_argument("generate_modulation: embedding shape " +
                                    shape_to_string(evaluate(upsilon).shape()) +
                                    " is not [1, dim]");
    }
    for (std::size_t i = 1;; ++i) {
        const std::string key = gen_key(i);
        if (!omega.contains(key + ".hidden.weight")) {
            if (i == 1) {
                throw std::invalid_argument("generate_modulation: no generator parameters for " +
                                            modulation_name(kind));
            }
            break;
        }
        Expr hidden = relu(add(matmul(upsilon, omega.at(key + ".hidden.weight")),
                               omega.at(key + ".hidden.bias")));
        Expr raw = add(matmul(hidden, omega.at(key + ".out.weight")), omega.at(key + ".out.bias"));
        const std::size_t out_dim = evaluate(raw).shape()[1];
        switch (kind) {
            case ModulationKind::Film: {
                const std::size_t width = out_dim / 2;
                Expr raw_gamma = slice(raw, {0, 0}, {1, width});
                Expr raw_beta = slice(raw, {0, width}, {1, 2 * width});
                m.gamma.push_back(add(leaf(Tensor::full({1, width}, 1.0)), raw_gamma));
                m.beta.push_back(raw_beta);
                break;
            }
            case ModulationKind::Sigmoid:
                m.gate.push_back(sigmoid(raw));
                break;
            case ModulationKind::Softmax:
                m.gate.push_back(softmax(raw, 1));
                break;
            case ModulationKind::None: break;  // unreachable
        }
    }
    return m;
}

Expr column_tensor(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("column_tensor: empty column");
    return leaf(Tensor({v.size(), 1}, v));
}

}  // namespace modalmeta
