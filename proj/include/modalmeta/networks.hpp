#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "modalmeta/graph.hpp"
#include "modalmeta/rng.hpp"

namespace modalmeta {

enum class ModulationKind : std::uint8_t { None, Film, Sigmoid, Softmax };

std::string modulation_name(ModulationKind kind);
ModulationKind modulation_from_name(const std::string& name);  // throws std::invalid_argument

/// Per-block modulation vectors, shaped [1, block_width]. FiLM fills
/// gamma/beta; Sigmoid and Softmax fill gate; None leaves everything empty.
struct Modulation {
    ModulationKind kind = ModulationKind::None;
    std::vector<Expr> gamma;
    std::vector<Expr> beta;
    std::vector<Expr> gate;

    std::size_t blocks() const {
        return kind == ModulationKind::Film ? gamma.size() : gate.size();
    }
};

/// Fully-connected learner parameters theta. Entry names are
/// learner.block{i}.weight ([w_{i-1}, w_i]) and learner.block{i}.bias
/// ([w_i]) for i = 1..N. Weights ~ U(+-sqrt(6/(fan_in+fan_out))), biases 0.
ParamSet init_learner(const std::vector<std::size_t>& widths, RandomStream& rng);

/// Encoder + modulation-generator parameters omega: a bidirectional gated
/// recurrent encoder over (x, y) pairs (encoder.{fwd,bwd}.{update,reset,cand}
/// .{w_in,w_hid,bias}) plus, per learner block, a one-hidden-layer generator
/// (generator.block{i}.{hidden,out}.{weight,bias}). Generator output layers
/// start at zero so FiLM begins as the identity modulation. kind=None means
/// no generator entries.
ParamSet init_encoder(std::size_t gru_hidden, const std::vector<std::size_t>& learner_widths,
                      std::size_t generator_hidden, ModulationKind kind, RandomStream& rng);

std::size_t learner_block_count(const ParamSet& theta);
std::vector<std::size_t> learner_widths(const ParamSet& theta);

/// x shaped [B, input_width]. Per block: F = x W + b, then the modulation
/// (F*gamma + beta for FiLM, F*gate for Sigmoid/Softmax), then ReLU on all
/// blocks but the last. The last block is modulated too.
Expr forward(const ParamSet& theta, const Modulation& tau, const Expr& x);

/// Bidirectional recurrent encoding of the support set, in sampled order.
/// Returns upsilon shaped [1, 2H]: forward-pass final hidden state
/// concatenated with the backward-pass one. Initial hidden states are zero.
Expr encode_task(const ParamSet& omega, const std::vector<double>& xs,
                 const std::vector<double>& ys);

/// Per-block modulation from upsilon. FiLM: gamma = 1 + raw_gamma, beta =
/// raw_beta (raw split in half); Sigmoid: gate = sigmoid(raw); Softmax: gate
/// = softmax(raw) over the block's units. Block widths are read from omega.
Modulation generate_modulation(const ParamSet& omega, const Expr& upsilon, ModulationKind kind);

/// [n, 1] constant leaf from a data column.
Expr column_tensor(const std::vector<double>& v);

}  // namespace modalmeta
