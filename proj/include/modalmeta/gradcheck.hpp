#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "modalmeta/graph.hpp"

namespace modalmeta {

struct GradCheckReport {
    bool pass = false;
    double max_rel_error = 0.0;
    double step = 0.0;
    double tolerance = 0.0;
    std::string worst_param;
    std::size_t worst_entry = 0;
    std::size_t checked_entries = 0;
};

/// Builds a scalar loss from bound parameters. Must be deterministic: the
/// checker re-invokes it with perturbed parameter values.
using ScalarBuilder = std::function<Expr(const ParamSet&)>;

/// Central-difference validation of `gradient` on every entry of `params`.
/// Relative error uses a max(1, |analytic|) denominator. `analytic_scale`
/// multiplies the analytic gradient before comparison; pass 1.01 to turn the
/// check into its own negative control.
GradCheckReport finite_difference_check(const ScalarBuilder& builder, const ParamSet& params,
                                        double step, double tolerance,
                                        double analytic_scale = 1.0);

}  // namespace modalmeta
