#include "modalmeta/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace modalmeta {

namespace {

double scalar_loss(const ScalarBuilder& builder, const ParamSet& params, const char* what) {
    Expr loss = builder(params);
    if (!loss) throw std::runtime_error("finite_difference_check: builder returned null");
    const Tensor& v = evaluate(loss);
    if (v.size() != 1) {
        throw std::invalid_argument("finite_difference_check: builder produced shape " +
                                    shape_to_string(v.shape()) + ", expected a scalar");
    }
    double x = v.item();
    if (!std::isfinite(x)) {
        throw std::runtime_error(std::string("finite_difference_check: non-finite loss during ") +
                                 what);
    }
    return x;
}

}  // namespace

GradCheckReport finite_difference_check(const ScalarBuilder& builder, const ParamSet& params,
                                        double step, double tolerance, double analytic_scale) {
    if (!(step > 0.0)) throw std::invalid_argument("finite_difference_check: step must be > 0");

    Expr loss = builder(params);
    if (!loss) throw std::runtime_error("finite_difference_check: builder returned null");
    if (evaluate(loss).size() != 1) {
        throw std::invalid_argument("finite_difference_check: builder produced shape " +
                                    shape_to_string(evaluate(loss).shape()) +
                                    ", expected a scalar");
    }
    if (!std::isfinite(evaluate(loss).item())) {
        throw std::runtime_error("finite_difference_check: non-finite loss at base point");
    }
    ParamSet grads = gradient(loss, params);

    GradCheckReport report;
    report.step = step;
    report.tolerance = tolerance;

    for (const auto& [name, param] : params) {
        const Tensor& base = evaluate(param);
        const Tensor& analytic_tensor = evaluate(grads.at(name));
        if (!analytic_tensor.all_finite()) {
            throw std::runtime_error("finite_difference_check: non-finite analytic gradient for " +
                                     name);
        }
        for (std::size_t i = 0; i < base.size(); ++i) {
            Tensor plus = base;
            plus[i] += step;
            Tensor minus = base;
            minus[i] -= step;
            double f_plus = scalar_loss(builder, params.with_value(name, std::move(plus)),
                                        "forward perturbation");
            double f_minus = scalar_loss(builder, params.with_value(name, std::move(minus)),
                                         "backward perturbation");
            double numeric = (f_plus - f_minus) / (2.0 * step);
            double analytic = analytic_tensor[i] * analytic_scale;
            double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
            ++report.checked_entries;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = name;
                report.worst_entry = i;
            }
        }
    }
    report.pass = report.max_rel_error <= tolerance;
    return report;
}

}  // namespace modalmeta
