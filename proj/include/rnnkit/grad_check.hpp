// Central finite-difference verification of autodiff gradients. Meant to run
// in double precision; tolerances assume ~1e-5 probe steps.

#pragma once

#include <functional>
#include <span>
#include <string>

#include "rnnkit/tensor.hpp"

namespace rnnkit {

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = false;
    // Coordinates of the worst element, for diagnostics.
    int worst_input = -1;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

// Compares d f / d inputs[k][i] between a tape backward pass and central
// differences (f(x+eps) - f(x-eps)) / 2eps, element by element. f must return
// a scalar tensor and be a pure function of the inputs' current values.
template <typename S>
GradCheckReport grad_check(const std::function<Tensor<S>()>& f, std::span<Tensor<S>> inputs,
                           double eps, double tol) {
    if (eps <= 0) throw std::invalid_argument("grad_check: eps must be positive");
    if (tol <= 0) throw std::invalid_argument("grad_check: tol must be positive");

    for (Tensor<S>& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }

    std::vector<std::vector<S>> analytic;
    {
        Tape<S> tape;
        typename Tape<S>::Scope scope(tape);
        Tensor<S> y = f();
        if (y.size() != 1)
            throw std::invalid_argument("grad_check: f must return a scalar, got shape " +
                                        shape_str(y.shape()));
        if (!y.all_finite()) throw std::runtime_error("grad_check: f produced a non-finite value");
        backward(y);
        for (Tensor<S>& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());
    }

    GradCheckReport report;
    report.pass = true;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        Tensor<S>& t = inputs[k];
        auto vals = t.data();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const S saved = vals[i];
            vals[i] = saved + static_cast<S>(eps);
            const double up = static_cast<double>(f().item());
            vals[i] = saved - static_cast<S>(eps);
            const double down = static_cast<double>(f().item());
            vals[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw std::runtime_error("grad_check: non-finite probe at input " + std::to_string(k) +
                                         " index " + std::to_string(i));
            const double numeric = (up - down) / (2.0 * eps);
            const double a = static_cast<double>(analytic[k][i]);
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_input = static_cast<int>(k);
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report.pass = report.max_rel_err < tol;
    return report;
}

}  // namespace rnnkit
