#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cardiogen/numerics/tensor.hpp"

namespace cardiogen {

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t input = 0;       // which input tensor held the worst coordinate
    std::size_t coordinate = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    // (analytic, numeric) for every coordinate, inputs in order.
    std::vector<std::pair<double, double>> pairs;
};

// Max relative error over `pairs` with the given denominator floor.
double max_relative_error(const GradCheckReport& report, double denominator_floor);

// Compares reverse-mode gradients against central differences. The relative
// error per coordinate is |a - n| / max(|a|, |n|, 1e-8). The perturbed
// evaluations run with graph construction disabled. Throws NumericError if an
// analytic gradient is non-finite.
// `denominator_floor` replaces the 1e-8 floor; single-precision diagnostics
// raise it to the rounding noise of a float difference quotient.
GradCheckReport grad_check_report(const std::function<Tensor()>& f, std::span<Tensor> inputs, Real eps,
                                  double denominator_floor = 1e-8);

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, Real eps);

}  // namespace cardiogen
