#include "cardiogen/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace cardiogen {

GradCheckReport grad_check_report(const std::function<Tensor()>& f, std::span<Tensor> inputs, Real eps,
                                  double denominator_floor) {
    if (!(eps > 0)) {
        throw ConfigError("grad_check: eps must be positive");
    }
    for (auto& in : inputs) {
        in.set_requires_grad(true);
        in.zero_grad();
    }
    Tensor loss = f();
    loss.backward();
    std::vector<std::vector<Real>> analytic;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto g = inputs[k].grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!std::isfinite(g[i])) {
                throw NumericError("grad_check: non-finite analytic gradient at input " + std::to_string(k) +
                                   " coordinate " + std::to_string(i));
            }
        }
        analytic.emplace_back(g.begin(), g.end());
    }
    GradCheckReport report;
    NoGradGuard guard;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto data = inputs[k].mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const Real saved = data[i];
            data[i] = saved + eps;
            const double xp = data[i];
            const double fp = f().item();
            data[i] = saved - eps;
            const double xm = data[i];
            const double fm = f().item();
            data[i] = saved;
            // The representable step, not 2 * eps, is the true divisor.
            const double numeric = (fp - fm) / (xp - xm);
            const double a = analytic[k][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), denominator_floor});
            const double rel = std::abs(a - numeric) / denom;
            report.pairs.emplace_back(a, numeric);
            if (rel > report.max_relative_error) {
                report.max_relative_error = rel;
                report.input = k;
                report.coordinate = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    return report;
}

double max_relative_error(const GradCheckReport& report, double denominator_floor) {
    double worst = 0.0;
    for (const auto& [a, n] : report.pairs) {
        worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), denominator_floor}));
    }
    return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, Real eps) {
    std::vector<Tensor> inputs{Tensor::from(x.shape(), std::vector<Real>(x.data().begin(), x.data().end()), true)};
    Tensor leaf = inputs[0];
    return grad_check_report([&] { return f(leaf); }, inputs, eps).max_relative_error;
}

}  // namespace cardiogen
