#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "mdcs/errors.hpp"

namespace mdcs::net {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;

    bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

/// Central finite differences of `loss` around `point`, compared against the
/// supplied analytic gradient. Relative error uses max(|a|, |n|, 1e-8) as
/// denominator. Throws NumericError if an evaluation is non-finite.
inline GradCheckReport grad_check(const std::function<double(std::span<const double>)>& loss,
                                  std::span<const double> point,
                                  std::span<const double> analytic_grad, double h) {
    if (h <= 0.0) throw ConfigError("grad_check: h must be positive");
    if (point.size() != analytic_grad.size()) {
        throw ConfigError("grad_check: gradient length does not match point");
    }
    std::vector<double> x(point.begin(), point.end());
    GradCheckReport report;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + h;
        const double up = loss(x);
        x[i] = saved - h;
        const double down = loss(x);
        x[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("grad_check: non-finite loss at component " + std::to_string(i));
        }
        const double numeric = (up - down) / (2.0 * h);
        const double analytic = analytic_grad[i];
        const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
        const double rel = std::fabs(analytic - numeric) / denom;
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
    }
    return report;
}

/// Convenience overload: `fn` evaluates loss and analytic gradient together;
/// finite differences only use the loss value.
inline GradCheckReport grad_check(
    const std::function<std::pair<double, std::vector<double>>(std::span<const double>)>& fn,
    std::span<const double> point, double h) {
    const auto [loss0, grad0] = fn(point);
    if (!std::isfinite(loss0)) throw NumericError("grad_check: non-finite loss at base point");
    return grad_check([&fn](std::span<const double> x) { return fn(x).first; }, point, grad0,
                      h);
}

}  // namespace mdcs::net
