#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "mdcs/errors.hpp"

namespace mdcs::net {

enum class Schedule { Linear, Cosine };

struct SgdHyper {
    double lr0 = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    bool nesterov = true;
    Schedule schedule = Schedule::Linear;
    int total_epochs = 1;
};

/// linear: lr0 * (1 - epoch/total); cosine: lr0 * (1 + cos(pi*epoch/total)) / 2.
inline double lr_at(const SgdHyper& hyper, int epoch) {
    if (epoch < 0 || epoch >= hyper.total_epochs) {
        throw ConfigError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                          std::to_string(hyper.total_epochs) + ")");
    }
    const double t = static_cast<double>(epoch) / hyper.total_epochs;
    switch (hyper.schedule) {
        case Schedule::Linear: return hyper.lr0 * (1.0 - t);
        case Schedule::Cosine: return hyper.lr0 * 0.5 * (1.0 + std::cos(M_PI * t));
    }
    throw ConfigError("lr_at: unknown schedule");
}

struct SgdState {
    SgdHyper hyper;
    std::vector<double> velocity;

    SgdState() = default;
    SgdState(const SgdHyper& h, std::size_t param_count)
        : hyper(h), velocity(param_count, 0.0) {}
};

/// v <- m*v + g + wd*p, then p <- p - lr*(g + wd*p + m*v) with Nesterov or
/// p <- p - lr*v without.
inline void sgd_step(std::span<double> params, std::span<const double> grads,
                     SgdState& state, int epoch) {
    if (params.size() != grads.size() || params.size() != state.velocity.size()) {
        throw ConfigError("sgd_step: parameter, gradient, and buffer sizes differ");
    }
    const double lr = lr_at(state.hyper, epoch);
    const double m = state.hyper.momentum;
    const double wd = state.hyper.weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i] + wd * params[i];
        double& v = state.velocity[i];
        v = m * v + g;
        params[i] -= lr * (state.hyper.nesterov ? g + m * v : v);
    }
}

}  // namespace mdcs::net
