#pragma once

// Central finite-difference oracle for tape gradients (64-bit).

#include <cmath>
#include <functional>
#include <vector>

#include "ipens/autodiff.hpp"
#include "ipens/rng.hpp"

namespace ipens::testing {

using LossFn = std::function<ad::Var(ad::Tape<double>&, const std::vector<ad::Var>&)>;

inline double eval_loss(const LossFn& f, const std::vector<Tensor64>& params) {
    ad::Tape<double> tape;
    std::vector<ad::Var> vars;
    for (const auto& p : params) vars.push_back(tape.leaf(p));
    return tape.value(f(tape, vars))[0];
}

// Largest relative error ‖g_ad − g_fd‖ / max(‖g_fd‖, 1e-8) over all parameters.
inline double max_relative_gradient_error(const LossFn& f, std::vector<Tensor64> params, double eps = 1e-6) {
    ad::Tape<double> tape;
    std::vector<ad::Var> vars;
    for (const auto& p : params) vars.push_back(tape.leaf(p));
    tape.backward(f(tape, vars));
    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto& analytic = tape.grad(vars[k]);
        double diff2 = 0.0, ref2 = 0.0;
        for (std::size_t i = 0; i < params[k].size(); ++i) {
            const double saved = params[k][i];
            params[k][i] = saved + eps;
            const double up = eval_loss(f, params);
            params[k][i] = saved - eps;
            const double down = eval_loss(f, params);
            params[k][i] = saved;
            const double fd = (up - down) / (2.0 * eps);
            diff2 += (analytic[i] - fd) * (analytic[i] - fd);
            ref2 += fd * fd;
        }
        worst = std::max(worst, std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-8));
    }
    return worst;
}

inline Tensor64 random_tensor(Shape shape, Rng& rng, double low = -1.0, double high = 1.0) {
    Tensor64 t(std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(low, high);
    return t;
}

// sum(out ⊙ R) for a fixed random R, turning any output into a scalar loss
// with a generic upstream gradient.
inline ad::Var project(ad::Tape<double>& tape, ad::Var out, std::uint64_t seed) {
    Rng rng(seed);
    auto weights = random_tensor(tape.value(out).shape(), rng);
    return ad::sum(tape, ad::mul(tape, out, tape.leaf(weights, false)));
}

}  // namespace ipens::testing
