#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "tc3d/tensor.hpp"

namespace tc3d {

/// SGD with momentum, velocity form: v <- momentum * v + g; p <- p - lr * v.
struct OptimState {
    std::vector<Tensor> velocity;
    double learning_rate = 0.005;
    double momentum = 0.9;
    double max_grad_norm = 0.0; // rescale the whole gradient to at most this L2 norm; 0 = off

    OptimState() = default;
    OptimState(const std::vector<Tensor*>& params, double lr, double mom) : learning_rate(lr), momentum(mom)
    {
        if (!(lr >= 0.0)) throw std::invalid_argument("learning rate must be nonnegative");
        if (!(mom >= 0.0 && mom < 1.0)) throw std::invalid_argument("momentum must lie in [0,1)");
        velocity.reserve(params.size());
        for (const Tensor* p : params) velocity.emplace_back(p->shape());
    }
};

inline void sgd_momentum_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, OptimState& state)
{
    if (params.size() != grads.size() || params.size() != state.velocity.size())
        throw std::invalid_argument("sgd: parameter, gradient and velocity counts differ");
    double clip = 1.0;
    if (state.max_grad_norm > 0.0) {
        double sq = 0.0;
        for (const Tensor& g : grads)
            for (double v : g.values()) sq += v * v;
        const double norm = std::sqrt(sq);
        if (norm > state.max_grad_norm) clip = state.max_grad_norm / norm;
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        Tensor& v = state.velocity[i];
        const Tensor& g = grads[i];
        if (p.shape() != g.shape()) throw_shape_error("sgd gradient", g.shape(), p.shape());
        if (p.shape() != v.shape()) throw_shape_error("sgd velocity", v.shape(), p.shape());
        for (std::size_t j = 0; j < p.size(); ++j) {
            v[j] = state.momentum * v[j] + clip * g[j];
            p[j] -= state.learning_rate * v[j];
        }
    }
}

} // namespace tc3d
