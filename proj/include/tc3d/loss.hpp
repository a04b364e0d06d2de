#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "tc3d/tensor.hpp"

namespace tc3d {

/// Max-subtracted softmax over a flat score vector.
inline Tensor softmax(const Tensor& scores)
{
    Tensor p = scores;
    if (p.empty()) return p;
    const double m = *std::max_element(p.values().begin(), p.values().end());
    double z = 0.0;
    for (double& v : p.values()) {
        v = std::exp(v - m);
        z += v;
    }
    for (double& v : p.values()) v /= z;
    return p;
}

struct LossResult {
    double loss = 0.0;
    Tensor grad_scores;
};

/// L(y, G) = -(G_label - log sum_j exp G_j) with its gradient softmax(G) - onehot(label).
inline LossResult softmax_cross_entropy(const Tensor& scores, std::size_t label)
{
    if (label >= scores.size())
        throw std::out_of_range("label " + std::to_string(label) + " outside [0, " + std::to_string(scores.size()) +
                                ")");
    const double m = *std::max_element(scores.values().begin(), scores.values().end());
    double z = 0.0;
    for (double v : scores.values()) z += std::exp(v - m);
    const double log_z = m + std::log(z);

    LossResult r;
    r.loss = log_z - scores[label];
    r.grad_scores = softmax(scores);
    r.grad_scores[label] -= 1.0;
    return r;
}

} // namespace tc3d
