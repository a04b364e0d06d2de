#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tc3d/loss.hpp"
#include "tc3d/tensor.hpp"

namespace tc3d {

enum class AggregatorKind : std::uint8_t { Average = 0, Max = 1, Weighted = 2, Attention = 3 };

inline const char* aggregator_name(AggregatorKind k)
{
    switch (k) {
    case AggregatorKind::Average: return "average";
    case AggregatorKind::Max: return "max";
    case AggregatorKind::Weighted: return "weighted";
    case AggregatorKind::Attention: return "attention";
    }
    return "?";
}

inline AggregatorKind parse_aggregator(const std::string& s)
{
    if (s == "average" || s == "avg" || s == "mean") return AggregatorKind::Average;
    if (s == "max") return AggregatorKind::Max;
    if (s == "weighted") return AggregatorKind::Weighted;
    if (s == "attention") return AggregatorKind::Attention;
    throw std::invalid_argument("unknown aggregator '" + s + "'");
}

struct AggregateResult {
    Tensor consensus;
    std::vector<double> attention;       // omega_s, attention only
    std::vector<std::size_t> argmax;     // winning clip per element, max only
};

struct AggregateGrads {
    std::vector<Tensor> clip_grads;
    std::vector<Tensor> param_grads; // same order as Aggregator::parameters()
};

/// Fuses S same-shaped clip outputs into one consensus vector.
///
/// Weighted pooling learns one scalar per clip (an S x 1 kernel, initialised to 1/S). Attention
/// pooling scores each clip with a single shared kernel q, e_s = q . F_s, and mixes clips with
/// omega = softmax(e); q starts at zero so attention starts out as the plain average.
class Aggregator {
public:
    Aggregator() = default;
    Aggregator(AggregatorKind kind, std::size_t clip_count, std::size_t feature_len)
        : kind_(kind), clip_count_(clip_count)
    {
        if (clip_count == 0) throw std::invalid_argument("aggregator needs at least one clip");
        if (kind == AggregatorKind::Weighted)
            params_.push_back(Tensor({clip_count}, 1.0 / static_cast<double>(clip_count)));
        else if (kind == AggregatorKind::Attention)
            params_.push_back(Tensor({feature_len}, 0.0));
    }

    AggregatorKind kind() const noexcept { return kind_; }
    std::size_t clip_count() const noexcept { return clip_count_; }

    std::vector<Tensor*> parameters()
    {
        std::vector<Tensor*> out;
        for (Tensor& t : params_) out.push_back(&t);
        return out;
    }
    std::vector<const Tensor*> parameters() const
    {
        std::vector<const Tensor*> out;
        for (const Tensor& t : params_) out.push_back(&t);
        return out;
    }

    Tensor& clip_weights() { return params_.at(0); }
    Tensor& attention_kernel() { return params_.at(0); }

    AggregateResult forward(const std::vector<Tensor>& clips) const
    {
        check(clips);
        const std::size_t s_n = clips.size(), n = clips.front().size();
        AggregateResult r;
        r.consensus = Tensor(clips.front().shape());
        Tensor& g = r.consensus;
        switch (kind_) {
        case AggregatorKind::Average:
            for (const Tensor& c : clips) g += c;
            g *= 1.0 / static_cast<double>(s_n);
            break;
        case AggregatorKind::Max:
            r.argmax.assign(n, 0);
            g = clips.front();
            for (std::size_t s = 1; s < s_n; ++s)
                for (std::size_t i = 0; i < n; ++i)
                    if (clips[s][i] > g[i]) {
                        g[i] = clips[s][i];
                        r.argmax[i] = s;
                    }
            break;
        case AggregatorKind::Weighted: {
            const Tensor& w = params_[0];
            for (std::size_t s = 0; s < s_n; ++s)
                for (std::size_t i = 0; i < n; ++i) g[i] += w[s] * clips[s][i];
            break;
        }
        case AggregatorKind::Attention: {
            const Tensor& q = params_[0];
            Tensor e({s_n});
            for (std::size_t s = 0; s < s_n; ++s) e[s] = dot(q, clips[s].reshaped({n}));
            const Tensor omega = softmax(e);
            r.attention.assign(omega.values().begin(), omega.values().end());
            for (std::size_t s = 0; s < s_n; ++s)
                for (std::size_t i = 0; i < n; ++i) g[i] += omega[s] * clips[s][i];
            break;
        }
        }
        return r;
    }

    AggregateGrads backward(const Tensor& grad_g, const std::vector<Tensor>& clips, const AggregateResult& fwd) const
    {
        check(clips);
        const std::size_t s_n = clips.size(), n = clips.front().size();
        if (grad_g.size() != n) throw_shape_error("aggregate backward", grad_g.shape(), clips.front().shape());
        AggregateGrads out;
        out.clip_grads.assign(s_n, Tensor(clips.front().shape()));
        switch (kind_) {
        case AggregatorKind::Average:
            for (std::size_t s = 0; s < s_n; ++s)
                for (std::size_t i = 0; i < n; ++i) out.clip_grads[s][i] = grad_g[i] / static_cast<double>(s_n);
            break;
        case AggregatorKind::Max:
            for (std::size_t i = 0; i < n; ++i) out.clip_grads[fwd.argmax.at(i)][i] = grad_g[i];
            break;
        case AggregatorKind::Weighted: {
            const Tensor& w = params_[0];
            Tensor gw({s_n});
            for (std::size_t s = 0; s < s_n; ++s) {
                for (std::size_t i = 0; i < n; ++i) {
                    out.clip_grads[s][i] = w[s] * grad_g[i];
                    gw[s] += grad_g[i] * clips[s][i];
                }
            }
            out.param_grads.push_back(std::move(gw));
            break;
        }
        case AggregatorKind::Attention: {
            const Tensor& q = params_[0];
            const std::vector<double>& omega = fwd.attention;
            // dL/de_s = omega_s * (<g, F_s> - sum_j omega_j <g, F_j>)
            std::vector<double> gf(s_n);
            double mean = 0.0;
            for (std::size_t s = 0; s < s_n; ++s) {
                double d = 0.0;
                for (std::size_t i = 0; i < n; ++i) d += grad_g[i] * clips[s][i];
                gf[s] = d;
                mean += omega[s] * d;
            }
            Tensor gq(q.shape());
            for (std::size_t s = 0; s < s_n; ++s) {
                const double de = omega[s] * (gf[s] - mean);
                for (std::size_t i = 0; i < n; ++i) {
                    out.clip_grads[s][i] = omega[s] * grad_g[i] + de * q[i];
                    gq[i] += de * clips[s][i];
                }
            }
            out.param_grads.push_back(std::move(gq));
            break;
        }
        }
        return out;
    }

    friend bool operator==(const Aggregator&, const Aggregator&) = default;

private:
    void check(const std::vector<Tensor>& clips) const
    {
        if (clips.empty()) throw std::invalid_argument("aggregate needs at least one clip output");
        for (const Tensor& c : clips)
            if (c.shape() != clips.front().shape())
                throw_shape_error("clip outputs disagree in shape", c.shape(), clips.front().shape());
        if (kind_ == AggregatorKind::Weighted && clips.size() != clip_count_)
            throw std::invalid_argument("weighted pooling was built for " + std::to_string(clip_count_) +
                                        " clips, got " + std::to_string(clips.size()));
        if (kind_ == AggregatorKind::Attention && params_[0].size() != clips.front().size())
            throw_shape_error("attention kernel does not match clip features", params_[0].shape(),
                              clips.front().shape());
    }

    AggregatorKind kind_ = AggregatorKind::Average;
    std::size_t clip_count_ = 1;
    std::vector<Tensor> params_;
};

} // namespace tc3d
