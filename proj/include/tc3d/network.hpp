#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tc3d/layers.hpp"
#include "tc3d/loss.hpp"

namespace tc3d {

/// Activations recorded by a forward pass: inputs[i] enters layer i, inputs.back() is the output.
struct ForwardCache {
    std::vector<Tensor> inputs;
    std::vector<Tensor> masks;
};

struct ParamInfo {
    std::size_t layer = 0;
    std::string name;
    LayerKind kind = LayerKind::Conv3d;
};

/// An ordered stack of layers mapping a clip tensor [C, D, H, W] to class_count scores.
class Network {
public:
    Network() = default;
    Network(Shape input_shape, std::size_t class_count) : input_shape_(std::move(input_shape)), class_count_(class_count)
    {
        if (class_count_ == 0) throw std::invalid_argument("class_count must be positive");
    }

    Network& add(Layer layer)
    {
        layers_.push_back(std::move(layer));
        return *this;
    }

    const std::vector<Layer>& layers() const noexcept { return layers_; }
    std::vector<Layer>& layers() noexcept { return layers_; }
    std::size_t class_count() const noexcept { return class_count_; }
    const Shape& input_shape() const noexcept { return input_shape_; }

    /// Shape of every activation for the given input (entry i enters layer i). Throws ShapeError if
    /// adjacent layers do not compose.
    std::vector<Shape> activation_shapes(const Shape& in) const
    {
        std::vector<Shape> shapes{in};
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const Layer& l = layers_[i];
            const Shape& cur = shapes.back();
            switch (l.kind) {
            case LayerKind::Conv3d: shapes.push_back(conv3d_output_shape(cur, l)); break;
            case LayerKind::FullyConnected:
                if (shape_volume(cur) != l.weight().dim(1))
                    throw_shape_error("layer " + std::to_string(i) + " fc input", cur, l.weight().shape());
                shapes.push_back({l.weight().dim(0)});
                break;
            case LayerKind::GlobalAvgPool: shapes.push_back({cur.at(0)}); break;
            case LayerKind::ResidualAdd:
                if (l.skip_from > i || shapes[l.skip_from] != cur)
                    throw_shape_error("layer " + std::to_string(i) + " residual source", shapes.at(l.skip_from), cur);
                shapes.push_back(cur);
                break;
            default: shapes.push_back(cur); break;
            }
        }
        return shapes;
    }

    Shape output_shape(const Shape& in) const { return activation_shapes(in).back(); }

    void validate() const
    {
        const Shape out = output_shape(input_shape_);
        if (shape_volume(out) != class_count_)
            throw ShapeError("network output " + shape_str(out) + " does not match class_count " +
                             std::to_string(class_count_));
    }

    /// Runs the network. Train mode draws dropout masks from `rng`; eval mode is deterministic.
    Tensor forward(const Tensor& input, Mode mode = Mode::Eval, Rng* rng = nullptr, ForwardCache* cache = nullptr) const
    {
        ForwardCache local;
        ForwardCache& c = cache ? *cache : local;
        c.inputs.clear();
        c.masks.assign(layers_.size(), Tensor{});
        c.inputs.reserve(layers_.size() + 1);
        c.inputs.push_back(input);
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const Layer& l = layers_[i];
            const Tensor& x = c.inputs.back();
            Tensor y;
            switch (l.kind) {
            case LayerKind::Conv3d: y = conv3d_forward(x, l); break;
            case LayerKind::FullyConnected: y = fc_forward(x, l); break;
            case LayerKind::Relu: y = relu_forward(x); break;
            case LayerKind::GlobalAvgPool: y = global_avg_pool_forward(x); break;
            case LayerKind::Dropout:
                if (mode == Mode::Train && l.dropout_ratio > 0.0) {
                    if (!rng) throw std::invalid_argument("train-mode dropout needs a random source");
                    c.masks[i] = dropout_mask(x.shape(), l.dropout_ratio, *rng);
                    y = dropout_forward(x, c.masks[i]);
                } else {
                    y = x;
                }
                break;
            case LayerKind::ResidualAdd:
                y = x;
                y += c.inputs.at(l.skip_from);
                break;
            }
            c.inputs.push_back(std::move(y));
        }
        if (!cache) return std::move(local.inputs.back());
        return c.inputs.back();
    }

    /// Parameter gradients in parameters() order, given dL/d(output). Optionally returns dL/d(input).
    std::vector<Tensor> backward(const ForwardCache& cache, const Tensor& grad_out, Tensor* grad_input = nullptr) const
    {
        if (cache.inputs.size() != layers_.size() + 1) throw std::invalid_argument("forward cache does not match network");
        std::vector<std::vector<Tensor>> per_layer(layers_.size());
        std::vector<std::optional<Tensor>> pending(layers_.size() + 1);
        Tensor g = grad_out;
        for (std::size_t ii = layers_.size(); ii-- > 0;) {
            if (pending[ii + 1]) g += *pending[ii + 1];
            const Layer& l = layers_[ii];
            const Tensor& x = cache.inputs[ii];
            switch (l.kind) {
            case LayerKind::Conv3d:
            case LayerKind::FullyConnected: {
                LayerGrads lg = l.kind == LayerKind::Conv3d ? conv3d_backward(g, x, l) : fc_backward(g, x, l);
                for (auto& [name, t] : lg.grad_params) per_layer[ii].push_back(std::move(t));
                g = std::move(lg.grad_in);
                break;
            }
            case LayerKind::Relu: g = relu_backward(g, x); break;
            case LayerKind::GlobalAvgPool: g = global_avg_pool_backward(g, x.shape()); break;
            case LayerKind::Dropout:
                if (!cache.masks[ii].empty()) g = dropout_backward(g, cache.masks[ii]);
                break;
            case LayerKind::ResidualAdd:
                if (pending[l.skip_from]) *pending[l.skip_from] += g;
                else pending[l.skip_from] = g;
                break;
            }
        }
        if (pending[0]) g += *pending[0];
        if (grad_input) *grad_input = std::move(g);
        std::vector<Tensor> out;
        for (auto& v : per_layer)
            for (auto& t : v) out.push_back(std::move(t));
        return out;
    }

    std::vector<Tensor*> parameters()
    {
        std::vector<Tensor*> out;
        for (Layer& l : layers_)
            for (auto& [name, t] : l.params) out.push_back(&t);
        return out;
    }

    std::vector<const Tensor*> parameters() const
    {
        std::vector<const Tensor*> out;
        for (const Layer& l : layers_)
            for (const auto& [name, t] : l.params) out.push_back(&t);
        return out;
    }

    std::vector<ParamInfo> parameter_info() const
    {
        std::vector<ParamInfo> out;
        for (std::size_t i = 0; i < layers_.size(); ++i)
            for (const auto& [name, t] : layers_[i].params) out.push_back({i, name, layers_[i].kind});
        return out;
    }

    std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (const Tensor* t : parameters()) n += t->size();
        return n;
    }

    friend bool operator==(const Network&, const Network&) = default;

private:
    Shape input_shape_;
    std::size_t class_count_ = 1;
    std::vector<Layer> layers_;
};

/// He-normal weights, zero biases.
inline void init_he_normal(Network& net, std::uint64_t seed)
{
    Rng rng(seed);
    for (Layer& l : net.layers()) {
        if (l.kind != LayerKind::Conv3d && l.kind != LayerKind::FullyConnected) continue;
        Tensor& w = l.weight();
        const std::size_t fan_in = w.size() / w.dim(0);
        std::normal_distribution<double> n(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        for (double& v : w.values()) v = n(rng);
        l.bias().fill(0.0);
    }
}

struct ReferenceNetOptions {
    std::size_t channels = 1;
    std::size_t frames = 8;
    std::size_t height = 112;
    std::size_t width = 112;
    std::size_t class_count = 101;
    double dropout = 0.8;
    bool residual = false;
};

/// Four 3x3x3 conv3d layers (8, 16, 32, 32 channels; layers 2 and 4 downsample by 2 in time and
/// space), global average pooling, dropout and one fully-connected classifier. With `residual`
/// an extra 32->32 conv block wrapped by an identity skip follows the third conv.
inline Network make_reference_network(const ReferenceNetOptions& o, std::uint64_t seed)
{
    Network net({o.channels, o.frames, o.height, o.width}, o.class_count);
    const Extent3 k3{3, 3, 3}, s1{1, 1, 1}, s2{2, 2, 2}, p1{1, 1, 1};
    net.add(Layer::conv3d(8, o.channels, k3, s1, p1)).add(Layer::relu());
    net.add(Layer::conv3d(16, 8, k3, s2, p1)).add(Layer::relu());
    net.add(Layer::conv3d(32, 16, k3, s1, p1)).add(Layer::relu());
    if (o.residual) {
        const std::size_t block_in = net.layers().size();
        net.add(Layer::conv3d(32, 32, k3, s1, p1)).add(Layer::relu()).add(Layer::residual_add(block_in));
    }
    net.add(Layer::conv3d(32, 32, k3, s2, p1)).add(Layer::relu());
    net.add(Layer::global_avg_pool());
    net.add(Layer::dropout(o.dropout));
    net.add(Layer::fully_connected(o.class_count, 32));
    net.validate();
    init_he_normal(net, seed);
    return net;
}

/// Forward-pass FLOPs: 2 x multiply-adds of conv3d and fully-connected layers; everything else is free.
inline std::uint64_t count_flops(const Network& net, const Shape& input_shape)
{
    const std::vector<Shape> shapes = net.activation_shapes(input_shape);
    std::uint64_t flops = 0;
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
        const Layer& l = net.layers()[i];
        if (l.kind == LayerKind::Conv3d) {
            const Tensor& w = l.weight();
            const std::uint64_t per_out = w.size() / w.dim(0);
            flops += 2 * per_out * shape_volume(shapes[i + 1]);
        } else if (l.kind == LayerKind::FullyConnected) {
            flops += 2 * l.weight().size();
        }
    }
    return flops;
}

} // namespace tc3d
