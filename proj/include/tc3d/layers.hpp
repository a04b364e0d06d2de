#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "tc3d/tensor.hpp"

namespace tc3d {

using Rng = std::mt19937_64;

enum class Mode { Train, Eval };

enum class LayerKind : std::uint8_t {
    Conv3d = 0,
    FullyConnected = 1,
    Relu = 2,
    GlobalAvgPool = 3,
    Dropout = 4,
    ResidualAdd = 5,
};

inline const char* layer_kind_name(LayerKind kind)
{
    switch (kind) {
    case LayerKind::Conv3d: return "conv3d";
    case LayerKind::FullyConnected: return "fc";
    case LayerKind::Relu: return "relu";
    case LayerKind::GlobalAvgPool: return "global_avg_pool";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::ResidualAdd: return "residual_add";
    }
    return "?";
}

using Extent3 = std::array<std::size_t, 3>;

struct Conv3dGeometry {
    Extent3 kernel{1, 1, 1};
    Extent3 stride{1, 1, 1};
    Extent3 padding{0, 0, 0};
    friend bool operator==(const Conv3dGeometry&, const Conv3dGeometry&) = default;
};

/// One network layer: its kind, named parameter tensors and hyperparameters.
///
/// conv3d weights are [out_ch, in_ch, kd, kh, kw] with bias [out_ch]; fully-connected
/// weights are [out, in] with bias [out]. A residual-add layer adds the activation that
/// entered layer `skip_from` to its input.
struct Layer {
    LayerKind kind = LayerKind::Relu;
    std::map<std::string, Tensor> params;
    Conv3dGeometry conv;
    double dropout_ratio = 0.0;
    std::size_t skip_from = 0;

    static Layer conv3d(std::size_t out_ch, std::size_t in_ch, Extent3 kernel, Extent3 stride = {1, 1, 1},
                        Extent3 padding = {0, 0, 0})
    {
        Layer l;
        l.kind = LayerKind::Conv3d;
        l.conv = {kernel, stride, padding};
        l.params.emplace("weight", Tensor({out_ch, in_ch, kernel[0], kernel[1], kernel[2]}));
        l.params.emplace("bias", Tensor({out_ch}));
        return l;
    }

    static Layer fully_connected(std::size_t out, std::size_t in)
    {
        Layer l;
        l.kind = LayerKind::FullyConnected;
        l.params.emplace("weight", Tensor({out, in}));
        l.params.emplace("bias", Tensor({out}));
        return l;
    }

    static Layer relu() { return Layer{}; }

    static Layer global_avg_pool()
    {
        Layer l;
        l.kind = LayerKind::GlobalAvgPool;
        return l;
    }

    static Layer dropout(double ratio)
    {
        if (!(ratio >= 0.0 && ratio < 1.0))
            throw std::invalid_argument("dropout ratio must lie in [0,1), got " + std::to_string(ratio));
        Layer l;
        l.kind = LayerKind::Dropout;
        l.dropout_ratio = ratio;
        return l;
    }

    static Layer residual_add(std::size_t from)
    {
        Layer l;
        l.kind = LayerKind::ResidualAdd;
        l.skip_from = from;
        return l;
    }

    Tensor& weight() { return params.at("weight"); }
    const Tensor& weight() const { return params.at("weight"); }
    Tensor& bias() { return params.at("bias"); }
    const Tensor& bias() const { return params.at("bias"); }

    friend bool operator==(const Layer&, const Layer&) = default;
};

struct LayerGrads {
    Tensor grad_in;
    std::map<std::string, Tensor> grad_params;
};

// ---------------------------------------------------------------------------
// conv3d

namespace detail {

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p)
{
    if (s == 0) throw std::invalid_argument("conv3d stride must be positive");
    if (in + 2 * p < k) return 0;
    return (in + 2 * p - k) / s + 1;
}

// Output positions o in [lo, hi) for which o*s + k - p lies inside [0, in).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, std::size_t k,
                                                       std::size_t s, std::size_t p)
{
    const auto off = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(p);
    std::ptrdiff_t lo = 0;
    if (off < 0) lo = (-off + static_cast<std::ptrdiff_t>(s) - 1) / static_cast<std::ptrdiff_t>(s);
    // need o*s + off <= in - 1
    std::ptrdiff_t top = static_cast<std::ptrdiff_t>(in) - 1 - off;
    std::ptrdiff_t hi = top < 0 ? 0 : top / static_cast<std::ptrdiff_t>(s) + 1;
    hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(out));
    lo = std::min(lo, hi);
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

inline void check_conv_input(const Tensor& input, const Layer& layer)
{
    if (layer.kind != LayerKind::Conv3d) throw std::invalid_argument("layer is not conv3d");
    const Tensor& w = layer.weight();
    if (input.rank() != 4 || input.dim(0) != w.dim(1))
        throw_shape_error("conv3d input channels do not match kernel in-channels", input.shape(), w.shape());
}

} // namespace detail

inline Shape conv3d_output_shape(const Shape& in, const Layer& layer)
{
    const Tensor& w = layer.weight();
    if (in.size() != 4 || in[0] != w.dim(1))
        throw_shape_error("conv3d input channels do not match kernel in-channels", in, w.shape());
    const auto& g = layer.conv;
    Shape out{w.dim(0), 0, 0, 0};
    for (int a = 0; a < 3; ++a) out[a + 1] = detail::conv_out_extent(in[a + 1], g.kernel[a], g.stride[a], g.padding[a]);
    return out;
}

/// Direct 3D cross-correlation plus bias.
inline Tensor conv3d_forward(const Tensor& input, const Layer& layer)
{
    detail::check_conv_input(input, layer);
    const Tensor& w = layer.weight();
    const Tensor& b = layer.bias();
    const Shape os = conv3d_output_shape(input.shape(), layer);
    Tensor out(os);

    const std::size_t ic_n = input.dim(0), id_n = input.dim(1), ih_n = input.dim(2), iw_n = input.dim(3);
    const std::size_t oc_n = os[0], od_n = os[1], oh_n = os[2], ow_n = os[3];
    const auto [kd_n, kh_n, kw_n] = layer.conv.kernel;
    const auto [sd, sh, sw] = layer.conv.stride;
    const auto [pd, ph, pw] = layer.conv.padding;

    const double* in = input.data();
    const double* wp = w.data();
    double* op = out.data();
    const std::size_t oplane = od_n * oh_n * ow_n;

    for (std::size_t oc = 0; oc < oc_n; ++oc) {
        double* ob = op + oc * oplane;
        std::fill(ob, ob + oplane, b[oc]);
        for (std::size_t ic = 0; ic < ic_n; ++ic) {
            const double* ib = in + ic * id_n * ih_n * iw_n;
            for (std::size_t kd = 0; kd < kd_n; ++kd) {
                const auto [d0, d1] = detail::valid_range(od_n, id_n, kd, sd, pd);
                for (std::size_t kh = 0; kh < kh_n; ++kh) {
                    const auto [h0, h1] = detail::valid_range(oh_n, ih_n, kh, sh, ph);
                    for (std::size_t kw = 0; kw < kw_n; ++kw) {
                        const auto [w0, w1] = detail::valid_range(ow_n, iw_n, kw, sw, pw);
                        const double wv = wp[(((oc * ic_n + ic) * kd_n + kd) * kh_n + kh) * kw_n + kw];
                        if (wv == 0.0) continue;
                        for (std::size_t od = d0; od < d1; ++od) {
                            const std::size_t idd = od * sd + kd - pd;
                            for (std::size_t oh = h0; oh < h1; ++oh) {
                                const std::size_t ih = oh * sh + kh - ph;
                                double* orow = ob + (od * oh_n + oh) * ow_n + w0;
                                const double* irow = ib + (idd * ih_n + ih) * iw_n + (w0 * sw + kw - pw);
                                const std::size_t n = w1 - w0;
                                if (sw == 1) {
                                    for (std::size_t j = 0; j < n; ++j) orow[j] += wv * irow[j];
                                } else {
                                    for (std::size_t j = 0; j < n; ++j) orow[j] += wv * irow[j * sw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

inline LayerGrads conv3d_backward(const Tensor& grad_out, const Tensor& input, const Layer& layer)
{
    detail::check_conv_input(input, layer);
    const Shape os = conv3d_output_shape(input.shape(), layer);
    if (grad_out.shape() != os) throw_shape_error("conv3d grad_out does not match forward output", grad_out.shape(), os);

    const Tensor& w = layer.weight();
    LayerGrads g;
    g.grad_in = Tensor(input.shape());
    Tensor gw(w.shape());
    Tensor gb({os[0]});

    const std::size_t ic_n = input.dim(0), id_n = input.dim(1), ih_n = input.dim(2), iw_n = input.dim(3);
    const std::size_t oc_n = os[0], od_n = os[1], oh_n = os[2], ow_n = os[3];
    const auto [kd_n, kh_n, kw_n] = layer.conv.kernel;
    const auto [sd, sh, sw] = layer.conv.stride;
    const auto [pd, ph, pw] = layer.conv.padding;
    const std::size_t oplane = od_n * oh_n * ow_n;

    const double* in = input.data();
    const double* go = grad_out.data();
    const double* wp = w.data();
    double* gi = g.grad_in.data();

    for (std::size_t oc = 0; oc < oc_n; ++oc) {
        const double* gob = go + oc * oplane;
        double bsum = 0.0;
        for (std::size_t i = 0; i < oplane; ++i) bsum += gob[i];
        gb[oc] = bsum;
        for (std::size_t ic = 0; ic < ic_n; ++ic) {
            const double* ib = in + ic * id_n * ih_n * iw_n;
            double* gib = gi + ic * id_n * ih_n * iw_n;
            for (std::size_t kd = 0; kd < kd_n; ++kd) {
                const auto [d0, d1] = detail::valid_range(od_n, id_n, kd, sd, pd);
                for (std::size_t kh = 0; kh < kh_n; ++kh) {
                    const auto [h0, h1] = detail::valid_range(oh_n, ih_n, kh, sh, ph);
                    for (std::size_t kw = 0; kw < kw_n; ++kw) {
                        const auto [w0, w1] = detail::valid_range(ow_n, iw_n, kw, sw, pw);
                        const std::size_t widx = (((oc * ic_n + ic) * kd_n + kd) * kh_n + kh) * kw_n + kw;
                        const double wv = wp[widx];
                        double acc = 0.0;
                        for (std::size_t od = d0; od < d1; ++od) {
                            const std::size_t idd = od * sd + kd - pd;
                            for (std::size_t oh = h0; oh < h1; ++oh) {
                                const std::size_t ih = oh * sh + kh - ph;
                                const double* grow = gob + (od * oh_n + oh) * ow_n + w0;
                                const std::size_t ioff = (idd * ih_n + ih) * iw_n + (w0 * sw + kw - pw);
                                const double* irow = ib + ioff;
                                double* girow = gib + ioff;
                                const std::size_t n = w1 - w0;
                                if (sw == 1) {
                                    for (std::size_t j = 0; j < n; ++j) {
                                        acc += grow[j] * irow[j];
                                        girow[j] += wv * grow[j];
                                    }
                                } else {
                                    for (std::size_t j = 0; j < n; ++j) {
                                        acc += grow[j] * irow[j * sw];
                                        girow[j * sw] += wv * grow[j];
                                    }
                                }
                            }
                        }
                        gw[widx] = acc;
                    }
                }
            }
        }
    }
    g.grad_params.emplace("weight", std::move(gw));
    g.grad_params.emplace("bias", std::move(gb));
    return g;
}

// ---------------------------------------------------------------------------
// fully connected: out = W * flatten(in) + b

inline Tensor fc_forward(const Tensor& input, const Layer& layer)
{
    const Tensor& w = layer.weight();
    const Tensor& b = layer.bias();
    const std::size_t out_n = w.dim(0), in_n = w.dim(1);
    if (input.size() != in_n) throw_shape_error("fc inner dimension mismatch", input.shape(), w.shape());
    Tensor out({out_n});
    for (std::size_t o = 0; o < out_n; ++o) {
        double s = b[o];
        const double* row = w.data() + o * in_n;
        for (std::size_t i = 0; i < in_n; ++i) s += row[i] * input[i];
        out[o] = s;
    }
    return out;
}

inline LayerGrads fc_backward(const Tensor& grad_out, const Tensor& input, const Layer& layer)
{
    const Tensor& w = layer.weight();
    const std::size_t out_n = w.dim(0), in_n = w.dim(1);
    if (input.size() != in_n) throw_shape_error("fc inner dimension mismatch", input.shape(), w.shape());
    if (grad_out.size() != out_n) throw_shape_error("fc grad_out mismatch", grad_out.shape(), Shape{out_n});
    LayerGrads g;
    g.grad_in = Tensor(input.shape());
    Tensor gw(w.shape());
    Tensor gb({out_n});
    for (std::size_t o = 0; o < out_n; ++o) {
        const double go = grad_out[o];
        gb[o] = go;
        const double* row = w.data() + o * in_n;
        double* grow = gw.data() + o * in_n;
        for (std::size_t i = 0; i < in_n; ++i) {
            grow[i] = go * input[i];
            g.grad_in[i] += row[i] * go;
        }
    }
    g.grad_params.emplace("weight", std::move(gw));
    g.grad_params.emplace("bias", std::move(gb));
    return g;
}

// ---------------------------------------------------------------------------
// parameter-free layers

inline Tensor relu_forward(const Tensor& input)
{
    Tensor out = input;
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    return out;
}

inline Tensor relu_backward(const Tensor& grad_out, const Tensor& input)
{
    if (grad_out.shape() != input.shape()) throw_shape_error("relu backward", grad_out.shape(), input.shape());
    Tensor g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (!(input[i] > 0.0)) g[i] = 0.0;
    return g;
}

/// Mean over every axis except the leading channel axis.
inline Tensor global_avg_pool_forward(const Tensor& input)
{
    if (input.rank() < 1) throw ShapeError("global_avg_pool needs a channel axis, got " + shape_str(input.shape()));
    const std::size_t c_n = input.dim(0);
    const std::size_t per = c_n ? input.size() / c_n : 0;
    Tensor out({c_n});
    for (std::size_t c = 0; c < c_n; ++c) {
        double s = 0.0;
        const double* p = input.data() + c * per;
        for (std::size_t i = 0; i < per; ++i) s += p[i];
        out[c] = per ? s / static_cast<double>(per) : 0.0;
    }
    return out;
}

inline Tensor global_avg_pool_backward(const Tensor& grad_out, const Shape& input_shape)
{
    Tensor g(input_shape);
    const std::size_t c_n = input_shape.at(0);
    if (grad_out.size() != c_n) throw_shape_error("global_avg_pool backward", grad_out.shape(), input_shape);
    const std::size_t per = c_n ? g.size() / c_n : 0;
    for (std::size_t c = 0; c < c_n; ++c) {
        const double v = grad_out[c] / static_cast<double>(per);
        std::fill(g.data() + c * per, g.data() + (c + 1) * per, v);
    }
    return g;
}

/// Inverted dropout mask: each entry is 0 with probability `ratio`, else 1/(1-ratio).
inline Tensor dropout_mask(const Shape& shape, double ratio, Rng& rng)
{
    Tensor mask(shape);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double keep = 1.0 / (1.0 - ratio);
    for (double& m : mask.values()) m = u(rng) < ratio ? 0.0 : keep;
    return mask;
}

inline Tensor dropout_forward(const Tensor& input, const Tensor& mask)
{
    if (mask.shape() != input.shape()) throw_shape_error("dropout mask", mask.shape(), input.shape());
    Tensor out = input;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return out;
}

inline Tensor dropout_backward(const Tensor& grad_out, const Tensor& mask) { return dropout_forward(grad_out, mask); }

} // namespace tc3d
