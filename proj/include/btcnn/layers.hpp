#pragma once

// Forward and backward passes for the network's layer primitives.
//
// Layout conventions: feature maps are [C][H][W], convolution weights are
// [F][C][K][K], dense weights are [out][in]. All kernels are pure functions
// with a fixed loop order, so identical inputs give bit-identical outputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "btcnn/error.hpp"
#include "btcnn/simd.hpp"
#include "btcnn/tensor.hpp"

namespace btcnn {

struct ConvParams {
    Tensor weights; // [F][C][K][K]
    Tensor bias;    // [F]
    std::size_t stride = 1;
    std::size_t padding = 0;

    [[nodiscard]] std::size_t filters() const { return weights.dim(0); }
    [[nodiscard]] std::size_t channels() const { return weights.dim(1); }
    [[nodiscard]] std::size_t kernel() const { return weights.dim(2); }
};

struct DenseParams {
    Tensor weights; // [out][in]
    Tensor bias;    // [out]

    [[nodiscard]] std::size_t outputs() const { return weights.dim(0); }
    [[nodiscard]] std::size_t inputs() const { return weights.dim(1); }
};

struct ConvGrads {
    Tensor grad_x;
    Tensor grad_w;
    Tensor grad_b;
};

struct DenseGrads {
    Tensor grad_x;
    Tensor grad_w;
    Tensor grad_b;
};

namespace detail {

struct ConvGeometry {
    std::size_t channels, height, width;
    std::size_t filters, kernel, stride, padding;
    std::size_t out_height, out_width;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p,
                                   const char* axis) {
    if (in + 2 * p < k)
        throw Error(ErrorCode::ShapeMismatch, std::string("kernel larger than padded ") + axis);
    if ((in + 2 * p - k) % s != 0)
        throw Error(ErrorCode::ShapeMismatch,
                    std::string("stride does not divide padded ") + axis + " minus kernel");
    return (in + 2 * p - k) / s + 1;
}

inline ConvGeometry conv_geometry(const Tensor& x, const ConvParams& p) {
    if (x.rank() != 3) throw Error(ErrorCode::ShapeMismatch, "conv input must be [C][H][W], got " + shape_string(x.shape()));
    const auto& ws = p.weights.shape();
    if (ws.size() != 4 || ws[2] != ws[3])
        throw Error(ErrorCode::ShapeMismatch, "conv weights must be [F][C][K][K], got " + shape_string(ws));
    if (p.stride == 0) throw Error(ErrorCode::ShapeMismatch, "conv stride must be positive");
    if (p.bias.shape() != Shape{ws[0]})
        throw Error(ErrorCode::ShapeMismatch, "conv bias must be [" + std::to_string(ws[0]) + "], got " +
                                                  shape_string(p.bias.shape()));
    if (x.dim(0) != ws[1])
        throw Error(ErrorCode::ShapeMismatch, "conv input has " + std::to_string(x.dim(0)) +
                                                  " channels, weights expect " + std::to_string(ws[1]));
    ConvGeometry g{};
    g.channels = x.dim(0);
    g.height = x.dim(1);
    g.width = x.dim(2);
    g.filters = ws[0];
    g.kernel = ws[2];
    g.stride = p.stride;
    g.padding = p.padding;
    g.out_height = conv_out_extent(g.height, g.kernel, g.stride, g.padding, "height");
    g.out_width = conv_out_extent(g.width, g.kernel, g.stride, g.padding, "width");
    return g;
}

/// Copies [C][H][W] into a zero-bordered [C][H+2p][W+2p] buffer.
inline std::vector<double> zero_pad(std::span<const double> x, std::size_t channels, std::size_t height,
                                    std::size_t width, std::size_t pad) {
    const std::size_t ph = height + 2 * pad;
    const std::size_t pw = width + 2 * pad;
    std::vector<double> out(channels * ph * pw, 0.0);
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < height; ++i)
            std::copy_n(x.data() + (c * height + i) * width, width, out.data() + (c * ph + i + pad) * pw + pad);
    return out;
}

// One output row for FB consecutive filters and one vector of columns at j.
// Channels are the innermost loop so the accumulators stay in registers.
template <class V, std::size_t FB>
inline void correlate3x3_tile(const double* xp, std::size_t channels, std::size_t ph, std::size_t pw,
                              const double* w, std::size_t f0, double* out, std::size_t plane, std::size_t ow,
                              std::size_t i, std::size_t j) {
    V acc[FB];
    for (std::size_t a = 0; a < FB; ++a) acc[a] = simd::load<V>(out + (f0 + a) * plane + i * ow + j);
    for (std::size_t c = 0; c < channels; ++c) {
        const double* r0 = xp + (c * ph + i) * pw + j;
        const double* r1 = r0 + pw;
        const double* r2 = r1 + pw;
        const V x[9] = {simd::load<V>(r0), simd::load<V>(r0 + 1), simd::load<V>(r0 + 2),
                        simd::load<V>(r1), simd::load<V>(r1 + 1), simd::load<V>(r1 + 2),
                        simd::load<V>(r2), simd::load<V>(r2 + 1), simd::load<V>(r2 + 2)};
        for (std::size_t a = 0; a < FB; ++a) {
            const double* k = w + ((f0 + a) * channels + c) * 9;
            for (std::size_t t = 0; t < 9; ++t) acc[a] += k[t] * x[t];
        }
    }
    for (std::size_t a = 0; a < FB; ++a) simd::store(out + (f0 + a) * plane + i * ow + j, acc[a]);
}

// out[f][i][j] += sum_c sum_{u,v} w[f][c][u][v] * xp[c][i+u][j+v] for a 3x3
// kernel at stride 1 over an already padded input. Every path adds channel
// by channel and tap by tap onto the existing output, so vector and scalar
// columns round identically.
inline void correlate3x3(const double* xp, std::size_t channels, std::size_t ph, std::size_t pw,
                         const double* w, std::size_t filters, double* out, std::size_t oh, std::size_t ow) {
    using simd::f64x4;
    using simd::wide;
    constexpr std::size_t WL = simd::lanes<wide>;
    const std::size_t plane = oh * ow;

    auto rows = [&]<std::size_t FB>(std::size_t f0) {
        for (std::size_t i = 0; i < oh; ++i) {
            std::size_t j = 0;
            for (; j + WL <= ow; j += WL) correlate3x3_tile<wide, FB>(xp, channels, ph, pw, w, f0, out, plane, ow, i, j);
            for (; j + 4 <= ow; j += 4) correlate3x3_tile<f64x4, FB>(xp, channels, ph, pw, w, f0, out, plane, ow, i, j);
            for (; j < ow; ++j)
                for (std::size_t a = 0; a < FB; ++a) {
                    double s = out[(f0 + a) * plane + i * ow + j];
                    for (std::size_t c = 0; c < channels; ++c) {
                        const double* k = w + ((f0 + a) * channels + c) * 9;
                        const double* r = xp + (c * ph + i) * pw + j;
                        for (std::size_t u = 0; u < 3; ++u)
                            for (std::size_t v = 0; v < 3; ++v) s += k[u * 3 + v] * r[u * pw + v];
                    }
                    out[(f0 + a) * plane + i * ow + j] = s;
                }
        }
    };

    std::size_t f = 0;
    for (; f + 8 <= filters; f += 8) rows.template operator()<8>(f);
    for (; f + 4 <= filters; f += 4) rows.template operator()<4>(f);
    for (; f < filters; ++f) rows.template operator()<1>(f);
}

// Partial sums of gw[f0+a][c][u][v] over columns [j0, j1) of every row,
// FB filters x 3 taps in vector accumulators.
template <class V, std::size_t FB>
inline void weight_grad3x3_cols(const double* g, const double* xc, std::size_t f0, std::size_t oh, std::size_t ow,
                                std::size_t pw, std::size_t u, std::size_t j0, std::size_t j1,
                                double (&sums)[FB][3]) {
    constexpr std::size_t L = simd::lanes<V>;
    const std::size_t plane = oh * ow;
    V acc[FB][3] = {};
    for (std::size_t i = 0; i < oh; ++i) {
        const double* xr = xc + (i + u) * pw;
        for (std::size_t j = j0; j + L <= j1; j += L) {
            const V x0 = simd::load<V>(xr + j), x1 = simd::load<V>(xr + j + 1), x2 = simd::load<V>(xr + j + 2);
            for (std::size_t a = 0; a < FB; ++a) {
                const V gv = simd::load<V>(g + (f0 + a) * plane + i * ow + j);
                acc[a][0] += gv * x0;
                acc[a][1] += gv * x1;
                acc[a][2] += gv * x2;
            }
        }
    }
    for (std::size_t a = 0; a < FB; ++a)
        for (std::size_t v = 0; v < 3; ++v) sums[a][v] += simd::hsum(acc[a][v]);
}

// gw[f][c][u][v] = sum_{i,j} g[f][i][j] * xp[c][i+u][j+v] for a 3x3 kernel
// at stride 1.
inline void weight_grad3x3(const double* g, const double* xp, std::size_t filters, std::size_t channels,
                           std::size_t oh, std::size_t ow, double* gw) {
    using simd::f64x4;
    using simd::wide;
    constexpr std::size_t WL = simd::lanes<wide>;
    const std::size_t ph = oh + 2, pw = ow + 2, plane = oh * ow;
    const std::size_t jw = ow / WL * WL;
    const std::size_t j4 = jw + (ow - jw) / 4 * 4;

    auto block = [&]<std::size_t FB>(std::size_t f0) {
        for (std::size_t c = 0; c < channels; ++c) {
            const double* xc = xp + c * ph * pw;
            for (std::size_t u = 0; u < 3; ++u) {
                double sums[FB][3] = {};
                if (jw > 0) weight_grad3x3_cols<wide, FB>(g, xc, f0, oh, ow, pw, u, 0, jw, sums);
                if (j4 > jw) weight_grad3x3_cols<f64x4, FB>(g, xc, f0, oh, ow, pw, u, jw, j4, sums);
                for (std::size_t a = 0; a < FB; ++a)
                    for (std::size_t v = 0; v < 3; ++v) {
                        double s = sums[a][v];
                        for (std::size_t i = 0; i < oh; ++i)
                            for (std::size_t j = j4; j < ow; ++j)
                                s += g[(f0 + a) * plane + i * ow + j] * xc[(i + u) * pw + j + v];
                        gw[((f0 + a) * channels + c) * 9 + u * 3 + v] = s;
                    }
            }
        }
    };

    std::size_t f = 0;
    for (; f + 8 <= filters; f += 8) block.template operator()<8>(f);
    for (; f + 4 <= filters; f += 4) block.template operator()<4>(f);
    for (; f < filters; ++f) block.template operator()<1>(f);
}

inline bool is_same_3x3(const ConvGeometry& g) { return g.kernel == 3 && g.stride == 1 && g.padding == 1; }

} // namespace detail

/// Cross-correlation with zero padding:
/// out[f][i][j] = b[f] + sum_{c,u,v} x[c][i*s-p+u][j*s-p+v] * w[f][c][u][v].
inline Tensor conv2d_forward(const Tensor& x, const ConvParams& p) {
    const auto g = detail::conv_geometry(x, p);
    Tensor out({g.filters, g.out_height, g.out_width});
    const std::size_t plane = g.out_height * g.out_width;
    for (std::size_t f = 0; f < g.filters; ++f) std::fill_n(out.raw() + f * plane, plane, p.bias[f]);

    const std::size_t ph = g.height + 2 * g.padding;
    const std::size_t pw = g.width + 2 * g.padding;
    const auto xp = detail::zero_pad(x.data(), g.channels, g.height, g.width, g.padding);

    if (detail::is_same_3x3(g)) {
        detail::correlate3x3(xp.data(), g.channels, ph, pw, p.weights.raw(), g.filters, out.raw(), g.out_height,
                             g.out_width);
        return out;
    }

    const std::size_t k = g.kernel;
    const std::size_t s = g.stride;
    for (std::size_t f = 0; f < g.filters; ++f)
        for (std::size_t c = 0; c < g.channels; ++c)
            for (std::size_t u = 0; u < k; ++u)
                for (std::size_t v = 0; v < k; ++v) {
                    const double wv = p.weights.at(f, c, u, v);
                    for (std::size_t i = 0; i < g.out_height; ++i) {
                        double* orow = out.raw() + (f * g.out_height + i) * g.out_width;
                        const double* xrow = xp.data() + (c * ph + i * s + u) * pw + v;
                        for (std::size_t j = 0; j < g.out_width; ++j) orow[j] += wv * xrow[j * s];
                    }
                }
    return out;
}

/// Exact adjoint of conv2d_forward. When need_input_grad is false grad_x is
/// left empty (the first layer of a network never needs it).
inline ConvGrads conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& grad_out,
                                 bool need_input_grad = true) {
    const auto g = detail::conv_geometry(x, p);
    require_shape(grad_out, {g.filters, g.out_height, g.out_width}, "conv grad_out");

    const std::size_t oh = g.out_height;
    const std::size_t ow = g.out_width;
    const std::size_t plane = oh * ow;
    const std::size_t ph = g.height + 2 * g.padding;
    const std::size_t pw = g.width + 2 * g.padding;
    const std::size_t k = g.kernel;
    const std::size_t s = g.stride;

    ConvGrads grads{Tensor{}, Tensor(p.weights.shape()), Tensor({g.filters})};

    for (std::size_t f = 0; f < g.filters; ++f) {
        const double* gf = grad_out.raw() + f * plane;
        double sum = 0.0;
        for (std::size_t n = 0; n < plane; ++n) sum += gf[n];
        grads.grad_b[f] = sum;
    }

    const auto xp = detail::zero_pad(x.data(), g.channels, g.height, g.width, g.padding);

    // grad_w[f][c][u][v] = sum_{i,j} g[f][i][j] * xp[c][i*s+u][j*s+v]; the
    // generic path keeps partial sums per output column and reduces at the end.
    if (detail::is_same_3x3(g)) {
        detail::weight_grad3x3(grad_out.raw(), xp.data(), g.filters, g.channels, oh, ow, grads.grad_w.raw());
    } else {
        std::vector<double> lanes(ow);
        for (std::size_t f = 0; f < g.filters; ++f) {
            const double* gf = grad_out.raw() + f * plane;
            for (std::size_t c = 0; c < g.channels; ++c) {
                const double* xc = xp.data() + c * ph * pw;
                for (std::size_t u = 0; u < k; ++u)
                    for (std::size_t v = 0; v < k; ++v) {
                        std::fill(lanes.begin(), lanes.end(), 0.0);
                        double* __restrict acc = lanes.data();
                        for (std::size_t i = 0; i < oh; ++i) {
                            const double* __restrict grow = gf + i * ow;
                            const double* __restrict xrow = xc + (i * s + u) * pw + v;
                            if (s == 1) {
                                for (std::size_t j = 0; j < ow; ++j) acc[j] += grow[j] * xrow[j];
                            } else {
                                for (std::size_t j = 0; j < ow; ++j) acc[j] += grow[j] * xrow[j * s];
                            }
                        }
                        double total = 0.0;
                        for (std::size_t j = 0; j < ow; ++j) total += acc[j];
                        grads.grad_w.at(f, c, u, v) = total;
                    }
            }
        }
    }

    if (!need_input_grad) return grads;

    grads.grad_x = Tensor({g.channels, g.height, g.width});
    if (detail::is_same_3x3(g)) {
        // grad_x is a same-size correlation of grad_out with the spatially
        // flipped, channel-transposed kernel.
        std::vector<double> flipped(g.channels * g.filters * 9);
        for (std::size_t c = 0; c < g.channels; ++c)
            for (std::size_t f = 0; f < g.filters; ++f)
                for (std::size_t t = 0; t < 9; ++t)
                    flipped[(c * g.filters + f) * 9 + t] = p.weights.raw()[(f * g.channels + c) * 9 + (8 - t)];
        const auto gp = detail::zero_pad(grad_out.data(), g.filters, oh, ow, 1);
        detail::correlate3x3(gp.data(), g.filters, oh + 2, ow + 2, flipped.data(), g.channels,
                             grads.grad_x.raw(), g.height, g.width);
        return grads;
    }

    std::vector<double> gxp(g.channels * ph * pw, 0.0);
    for (std::size_t f = 0; f < g.filters; ++f)
        for (std::size_t c = 0; c < g.channels; ++c)
            for (std::size_t u = 0; u < k; ++u)
                for (std::size_t v = 0; v < k; ++v) {
                    const double wv = p.weights.at(f, c, u, v);
                    for (std::size_t i = 0; i < oh; ++i) {
                        const double* grow = grad_out.raw() + f * plane + i * ow;
                        double* xrow = gxp.data() + (c * ph + i * s + u) * pw + v;
                        for (std::size_t j = 0; j < ow; ++j) xrow[j * s] += wv * grow[j];
                    }
                }
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t i = 0; i < g.height; ++i)
            std::copy_n(gxp.data() + (c * ph + i + g.padding) * pw + g.padding, g.width,
                        grads.grad_x.raw() + (c * g.height + i) * g.width);
    return grads;
}

/// Window-local argmax positions (0..3, row-major) recorded by the forward
/// pass, plus the input shape needed to scatter gradients back.
struct PoolIndices {
    Shape input_shape;
    std::vector<std::uint8_t> argmax;
};

struct PoolResult {
    Tensor output;
    PoolIndices indices;
};

namespace detail {

// Shared by the plain and the ReLU-fused pooling passes. The selects are
// written so that they compile to conditional moves; a strict comparison
// keeps the first of several equal maxima.
template <bool Relu>
inline PoolResult maxpool2x2(const Tensor& x) {
    if (x.rank() != 3) throw Error(ErrorCode::ShapeMismatch, "maxpool input must be [C][H][W]");
    const std::size_t c_n = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % 2 != 0 || w % 2 != 0)
        throw Error(ErrorCode::OddDimension, "maxpool needs even height and width, got " + shape_string(x.shape()));
    const std::size_t oh = h / 2, ow = w / 2;
    PoolResult r{Tensor({c_n, oh, ow}), PoolIndices{x.shape(), std::vector<std::uint8_t>(c_n * oh * ow)}};
    double* out = r.output.raw();
    std::uint8_t* arg = r.indices.argmax.data();
    auto value = [](double v) { return Relu ? (v > 0.0 ? v : 0.0) : v; };
    for (std::size_t row = 0; row < c_n * oh; ++row) {
        const double* top = x.raw() + 2 * row * w;
        const double* bot = top + w;
        for (std::size_t j = 0; j < ow; ++j) {
            const double v1 = value(top[2 * j + 1]), v2 = value(bot[2 * j]), v3 = value(bot[2 * j + 1]);
            double m = value(top[2 * j]);
            std::uint8_t best = 0;
            best = v1 > m ? 1 : best;
            m = v1 > m ? v1 : m;
            best = v2 > m ? 2 : best;
            m = v2 > m ? v2 : m;
            best = v3 > m ? 3 : best;
            m = v3 > m ? v3 : m;
            out[row * ow + j] = m;
            arg[row * ow + j] = best;
        }
    }
    return r;
}

} // namespace detail

/// 2x2 max pooling with stride 2. Ties go to the first maximal element in
/// window-local row-major order.
inline PoolResult maxpool2x2_forward(const Tensor& x) { return detail::maxpool2x2<false>(x); }

/// maxpool2x2_forward(relu_forward(x)) without the intermediate tensor.
inline PoolResult relu_maxpool2x2_forward(const Tensor& x) { return detail::maxpool2x2<true>(x); }

inline Tensor maxpool2x2_backward(const PoolIndices& indices, const Tensor& grad_out) {
    const auto& in = indices.input_shape;
    if (in.size() != 3) throw Error(ErrorCode::ShapeMismatch, "pool indices carry no [C][H][W] input shape");
    require_shape(grad_out, {in[0], in[1] / 2, in[2] / 2}, "maxpool grad_out");
    if (indices.argmax.size() != grad_out.size())
        throw Error(ErrorCode::ShapeMismatch, "pool index map does not match grad_out");
    Tensor grad_x(in);
    const std::size_t oh = in[1] / 2, ow = in[2] / 2;
    std::size_t n = 0;
    for (std::size_t c = 0; c < in[0]; ++c)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j, ++n) {
                const std::size_t t = indices.argmax[n];
                grad_x.at(c, 2 * i + t / 2, 2 * j + t % 2) = grad_out[n];
            }
    return grad_x;
}

inline Tensor relu_forward(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
    return y;
}

/// Subgradient at exactly zero is zero.
inline Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
    require_shape(grad_out, x.shape(), "relu grad_out");
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
    return g;
}

/// Backward through maxpool2x2(relu(conv(x))). `pooled` is that block's
/// forward output: a window passes gradient only when its maximum is
/// positive, which is the same as a positive pre-activation at the argmax.
/// Only those windows are visited, so the 3x3 stride-1 pad-1 case costs time
/// in proportion to them rather than to the plane. Results equal the
/// composition of the single-layer backward passes up to summation order;
/// other geometries take that composition directly.
inline ConvGrads conv_relu_pool_backward(const Tensor& x, const ConvParams& p, const Tensor& pooled,
                                         const PoolIndices& pool, const Tensor& grad_pooled,
                                         bool need_input_grad = true) {
    const auto g = detail::conv_geometry(x, p);
    const Shape conv_shape{g.filters, g.out_height, g.out_width};
    if (pool.input_shape != conv_shape)
        throw Error(ErrorCode::ShapeMismatch, "pool indices do not match the conv output " + shape_string(conv_shape));
    if (pooled.size() != grad_pooled.size())
        throw Error(ErrorCode::ShapeMismatch, "pooled output has " + std::to_string(pooled.size()) +
                                                  " elements, grad_out has " + std::to_string(grad_pooled.size()));

    if (!detail::is_same_3x3(g)) {
        Tensor masked = grad_pooled;
        for (std::size_t n = 0; n < masked.size(); ++n)
            if (!(pooled[n] > 0.0)) masked[n] = 0.0;
        return conv2d_backward(x, p, maxpool2x2_backward(pool, masked), need_input_grad);
    }
    const std::size_t C = g.channels, F = g.filters, H = g.height, W = g.width;
    const std::size_t qh = H / 2, qw = W / 2, qn = qh * qw;
    require_shape(grad_pooled, {F, qh, qw}, "maxpool grad_out");
    if (pool.argmax.size() != grad_pooled.size())
        throw Error(ErrorCode::ShapeMismatch, "pool index map does not match grad_out");

    // Channels-last, zero-bordered copies, so that every tap touches C
    // consecutive values: xt[(r*pw + s)*C + c] and wt[(f*9 + t)*C + c].
    const std::size_t pw = W + 2;
    const std::size_t padded = (H + 2) * pw * C;
    simd::AlignedBuffer xt(padded);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) xt[((i + 1) * pw + j + 1) * C + c] = x.at(c, i, j);
    simd::AlignedBuffer wt(F * 9 * C);
    for (std::size_t f = 0; f < F; ++f)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < 9; ++t) wt[(f * 9 + t) * C + c] = p.weights.raw()[(f * C + c) * 9 + t];
    simd::AlignedBuffer gwt(F * 9 * C);
    simd::AlignedBuffer gxt(need_input_grad ? padded : 0);

    ConvGrads grads{Tensor{}, Tensor(p.weights.shape()), Tensor({F})};
    std::vector<std::uint32_t> live(qn);
    std::vector<std::pair<double, std::size_t>> active(qn); // (gradient, window offset in xt)

    // CN is the channel count when it is known at compile time, 0 otherwise.
    // With a known count the weight gradient of one filter lives in registers
    // while the active windows stream past.
    auto scatter = [&]<std::size_t CN>() {
        const std::size_t cn = CN ? CN : C;
        for (std::size_t f = 0; f < F; ++f) {
            const double* gf = grad_pooled.raw() + f * qn;
            const double* pf = pooled.raw() + f * qn;
            const std::uint8_t* af = pool.argmax.data() + f * qn;
            std::size_t na = 0;
            for (std::size_t q = 0; q < qn; ++q) {
                live[na] = static_cast<std::uint32_t>(q);
                na += (gf[q] != 0.0) & (pf[q] > 0.0);
            }
            double bias_sum = 0.0;
            for (std::size_t a = 0; a < na; ++a) {
                const std::size_t q = live[a];
                const std::size_t i = 2 * (q / qw) + af[q] / 2;
                const std::size_t j = 2 * (q % qw) + af[q] % 2;
                active[a] = {gf[q], (i * pw + j) * cn};
                bias_sum += gf[q];
            }
            grads.grad_b[f] = bias_sum;

            if constexpr (CN == 0) {
                for (std::size_t a = 0; a < na; ++a) {
                    const auto [go, at] = active[a];
                    for (std::size_t u = 0; u < 3; ++u) {
                        const std::size_t row = at + u * pw * cn;
                        double* gw = gwt.data() + (f * 9 + u * 3) * cn;
                        const double* ws = wt.data() + (f * 9 + u * 3) * cn;
                        for (std::size_t k = 0; k < 3 * cn; ++k) gw[k] += go * xt[row + k];
                        if (need_input_grad)
                            for (std::size_t k = 0; k < 3 * cn; ++k) gxt[row + k] += go * ws[k];
                    }
                }
            } else {
                using V = std::conditional_t<CN % simd::lanes<simd::wide> == 0, simd::wide, double>;
                constexpr std::size_t L = sizeof(V) / sizeof(double);
                constexpr std::size_t CB = CN < 2 * L ? CN : 2 * L;
                for (std::size_t c0 = 0; c0 < CN; c0 += CB) {
                    V acc[9][CB / L] = {};
                    for (std::size_t a = 0; a < na; ++a) {
                        const auto [go, at] = active[a];
                        for (std::size_t t = 0; t < 9; ++t) {
                            const double* xs = xt.data() + at + ((t / 3) * pw + t % 3) * CN + c0;
                            for (std::size_t l = 0; l < CB / L; ++l) acc[t][l] += go * simd::load<V>(xs + l * L);
                        }
                    }
                    for (std::size_t t = 0; t < 9; ++t)
                        for (std::size_t l = 0; l < CB / L; ++l)
                            simd::store(gwt.data() + (f * 9 + t) * CN + c0 + l * L, acc[t][l]);
                }
                if (need_input_grad)
                    for (std::size_t a = 0; a < na; ++a) {
                        const auto [go, at] = active[a];
                        for (std::size_t u = 0; u < 3; ++u) {
                            double* gx = gxt.data() + at + u * pw * CN;
                            const double* ws = wt.data() + (f * 9 + u * 3) * CN;
                            for (std::size_t k = 0; k < 3 * CN; k += L)
                                simd::store(gx + k, simd::load<V>(gx + k) + go * simd::load<V>(ws + k));
                        }
                    }
            }
        }
    };
    switch (C) {
    case 1: scatter.template operator()<1>(); break;
    case 8: scatter.template operator()<8>(); break;
    case 16: scatter.template operator()<16>(); break;
    case 32: scatter.template operator()<32>(); break;
    default: scatter.template operator()<0>(); break;
    }

    for (std::size_t f = 0; f < F; ++f)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < 9; ++t) grads.grad_w.raw()[(f * C + c) * 9 + t] = gwt[(f * 9 + t) * C + c];

    if (need_input_grad) {
        grads.grad_x = Tensor({C, H, W});
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j) grads.grad_x.at(c, i, j) = gxt[((i + 1) * pw + j + 1) * C + c];
    }
    return grads;
}

inline void check_dense(const Tensor& x, const DenseParams& p) {
    if (p.weights.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "dense weights must be [out][in]");
    require_shape(p.bias, {p.outputs()}, "dense bias");
    if (x.size() != p.inputs())
        throw Error(ErrorCode::ShapeMismatch, "dense input has " + std::to_string(x.size()) +
                                                  " elements, weights expect " + std::to_string(p.inputs()));
}

/// y = W x + b. Any input shape with the right element count is accepted
/// (the flatten step is implicit).
inline Tensor dense_forward(const Tensor& x, const DenseParams& p) {
    using simd::wide;
    check_dense(x, p);
    const std::size_t n_out = p.outputs(), n_in = p.inputs();
    const std::size_t iv = n_in / simd::lanes<wide> * simd::lanes<wide>;
    const double* xs = x.raw();
    Tensor y({n_out});
    // Lane-parallel partial sums per row break the add dependency chain.
    for (std::size_t o = 0; o < n_out; ++o) {
        const double* row = p.weights.raw() + o * n_in;
        wide acc = {};
        for (std::size_t i = 0; i < iv; i += simd::lanes<wide>) acc += simd::load<wide>(row + i) * simd::load<wide>(xs + i);
        double s = p.bias[o] + simd::hsum(acc);
        for (std::size_t i = iv; i < n_in; ++i) s += row[i] * xs[i];
        y[o] = s;
    }
    return y;
}

/// grad_w = grad_out (outer) x, grad_b = grad_out, grad_x = W^T grad_out
/// (shaped like x).
inline DenseGrads dense_backward(const Tensor& x, const DenseParams& p, const Tensor& grad_out) {
    check_dense(x, p);
    require_shape(grad_out, {p.outputs()}, "dense grad_out");
    const std::size_t n_out = p.outputs(), n_in = p.inputs();
    DenseGrads g{Tensor(x.shape()), Tensor(p.weights.shape()), grad_out};
    for (std::size_t o = 0; o < n_out; ++o) {
        const double go = grad_out[o];
        const double* __restrict row = p.weights.raw() + o * n_in;
        double* __restrict gw = g.grad_w.raw() + o * n_in;
        double* __restrict gx = g.grad_x.raw();
        const double* __restrict xs = x.raw();
        for (std::size_t i = 0; i < n_in; ++i) {
            gw[i] = go * xs[i];
            gx[i] += row[i] * go;
        }
    }
    return g;
}

struct SoftmaxXent {
    Tensor probs;
    double loss = 0.0;
    Tensor grad_logits;
};

/// Softmax with max subtraction; loss = -ln p[target] evaluated as
/// log-sum-exp minus the shifted target logit.
inline SoftmaxXent softmax_cross_entropy(const Tensor& logits, std::size_t target) {
    if (logits.rank() != 1) throw Error(ErrorCode::ShapeMismatch, "logits must be a vector");
    const std::size_t k = logits.size();
    if (target >= k)
        throw Error(ErrorCode::TargetOutOfRange,
                    "target " + std::to_string(target) + " outside [0, " + std::to_string(k) + ")");
    const double m = *std::max_element(logits.data().begin(), logits.data().end());
    SoftmaxXent r{Tensor({k}), 0.0, Tensor({k})};
    double z = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        r.probs[i] = std::exp(logits[i] - m);
        z += r.probs[i];
    }
    for (std::size_t i = 0; i < k; ++i) {
        r.probs[i] /= z;
        r.grad_logits[i] = r.probs[i] - (i == target ? 1.0 : 0.0);
    }
    r.loss = std::log(z) - (logits[target] - m);
    return r;
}

inline Tensor softmax(const Tensor& logits) { return softmax_cross_entropy(logits, 0).probs; }

} // namespace btcnn
