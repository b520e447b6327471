#pragma once

// The classifier: four [conv3x3 -> relu -> maxpool2x2] blocks with 8, 16,
// 32 and 64 filters, then dense(64) -> relu -> dense(3) -> softmax. Counting
// the input and the classification-output stage, the stack has 18 named
// layers.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "btcnn/dataset.hpp"
#include "btcnn/error.hpp"
#include "btcnn/layers.hpp"
#include "btcnn/rng.hpp"
#include "btcnn/tensor.hpp"

namespace btcnn {

inline constexpr std::size_t kConvBlocks = 4;
inline constexpr std::array<std::size_t, kConvBlocks> kFilterLadder = {8, 16, 32, 64};
inline constexpr std::size_t kHiddenWidth = 64;
inline constexpr std::size_t kKernel = 3;

enum class LayerKind { Input, Conv, Relu, MaxPool, Dense, Softmax, ClassOutput };

struct LayerSpec {
    LayerKind kind;
    std::string name;
    std::size_t units = 0; // filters for conv, outputs for dense
};

struct ArchitectureSpec {
    std::size_t input_side = 0;
    std::size_t classes = kNumClasses;
    std::vector<LayerSpec> layers;

    [[nodiscard]] std::size_t flatten_dim() const {
        const std::size_t s = input_side >> kConvBlocks;
        return s * s * kFilterLadder.back();
    }
};

inline ArchitectureSpec build_architecture(std::size_t input_side, std::size_t classes = kNumClasses) {
    if (input_side == 0 || input_side % 16 != 0)
        throw Error(ErrorCode::NotDivisibleBy16, "input side " + std::to_string(input_side) + " is not a multiple of 16");
    if (classes < 2) throw Error(ErrorCode::InvalidConfig, "need at least two classes");
    ArchitectureSpec spec{input_side, classes, {}};
    spec.layers.push_back({LayerKind::Input, "input", 1});
    for (std::size_t b = 0; b < kConvBlocks; ++b) {
        const auto n = std::to_string(b + 1);
        spec.layers.push_back({LayerKind::Conv, "conv" + n, kFilterLadder[b]});
        spec.layers.push_back({LayerKind::Relu, "relu" + n, 0});
        spec.layers.push_back({LayerKind::MaxPool, "pool" + n, 0});
    }
    spec.layers.push_back({LayerKind::Dense, "fc1", kHiddenWidth});
    spec.layers.push_back({LayerKind::Relu, "relu5", 0});
    spec.layers.push_back({LayerKind::Dense, "fc2", classes});
    spec.layers.push_back({LayerKind::Softmax, "softmax", 0});
    spec.layers.push_back({LayerKind::ClassOutput, "classoutput", classes});
    return spec;
}

inline std::string describe(const LayerSpec& l) {
    switch (l.kind) {
    case LayerKind::Input: return l.name + ":input";
    case LayerKind::Conv: return l.name + ":conv3x3/s1/p1x" + std::to_string(l.units);
    case LayerKind::Relu: return l.name + ":relu";
    case LayerKind::MaxPool: return l.name + ":maxpool2x2/s2";
    case LayerKind::Dense: return l.name + ":dense" + std::to_string(l.units);
    case LayerKind::Softmax: return l.name + ":softmax";
    case LayerKind::ClassOutput: return l.name + ":crossentropy";
    }
    return l.name;
}

struct ModelParams {
    std::array<ConvParams, kConvBlocks> conv;
    std::array<DenseParams, 2> dense;

    /// Visits every trainable tensor in architecture order: for each conv
    /// layer weights then bias, then for each dense layer weights then bias.
    template <typename F>
    void for_each_tensor(F&& f) {
        for (auto& c : conv) {
            f(c.weights);
            f(c.bias);
        }
        for (auto& d : dense) {
            f(d.weights);
            f(d.bias);
        }
    }
    template <typename F>
    void for_each_tensor(F&& f) const {
        for (const auto& c : conv) {
            f(c.weights);
            f(c.bias);
        }
        for (const auto& d : dense) {
            f(d.weights);
            f(d.bias);
        }
    }

    [[nodiscard]] std::size_t scalar_count() const {
        std::size_t n = 0;
        for_each_tensor([&](const Tensor& t) { n += t.size(); });
        return n;
    }

    friend bool operator==(const ModelParams& a, const ModelParams& b) {
        std::vector<const Tensor*> ta, tb;
        a.for_each_tensor([&](const Tensor& t) { ta.push_back(&t); });
        b.for_each_tensor([&](const Tensor& t) { tb.push_back(&t); });
        for (std::size_t i = 0; i < ta.size(); ++i)
            if (!(*ta[i] == *tb[i])) return false;
        return true;
    }
};

using ModelGrads = ModelParams;

/// Zero-filled parameters with the shapes of the given architecture.
inline ModelParams zero_params(const ArchitectureSpec& spec) {
    ModelParams p;
    std::size_t in_ch = 1;
    for (std::size_t b = 0; b < kConvBlocks; ++b) {
        const std::size_t f = kFilterLadder[b];
        p.conv[b] = ConvParams{Tensor({f, in_ch, kKernel, kKernel}), Tensor({f}), 1, 1};
        in_ch = f;
    }
    p.dense[0] = DenseParams{Tensor({kHiddenWidth, spec.flatten_dim()}), Tensor({kHiddenWidth})};
    p.dense[1] = DenseParams{Tensor({spec.classes, kHiddenWidth}), Tensor({spec.classes})};
    return p;
}

inline ModelParams zeros_like(const ModelParams& params) {
    ModelParams z = params;
    z.for_each_tensor([](Tensor& t) { t.fill(0.0); });
    return z;
}

inline std::size_t param_count(const ArchitectureSpec& spec) {
    std::size_t n = 0;
    std::size_t in_ch = 1;
    for (auto f : kFilterLadder) {
        n += f * in_ch * kKernel * kKernel + f;
        in_ch = f;
    }
    n += kHiddenWidth * spec.flatten_dim() + kHiddenWidth;
    n += spec.classes * kHiddenWidth + spec.classes;
    return n;
}

/// He-normal weights, std = sqrt(2 / fan_in), drawn layer by layer in
/// architecture order from one xorshift stream; biases are zero.
inline ModelParams init_params(const ArchitectureSpec& spec, std::uint64_t seed) {
    ModelParams p = zero_params(spec);
    Xorshift64Star rng(seed);
    auto fill_he = [&](Tensor& w, std::size_t fan_in) {
        const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (double& v : w.data()) v = rng.normal(0.0, sd);
    };
    for (auto& c : p.conv) fill_he(c.weights, c.channels() * kKernel * kKernel);
    for (auto& d : p.dense) fill_he(d.weights, d.inputs());
    return p;
}

inline std::size_t input_side_of(const ModelParams& p) {
    const std::size_t flat = p.dense[0].inputs();
    const std::size_t per_map = flat / kFilterLadder.back();
    const auto s = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(per_map))));
    return s << kConvBlocks;
}

struct ForwardCache {
    std::array<Tensor, kConvBlocks> conv_in;
    std::array<Tensor, kConvBlocks> conv_out; // pre-activation
    std::array<PoolIndices, kConvBlocks> pool;
    Tensor flat;      // dense 1 input
    Tensor hidden;    // dense 1 pre-activation
    Tensor hidden_act;
    Tensor logits;
    Tensor probs;
};

struct ForwardResult {
    Tensor probs;
    ForwardCache cache;
};

inline ForwardResult forward(const ModelParams& params, const Tensor& x) {
    const std::size_t n = input_side_of(params);
    require_shape(x, {1, n, n}, "model input");
    ForwardResult r;
    auto& c = r.cache;
    Tensor a = x;
    for (std::size_t b = 0; b < kConvBlocks; ++b) {
        c.conv_in[b] = std::move(a);
        c.conv_out[b] = conv2d_forward(c.conv_in[b], params.conv[b]);
        auto pooled = relu_maxpool2x2_forward(c.conv_out[b]);
        c.pool[b] = std::move(pooled.indices);
        a = std::move(pooled.output);
    }
    c.flat = a.reshaped({a.size()});
    c.hidden = dense_forward(c.flat, params.dense[0]);
    c.hidden_act = relu_forward(c.hidden);
    c.logits = dense_forward(c.hidden_act, params.dense[1]);
    c.probs = softmax(c.logits);
    r.probs = c.probs;
    return r;
}

inline double cross_entropy(const ForwardCache& cache, std::size_t target) {
    return softmax_cross_entropy(cache.logits, target).loss;
}

namespace detail {

inline void check_cache(const ModelParams& params, const ForwardCache& cache) {
    auto stale = [](const std::string& what) { throw Error(ErrorCode::StaleCache, what); };
    for (std::size_t b = 0; b < kConvBlocks; ++b) {
        const auto& p = params.conv[b];
        if (cache.conv_in[b].rank() != 3 || cache.conv_in[b].dim(0) != p.channels())
            stale("conv" + std::to_string(b + 1) + " input does not match parameters");
        if (cache.conv_out[b].rank() != 3 || cache.conv_out[b].dim(0) != p.filters() ||
            cache.conv_out[b].dim(1) != cache.conv_in[b].dim(1))
            stale("conv" + std::to_string(b + 1) + " output does not match parameters");
        if (cache.pool[b].input_shape != cache.conv_out[b].shape())
            stale("pool" + std::to_string(b + 1) + " indices do not match");
    }
    if (cache.flat.size() != params.dense[0].inputs()) stale("flatten size does not match fc1");
    if (cache.logits.size() != params.dense[1].outputs()) stale("logit count does not match fc2");
}

} // namespace detail

/// Gradient of the cross-entropy loss at `target` with respect to every
/// parameter, from the activations recorded by forward().
inline ModelGrads backward(const ModelParams& params, const ForwardCache& cache, std::size_t target) {
    detail::check_cache(params, cache);
    ModelGrads g;
    const auto head = softmax_cross_entropy(cache.logits, target);

    auto d2 = dense_backward(cache.hidden_act, params.dense[1], head.grad_logits);
    g.dense[1] = DenseParams{std::move(d2.grad_w), std::move(d2.grad_b)};
    const Tensor g_hidden = relu_backward(cache.hidden, d2.grad_x);
    auto d1 = dense_backward(cache.flat, params.dense[0], g_hidden);
    g.dense[0] = DenseParams{std::move(d1.grad_w), std::move(d1.grad_b)};

    const auto& last = cache.pool[kConvBlocks - 1].input_shape;
    Tensor upstream = d1.grad_x.reshaped({last[0], last[1] / 2, last[2] / 2});
    for (std::size_t b = kConvBlocks; b-- > 0;) {
        const Tensor& pooled = b + 1 < kConvBlocks ? cache.conv_in[b + 1] : cache.flat;
        auto cg = conv_relu_pool_backward(cache.conv_in[b], params.conv[b], pooled, cache.pool[b], upstream, b > 0);
        g.conv[b] = ConvParams{std::move(cg.grad_w), std::move(cg.grad_b), params.conv[b].stride,
                               params.conv[b].padding};
        upstream = std::move(cg.grad_x);
    }
    return g;
}

/// Index of the largest probability; ties resolve to the lowest index.
inline std::size_t argmax(const Tensor& probs) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i)
        if (probs[i] > probs[best]) best = i;
    return best;
}

} // namespace btcnn
