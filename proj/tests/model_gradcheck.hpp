#pragma once

// Whole-network finite-difference check at a small input side, shared by the
// model unit tests and the acceptance runner. The numeric side recomputes
// the loss by chaining layer primitives, starting from the first layer that
// the perturbed tensor can influence.

#include <vector>

#include "btcnn/gradcheck.hpp"
#include "btcnn/model.hpp"

namespace oracle {

struct ModelGradCheck {
    double max_relative_error = 0.0;
    std::size_t coordinates = 0;
};

inline ModelGradCheck model_gradcheck(std::uint64_t seed, std::size_t side = 16, std::size_t target = 1) {
    using namespace btcnn;
    const auto spec = build_architecture(side);
    ModelParams params = init_params(spec, seed);
    Xorshift64Star rng(derive_seed(seed, 77));
    // Small non-zero biases so no unit sits exactly on a ReLU kink.
    params.for_each_tensor([&](Tensor& t) {
        if (t.rank() == 1)
            for (double& v : t.data()) v = rng.uniform(-0.05, 0.05);
    });
    Tensor x({1, side, side});
    for (double& v : x.data()) v = rng.uniform();

    const auto fwd = forward(params, x);
    const ModelGrads grads = backward(params, fwd.cache, target);

    // stage 0..3: conv block input; 4: fc1 input; 5: fc2 input
    auto loss_from = [&](std::size_t stage) {
        Tensor a = stage < kConvBlocks ? fwd.cache.conv_in[stage] : Tensor({1});
        for (std::size_t b = stage; b < kConvBlocks; ++b)
            a = maxpool2x2_forward(relu_forward(conv2d_forward(a, params.conv[b]))).output;
        if (stage <= kConvBlocks) {
            const Tensor flat = stage < kConvBlocks ? a.reshaped({a.size()}) : fwd.cache.flat;
            a = relu_forward(dense_forward(flat, params.dense[0]));
        } else {
            a = fwd.cache.hidden_act;
        }
        return softmax_cross_entropy(dense_forward(a, params.dense[1]), target).loss;
    };

    ModelGradCheck out;
    auto check = [&](Tensor& theta, const Tensor& analytic, std::size_t stage) {
        const auto r = finite_difference_check([&](const Tensor&) { return loss_from(stage); }, theta, analytic);
        out.max_relative_error = std::max(out.max_relative_error, r.max_relative_error);
        out.coordinates += r.coordinates;
    };
    for (std::size_t b = 0; b < kConvBlocks; ++b) {
        check(params.conv[b].weights, grads.conv[b].weights, b);
        check(params.conv[b].bias, grads.conv[b].bias, b);
    }
    for (std::size_t d = 0; d < 2; ++d) {
        check(params.dense[d].weights, grads.dense[d].weights, kConvBlocks + d);
        check(params.dense[d].bias, grads.dense[d].bias, kConvBlocks + d);
    }
    return out;
}

} // namespace oracle
