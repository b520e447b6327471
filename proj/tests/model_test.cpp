#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <numeric>

#include "btcnn/model.hpp"
#include "model_gradcheck.hpp"
#include "oracles.hpp"

using namespace btcnn;

namespace {

Tensor random_input(std::size_t n, std::uint64_t seed) {
    Xorshift64Star rng(seed);
    Tensor x({1, n, n});
    for (double& v : x.data()) v = rng.uniform();
    return x;
}

Tensor relu_oracle(Tensor t) {
    for (double& v : t.data()) v = v > 0 ? v : 0;
    return t;
}

} // namespace

TEST(Architecture, FlattenDimensions) {
    EXPECT_EQ(build_architecture(32).flatten_dim(), 256u);
    EXPECT_EQ(build_architecture(64).flatten_dim(), 1024u);
    EXPECT_EQ(build_architecture(128).flatten_dim(), 4096u);
}

TEST(Architecture, RejectsSidesNotDivisibleBy16) {
    for (std::size_t n : {0u, 33u, 40u, 100u}) {
        try {
            build_architecture(n);
            FAIL() << n;
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::NotDivisibleBy16);
        }
    }
}

TEST(Architecture, EighteenNamedLayers) {
    const auto spec = build_architecture(64);
    ASSERT_EQ(spec.layers.size(), 18u);
    std::vector<std::string> names;
    for (const auto& l : spec.layers) names.push_back(l.name);
    EXPECT_EQ(names, (std::vector<std::string>{"input", "conv1", "relu1", "pool1", "conv2", "relu2", "pool2", "conv3",
                                               "relu3", "pool3", "conv4", "relu4", "pool4", "fc1", "relu5", "fc2",
                                               "softmax", "classoutput"}));
    std::vector<std::size_t> filters;
    for (const auto& l : spec.layers)
        if (l.kind == LayerKind::Conv) filters.push_back(l.units);
    EXPECT_EQ(filters, (std::vector<std::size_t>{8, 16, 32, 64}));
}

TEST(ParamCount, MatchesHandSumsAndTensorLengths) {
    // conv: 8*1*9+8, 16*8*9+16, 32*16*9+32, 64*32*9+64
    const std::size_t conv = 80 + 1168 + 4640 + 18496;
    EXPECT_EQ(conv, 24384u);
    const std::pair<std::size_t, std::size_t> cases[] = {{32, 41027}, {64, 90179}, {128, 286787}};
    for (auto [n, expected] : cases) {
        const auto spec = build_architecture(n);
        const std::size_t flat = (n / 16) * (n / 16) * 64;
        EXPECT_EQ(conv + (64 * flat + 64) + (3 * 64 + 3), expected);
        EXPECT_EQ(param_count(spec), expected);
        EXPECT_EQ(zero_params(spec).scalar_count(), expected);
    }
}

TEST(InitParams, DeterministicWithZeroBiases) {
    const auto spec = build_architecture(32);
    const auto a = init_params(spec, 9);
    EXPECT_TRUE(a == init_params(spec, 9));
    EXPECT_FALSE(a == init_params(spec, 10));
    for (const auto& c : a.conv)
        for (double b : c.bias.data()) EXPECT_EQ(b, 0.0);
    for (const auto& d : a.dense)
        for (double b : d.bias.data()) EXPECT_EQ(b, 0.0);
}

TEST(InitParams, DenseStandardDeviationNearHe) {
    const auto p = init_params(build_architecture(32), 2024);
    const auto w = p.dense[0].weights.data();
    ASSERT_EQ(w.size(), 16384u);
    const double mean = std::accumulate(w.begin(), w.end(), 0.0) / double(w.size());
    double ss = 0;
    for (double v : w) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / double(w.size() - 1));
    const double target = std::sqrt(2.0 / 256.0);
    EXPECT_NEAR(target, 0.0884, 1e-4);
    EXPECT_LT(std::abs(sd - target) / target, 0.10) << sd;
}

TEST(Forward, ProbabilitiesArePositiveAndSumToOne) {
    for (std::size_t n : {16u, 32u, 64u}) {
        const auto p = init_params(build_architecture(n), n);
        for (std::uint64_t s = 0; s < 5; ++s) {
            const auto r = forward(p, random_input(n, s));
            ASSERT_EQ(r.probs.shape(), (Shape{3}));
            double sum = 0;
            for (double v : r.probs.data()) {
                EXPECT_GT(v, 0.0);
                EXPECT_LT(v, 1.0);
                sum += v;
            }
            EXPECT_NEAR(sum, 1.0, 1e-9);
        }
    }
}

TEST(Forward, ZeroParametersGiveUniformProbabilities) {
    const auto p = zero_params(build_architecture(32));
    const auto r = forward(p, random_input(32, 4));
    for (double v : r.probs.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Forward, SpatialSidesHalveAtEveryPool) {
    const auto p = init_params(build_architecture(64), 1);
    const auto r = forward(p, random_input(64, 1));
    for (std::size_t b = 0; b < kConvBlocks; ++b) {
        EXPECT_EQ(r.cache.conv_in[b].dim(1), 64u >> b);
        EXPECT_EQ(r.cache.conv_out[b].dim(1), 64u >> b);
    }
    EXPECT_EQ(r.cache.flat.size(), 4u * 4u * 64u);
}

TEST(Forward, MatchesExplicitCompositionAtSide16) {
    const auto p = init_params(build_architecture(16), 31);
    const Tensor x = random_input(16, 32);
    Tensor a = x;
    for (std::size_t b = 0; b < kConvBlocks; ++b)
        a = oracle::window_max(relu_oracle(oracle::direct_conv(a, p.conv[b].weights, p.conv[b].bias, 1, 1)));
    const Tensor flat = a.reshaped({a.size()});
    const Tensor h = relu_oracle(oracle::naive_dense(flat, p.dense[0].weights, p.dense[0].bias));
    const Tensor z = oracle::naive_dense(h, p.dense[1].weights, p.dense[1].bias);
    double denom = 0;
    for (double v : z.data()) denom += std::exp(v);
    const auto r = forward(p, x);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(r.probs[k], std::exp(z[k]) / denom, 1e-12);
}

TEST(Forward, RejectsWrongInputShape) {
    const auto p = init_params(build_architecture(32), 1);
    try {
        forward(p, random_input(64, 1));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    }
}

TEST(Backward, SaturatedOutputHasVanishingGradient) {
    auto p = init_params(build_architecture(32), 5);
    p.dense[1].weights.fill(0.0);
    p.dense[1].bias = Tensor::vector({0.0, 60.0, 0.0});
    const auto r = forward(p, random_input(32, 6));
    const auto g = backward(p, r.cache, 1);
    double worst = 0;
    g.for_each_tensor([&](const Tensor& t) {
        for (double v : t.data()) worst = std::max(worst, std::abs(v));
    });
    EXPECT_LT(worst, 1e-6);
}

TEST(Backward, FullModelMatchesFiniteDifferencesOnFiveSeeds) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto r = oracle::model_gradcheck(seed);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        EXPECT_EQ(r.coordinates, param_count(build_architecture(16)));
        EXPECT_LT(r.max_relative_error, 1e-4) << "seed " << seed;
        std::printf("seed %llu: max rel err %.3e over %zu coordinates (%.2fs)\n", (unsigned long long)seed,
                    r.max_relative_error, r.coordinates, secs);
    }
}

TEST(Backward, DeterministicGradients) {
    const auto p = init_params(build_architecture(32), 8);
    const Tensor x = random_input(32, 9);
    const auto a = backward(p, forward(p, x).cache, 2);
    const auto b = backward(p, forward(p, x).cache, 2);
    EXPECT_TRUE(a == b);
}

TEST(Backward, StaleCacheIsRejected) {
    const auto p32 = init_params(build_architecture(32), 1);
    const auto p64 = init_params(build_architecture(64), 1);
    const auto r = forward(p32, random_input(32, 1));
    try {
        backward(p64, r.cache, 0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::StaleCache);
    }
}

TEST(Argmax, TiesGoToLowestIndex) {
    EXPECT_EQ(argmax(Tensor::vector({0.2, 0.4, 0.4})), 1u);
    EXPECT_EQ(argmax(Tensor::vector({0.5, 0.5, 0.0})), 0u);
    EXPECT_EQ(argmax(Tensor::vector({0.1, 0.2, 0.7})), 2u);
}
