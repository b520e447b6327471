#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "btcnn/dataset.hpp"
#include "btcnn/error.hpp"
#include "btcnn/model.hpp"
#include "btcnn/preprocess.hpp"
#include "btcnn/rng.hpp"

namespace btcnn {

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 64;
    std::size_t max_iterations = 1600;
    std::uint64_t seed = 0;
    Variant variant = Variant::Cropped;
    InputSize input_size = InputSize::S64;
    std::size_t eval_every = 25;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

inline void validate(const TrainConfig& c) {
    auto bad = [](const std::string& why) { throw Error(ErrorCode::InvalidConfig, why); };
    if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) bad("learning_rate must be positive");
    if (c.batch_size == 0) bad("batch_size must be at least 1");
    if (c.max_iterations == 0) bad("max_iterations must be at least 1");
    if (c.eval_every == 0) bad("eval_every must be at least 1");
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0)) bad("betas must lie in [0, 1)");
    if (!(c.epsilon > 0.0)) bad("epsilon must be positive");
}

// ---------------------------------------------------------------- ADAM ----

struct AdamState {
    ModelParams m;
    ModelParams v;
    std::uint64_t t = 0;
};

inline AdamState make_adam_state(const ModelParams& params) { return {zeros_like(params), zeros_like(params), 0}; }

/// One ADAM update of a flat parameter block at (already incremented) step t.
inline void adam_update(std::span<double> theta, std::span<const double> grad, std::span<double> m,
                        std::span<double> v, std::uint64_t t, const TrainConfig& c) {
    if (grad.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size())
        throw Error(ErrorCode::ShapeMismatch, "adam: parameter, gradient and moment sizes differ");
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double g = grad[i];
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        theta[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
}

inline void adam_step(ModelParams& params, const ModelGrads& grads, AdamState& state, const TrainConfig& c) {
    std::vector<Tensor*> p, m, v;
    std::vector<const Tensor*> g;
    params.for_each_tensor([&](Tensor& t) { p.push_back(&t); });
    state.m.for_each_tensor([&](Tensor& t) { m.push_back(&t); });
    state.v.for_each_tensor([&](Tensor& t) { v.push_back(&t); });
    grads.for_each_tensor([&](const Tensor& t) { g.push_back(&t); });
    for (std::size_t i = 0; i < p.size(); ++i)
        if (g[i]->shape() != p[i]->shape() || m[i]->shape() != p[i]->shape() || v[i]->shape() != p[i]->shape())
            throw Error(ErrorCode::ShapeMismatch, "adam: tensor " + std::to_string(i) + " shape " +
                                                      shape_string(p[i]->shape()) + " vs gradient " +
                                                      shape_string(g[i]->shape()));
    ++state.t;
    for (std::size_t i = 0; i < p.size(); ++i)
        adam_update(p[i]->data(), g[i]->data(), m[i]->data(), v[i]->data(), state.t, c);
}

// ----------------------------------------------------------- minibatches --

/// Draws minibatches epoch by epoch: every epoch is a fresh seeded
/// permutation of the ids cut into consecutive batches, the last of which
/// may be short. Batches never straddle an epoch boundary.
class MinibatchSampler {
public:
    MinibatchSampler(std::vector<std::size_t> ids, std::size_t batch_size, std::uint64_t seed)
        : ids_(std::move(ids)), batch_(batch_size), rng_(seed) {
        if (ids_.empty()) throw Error(ErrorCode::EmptyTrainSet, "no training samples");
        if (batch_ == 0) throw Error(ErrorCode::InvalidConfig, "batch_size must be at least 1");
        cursor_ = ids_.size(); // forces a shuffle on first use
    }

    std::vector<std::size_t> next() {
        if (cursor_ >= order_.size()) {
            order_ = ids_;
            rng_.shuffle(std::span<std::size_t>(order_));
            cursor_ = 0;
            ++epoch_;
        }
        const std::size_t end = std::min(cursor_ + batch_, order_.size());
        std::vector<std::size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                       order_.begin() + static_cast<std::ptrdiff_t>(end));
        cursor_ = end;
        return batch;
    }

    /// 1-based epoch of the most recently drawn batch (0 before any draw).
    [[nodiscard]] std::size_t epoch() const noexcept { return epoch_; }

private:
    std::vector<std::size_t> ids_;
    std::vector<std::size_t> order_;
    std::size_t batch_;
    std::size_t cursor_ = 0;
    std::size_t epoch_ = 0;
    Xorshift64Star rng_;
};

using EpochBatches = std::vector<std::vector<std::size_t>>;

inline std::vector<EpochBatches> minibatch_schedule(const std::vector<std::size_t>& ids, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epochs) {
    MinibatchSampler sampler(ids, batch_size, seed);
    std::vector<EpochBatches> out(epochs);
    const std::size_t per_epoch = (ids.size() + batch_size - 1) / batch_size;
    for (auto& e : out)
        for (std::size_t b = 0; b < per_epoch; ++b) e.push_back(sampler.next());
    return out;
}

// ------------------------------------------------------------- samples ----

struct Samples {
    std::vector<Tensor> inputs;
    std::vector<std::size_t> labels;

    [[nodiscard]] std::size_t size() const noexcept { return inputs.size(); }
};

/// Loads and preprocesses one partition of a split (manifest order).
inline Samples prepare_partition(const Manifest& m, const SplitAssignment& split, Partition part, Variant variant,
                                 InputSize size) {
    Samples s;
    for (auto i : split.indices(part)) {
        const auto record = load_record(m, m.entries[i]);
        s.inputs.push_back(preprocess(record, variant, size));
        s.labels.push_back(index_of(record.label));
    }
    return s;
}

struct EvalSummary {
    double mean_loss = 0.0;
    double accuracy = 0.0;
};

inline EvalSummary evaluate_loss(const ModelParams& params, const Samples& samples) {
    if (samples.size() == 0) throw Error(ErrorCode::EmptyPartition, "nothing to evaluate");
    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto r = forward(params, samples.inputs[i]);
        loss += cross_entropy(r.cache, samples.labels[i]);
        correct += argmax(r.probs) == samples.labels[i];
    }
    const auto n = static_cast<double>(samples.size());
    return {loss / n, static_cast<double>(correct) / n};
}

// ------------------------------------------------------------ training ----

struct HistoryRow {
    std::size_t iteration = 0;
    std::size_t epoch = 0;
    double train_loss = 0.0;     // mean over minibatch samples since the previous row
    double train_accuracy = 0.0; // same window
    double val_loss = 0.0;       // full validation partition
    double val_accuracy = 0.0;

    friend bool operator==(const HistoryRow&, const HistoryRow&) = default;
};

using TrainHistory = std::vector<HistoryRow>;

struct TrainResult {
    ModelParams params;
    TrainHistory history;
};

inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kBatchStream = 2;

/// max_iterations ADAM steps on the mean minibatch cross-entropy. Per-sample
/// gradients are summed in batch order, so runs are bit-reproducible. A
/// history row is recorded every eval_every iterations and after the last.
inline TrainResult train(const TrainConfig& config, const Samples& train_set, const Samples& val_set,
                         const std::function<void(const HistoryRow&)>& on_row = {}) {
    validate(config);
    if (train_set.size() == 0) throw Error(ErrorCode::EmptyPartition, "training partition is empty");
    if (val_set.size() == 0) throw Error(ErrorCode::EmptyPartition, "validation partition is empty");

    const auto spec = build_architecture(side(config.input_size));
    TrainResult result{init_params(spec, derive_seed(config.seed, kInitStream)), {}};
    AdamState adam = make_adam_state(result.params);

    std::vector<std::size_t> ids(train_set.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    MinibatchSampler sampler(ids, config.batch_size, derive_seed(config.seed, kBatchStream));

    ModelGrads sum = zeros_like(result.params);
    double window_loss = 0.0;
    std::size_t window_correct = 0, window_n = 0;

    for (std::size_t it = 1; it <= config.max_iterations; ++it) {
        const auto batch = sampler.next();
        sum.for_each_tensor([](Tensor& t) { t.fill(0.0); });
        for (auto idx : batch) {
            const auto fwd = forward(result.params, train_set.inputs[idx]);
            const auto target = train_set.labels[idx];
            window_loss += cross_entropy(fwd.cache, target);
            window_correct += argmax(fwd.probs) == target;
            ++window_n;
            const auto g = backward(result.params, fwd.cache, target);
            std::vector<const Tensor*> parts;
            g.for_each_tensor([&](const Tensor& t) { parts.push_back(&t); });
            std::size_t k = 0;
            sum.for_each_tensor([&](Tensor& t) {
                double* __restrict dst = t.raw();
                const double* __restrict src = parts[k++]->raw();
                for (std::size_t i = 0; i < t.size(); ++i) dst[i] += src[i];
            });
        }
        const double scale = 1.0 / static_cast<double>(batch.size());
        sum.for_each_tensor([&](Tensor& t) {
            for (double& v : t.data()) v *= scale;
        });
        adam_step(result.params, sum, adam, config);

        if (it % config.eval_every == 0 || it == config.max_iterations) {
            const auto val = evaluate_loss(result.params, val_set);
            HistoryRow row{it,
                           sampler.epoch(),
                           window_loss / static_cast<double>(window_n),
                           static_cast<double>(window_correct) / static_cast<double>(window_n),
                           val.mean_loss,
                           val.accuracy};
            result.history.push_back(row);
            if (on_row) on_row(row);
            window_loss = 0.0;
            window_correct = window_n = 0;
        }
    }
    return result;
}

inline constexpr std::string_view kHistoryHeader = "iteration,epoch,train_loss,train_accuracy,val_loss,val_accuracy";

inline std::string format_history(const TrainHistory& history) {
    std::string out(kHistoryHeader);
    out += '\n';
    char buf[160];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.8f,%.6f,%.8f,%.6f\n", r.iteration, r.epoch, r.train_loss,
                      r.train_accuracy, r.val_loss, r.val_accuracy);
        out += buf;
    }
    return out;
}

inline void write_history_csv(const std::filesystem::path& path, const TrainHistory& history) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << format_history(history);
    if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

} // namespace btcnn
