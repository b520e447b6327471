#pragma once

// Implementations behind the btcnn command-line tool. Each command either
// writes all of its declared outputs or throws, after deleting whatever it
// had already written.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "btcnn/checkpoint.hpp"
#include "btcnn/dataset.hpp"
#include "btcnn/evaluation.hpp"
#include "btcnn/io.hpp"
#include "btcnn/preprocess.hpp"
#include "btcnn/synth.hpp"
#include "btcnn/training.hpp"

namespace btcnn::cli {

namespace fs = std::filesystem;

inline InputSize require_input_size(long long n) {
    const auto s = parse_input_size(n);
    if (!s) throw Error(ErrorCode::InvalidFlag, "--size " + std::to_string(n) + " is not one of {32, 64, 128}");
    return *s;
}

inline Variant require_variant(const std::string& v) {
    const auto parsed = parse_variant(v);
    if (!parsed)
        throw Error(ErrorCode::InvalidFlag, "--variant '" + v + "' is not one of {uncropped, cropped, segmented}");
    return *parsed;
}

inline Partition require_partition(const std::string& p) {
    const auto parsed = parse_partition(p);
    if (!parsed) throw Error(ErrorCode::InvalidFlag, "--split '" + p + "' is not one of {train, validation, test}");
    return *parsed;
}

/// Removes every registered output unless commit() was called.
class OutputGuard {
public:
    void add(fs::path p) { paths_.push_back(std::move(p)); }
    void commit() noexcept { committed_ = true; }
    ~OutputGuard() {
        if (committed_) return;
        for (const auto& p : paths_) {
            std::error_code ec;
            fs::remove(p, ec);
        }
    }

private:
    std::vector<fs::path> paths_;
    bool committed_ = false;
};

// ----------------------------------------------------------------- synth --

struct SynthOptions {
    fs::path out;
    std::size_t per_class = 10;
    std::size_t size = 128;
    std::uint64_t seed = 0;
};

inline void run_synth(const SynthOptions& o, std::ostream& log) {
    const auto entries = synth_dataset(o.out, SynthSpec{o.per_class, o.size, o.seed});
    log << "synth: wrote " << entries.size() << " records (" << o.per_class << " per class, " << o.size << "x"
        << o.size << ", seed " << o.seed << ") to " << o.out.string() << '\n';
}

// ----------------------------------------------------------------- train --

struct TrainOptions {
    fs::path data;
    std::string variant = "cropped";
    long long size = 64;
    std::size_t iters = 1600;
    std::size_t batch = 64;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    std::size_t eval_every = 25;
    fs::path out;
    fs::path history;
};

inline TrainConfig to_config(const TrainOptions& o) {
    TrainConfig c;
    c.variant = require_variant(o.variant);
    c.input_size = require_input_size(o.size);
    c.max_iterations = o.iters;
    c.batch_size = o.batch;
    c.learning_rate = o.lr;
    c.seed = o.seed;
    c.eval_every = o.eval_every;
    validate(c);
    return c;
}

inline std::string banner(const TrainConfig& c) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "variant=%s size=%zu iters=%zu batch=%zu lr=%g seed=%llu (adam b1=%g b2=%g eps=%g)",
                  std::string(to_string(c.variant)).c_str(), side(c.input_size), c.max_iterations, c.batch_size,
                  c.learning_rate, static_cast<unsigned long long>(c.seed), c.beta1, c.beta2, c.epsilon);
    return buf;
}

struct PreparedSplit {
    Samples train, validation, test;
};

inline PreparedSplit prepare_all(const Manifest& m, const SplitAssignment& split, Variant v, InputSize s) {
    return {prepare_partition(m, split, Partition::Train, v, s), prepare_partition(m, split, Partition::Validation, v, s),
            prepare_partition(m, split, Partition::Test, v, s)};
}

inline void run_train(const TrainOptions& o, std::ostream& log) {
    const auto config = to_config(o);
    log << "train: " << banner(config) << '\n';
    const auto manifest = load_manifest(o.data);
    const auto split = stratified_split(manifest, SplitRatios{}, config.seed);
    const auto train_set = prepare_partition(manifest, split, Partition::Train, config.variant, config.input_size);
    const auto val_set = prepare_partition(manifest, split, Partition::Validation, config.variant, config.input_size);
    log << "train: " << train_set.size() << " training / " << val_set.size() << " validation samples\n";

    OutputGuard guard;
    const auto result = train(config, train_set, val_set, [&](const HistoryRow& r) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "  iter %5zu  epoch %4zu  loss %.4f  acc %.4f  val_loss %.4f  val_acc %.4f\n",
                      r.iteration, r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy);
        log << buf << std::flush;
    });
    guard.add(o.out);
    save_checkpoint(o.out, result.params, make_metadata(config.input_size, config.variant, config.seed));
    guard.add(o.history);
    write_history_csv(o.history, result.history);
    guard.commit();
    log << "train: wrote " << o.out.string() << " and " << o.history.string() << '\n';
}

// ------------------------------------------------------------------ eval --

struct EvalOptions {
    fs::path data;
    fs::path model;
    std::string split = "test";
    fs::path report;
    fs::path cm;
    std::optional<long long> size;
    std::optional<std::string> variant;
};

struct EvalOutcome {
    ConfusionMatrix cm;
    nlohmann::json report;
};

inline EvalOutcome evaluate_partition(const ModelParams& params, const Samples& samples) {
    if (samples.size() == 0) throw Error(ErrorCode::EmptyPartition, "partition has no samples");
    const auto cm = confusion_matrix(predict_batch(params, samples.inputs), samples.labels);
    return {cm, metrics_json(cm)};
}

inline void run_eval(const EvalOptions& o, std::ostream& log) {
    const auto part = require_partition(o.split);
    const std::optional<InputSize> want_size = o.size ? std::optional(require_input_size(*o.size)) : std::nullopt;
    const Variant want_variant = o.variant ? require_variant(*o.variant) : Variant::Uncropped;

    const auto ck = load_checkpoint(o.model);
    const auto params = params_from_checkpoint(ck, want_size);
    const auto& md = ck.metadata;
    if (o.variant && want_variant != md.variant)
        throw Error(ErrorCode::MetadataMismatch, "checkpoint variant " + std::string(to_string(md.variant)) + " but " +
                                                     *o.variant + " requested");

    const auto manifest = load_manifest(o.data);
    const auto split = stratified_split(manifest, SplitRatios{}, md.split_seed);
    const auto samples = prepare_partition(manifest, split, part, md.variant, md.input_size);
    auto outcome = evaluate_partition(params, samples);
    outcome.report["partition"] = std::string(to_string(part));
    outcome.report["variant"] = std::string(to_string(md.variant));
    outcome.report["input_size"] = side(md.input_size);

    OutputGuard guard;
    guard.add(o.report);
    io::write_text(o.report, outcome.report.dump(2) + "\n");
    guard.add(o.cm);
    io::write_text(o.cm, format_confusion_csv(outcome.cm));
    guard.commit();
    log << "eval: " << to_string(part) << " partition, " << outcome.cm.total() << " samples, accuracy "
        << outcome.report["overall_accuracy"].get<double>() << '\n';
}

// --------------------------------------------------------------- compare --

struct CompareOptions {
    fs::path data;
    std::uint64_t seed = 0;
    std::size_t iters = 1600;
    std::size_t batch = 64;
    double lr = 1e-3;
    fs::path out;
};

inline fs::path cell_metrics_path(const fs::path& report, Variant v, InputSize s) {
    return report.parent_path() /
           (report.stem().string() + "." + std::string(to_string(v)) + "-" + std::to_string(side(s)) + ".json");
}

/// Trains and tests every (variant, size) cell with one shared seed and
/// writes the accuracy grid plus one metrics JSON per cell.
inline std::vector<ComparisonCell> run_compare(const CompareOptions& o, std::ostream& log) {
    TrainConfig base;
    base.seed = o.seed;
    base.max_iterations = o.iters;
    base.batch_size = o.batch;
    base.learning_rate = o.lr;
    validate(base);

    const auto manifest = load_manifest(o.data);
    const auto split = stratified_split(manifest, SplitRatios{}, o.seed);
    std::vector<DatasetRecord> records;
    records.reserve(manifest.size());
    for (const auto& e : manifest.entries) records.push_back(load_record(manifest, e));

    auto gather = [&](Partition p, Variant v, InputSize s) {
        Samples out;
        for (auto i : split.indices(p)) {
            out.inputs.push_back(preprocess(records[i], v, s));
            out.labels.push_back(index_of(records[i].label));
        }
        return out;
    };

    OutputGuard guard;
    std::vector<ComparisonCell> cells;
    for (auto v : kReportRows)
        for (auto s : kAllInputSizes) {
            const std::string name = std::string(to_string(v)) + "/" + std::to_string(side(s));
            try {
                TrainConfig c = base;
                c.variant = v;
                c.input_size = s;
                const auto result = train(c, gather(Partition::Train, v, s), gather(Partition::Validation, v, s));
                auto outcome = evaluate_partition(result.params, gather(Partition::Test, v, s));
                const auto agg = aggregate_or_none(outcome.cm);
                cells.push_back({v, s, 100.0 * static_cast<double>(outcome.cm.trace()) /
                                           static_cast<double>(outcome.cm.total()), agg});
                outcome.report["partition"] = "test";
                outcome.report["variant"] = std::string(to_string(v));
                outcome.report["input_size"] = side(s);
                outcome.report["confusion_matrix"] = outcome.cm.cells;
                const auto path = cell_metrics_path(o.out, v, s);
                guard.add(path);
                io::write_text(path, outcome.report.dump(2) + "\n");
                char buf[128];
                std::snprintf(buf, sizeof buf, "compare: %-14s test accuracy %6.2f%%\n", name.c_str(),
                              cells.back().accuracy_percent);
                log << buf << std::flush;
            } catch (const Error& e) {
                throw Error(e.code(), "cell " + name + ": " + e.what());
            }
        }
    guard.add(o.out);
    io::write_text(o.out, comparison_report(cells));
    guard.commit();
    log << "compare: wrote " << o.out.string() << '\n';
    return cells;
}

} // namespace btcnn::cli
