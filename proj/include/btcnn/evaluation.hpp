#pragma once

// Confusion matrices and the one-vs-rest metrics derived from them.
//
// Axis convention: cells[p][a] counts samples predicted as class p whose
// actual class is a, with classes ordered glioma, meningioma, pituitary.

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "btcnn/dataset.hpp"
#include "btcnn/error.hpp"
#include "btcnn/io.hpp"
#include "btcnn/model.hpp"
#include "btcnn/preprocess.hpp"

namespace btcnn {

inline std::size_t predict(const ModelParams& params, const Tensor& sample) { return argmax(forward(params, sample).probs); }

inline std::vector<std::size_t> predict_batch(const ModelParams& params, const std::vector<Tensor>& samples) {
    std::vector<std::size_t> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(predict(params, s));
    return out;
}

struct ConfusionMatrix {
    std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> cells{}; // [predicted][actual]

    [[nodiscard]] std::uint64_t total() const noexcept {
        std::uint64_t t = 0;
        for (const auto& row : cells)
            for (auto v : row) t += v;
        return t;
    }
    [[nodiscard]] std::uint64_t trace() const noexcept {
        std::uint64_t t = 0;
        for (std::size_t k = 0; k < kNumClasses; ++k) t += cells[k][k];
        return t;
    }
    [[nodiscard]] std::uint64_t row_sum(std::size_t p) const noexcept {
        std::uint64_t t = 0;
        for (auto v : cells[p]) t += v;
        return t;
    }
    [[nodiscard]] std::uint64_t col_sum(std::size_t a) const noexcept {
        std::uint64_t t = 0;
        for (const auto& row : cells) t += row[a];
        return t;
    }
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion_matrix(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& truths) {
    if (predictions.size() != truths.size())
        throw Error(ErrorCode::LengthMismatch, std::to_string(predictions.size()) + " predictions vs " +
                                                   std::to_string(truths.size()) + " labels");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i] >= kNumClasses || truths[i] >= kNumClasses)
            throw Error(ErrorCode::TargetOutOfRange, "class index outside [0, 3) at sample " + std::to_string(i));
        ++cm.cells[predictions[i]][truths[i]];
    }
    return cm;
}

struct OneVsRest {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline OneVsRest one_vs_rest(const ConfusionMatrix& cm, std::size_t k) {
    if (k >= kNumClasses) throw Error(ErrorCode::TargetOutOfRange, "class " + std::to_string(k));
    OneVsRest c;
    c.tp = cm.cells[k][k];
    c.fp = cm.row_sum(k) - c.tp;
    c.fn = cm.col_sum(k) - c.tp;
    c.tn = cm.total() - c.tp - c.fp - c.fn;
    return c;
}

/// Per-class rates where a zero denominator yields nullopt.
struct OptionalRates {
    std::optional<double> accuracy, sensitivity, specificity, precision;
};

inline OptionalRates rates(const OneVsRest& c) {
    auto ratio = [](std::uint64_t num, std::uint64_t den) -> std::optional<double> {
        if (den == 0) return std::nullopt;
        return static_cast<double>(num) / static_cast<double>(den);
    };
    return {ratio(c.tp + c.tn, c.tp + c.fp + c.tn + c.fn), ratio(c.tp, c.tp + c.fn), ratio(c.tn, c.tn + c.fp),
            ratio(c.tp, c.tp + c.fp)};
}

struct ClassMetrics {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    double accuracy = 0.0;    // (TP + TN) / (TP + FP + TN + FN)
    double sensitivity = 0.0; // TP / (TP + FN)
    double specificity = 0.0; // TN / (TN + FP)
    double precision = 0.0;   // TP / (TP + FP)
};

inline ClassMetrics per_class_metrics(const ConfusionMatrix& cm, std::size_t k) {
    if (cm.total() == 0) throw Error(ErrorCode::EmptyMatrix, "confusion matrix has no samples");
    const auto c = one_vs_rest(cm, k);
    const auto r = rates(c);
    const std::string cls(kLabelNames.at(k));
    auto need = [&](const std::optional<double>& v, const char* name, const char* den) {
        if (!v) throw Error(ErrorCode::UndefinedRate, std::string(name) + " for " + cls + " (" + den + " = 0)");
        return *v;
    };
    return {c.tp, c.fp, c.fn, c.tn, need(r.accuracy, "accuracy", "total"),
            need(r.sensitivity, "sensitivity", "TP+FN"), need(r.specificity, "specificity", "TN+FP"),
            need(r.precision, "precision", "TP+FP")};
}

struct AggregateMetrics {
    double overall_accuracy = 0.0; // trace / total
    double macro_sensitivity = 0.0;
    double macro_specificity = 0.0;
    double macro_precision = 0.0;
};

/// Overall accuracy plus unweighted means of the one-vs-rest rates.
inline AggregateMetrics aggregate_metrics(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw Error(ErrorCode::EmptyMatrix, "confusion matrix has no samples");
    AggregateMetrics a;
    a.overall_accuracy = static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
    for (std::size_t k = 0; k < kNumClasses; ++k) {
        const auto m = per_class_metrics(cm, k);
        a.macro_sensitivity += m.sensitivity;
        a.macro_specificity += m.specificity;
        a.macro_precision += m.precision;
    }
    a.macro_sensitivity /= kNumClasses;
    a.macro_specificity /= kNumClasses;
    a.macro_precision /= kNumClasses;
    return a;
}

/// aggregate_metrics, or nullopt when some class rate is undefined.
inline std::optional<AggregateMetrics> aggregate_or_none(const ConfusionMatrix& cm) {
    try {
        return aggregate_metrics(cm);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::UndefinedRate) return std::nullopt;
        throw;
    }
}

// ------------------------------------------------------------- file I/O ----

inline constexpr std::string_view kConfusionComment = "# rows=predicted cols=actual order=glioma,meningioma,pituitary";

inline std::string format_confusion_csv(const ConfusionMatrix& cm) {
    std::string out(kConfusionComment);
    out += '\n';
    for (const auto& row : cm.cells)
        out += std::to_string(row[0]) + "," + std::to_string(row[1]) + "," + std::to_string(row[2]) + "\n";
    return out;
}

inline ConfusionMatrix parse_confusion_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || (detail::strip_cr(line), line != kConfusionComment))
        throw Error(ErrorCode::MalformedIndex, "confusion CSV must start with '" + std::string(kConfusionComment) + "'");
    ConfusionMatrix cm;
    for (std::size_t p = 0; p < kNumClasses; ++p) {
        if (!std::getline(in, line)) throw Error(ErrorCode::MalformedIndex, "confusion CSV needs 3 rows");
        detail::strip_cr(line);
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != kNumClasses) throw Error(ErrorCode::MalformedIndex, "confusion CSV rows need 3 columns");
        for (std::size_t a = 0; a < kNumClasses; ++a) {
            try {
                std::size_t used = 0;
                cm.cells[p][a] = std::stoull(fields[a], &used);
                if (used != fields[a].size()) throw std::invalid_argument(fields[a]);
            } catch (const std::exception&) {
                throw Error(ErrorCode::MalformedIndex, "non-integer cell '" + fields[a] + "'");
            }
        }
    }
    return cm;
}

/// Metrics as JSON. Rates with a zero denominator are written as null, and
/// a macro mean is null whenever one of its class rates is.
inline nlohmann::json metrics_json(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw Error(ErrorCode::EmptyMatrix, "confusion matrix has no samples");
    auto put = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json per_class = nlohmann::json::array();
    std::array<std::optional<double>, 3> sums{0.0, 0.0, 0.0};
    for (std::size_t k = 0; k < kNumClasses; ++k) {
        const auto c = one_vs_rest(cm, k);
        const auto r = rates(c);
        per_class.push_back({{"label", std::string(kLabelNames[k])},
                             {"tp", c.tp},
                             {"fp", c.fp},
                             {"fn", c.fn},
                             {"tn", c.tn},
                             {"accuracy", put(r.accuracy)},
                             {"sensitivity", put(r.sensitivity)},
                             {"specificity", put(r.specificity)},
                             {"precision", put(r.precision)}});
        const std::array<std::optional<double>, 3> vals{r.sensitivity, r.specificity, r.precision};
        for (std::size_t m = 0; m < 3; ++m) sums[m] = (sums[m] && vals[m]) ? std::optional(*sums[m] + *vals[m]) : std::nullopt;
    }
    auto mean = [&](std::size_t m) { return sums[m] ? nlohmann::json(*sums[m] / kNumClasses) : nlohmann::json(nullptr); };
    return {{"overall_accuracy", static_cast<double>(cm.trace()) / static_cast<double>(cm.total())},
            {"total", cm.total()},
            {"per_class", per_class},
            {"macro", {{"sensitivity", mean(0)}, {"specificity", mean(1)}, {"precision", mean(2)}}}};
}

// -------------------------------------------------------- comparison ------

struct ComparisonCell {
    Variant variant = Variant::Cropped;
    InputSize size = InputSize::S64;
    double accuracy_percent = 0.0;
    std::optional<AggregateMetrics> metrics;
};

/// Row order of the accuracy grid.
inline constexpr std::array<Variant, 3> kReportRows = {Variant::Cropped, Variant::Uncropped, Variant::Segmented};

/// Markdown grid of test accuracies (percent, two decimals). Missing cells
/// print as an em dash.
inline std::string comparison_report(const std::vector<ComparisonCell>& cells) {
    std::array<std::array<std::optional<double>, 3>, 3> grid{};
    for (const auto& c : cells) {
        std::size_t r = 0, col = 0;
        while (kReportRows[r] != c.variant) ++r;
        while (kAllInputSizes[col] != c.size) ++col;
        if (grid[r][col])
            throw Error(ErrorCode::DuplicateCell, std::string(to_string(c.variant)) + " " +
                                                      std::to_string(side(c.size)));
        grid[r][col] = c.accuracy_percent;
    }
    std::string out = "| Variant | 32x32 | 64x64 | 128x128 |\n|---|---:|---:|---:|\n";
    for (std::size_t r = 0; r < 3; ++r) {
        std::string name(to_string(kReportRows[r]));
        name[0] = static_cast<char>(name[0] - 'a' + 'A');
        out += "| " + name + " |";
        for (std::size_t col = 0; col < 3; ++col) {
            if (grid[r][col]) {
                char buf[32];
                std::snprintf(buf, sizeof buf, " %.2f |", *grid[r][col]);
                out += buf;
            } else {
                out += " — |";
            }
        }
        out += '\n';
    }
    return out;
}

} // namespace btcnn
