#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "trustgan/data.hpp"
#include "trustgan/models.hpp"

namespace trustgan::eval {

enum class Method { mcp, mcdropout };

std::string_view to_string(Method method);
Method method_from_string(std::string_view text);

struct McDropoutParams {
    std::size_t realizations = 10;
    double rate = 0.3;
    std::uint64_t seed = 0;
};

enum class DatasetTag { id, ood };

struct ScoredSample {
    std::optional<std::size_t> true_label;
    std::size_t predicted_label = 0;
    /// Renormalized maximum class probability, in [0, 1].
    double confidence = 0.0;
    DatasetTag tag = DatasetTag::id;
};

/// Class scores [count, n] for every sample of `dataset`: softmax of the
/// eval-mode logits (mcp) or the Monte-Carlo dropout average (mcdropout).
Tensor predict_scores(const TargetClassifier& model, const data::Dataset& dataset, Method method,
                      const McDropoutParams& params = {});

std::vector<ScoredSample> score_dataset(const TargetClassifier& model, const data::Dataset& dataset, Method method,
                                        const McDropoutParams& params = {}, DatasetTag tag = DatasetTag::id);

// Rates at a confidence threshold; a sample passes when confidence >= C.
// Each throws UndefinedMetric on an empty set; ID metrics need labels.

/// (1/N_ID) #{correct and confidence >= C}
double tpr_at_confidence(std::span<const ScoredSample> id, double threshold);
/// (1/N_ID) #{wrong and confidence >= C}
double fpr_id_at_confidence(std::span<const ScoredSample> id, double threshold);
/// (1/N_OoD) #{confidence >= C}
double fpr_ood_at_confidence(std::span<const ScoredSample> ood, double threshold);

double accuracy(std::span<const ScoredSample> id);
double mean_confidence(std::span<const ScoredSample> samples);

/// Largest threshold among {0, 1, observed ID confidences} whose TPR reaches
/// `target_tpr`. Throws UnattainableOperatingPoint when accuracy < target.
double threshold_at_tpr(std::span<const ScoredSample> id, double target_tpr);
double fpr_id_at_tpr(std::span<const ScoredSample> id, double target_tpr);
/// Threshold fixed from the ID set, rate measured on `ood`.
double fpr_ood_at_tpr(std::span<const ScoredSample> id, std::span<const ScoredSample> ood, double target_tpr);

struct Histogram {
    /// bins + 1 edges, edges[i] = i / bins.
    std::vector<double> edges;
    std::vector<std::size_t> counts;

    std::string to_csv() const;
    friend bool operator==(const Histogram&, const Histogram&) = default;
};

/// Uniform bins over [0, 1]; a confidence of exactly 1 lands in the last bin.
Histogram confidence_histogram(std::span<const ScoredSample> samples, std::size_t bins = 50);

struct EvalSettings {
    std::vector<double> confidence_thresholds{0.90};
    std::vector<double> tpr_targets{0.90};
    std::size_t histogram_bins = 50;
    McDropoutParams mc_dropout;
};

/// Threshold -> value, in settings order. nullopt marks an unattainable
/// operating point.
using RateTable = std::vector<std::pair<double, std::optional<double>>>;

struct IdMetrics {
    double accuracy = 0.0;
    double mean_loss = 0.0;
    RateTable tpr_at_conf;
    RateTable fpr_id_at_conf;
    RateTable fpr_id_at_tpr;
    Histogram histogram;

    friend bool operator==(const IdMetrics&, const IdMetrics&) = default;
};

struct OodMetrics {
    std::string name;
    double mean_confidence = 0.0;
    RateTable fpr_ood_at_conf;
    RateTable fpr_ood_at_tpr;
    Histogram histogram;

    friend bool operator==(const OodMetrics&, const OodMetrics&) = default;
};

struct MethodReport {
    Method method = Method::mcp;
    IdMetrics id;
    std::vector<OodMetrics> ood;

    friend bool operator==(const MethodReport&, const MethodReport&) = default;
};

struct EvalReport {
    std::string id_name;
    std::vector<MethodReport> methods;

    const MethodReport& method(Method m) const;

    nlohmann::ordered_json to_json() const;
    /// Rate tables keep the key order of `j`.
    static EvalReport from_json(const nlohmann::ordered_json& j);
    /// One row per (method, OoD set), columns mirroring the usual confidence
    /// comparison table; ID-only rows when there are no OoD sets.
    std::string to_csv() const;

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

EvalReport build_report(const TargetClassifier& model, const data::Dataset& id_set,
                        const std::vector<data::Dataset>& ood_sets, const std::vector<Method>& methods,
                        const EvalSettings& settings = {});

}  // namespace trustgan::eval
