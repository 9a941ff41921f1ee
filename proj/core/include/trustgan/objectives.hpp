#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "trustgan/tensor.hpp"

// Training objectives of the target and of the confidence attacker, and the
// confidence score derived from the maximum class probability.
//
// Every loss takes a batch and returns a differentiable scalar equal to the
// arithmetic mean of the per-sample values.
namespace trustgan::objectives {

/// Comparison settings for the two diversity losses.
struct DiversityConfig {
    /// Order of the elementwise |difference|^m distance.
    double m = 2.0;
    /// Comparison-set size; 0 means "use the class count".
    std::size_t comparison_size = 0;
};

/// Task loss: mean of -log softmax(logits)[label].
Tensor task_loss(const Tensor& logits, std::span<const std::size_t> labels);

/// Soft cross-entropy against the uniform target y_i = 1/n, scaled by
/// 1/(n log n). Minimum 1/n, reached at uniform scores.
Tensor confidence_loss(const Tensor& logits);

/// Attack loss: (logsumexp(l) - max_i l_i) / log n, i.e. -max_i log s_i / log n.
/// 0 for one-hot scores, 1 for uniform scores.
Tensor attack_loss(const Tensor& logits);

/// The same attack loss evaluated as -max_i log(softmax_i) / log n. Kept as an
/// independent route for cross-checking the log-sum-exp form.
Tensor attack_loss_log_prob_form(const Tensor& logits);

/// Sample-diversity loss over N samples:
///   sum_{j>k} w_jk / (1 + d_jk) / sum_{j>k} w_jk
/// with w_jk = mean |r_j - r_k|^m over seed elements and
///      d_jk = mean |a_j - a_k|^m over sample elements.
/// seeds and samples are [N, ...] (N >= 2). Differentiable w.r.t. samples.
Tensor sample_diversity_loss(const Tensor& seeds, const Tensor& samples, double m = 2.0);

/// Output-diversity loss: as the sample-diversity loss with d_jk replaced by
/// the unnormalized cross-entropy CE_jk = -sum_o s_jo log s_ko between score
/// rows (log argument floored at 1e-12). scores is [N, n].
Tensor output_diversity_loss(const Tensor& seeds, const Tensor& scores, double m = 2.0);

/// Attacker objective: arithmetic mean of the three attacker losses.
Tensor gan_loss(const Tensor& attack, const Tensor& sample_diversity, const Tensor& output_diversity);

/// Pair weights w_jk for j > k in the order (1,0), (2,0), (2,1), (3,0), ...
std::vector<double> seed_pair_weights(const Tensor& seeds, double m);

struct ConfidenceValue {
    std::size_t class_index = 0;
    /// Maximum class probability, in [1/n, 1].
    double mcp = 0.0;
    /// (mcp - 1/n) / (1 - 1/n), in [0, 1].
    double confidence = 0.0;
};

/// Rescales a maximum class probability so that uniform scores map to 0 and
/// one-hot scores map to 1. Clamped to [0, 1] against rounding.
double renormalized_confidence(double mcp, std::size_t n_classes);

/// Per-row argmax (lowest index on ties), MCP and confidence of scores [B, n].
std::vector<ConfidenceValue> confidence_of(const Tensor& scores);

}  // namespace trustgan::objectives
