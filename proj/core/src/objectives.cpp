#include "trustgan/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "trustgan/errors.hpp"
#include "trustgan/ops.hpp"

namespace trustgan::objectives {

namespace {

constexpr double kLogFloor = 1e-12;

std::size_t class_count(const Tensor& logits, const char* what) {
    if (logits.rank() != 2) {
        throw ContractViolation(std::string(what) + ": logits must be [batch, n], got " + shape_to_string(logits.shape()));
    }
    if (logits.dim(1) < 2) throw InvalidInput(std::string(what) + ": need at least 2 classes");
    return logits.dim(1);
}

struct PairIndex {
    std::vector<std::size_t> j;
    std::vector<std::size_t> k;
};

PairIndex lower_pairs(std::size_t n) {
    PairIndex p;
    for (std::size_t j = 1; j < n; ++j) {
        for (std::size_t k = 0; k < j; ++k) {
            p.j.push_back(j);
            p.k.push_back(k);
        }
    }
    return p;
}

void check_diversity_inputs(const Tensor& seeds, const Tensor& other, const char* what) {
    if (seeds.rank() < 1 || other.rank() < 1) throw InvalidInput(std::string(what) + ": inputs need a leading sample axis");
    if (seeds.dim(0) < 2) throw ConfigError(std::string(what) + ": comparison set needs at least 2 samples");
    if (seeds.dim(0) != other.dim(0)) {
        throw InvalidInput(std::string(what) + ": " + std::to_string(seeds.dim(0)) + " seeds but " +
                           std::to_string(other.dim(0)) + " samples");
    }
}

// sum_p w_p / (1 + distance_p) / sum_p w_p
Tensor weighted_pair_loss(const std::vector<double>& weights, const Tensor& distance, const char* what) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw InvalidInput(std::string(what) + ": all seeds are identical, pair weights sum to zero");
    Tensor w(Shape{weights.size()}, weights);
    Tensor terms = ops::div(w, ops::add_scalar(distance, 1.0));
    return ops::scale(ops::sum(terms), 1.0 / total);
}

}  // namespace

Tensor task_loss(const Tensor& logits, std::span<const std::size_t> labels) {
    const std::size_t n = class_count(logits, "task loss");
    if (labels.size() != logits.dim(0)) throw InvalidInput("task loss: label count does not match batch size");
    for (auto y : labels) {
        if (y >= n) throw InvalidInput("task loss: label " + std::to_string(y) + " out of range [0, " + std::to_string(n) + ")");
    }
    return ops::neg(ops::mean(ops::pick(ops::log_softmax(logits), labels)));
}

Tensor confidence_loss(const Tensor& logits) {
    const auto n = static_cast<double>(class_count(logits, "confidence loss"));
    // Per row: (1/log n)(1/n) sum_i -(1/n) log s_i. Batch mean of row sums is
    // n times the mean over every element.
    return ops::scale(ops::mean(ops::log_softmax(logits)), -1.0 / (n * std::log(n)));
}

Tensor attack_loss(const Tensor& logits) {
    const auto n = static_cast<double>(class_count(logits, "attack loss"));
    Tensor per_row = ops::sub(ops::logsumexp(logits), ops::max_rows(logits));
    return ops::scale(ops::mean(per_row), 1.0 / std::log(n));
}

Tensor attack_loss_log_prob_form(const Tensor& logits) {
    const auto n = static_cast<double>(class_count(logits, "attack loss"));
    return ops::scale(ops::mean(ops::max_rows(ops::log_softmax(logits))), -1.0 / std::log(n));
}

std::vector<double> seed_pair_weights(const Tensor& seeds, double m) {
    if (!(m >= 1.0)) throw ConfigError("diversity norm order must be >= 1");
    const std::size_t count = seeds.dim(0);
    const std::size_t stride = seeds.numel() / count;
    std::vector<double> w;
    for (std::size_t j = 1; j < count; ++j) {
        for (std::size_t k = 0; k < j; ++k) {
            double acc = 0.0;
            for (std::size_t e = 0; e < stride; ++e) {
                acc += std::pow(std::abs(seeds.data()[j * stride + e] - seeds.data()[k * stride + e]), m);
            }
            w.push_back(acc / static_cast<double>(stride));
        }
    }
    return w;
}

Tensor sample_diversity_loss(const Tensor& seeds, const Tensor& samples, double m) {
    check_diversity_inputs(seeds, samples, "sample diversity");
    const auto weights = seed_pair_weights(seeds, m);
    const PairIndex pairs = lower_pairs(samples.dim(0));
    Tensor diff = ops::sub(ops::gather_rows(samples, pairs.j), ops::gather_rows(samples, pairs.k));
    Tensor distance = ops::mean_rows(ops::pow_abs(diff, m));
    return weighted_pair_loss(weights, distance, "sample diversity");
}

Tensor output_diversity_loss(const Tensor& seeds, const Tensor& scores, double m) {
    check_diversity_inputs(seeds, scores, "output diversity");
    if (scores.rank() != 2) throw InvalidInput("output diversity: scores must be [N, n]");
    const auto weights = seed_pair_weights(seeds, m);
    const PairIndex pairs = lower_pairs(scores.dim(0));
    Tensor sj = ops::gather_rows(scores, pairs.j);
    Tensor log_sk = ops::log_clamped(ops::gather_rows(scores, pairs.k), kLogFloor);
    Tensor cross_entropy = ops::neg(ops::sum_rows(ops::mul(sj, log_sk)));
    return weighted_pair_loss(weights, cross_entropy, "output diversity");
}

Tensor gan_loss(const Tensor& attack, const Tensor& sample_diversity, const Tensor& output_diversity) {
    for (const Tensor* t : {&attack, &sample_diversity, &output_diversity}) {
        if (t->numel() != 1 || t->rank() > 1) throw ContractViolation("gan loss: inputs must be scalars");
    }
    auto as_scalar = [](const Tensor& t) { return t.rank() == 0 ? t : ops::reshape(t, Shape{}); };
    Tensor total = ops::add(ops::add(as_scalar(attack), as_scalar(sample_diversity)), as_scalar(output_diversity));
    return ops::scale(total, 1.0 / 3.0);
}

double renormalized_confidence(double mcp, std::size_t n_classes) {
    const double floor = 1.0 / static_cast<double>(n_classes);
    const double c = (mcp - floor) / (1.0 - floor);
    return std::clamp(c, 0.0, 1.0);
}

std::vector<ConfidenceValue> confidence_of(const Tensor& scores) {
    if (scores.rank() != 2 || scores.dim(1) < 2) {
        throw InvalidInput("confidence: scores must be [batch, n] with n >= 2, got " + shape_to_string(scores.shape()));
    }
    const std::size_t rows = scores.dim(0), n = scores.dim(1);
    std::vector<ConfidenceValue> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = scores.data().data() + r * n;
        std::size_t best = 0;
        for (std::size_t i = 1; i < n; ++i) {
            if (row[i] > row[best]) best = i;
        }
        out[r].class_index = best;
        out[r].mcp = row[best];
        out[r].confidence = renormalized_confidence(row[best], n);
    }
    return out;
}

}  // namespace trustgan::objectives
