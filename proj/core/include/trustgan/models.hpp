#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trustgan/checkpoint.hpp"
#include "trustgan/ops.hpp"
#include "trustgan/random.hpp"
#include "trustgan/tensor.hpp"

namespace trustgan {

/// Input layout a network consumes: flat feature vectors [B, D],
/// sequences [B, C, L] or images [B, C, H, W].
enum class ArchKind { mlp, conv1d, conv2d };

std::string_view to_string(ArchKind kind);
ArchKind arch_kind_from_string(std::string_view text);

enum class Mode { train, eval };

struct ClassifierConfig {
    ArchKind kind = ArchKind::conv2d;
    /// Channel count (conv modes) or feature count (mlp mode).
    std::size_t in_channels = 1;
    std::size_t n_classes = 10;
    std::vector<std::size_t> widths{16, 32, 32};
    std::size_t kernel = 3;
    /// Per-block dilation of both convolutions; empty means 1 throughout.
    std::vector<std::size_t> dilations;
    double dropout = 0.3;
    std::uint64_t seed = 0;
};

struct GeneratorConfig {
    std::vector<std::size_t> widths{8, 8};
    std::size_t kernel = 3;
    double leaky_slope = 0.2;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;
    std::uint64_t seed = 0;
};

nlohmann::json to_json(const ClassifierConfig& config);
ClassifierConfig classifier_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GeneratorConfig& config, ArchKind kind, const Shape& sample_shape);

struct NamedTensor {
    std::string name;
    Tensor value;
};

struct ForwardOptions {
    Mode mode = Mode::eval;
    /// Source of dropout masks. Required whenever dropout is active.
    Rng* rng = nullptr;
    /// When set, penultimate dropout runs at this rate in either mode
    /// (Monte-Carlo dropout at inference).
    std::optional<double> dropout_rate;
};

/// Dense or convolutional affine map; weight layout [out, in(, k(, k))].
struct AffineLayer {
    Tensor weight;
    Tensor bias;
};

struct BatchNormLayer {
    Tensor gamma;
    Tensor beta;
    ops::BatchNormStats stats;
};

/// Residual classifier: blocks of (affine, relu, affine) + skip, global
/// average pooling in conv modes, dropout on the pooled features, linear head.
class TargetClassifier {
public:
    explicit TargetClassifier(ClassifierConfig config);

    TargetClassifier(TargetClassifier&&) noexcept = default;
    TargetClassifier& operator=(TargetClassifier&&) noexcept = default;
    TargetClassifier(const TargetClassifier&) = delete;
    TargetClassifier& operator=(const TargetClassifier&) = delete;

    /// Returns logits [B, n_classes].
    Tensor forward(const Tensor& batch, const ForwardOptions& options = {}) const;

    const ClassifierConfig& config() const { return config_; }
    std::size_t depth() const { return blocks_.size(); }
    std::size_t n_classes() const { return config_.n_classes; }

    std::vector<Tensor> parameters() const;
    std::vector<NamedTensor> named_state() const;
    std::size_t parameter_count() const;

    TargetClassifier clone() const;
    ModelCheckpoint checkpoint(std::size_t epoch, CheckpointTag tag) const;
    /// Overwrites parameters in place; architecture must match.
    void load(const ModelCheckpoint& checkpoint);

    void check_input(const Tensor& batch) const;

private:
    struct Block {
        AffineLayer first;
        AffineLayer second;
        std::optional<AffineLayer> projection;
    };

    ClassifierConfig config_;
    std::vector<Block> blocks_;
    AffineLayer head_;
};

/// Confidence attacker: maps a seed tensor shaped like one batch of
/// training samples to samples of the same shape in [-1, 1].
class Generator {
public:
    Generator(GeneratorConfig config, ArchKind kind, Shape sample_shape);

    Generator(Generator&&) noexcept = default;
    Generator& operator=(Generator&&) noexcept = default;
    Generator(const Generator&) = delete;
    Generator& operator=(const Generator&) = delete;

    /// training: batch statistics (folded into running statistics when
    /// update_stats). Otherwise running statistics.
    Tensor forward(const Tensor& seeds, bool training, bool update_stats);

    /// Draws U([0,1)) seeds shaped [count, sample_shape...].
    Tensor draw_seeds(std::size_t count, Rng& rng) const;

    const GeneratorConfig& config() const { return config_; }
    ArchKind kind() const { return kind_; }
    const Shape& sample_shape() const { return sample_shape_; }
    std::size_t depth() const { return blocks_.size(); }

    std::vector<Tensor> parameters() const;
    std::vector<NamedTensor> named_state() const;
    std::size_t parameter_count() const;

    Generator clone() const;
    ModelCheckpoint checkpoint(std::size_t epoch, CheckpointTag tag) const;
    void load(const ModelCheckpoint& checkpoint);

private:
    struct Block {
        AffineLayer first;
        BatchNormLayer bn1;
        AffineLayer second;
        BatchNormLayer bn2;
        std::optional<AffineLayer> projection;
    };

    GeneratorConfig config_;
    ArchKind kind_;
    Shape sample_shape_;
    std::vector<Block> blocks_;
    AffineLayer output_;
};

/// Validates the configuration and initializes weights from config.seed.
TargetClassifier build_target(const ClassifierConfig& config);

/// Builds a generator for `target`'s input layout. Fails with ConfigError
/// unless the generator is strictly shallower and has strictly fewer
/// parameters than the target.
Generator build_generator(const GeneratorConfig& config, const TargetClassifier& target, const Shape& sample_shape);

/// Mean over `realizations` of softmax(forward) with penultimate dropout at
/// `rate`, every other layer in eval mode. Returns scores [B, n].
Tensor mc_dropout_forward(const TargetClassifier& model, const Tensor& batch, std::size_t realizations, double rate,
                          std::uint64_t seed);

}  // namespace trustgan
