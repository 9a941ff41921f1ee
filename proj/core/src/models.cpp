#include "trustgan/models.hpp"

#include <cmath>

#include "trustgan/errors.hpp"

namespace trustgan {

namespace {

std::size_t spatial_rank(ArchKind kind) {
    switch (kind) {
        case ArchKind::mlp: return 0;
        case ArchKind::conv1d: return 1;
        case ArchKind::conv2d: return 2;
    }
    return 0;
}

AffineLayer make_affine(ArchKind kind, std::size_t in, std::size_t out, std::size_t kernel, Rng& rng) {
    Shape shape{out, in};
    std::size_t fan_in = in;
    for (std::size_t i = 0; i < spatial_rank(kind); ++i) {
        shape.push_back(kernel);
        fan_in *= kernel;
    }
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    AffineLayer layer;
    layer.weight = Tensor::uniform(std::move(shape), -bound, bound, rng, true);
    layer.bias = Tensor::uniform(Shape{out}, -bound, bound, rng, true);
    return layer;
}

BatchNormLayer make_batch_norm(std::size_t channels) {
    BatchNormLayer bn;
    bn.gamma = Tensor(Shape{channels}, 1.0, true);
    bn.beta = Tensor(Shape{channels}, 0.0, true);
    bn.stats.running_mean = Tensor(Shape{channels}, 0.0);
    bn.stats.running_var = Tensor(Shape{channels}, 1.0);
    return bn;
}

Tensor apply(ArchKind kind, const AffineLayer& layer, const Tensor& x, std::size_t dilation = 1) {
    switch (kind) {
        case ArchKind::mlp: return ops::linear(x, layer.weight, layer.bias);
        case ArchKind::conv1d: return ops::conv1d(x, layer.weight, layer.bias, dilation);
        case ArchKind::conv2d: return ops::conv2d(x, layer.weight, layer.bias, dilation);
    }
    throw ContractViolation("unknown architecture kind");
}

AffineLayer clone_layer(const AffineLayer& layer) { return {layer.weight.clone(), layer.bias.clone()}; }

BatchNormLayer clone_layer(const BatchNormLayer& bn) {
    return {bn.gamma.clone(), bn.beta.clone(), {bn.stats.running_mean.clone(), bn.stats.running_var.clone()}};
}

void push_affine(std::vector<NamedTensor>& out, const std::string& prefix, const AffineLayer& layer) {
    out.push_back({prefix + ".weight", layer.weight});
    out.push_back({prefix + ".bias", layer.bias});
}

void push_batch_norm(std::vector<NamedTensor>& out, const std::string& prefix, const BatchNormLayer& bn) {
    out.push_back({prefix + ".gamma", bn.gamma});
    out.push_back({prefix + ".beta", bn.beta});
    out.push_back({prefix + ".running_mean", bn.stats.running_mean});
    out.push_back({prefix + ".running_var", bn.stats.running_var});
}

ModelCheckpoint make_checkpoint(nlohmann::json architecture, const std::vector<NamedTensor>& state, std::size_t epoch,
                                CheckpointTag tag) {
    ModelCheckpoint ck;
    ck.architecture = std::move(architecture);
    ck.epoch = epoch;
    ck.tag = tag;
    for (const auto& [name, value] : state) {
        ck.tensors.push_back({name, value.shape(), std::vector<double>(value.data().begin(), value.data().end())});
    }
    return ck;
}

// The initialization seed does not affect the layout, so it is ignored here.
bool same_layout(nlohmann::json a, nlohmann::json b) {
    if (a.is_object()) a.erase("seed");
    if (b.is_object()) b.erase("seed");
    return a == b;
}

void load_state(const nlohmann::json& architecture, std::vector<NamedTensor> state, const ModelCheckpoint& ck) {
    if (!same_layout(ck.architecture, architecture)) {
        throw ConfigError("checkpoint architecture " + ck.architecture.dump() + " does not match model " +
                          architecture.dump());
    }
    if (ck.tensors.size() != state.size()) throw ConfigError("checkpoint tensor count does not match model");
    for (auto& [name, value] : state) {
        const NamedArray* src = ck.find(name);
        if (!src) throw ConfigError("checkpoint lacks tensor '" + name + "'");
        if (src->shape != value.shape()) {
            throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_to_string(src->shape) +
                              ", model expects " + shape_to_string(value.shape()));
        }
        std::copy(src->values.begin(), src->values.end(), value.mutable_data().begin());
    }
}

std::size_t count_parameters(const std::vector<Tensor>& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.numel();
    return n;
}

void validate_widths(const std::vector<std::size_t>& widths, const char* what) {
    if (widths.empty()) throw ConfigError(std::string(what) + ": at least one block is required");
    for (auto w : widths) {
        if (w == 0) throw ConfigError(std::string(what) + ": block widths must be positive");
    }
}

}  // namespace

std::string_view to_string(ArchKind kind) {
    switch (kind) {
        case ArchKind::mlp: return "mlp";
        case ArchKind::conv1d: return "conv1d";
        case ArchKind::conv2d: return "conv2d";
    }
    return "unknown";
}

ArchKind arch_kind_from_string(std::string_view text) {
    if (text == "mlp") return ArchKind::mlp;
    if (text == "conv1d") return ArchKind::conv1d;
    if (text == "conv2d") return ArchKind::conv2d;
    throw ConfigError("unknown architecture kind '" + std::string(text) + "'");
}

nlohmann::json to_json(const ClassifierConfig& config) {
    nlohmann::json j = {{"model", "target"},
                        {"kind", std::string(to_string(config.kind))},
                        {"in_channels", config.in_channels},
                        {"n_classes", config.n_classes},
                        {"widths", config.widths},
                        {"kernel", config.kernel},
                        {"dropout", config.dropout},
                        {"seed", config.seed}};
    if (!config.dilations.empty()) j["dilations"] = config.dilations;
    return j;
}

ClassifierConfig classifier_config_from_json(const nlohmann::json& j) {
    try {
        ClassifierConfig c;
        c.kind = arch_kind_from_string(j.at("kind").get<std::string>());
        c.in_channels = j.at("in_channels").get<std::size_t>();
        c.n_classes = j.at("n_classes").get<std::size_t>();
        c.widths = j.at("widths").get<std::vector<std::size_t>>();
        c.kernel = j.value("kernel", std::size_t{3});
        c.dilations = j.value("dilations", std::vector<std::size_t>{});
        c.dropout = j.value("dropout", 0.3);
        c.seed = j.value("seed", std::uint64_t{0});
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid classifier descriptor: ") + e.what());
    }
}

nlohmann::json to_json(const GeneratorConfig& config, ArchKind kind, const Shape& sample_shape) {
    return {{"model", "generator"},
            {"kind", std::string(to_string(kind))},
            {"sample_shape", sample_shape},
            {"widths", config.widths},
            {"kernel", config.kernel},
            {"leaky_slope", config.leaky_slope},
            {"bn_momentum", config.bn_momentum},
            {"bn_eps", config.bn_eps},
            {"seed", config.seed}};
}

// ---------------------------------------------------------------------------
// TargetClassifier

TargetClassifier::TargetClassifier(ClassifierConfig config) : config_(std::move(config)) {
    if (config_.n_classes < 2) throw ConfigError("classifier: need at least 2 classes");
    if (config_.in_channels == 0) throw ConfigError("classifier: input channel count must be positive");
    validate_widths(config_.widths, "classifier");
    if (config_.kernel == 0 || config_.kernel % 2 == 0) throw ConfigError("classifier: kernel size must be odd");
    if (!(config_.dropout >= 0.0 && config_.dropout < 1.0)) throw ConfigError("classifier: dropout must lie in [0, 1)");
    if (!config_.dilations.empty()) {
        if (config_.kind == ArchKind::mlp) throw ConfigError("classifier: dilations need a convolutional kind");
        if (config_.dilations.size() != config_.widths.size()) {
            throw ConfigError("classifier: " + std::to_string(config_.dilations.size()) + " dilations for " +
                              std::to_string(config_.widths.size()) + " blocks");
        }
        for (auto d : config_.dilations) {
            if (d == 0) throw ConfigError("classifier: dilations must be positive");
        }
    }

    Rng rng = make_rng(config_.seed, Stream::target_init);
    std::size_t in = config_.in_channels;
    for (std::size_t width : config_.widths) {
        Block block;
        block.first = make_affine(config_.kind, in, width, config_.kernel, rng);
        block.second = make_affine(config_.kind, width, width, config_.kernel, rng);
        if (in != width) block.projection = make_affine(config_.kind, in, width, 1, rng);
        blocks_.push_back(std::move(block));
        in = width;
    }
    head_ = make_affine(ArchKind::mlp, in, config_.n_classes, 1, rng);
}

void TargetClassifier::check_input(const Tensor& batch) const {
    const std::size_t expected_rank = spatial_rank(config_.kind) + 2;
    if (batch.rank() != expected_rank || batch.dim(1) != config_.in_channels) {
        throw InvalidInput("classifier (" + std::string(to_string(config_.kind)) + ", " +
                           std::to_string(config_.in_channels) + " channels) cannot take input of shape " +
                           shape_to_string(batch.shape()));
    }
}

Tensor TargetClassifier::forward(const Tensor& batch, const ForwardOptions& options) const {
    check_input(batch);
    Tensor h = batch;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const Block& block = blocks_[i];
        const std::size_t dilation = config_.dilations.empty() ? 1 : config_.dilations[i];
        Tensor y = ops::relu(apply(config_.kind, block.first, h, dilation));
        y = apply(config_.kind, block.second, y, dilation);
        Tensor skip = block.projection ? apply(config_.kind, *block.projection, h) : h;
        h = ops::relu(ops::add(y, skip));
    }
    if (config_.kind != ArchKind::mlp) h = ops::global_avg_pool(h);

    const double rate = options.dropout_rate.value_or(options.mode == Mode::train ? config_.dropout : 0.0);
    if (rate > 0.0) {
        if (!options.rng) throw ContractViolation("classifier: active dropout needs a random generator");
        h = ops::dropout(h, rate, *options.rng);
    }
    return ops::linear(h, head_.weight, head_.bias);
}

std::vector<Tensor> TargetClassifier::parameters() const {
    std::vector<Tensor> out;
    for (const auto& [name, t] : named_state()) out.push_back(t);
    return out;
}

std::vector<NamedTensor> TargetClassifier::named_state() const {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const std::string prefix = "blocks." + std::to_string(i);
        push_affine(out, prefix + ".first", blocks_[i].first);
        push_affine(out, prefix + ".second", blocks_[i].second);
        if (blocks_[i].projection) push_affine(out, prefix + ".projection", *blocks_[i].projection);
    }
    push_affine(out, "head", head_);
    return out;
}

std::size_t TargetClassifier::parameter_count() const { return count_parameters(parameters()); }

TargetClassifier TargetClassifier::clone() const {
    TargetClassifier copy(config_);
    copy.load(checkpoint(0, CheckpointTag::end_of_epoch));
    return copy;
}

ModelCheckpoint TargetClassifier::checkpoint(std::size_t epoch, CheckpointTag tag) const {
    return make_checkpoint(to_json(config_), named_state(), epoch, tag);
}

void TargetClassifier::load(const ModelCheckpoint& checkpoint) { load_state(to_json(config_), named_state(), checkpoint); }

// ---------------------------------------------------------------------------
// Generator

Generator::Generator(GeneratorConfig config, ArchKind kind, Shape sample_shape)
    : config_(std::move(config)), kind_(kind), sample_shape_(std::move(sample_shape)) {
    validate_widths(config_.widths, "generator");
    if (config_.kernel == 0 || config_.kernel % 2 == 0) throw ConfigError("generator: kernel size must be odd");
    if (sample_shape_.size() != spatial_rank(kind_) + 1) {
        throw ConfigError("generator: sample shape " + shape_to_string(sample_shape_) + " does not fit " +
                          std::string(to_string(kind_)) + " mode");
    }
    for (auto d : sample_shape_) {
        if (d == 0) throw ConfigError("generator: sample dimensions must be positive");
    }

    Rng rng = make_rng(config_.seed, Stream::generator_init);
    const std::size_t channels = sample_shape_[0];
    std::size_t in = channels;
    for (std::size_t width : config_.widths) {
        Block block;
        block.first = make_affine(kind_, in, width, config_.kernel, rng);
        block.bn1 = make_batch_norm(width);
        block.second = make_affine(kind_, width, width, config_.kernel, rng);
        block.bn2 = make_batch_norm(width);
        if (in != width) block.projection = make_affine(kind_, in, width, 1, rng);
        blocks_.push_back(std::move(block));
        in = width;
    }
    output_ = make_affine(kind_, in, channels, config_.kernel, rng);
}

Tensor Generator::forward(const Tensor& seeds, bool training, bool update_stats) {
    if (seeds.rank() != sample_shape_.size() + 1 ||
        !std::equal(sample_shape_.begin(), sample_shape_.end(), seeds.shape().begin() + 1)) {
        throw InvalidInput("generator expects seeds [B, " + shape_to_string(sample_shape_) + "], got " +
                           shape_to_string(seeds.shape()));
    }
    const double m = config_.bn_momentum, eps = config_.bn_eps;
    const double slope = config_.leaky_slope;
    Tensor h = seeds;
    for (auto& block : blocks_) {
        Tensor y = apply(kind_, block.first, h);
        y = ops::leaky_relu(ops::batch_norm(y, block.bn1.gamma, block.bn1.beta, block.bn1.stats, training, update_stats, m, eps),
                            slope);
        y = apply(kind_, block.second, y);
        y = ops::batch_norm(y, block.bn2.gamma, block.bn2.beta, block.bn2.stats, training, update_stats, m, eps);
        Tensor skip = block.projection ? apply(kind_, *block.projection, h) : h;
        h = ops::leaky_relu(ops::add(y, skip), slope);
    }
    return ops::tanh(apply(kind_, output_, h));
}

Tensor Generator::draw_seeds(std::size_t count, Rng& rng) const {
    Shape shape{count};
    shape.insert(shape.end(), sample_shape_.begin(), sample_shape_.end());
    return Tensor::uniform(std::move(shape), 0.0, 1.0, rng);
}

std::vector<Tensor> Generator::parameters() const {
    std::vector<Tensor> out;
    for (const auto& block : blocks_) {
        for (const AffineLayer* l : {&block.first, &block.second}) {
            out.push_back(l->weight);
            out.push_back(l->bias);
        }
        for (const BatchNormLayer* bn : {&block.bn1, &block.bn2}) {
            out.push_back(bn->gamma);
            out.push_back(bn->beta);
        }
        if (block.projection) {
            out.push_back(block.projection->weight);
            out.push_back(block.projection->bias);
        }
    }
    out.push_back(output_.weight);
    out.push_back(output_.bias);
    return out;
}

std::vector<NamedTensor> Generator::named_state() const {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const std::string prefix = "blocks." + std::to_string(i);
        push_affine(out, prefix + ".first", blocks_[i].first);
        push_batch_norm(out, prefix + ".bn1", blocks_[i].bn1);
        push_affine(out, prefix + ".second", blocks_[i].second);
        push_batch_norm(out, prefix + ".bn2", blocks_[i].bn2);
        if (blocks_[i].projection) push_affine(out, prefix + ".projection", *blocks_[i].projection);
    }
    push_affine(out, "output", output_);
    return out;
}

std::size_t Generator::parameter_count() const { return count_parameters(parameters()); }

Generator Generator::clone() const {
    Generator copy(config_, kind_, sample_shape_);
    copy.blocks_.clear();
    for (const auto& b : blocks_) {
        Block nb{clone_layer(b.first), clone_layer(b.bn1), clone_layer(b.second), clone_layer(b.bn2), std::nullopt};
        if (b.projection) nb.projection = clone_layer(*b.projection);
        copy.blocks_.push_back(std::move(nb));
    }
    copy.output_ = clone_layer(output_);
    return copy;
}

ModelCheckpoint Generator::checkpoint(std::size_t epoch, CheckpointTag tag) const {
    return make_checkpoint(to_json(config_, kind_, sample_shape_), named_state(), epoch, tag);
}

void Generator::load(const ModelCheckpoint& checkpoint) {
    load_state(to_json(config_, kind_, sample_shape_), named_state(), checkpoint);
}

// ---------------------------------------------------------------------------

TargetClassifier build_target(const ClassifierConfig& config) { return TargetClassifier(config); }

Generator build_generator(const GeneratorConfig& config, const TargetClassifier& target, const Shape& sample_shape) {
    const ArchKind kind = target.config().kind;
    if (sample_shape.size() != spatial_rank(kind) + 1 || sample_shape[0] != target.config().in_channels) {
        throw ConfigError("generator sample shape " + shape_to_string(sample_shape) + " is not a valid input for the " +
                          std::string(to_string(kind)) + " target with " +
                          std::to_string(target.config().in_channels) + " channels");
    }
    Generator generator(config, kind, sample_shape);
    if (generator.depth() >= target.depth()) {
        throw ConfigError("generator must be shallower than the target: " + std::to_string(generator.depth()) +
                          " blocks vs " + std::to_string(target.depth()));
    }
    if (generator.parameter_count() >= target.parameter_count()) {
        throw ConfigError("generator must have fewer parameters than the target: generator has " +
                          std::to_string(generator.parameter_count()) + ", target has " +
                          std::to_string(target.parameter_count()));
    }
    return generator;
}

Tensor mc_dropout_forward(const TargetClassifier& model, const Tensor& batch, std::size_t realizations, double rate,
                          std::uint64_t seed) {
    if (realizations == 0) throw ConfigError("mc dropout: need at least one realization");
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("mc dropout: rate must lie in [0, 1)");
    NoGradGuard no_grad;
    Rng rng = make_rng(seed, Stream::mc_dropout);
    ForwardOptions options{Mode::eval, &rng, rate};
    // Running mean keeps rate-0 results bit-identical to a single pass.
    std::vector<double> mean;
    Shape shape;
    for (std::size_t r = 0; r < realizations; ++r) {
        Tensor scores = ops::softmax(model.forward(batch, options));
        if (r == 0) {
            mean.assign(scores.data().begin(), scores.data().end());
            shape = scores.shape();
            continue;
        }
        const double k = static_cast<double>(r + 1);
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += (scores.data()[i] - mean[i]) / k;
    }
    return Tensor(std::move(shape), std::move(mean));
}

}  // namespace trustgan
