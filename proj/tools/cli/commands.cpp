#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include <CLI11.hpp>

#include "trustgan/checkpoint.hpp"
#include "trustgan/errors.hpp"

namespace trustgan::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;

data::Dataset load_one(const DatasetSpec& spec, const DatasetSpec* id_spec, bool out_of_distribution) {
    data::Dataset ds;
    switch (spec.kind) {
        case DatasetKind::blobs:
            ds = data::synth_blobs(spec.n_classes, spec.per_class, spec.spread, spec.seed);
            break;
        case DatasetKind::ring: {
            double spread = 0.0;
            if (spec.blob_spread) {
                spread = *spec.blob_spread;
            } else if (id_spec && id_spec->kind == DatasetKind::blobs) {
                spread = id_spec->spread;
            } else {
                throw ConfigError("ring '" + spec.name + "' needs blob_spread unless the in-distribution set is blobs");
            }
            const double r_min = spec.r_min > 0.0 ? spec.r_min : data::blob_region_radius(spread) + 0.1;
            ds = data::synth_ood_ring(spec.count, r_min, spec.r_max, spec.seed, spread);
            break;
        }
        case DatasetKind::idx:
            ds = data::load_idx(spec.path, spec.labels, spec.n_classes);
            if (spec.first_channel) ds = data::first_channel(ds);
            break;
        case DatasetKind::signals:
            ds = data::load_raw_signals(spec.path, spec.channels);
            break;
    }
    if (!spec.exclude_classes.empty()) ds = data::exclude_classes(ds, spec.exclude_classes, out_of_distribution);
    if (spec.limit > 0 && spec.limit < ds.size()) {
        std::vector<std::size_t> keep(spec.limit);
        for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i;
        ds = ds.subset(keep);
    }
    ds.name = spec.name;
    return ds;
}

TrainingSchedule schedule_for(const RunConfig& config) {
    TrainingSchedule s = config.schedule;
    if (config.mode == TrainMode::standard) s.epochs_target_alone = std::max(s.epochs_target_alone, s.epochs);
    return s;
}

std::string slug(std::string text) {
    for (char& c : text) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')) c = '_';
    }
    return text;
}

void write_json(const ordered_json& j, const fs::path& path) { io::write_text(path, j.dump(2) + "\n"); }

Generator generator_for(const RunConfig& config, const TargetClassifier& target, const Shape& sample_shape) {
    return build_generator(config.generator, target, sample_shape);
}

void export_into(const GanSnapshotStore& store, const Generator& generator, const RunConfig& config,
                 const fs::path& dir, std::ostream& log) {
    const Tensor samples = export_attack_samples(store, generator, config.attack_count, config.seed);
    write_samples_json(samples, dir / "samples.json");
    log << "wrote " << samples.dim(0) << " attack samples to " << (dir / "samples.json").string() << "\n";
    if (samples.rank() == 4) {
        write_pgm_grid(samples, dir / "grid.pgm");
        log << "wrote " << (dir / "grid.pgm").string() << "\n";
    }
}

void train_into(const RunConfig& config, const LoadedData& data, const fs::path& out, std::ostream& log) {
    auto target = build_target(resolve_target(config, data.train));
    auto generator = generator_for(config, target, data.train.sample_shape);
    const TrainingSchedule schedule = schedule_for(config);
    TrainOptions options;
    options.target_optimizer = config.target_optimizer;
    options.generator_optimizer = config.generator_optimizer;
    options.diversity = config.diversity;

    log << "training (" << to_string(config.mode) << ") on '" << data.train.name << "': " << data.train.size()
        << " train / " << data.validation.size() << " validation samples, " << schedule.epochs << " epochs\n";
    TrainResult result = train(target, generator, data.train, data.validation, schedule, options);

    const fs::path ckpt = out / "checkpoints";
    save_checkpoint(result.best_target, ckpt / "target_best.ckpt");
    save_checkpoint(target.checkpoint(schedule.epochs, CheckpointTag::end_of_epoch), ckpt / "target_final.ckpt");
    fs::remove_all(ckpt / "snapshots");
    result.store.save(ckpt / "snapshots");
    result.log.write_csv(out / "logs" / "train_log.csv");
    write_json(to_json(config), out / "config.json");
    log << "best epoch " << result.best_target.epoch << ", " << result.store.size() << " attacker snapshots\n";

    fs::remove_all(out / "attacks");
    if (config.mode == TrainMode::trustgan && !result.store.empty()) {
        export_into(result.store, generator, config, out / "attacks", log);
    }
}

eval::EvalReport eval_into(const RunConfig& config, const LoadedData& data, const fs::path& checkpoint,
                           const fs::path& out, std::ostream& log) {
    auto target = build_target(resolve_target(config, data.train));
    target.load(load_checkpoint(checkpoint));
    const auto report = eval::build_report(target, data.validation, data.ood, config.methods, config.eval);

    write_json(report.to_json(), out / "reports" / "eval.json");
    io::write_text(out / "reports" / "eval.csv", report.to_csv());
    const fs::path hist = out / "histograms";
    fs::remove_all(hist);
    for (const auto& m : report.methods) {
        const std::string method(eval::to_string(m.method));
        io::write_text(hist / (method + "_id_" + slug(report.id_name) + ".csv"), m.id.histogram.to_csv());
        for (const auto& o : m.ood) {
            io::write_text(hist / (method + "_ood_" + slug(o.name) + ".csv"), o.histogram.to_csv());
        }
    }
    log << "wrote " << (out / "reports" / "eval.json").string() << "\n";
    return report;
}

// Nested arrays of numbers: shape and row-major values.
void flatten(const json& j, std::size_t depth, Shape& shape, std::vector<double>& values) {
    if (j.is_number()) {
        if (depth != shape.size() && !shape.empty()) throw InvalidInput("input arrays are ragged");
        if (shape.empty() && depth > 0) throw InvalidInput("input arrays are ragged");
        values.push_back(j.get<double>());
        return;
    }
    if (!j.is_array() || j.empty()) throw InvalidInput("input must hold non-empty arrays of numbers");
    if (depth == shape.size()) {
        if (!values.empty()) throw InvalidInput("input arrays are ragged");
        shape.push_back(j.size());
    } else if (depth > shape.size() || shape[depth] != j.size()) {
        throw InvalidInput("input arrays are ragged");
    }
    for (const auto& item : j) flatten(item, depth + 1, shape, values);
}

std::size_t sample_rank(ArchKind kind) {
    switch (kind) {
        case ArchKind::mlp: return 1;
        case ArchKind::conv1d: return 2;
        case ArchKind::conv2d: return 3;
    }
    return 1;
}

}  // namespace

// ---------------------------------------------------------------------------

LoadedData load_data(const RunConfig& config) {
    data::Dataset id = load_one(config.id, nullptr, false);
    if (!id.labeled()) throw ConfigError("in-distribution set '" + id.name + "' must be labeled");
    LoadedData out;
    std::tie(out.train, out.validation) = data::split(id, config.split);
    for (const auto& spec : config.ood) out.ood.push_back(load_one(spec, &config.id, true));
    return out;
}

ClassifierConfig resolve_target(const RunConfig& config, const data::Dataset& id) {
    ClassifierConfig c = config.target;
    if (c.in_channels == 0) {
        if (id.sample_shape.empty()) throw ConfigError("cannot infer input channels from '" + id.name + "'");
        c.in_channels = id.sample_shape[0];
    }
    if (c.n_classes == 0) c.n_classes = id.n_classes;
    return c;
}

std::vector<InferenceResult> infer(const TargetClassifier& model, const Tensor& samples, double threshold) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must lie in [0, 1]");
    data::Dataset ds;
    ds.name = "input";
    ds.sample_shape = Shape(samples.shape().begin() + 1, samples.shape().end());
    ds.values.assign(samples.data().begin(), samples.data().end());
    std::vector<InferenceResult> out;
    for (const auto& s : eval::score_dataset(model, ds, eval::Method::mcp)) {
        InferenceResult r;
        r.confidence = s.confidence;
        if (s.confidence >= threshold) r.decision = s.predicted_label;
        out.push_back(r);
    }
    return out;
}

std::string format_inference(std::size_t index, const InferenceResult& result) {
    char confidence[32];
    std::snprintf(confidence, sizeof confidence, "%.6f", result.confidence);
    return std::to_string(index) + " " + (result.decision ? std::to_string(*result.decision) : "ABSTAIN") + " " +
           confidence;
}

Tensor read_samples(const fs::path& path, const ClassifierConfig& model) {
    const auto bytes = io::read_file(path);
    if (bytes.size() >= 4 && io::get_u32_be(bytes, 0) == kIdxImageMagic) return data::load_idx(path).all();
    if (bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, "TGSG")) {
        return data::load_raw_signals(path, model.in_channels).all();
    }
    const json j = json::parse(bytes.begin(), bytes.end(), nullptr, false);
    if (j.is_discarded()) throw InvalidInput("'" + path.string() + "' is neither IDX, a signal container nor JSON");
    Shape shape;
    std::vector<double> values;
    if (j.is_object()) {
        try {
            shape = j.at("shape").get<Shape>();
            values = j.at("values").get<std::vector<double>>();
        } catch (const json::exception& e) {
            throw InvalidInput("'" + path.string() + "': " + e.what());
        }
        if (shape_numel(shape) != values.size() || shape.empty()) {
            throw InvalidInput("'" + path.string() + "': shape does not match value count");
        }
    } else {
        flatten(j, 0, shape, values);
    }
    const std::size_t rank = sample_rank(model.kind);
    if (shape.size() == rank) shape.insert(shape.begin(), 1);
    if (shape.size() != rank + 1) {
        throw InvalidInput("'" + path.string() + "': expected samples of rank " + std::to_string(rank) + ", got shape " +
                           shape_to_string(shape));
    }
    return Tensor(std::move(shape), std::move(values));
}

void write_samples_json(const Tensor& samples, const fs::path& path) {
    ordered_json j;
    j["shape"] = samples.shape();
    j["values"] = std::vector<double>(samples.data().begin(), samples.data().end());
    io::write_text(path, j.dump() + "\n");
}

void write_pgm_grid(const Tensor& samples, const fs::path& path) {
    if (samples.rank() != 4) throw ContractViolation("write_pgm_grid: expected [count, C, H, W]");
    const std::size_t count = samples.dim(0), channels = samples.dim(1), h = samples.dim(2), w = samples.dim(3);
    const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(count))));
    const std::size_t rows = (count + cols - 1) / cols;
    const std::size_t width = cols * (w + 1) + 1, height = rows * (h + 1) + 1;
    std::vector<std::uint8_t> pixels(width * height, 0);
    for (std::size_t n = 0; n < count; ++n) {
        const std::size_t x0 = 1 + (n % cols) * (w + 1), y0 = 1 + (n / cols) * (h + 1);
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const double v = std::clamp(samples.data()[((n * channels) * h + y) * w + x], -1.0, 1.0);
                pixels[(y0 + y) * width + x0 + x] = static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
            }
        }
    }
    const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.insert(bytes.end(), pixels.begin(), pixels.end());
    io::write_file(path, bytes);
}

// ---------------------------------------------------------------------------

void cmd_train(const RunConfig& config, std::ostream& log) {
    train_into(config, load_data(config), config.output_dir, log);
}

void cmd_eval(const RunConfig& config, const std::optional<fs::path>& checkpoint, std::ostream& log) {
    const LoadedData data = load_data(config);
    eval_into(config, data, checkpoint.value_or(config.output_dir / "checkpoints" / "target_best.ckpt"),
              config.output_dir, log);
}

void cmd_infer(const RunConfig& config, const std::optional<fs::path>& checkpoint, const fs::path& input,
               std::ostream& out) {
    const ModelCheckpoint ck =
        load_checkpoint(checkpoint.value_or(config.output_dir / "checkpoints" / "target_best.ckpt"));
    ClassifierConfig c = config.target;
    const ClassifierConfig stored = classifier_config_from_json(ck.architecture);
    if (c.in_channels == 0) c.in_channels = stored.in_channels;
    if (c.n_classes == 0) c.n_classes = stored.n_classes;
    auto model = build_target(c);
    model.load(ck);
    const auto results = infer(model, read_samples(input, c), config.threshold);
    for (std::size_t i = 0; i < results.size(); ++i) out << format_inference(i, results[i]) << "\n";
}

void cmd_compare(const RunConfig& config, std::ostream& log) {
    const LoadedData data = load_data(config);
    std::vector<eval::EvalReport> reports;
    for (TrainMode mode : {TrainMode::standard, TrainMode::trustgan}) {
        RunConfig c = config;
        c.mode = mode;
        const fs::path out = config.output_dir / std::string(to_string(mode));
        c.output_dir = out;
        train_into(c, data, out, log);
        reports.push_back(eval_into(c, data, out / "checkpoints" / "target_best.ckpt", out, log));
    }

    auto pair = [](double standard, double trustgan) { return ordered_json{{"standard", standard}, {"trustgan", trustgan}}; };
    auto optional_pair = [](const std::optional<double>& standard, const std::optional<double>& trustgan) {
        ordered_json j;
        j["standard"] = standard ? ordered_json(*standard) : ordered_json(nullptr);
        j["trustgan"] = trustgan ? ordered_json(*trustgan) : ordered_json(nullptr);
        return j;
    };
    ordered_json j;
    j["id_name"] = reports[0].id_name;
    j["methods"] = ordered_json::array();
    for (std::size_t mi = 0; mi < reports[0].methods.size(); ++mi) {
        const auto& s = reports[0].methods[mi];
        const auto& t = reports[1].methods[mi];
        ordered_json jm;
        jm["method"] = std::string(eval::to_string(s.method));
        jm["accuracy"] = pair(s.id.accuracy, t.id.accuracy);
        jm["ood"] = ordered_json::array();
        for (std::size_t oi = 0; oi < s.ood.size(); ++oi) {
            const auto& so = s.ood[oi];
            const auto& to = t.ood[oi];
            ordered_json jo;
            jo["name"] = so.name;
            jo["mean_confidence"] = pair(so.mean_confidence, to.mean_confidence);
            jo["ratio"] = so.mean_confidence > 0.0 ? ordered_json(to.mean_confidence / so.mean_confidence)
                                                   : ordered_json(nullptr);
            jo["fpr_ood_at_conf"] = ordered_json::object();
            for (std::size_t k = 0; k < so.fpr_ood_at_conf.size(); ++k) {
                jo["fpr_ood_at_conf"][io::format_double(so.fpr_ood_at_conf[k].first)] =
                    optional_pair(so.fpr_ood_at_conf[k].second, to.fpr_ood_at_conf[k].second);
            }
            jm["ood"].push_back(std::move(jo));
        }
        j["methods"].push_back(std::move(jm));
    }
    write_json(j, config.output_dir / "reports" / "compare.json");
    log << "wrote " << (config.output_dir / "reports" / "compare.json").string() << "\n";
}

void cmd_export_attacks(const RunConfig& config, const std::optional<fs::path>& snapshots, std::ostream& log) {
    const GanSnapshotStore store =
        GanSnapshotStore::load(snapshots.value_or(config.output_dir / "checkpoints" / "snapshots"));
    if (store.empty()) throw StateError("no attacker snapshots to export (was the run trained in trustgan mode?)");
    const auto& arch = store.at(0).architecture;
    Shape sample_shape;
    ArchKind kind{};
    try {
        sample_shape = arch.at("sample_shape").get<Shape>();
        kind = arch_kind_from_string(arch.at("kind").get<std::string>());
    } catch (const json::exception& e) {
        throw FormatError(std::string("snapshot architecture is incomplete: ") + e.what(), 0);
    }
    GeneratorConfig g = config.generator;
    Generator generator(g, kind, sample_shape);
    export_into(store, generator, config, config.output_dir / "attacks", log);
}

// ---------------------------------------------------------------------------

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Train classifiers against a confidence attacker and evaluate abstention."};
    app.name("trustgan");
    app.require_subcommand(1);

    std::string config_path, checkpoint, input, out_dir;
    std::uint64_t seed = 0;
    std::vector<std::string> sets;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "Run config (JSON)")->required();
        sub->add_option("--out", out_dir, "Output directory, overrides output_dir");
        sub->add_option("--seed", seed, "Seed, overrides the config seed");
        sub->add_option("--set", sets, "Override a config key: key=value (repeatable)")->allow_extra_args(false);
    };
    auto* train_cmd = app.add_subcommand("train", "Train the target (standard or trustgan mode)");
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the ID and OoD sets");
    auto* infer_cmd = app.add_subcommand("infer", "Classify samples, abstaining below the threshold");
    auto* compare_cmd = app.add_subcommand("compare", "Train and evaluate both modes side by side");
    auto* export_cmd = app.add_subcommand("export-attacks", "Sample stored attacker snapshots");
    for (auto* sub : {train_cmd, eval_cmd, infer_cmd, compare_cmd, export_cmd}) common(sub);
    eval_cmd->add_option("--checkpoint", checkpoint, "Target checkpoint (default <out>/checkpoints/target_best.ckpt)");
    infer_cmd->add_option("--checkpoint", checkpoint, "Target checkpoint (default <out>/checkpoints/target_best.ckpt)");
    infer_cmd->add_option("--input", input, "IDX, signal container or JSON samples")->required();
    export_cmd->add_option("--checkpoint", checkpoint, "Snapshot directory (default <out>/checkpoints/snapshots)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    auto* sub = app.get_subcommands().front();
    auto given = [&](const char* flag) { return sub->count(flag) > 0; };
    try {
        ConfigOverrides overrides;
        overrides.assignments = sets;
        if (given("--seed")) overrides.seed = seed;
        if (given("--out")) overrides.output_dir = out_dir;
        const RunConfig config = load_run_config(config_path, overrides);
        std::optional<fs::path> ckpt;
        if (sub != train_cmd && sub != compare_cmd && given("--checkpoint")) ckpt = checkpoint;

        if (sub == train_cmd) {
            cmd_train(config, err);
        } else if (sub == eval_cmd) {
            cmd_eval(config, ckpt, err);
        } else if (sub == infer_cmd) {
            cmd_infer(config, ckpt, input, out);
        } else if (sub == compare_cmd) {
            cmd_compare(config, err);
        } else {
            cmd_export_attacks(config, ckpt, err);
        }
    } catch (const ConfigError& e) {
        err << "trustgan: configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "trustgan: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace trustgan::cli
