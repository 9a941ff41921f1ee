#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trustgan/data.hpp"
#include "trustgan/eval.hpp"
#include "trustgan/models.hpp"
#include "trustgan/objectives.hpp"
#include "trustgan/optim.hpp"
#include "trustgan/trainer.hpp"

namespace trustgan::cli {

enum class TrainMode { standard, trustgan };

std::string_view to_string(TrainMode mode);

enum class DatasetKind { blobs, ring, idx, signals };

/// One dataset entry of the config. Only the fields of its kind are read.
struct DatasetSpec {
    DatasetKind kind = DatasetKind::blobs;
    std::string name;

    // blobs
    /// blobs default 3, idx default 10
    std::size_t n_classes = 3;
    std::size_t per_class = 100;
    double spread = 0.2;
    // ring; r_min 0 means "just outside the blob region"
    std::size_t count = 500;
    double r_min = 0.0;
    double r_max = data::kSyntheticExtent;
    std::optional<double> blob_spread;
    std::uint64_t seed = 0;

    // idx / signals
    std::filesystem::path path;
    std::optional<std::filesystem::path> labels;
    std::size_t channels = 2;
    bool first_channel = false;
    /// Keep at most this many samples (0: all).
    std::size_t limit = 0;
    std::vector<std::string> exclude_classes;
};

struct RunConfig {
    TrainMode mode = TrainMode::trustgan;
    std::uint64_t seed = 0;

    /// in_channels / n_classes of 0 are taken from the in-distribution set.
    ClassifierConfig target;
    GeneratorConfig generator;
    TrainingSchedule schedule;
    AdamConfig target_optimizer;
    AdamConfig generator_optimizer;
    objectives::DiversityConfig diversity;

    DatasetSpec id;
    data::SplitSpec split;
    std::vector<DatasetSpec> ood;

    std::vector<eval::Method> methods{eval::Method::mcp};
    eval::EvalSettings eval;

    std::size_t attack_count = 64;
    /// Abstention threshold on the confidence.
    double threshold = 0.9;
    std::filesystem::path output_dir = "out";
};

/// Sets a dotted key ("schedule.epochs", "ood.0.count") to `value`, parsed as
/// JSON when possible and kept as a string otherwise. Expects "key=value".
void apply_override(nlohmann::json& document, const std::string& assignment);

/// Relative paths resolve against `base_dir`. Throws ConfigError on unknown
/// keys, bad values or missing files.
RunConfig parse_run_config(const nlohmann::json& document, const std::filesystem::path& base_dir);

struct ConfigOverrides {
    std::vector<std::string> assignments;
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> output_dir;
};

RunConfig load_run_config(const std::filesystem::path& path, const ConfigOverrides& overrides = {});

nlohmann::ordered_json to_json(const RunConfig& config);

}  // namespace trustgan::cli
