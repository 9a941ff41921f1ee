#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace trustgan::cli {

/// Training, validation and out-of-distribution sets described by a config.
struct LoadedData {
    data::Dataset train;
    data::Dataset validation;
    std::vector<data::Dataset> ood;
};

LoadedData load_data(const RunConfig& config);

/// The configured classifier with unset channel/class counts taken from `id`.
ClassifierConfig resolve_target(const RunConfig& config, const data::Dataset& id);

struct InferenceResult {
    /// Empty when the system abstains.
    std::optional<std::size_t> decision;
    double confidence = 0.0;
};

/// Abstains exactly when the confidence is below `threshold`.
std::vector<InferenceResult> infer(const TargetClassifier& model, const Tensor& samples, double threshold);

/// "index decision confidence" or "index ABSTAIN confidence".
std::string format_inference(std::size_t index, const InferenceResult& result);

/// Reads a batch for `model`: an IDX image file, a signal container, or JSON
/// (nested arrays of one sample or a batch, or {"shape": [...], "values": [...]}).
/// JSON values are used as given; files go through their loaders.
Tensor read_samples(const std::filesystem::path& path, const ClassifierConfig& model);

/// Writes `samples` as {"shape": [...], "values": [...]}.
void write_samples_json(const Tensor& samples, const std::filesystem::path& path);

/// Tiles the first channel of [count, C, H, W] samples into a binary PGM,
/// mapping [-1, 1] to [0, 255].
void write_pgm_grid(const Tensor& samples, const std::filesystem::path& path);

// Each command writes under config.output_dir and returns normally on
// success; failures are thrown.

void cmd_train(const RunConfig& config, std::ostream& log);
void cmd_eval(const RunConfig& config, const std::optional<std::filesystem::path>& checkpoint, std::ostream& log);
void cmd_infer(const RunConfig& config, const std::optional<std::filesystem::path>& checkpoint,
               const std::filesystem::path& input, std::ostream& out);
void cmd_compare(const RunConfig& config, std::ostream& log);
/// `snapshots` defaults to <out>/checkpoints/snapshots.
void cmd_export_attacks(const RunConfig& config, const std::optional<std::filesystem::path>& snapshots,
                        std::ostream& log);

/// Parses arguments and dispatches. Returns the process exit status:
/// 0 success, 1 runtime failure, 2 usage or configuration error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace trustgan::cli
