#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "trustgan/checkpoint.hpp"
#include "trustgan/data.hpp"
#include "trustgan/models.hpp"
#include "trustgan/objectives.hpp"
#include "trustgan/optim.hpp"

namespace trustgan {

/// Knobs of the adversarial schedule. Setting epochs_target_alone >= epochs
/// yields plain task-loss training.
struct TrainingSchedule {
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    std::size_t epochs_target_alone = 0;
    std::size_t gan_steps_per_task_step = 1;
    std::size_t adversarial_steps_per_task_step = 1;
    /// Per-batch probability that the attacker and adversarial steps are both skipped.
    double skip_attack_probability = 0.0;
    /// Probability that an adversarial step draws its samples from a stored
    /// attacker snapshot instead of the live attacker.
    double replay_probability = 0.10;
    std::uint64_t seed = 0;

    void validate() const;
    bool is_standard() const { return epochs_target_alone >= epochs; }
};

enum class StepKind { gan, adversarial, task };

struct StepEvent {
    StepKind kind;
    std::size_t epoch;
    std::size_t batch;
    /// Adversarial steps only: samples came from a stored snapshot.
    bool replayed = false;
    /// Value of the minimized loss before the update.
    double loss = 0.0;
};

struct TrainOptions {
    AdamConfig target_optimizer;
    AdamConfig generator_optimizer;
    objectives::DiversityConfig diversity;
    /// Off by default so that identical runs produce identical logs.
    bool record_wall_time = false;
    /// Called after every applied update.
    std::function<void(const StepEvent&)> on_step;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double l00_train = 0.0;
    double l00_val = 0.0;
    // Attack-related losses are absent in epochs without attacker steps.
    std::optional<double> l01;
    std::optional<double> l10;
    std::optional<double> l11;
    std::optional<double> l12;
    std::optional<double> l13;
    double err_train = 0.0;
    double err_val = 0.0;
    double seconds = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;

    /// Columns: epoch,l00_train,l00_val,l01,l10,l11,l12,l13,err_train,err_val,seconds
    std::string to_csv() const;
    void write_csv(const std::filesystem::path& path) const;
    static TrainLog from_csv(const std::string& text);
};

/// Attacker states kept for experience replay: per epoch the best attacker
/// of the epoch followed by the attacker at the end of the epoch.
class GanSnapshotStore {
public:
    void add(ModelCheckpoint checkpoint);
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const ModelCheckpoint& at(std::size_t i) const { return entries_.at(i); }
    const std::vector<ModelCheckpoint>& entries() const { return entries_; }
    /// Uniformly random entry; throws StateError when empty.
    const ModelCheckpoint& sample(Rng& rng) const;

    /// Writes snapshot_NNNNNN.ckpt files in order.
    void save(const std::filesystem::path& directory) const;
    static GanSnapshotStore load(const std::filesystem::path& directory);

private:
    std::vector<ModelCheckpoint> entries_;
};

/// Appends the epoch's best attacker and the current attacker state.
void snapshot_epoch(GanSnapshotStore& store, const Generator& generator, ModelCheckpoint best_of_epoch,
                    std::size_t epoch);

struct TrainResult {
    ModelCheckpoint best_target;
    TrainLog log;
    GanSnapshotStore store;
    /// Target state at the end of every epoch.
    std::vector<ModelCheckpoint> target_checkpoints;
};

/// Runs the schedule. Per batch: attacker updates on the combined attacker
/// loss (target frozen), then target updates on the confidence loss over
/// generated samples (attacker frozen), then one target update on the task
/// loss over the real batch. Every epoch visits a fresh std::shuffle of
/// 0..N-1 drawn from the shuffle stream; dropout masks come from the dropout
/// stream; the other random decisions use their own streams.
/// `target` and `generator` are left in their final state.
TrainResult train(TargetClassifier& target, Generator& generator, const data::Dataset& train_set,
                  const data::Dataset& validation_set, const TrainingSchedule& schedule,
                  const TrainOptions& options = {});

/// Checkpoint of the epoch with the lowest validation task loss (earliest on
/// ties), tagged target-best.
ModelCheckpoint select_best(const TrainLog& log, const std::vector<ModelCheckpoint>& checkpoints);

/// `count` samples, each produced by a uniformly drawn snapshot from fresh
/// U([0,1)) seeds, using running batch-norm statistics.
Tensor export_attack_samples(const GanSnapshotStore& store, const Generator& generator, std::size_t count,
                             std::uint64_t seed);

}  // namespace trustgan
