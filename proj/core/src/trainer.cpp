#include "trustgan/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "trustgan/errors.hpp"
#include "trustgan/ops.hpp"

namespace trustgan {

namespace {

struct Mean {
    double total = 0.0;
    std::size_t count = 0;
    void add(double v) {
        total += v;
        ++count;
    }
    std::optional<double> value() const {
        if (count == 0) return std::nullopt;
        return total / static_cast<double>(count);
    }
};

std::size_t count_errors(const Tensor& logits, std::span<const std::size_t> labels) {
    const std::size_t n = logits.dim(1);
    std::size_t errors = 0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
        const double* row = logits.data().data() + r * n;
        const auto arg = static_cast<std::size_t>(std::max_element(row, row + n) - row);
        if (arg != labels[r]) ++errors;
    }
    return errors;
}

void require_finite(const Tensor& t, const char* what, std::size_t epoch, std::size_t batch) {
    for (double v : t.data()) {
        if (!std::isfinite(v)) throw TrainingDiverged(std::string(what) + " is not finite", epoch, batch);
    }
}

struct Validation {
    double loss;
    double error_rate;
};

Validation validate_target(const TargetClassifier& target, const data::Dataset& set, std::size_t chunk) {
    NoGradGuard no_grad;
    double loss = 0.0;
    std::size_t errors = 0;
    for (std::size_t start = 0; start < set.size(); start += chunk) {
        const std::size_t end = std::min(set.size(), start + chunk);
        std::vector<std::size_t> idx(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const auto labels = set.batch_labels(idx);
        Tensor logits = target.forward(set.batch(idx), {.mode = Mode::eval});
        loss += objectives::task_loss(logits, labels).item() * static_cast<double>(idx.size());
        errors += count_errors(logits, labels);
    }
    const auto n = static_cast<double>(set.size());
    return {loss / n, static_cast<double>(errors) / n};
}

void check_dataset(const data::Dataset& set, const TargetClassifier& target, const char* role) {
    if (set.empty()) throw ConfigError(std::string(role) + " dataset is empty");
    if (!set.labeled()) throw ConfigError(std::string(role) + " dataset has no labels");
    set.validate();
    if (set.n_classes != target.n_classes()) {
        throw ConfigError(std::string(role) + " dataset has " + std::to_string(set.n_classes) +
                          " classes, target has " + std::to_string(target.n_classes()));
    }
    std::vector<std::size_t> first{0};
    target.check_input(set.batch(first));
}

std::string optional_cell(const std::optional<double>& v) { return v ? io::format_double(*v) : std::string(); }

}  // namespace

void TrainingSchedule::validate() const {
    if (epochs == 0) throw ConfigError("schedule: epochs must be positive");
    if (batch_size == 0) throw ConfigError("schedule: batch size must be positive");
    if (!(skip_attack_probability >= 0.0 && skip_attack_probability <= 1.0)) {
        throw ConfigError("schedule: skip probability must lie in [0, 1]");
    }
    if (!(replay_probability >= 0.0 && replay_probability <= 1.0)) {
        throw ConfigError("schedule: replay probability must lie in [0, 1]");
    }
    if (!is_standard() && batch_size < 2) {
        throw ConfigError("schedule: attacker steps need a batch size of at least 2");
    }
}

// ---------------------------------------------------------------------------

std::string TrainLog::to_csv() const {
    std::ostringstream out;
    out << "epoch,l00_train,l00_val,l01,l10,l11,l12,l13,err_train,err_val,seconds\n";
    for (const auto& r : epochs) {
        out << r.epoch << ',' << io::format_double(r.l00_train) << ',' << io::format_double(r.l00_val) << ','
            << optional_cell(r.l01) << ',' << optional_cell(r.l10) << ',' << optional_cell(r.l11) << ','
            << optional_cell(r.l12) << ',' << optional_cell(r.l13) << ',' << io::format_double(r.err_train) << ','
            << io::format_double(r.err_val) << ',' << io::format_double(r.seconds) << '\n';
    }
    return out.str();
}

void TrainLog::write_csv(const std::filesystem::path& path) const { io::write_text(path, to_csv()); }

TrainLog TrainLog::from_csv(const std::string& text) {
    TrainLog log;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line.rfind("epoch,", 0) != 0) throw InvalidInput("train log: missing header");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        if (cells.size() != 11) throw InvalidInput("train log: expected 11 columns in '" + line + "'");
        auto num = [](const std::string& s) { return std::stod(s); };
        auto opt = [&](const std::string& s) -> std::optional<double> {
            if (s.empty()) return std::nullopt;
            return num(s);
        };
        EpochRecord r;
        r.epoch = static_cast<std::size_t>(std::stoull(cells[0]));
        r.l00_train = num(cells[1]);
        r.l00_val = num(cells[2]);
        r.l01 = opt(cells[3]);
        r.l10 = opt(cells[4]);
        r.l11 = opt(cells[5]);
        r.l12 = opt(cells[6]);
        r.l13 = opt(cells[7]);
        r.err_train = num(cells[8]);
        r.err_val = num(cells[9]);
        r.seconds = num(cells[10]);
        log.epochs.push_back(r);
    }
    return log;
}

// ---------------------------------------------------------------------------

void GanSnapshotStore::add(ModelCheckpoint checkpoint) { entries_.push_back(std::move(checkpoint)); }

const ModelCheckpoint& GanSnapshotStore::sample(Rng& rng) const {
    if (entries_.empty()) throw StateError("snapshot store is empty");
    const auto i = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(entries_.size()));
    return entries_[std::min(i, entries_.size() - 1)];
}

void GanSnapshotStore::save(const std::filesystem::path& directory) const {
    std::filesystem::create_directories(directory);
    for (const auto& entry : std::filesystem::directory_iterator(directory)) {
        const auto name = entry.path().filename().string();
        if (name.rfind("snapshot_", 0) == 0 && entry.path().extension() == ".ckpt") std::filesystem::remove(entry.path());
    }
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        std::string name = std::to_string(i);
        name = "snapshot_" + std::string(6 - std::min<std::size_t>(6, name.size()), '0') + name + ".ckpt";
        save_checkpoint(entries_[i], directory / name);
    }
}

GanSnapshotStore GanSnapshotStore::load(const std::filesystem::path& directory) {
    if (!std::filesystem::is_directory(directory)) throw StateError("no snapshot directory at '" + directory.string() + "'");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(directory)) {
        const auto name = entry.path().filename().string();
        if (name.rfind("snapshot_", 0) == 0 && entry.path().extension() == ".ckpt") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    GanSnapshotStore store;
    for (const auto& f : files) store.add(load_checkpoint(f));
    return store;
}

void snapshot_epoch(GanSnapshotStore& store, const Generator& generator, ModelCheckpoint best_of_epoch,
                    std::size_t epoch) {
    best_of_epoch.epoch = epoch;
    best_of_epoch.tag = CheckpointTag::best_of_epoch;
    store.add(std::move(best_of_epoch));
    store.add(generator.checkpoint(epoch, CheckpointTag::end_of_epoch));
}

// ---------------------------------------------------------------------------

TrainResult train(TargetClassifier& target, Generator& generator, const data::Dataset& train_set,
                  const data::Dataset& validation_set, const TrainingSchedule& schedule, const TrainOptions& options) {
    schedule.validate();
    check_dataset(train_set, target, "training");
    check_dataset(validation_set, target, "validation");
    if (!schedule.is_standard() && generator.sample_shape() != train_set.sample_shape) {
        throw ConfigError("generator sample shape " + shape_to_string(generator.sample_shape()) +
                          " does not match training samples " + shape_to_string(train_set.sample_shape));
    }

    Rng shuffle_rng = make_rng(schedule.seed, Stream::shuffle);
    Rng dropout_rng = make_rng(schedule.seed, Stream::dropout);
    Rng skip_rng = make_rng(schedule.seed, Stream::skip);
    Rng seed_rng = make_rng(schedule.seed, Stream::attack_seeds);
    Rng replay_rng = make_rng(schedule.seed, Stream::replay);

    Adam target_opt(target.parameters(), options.target_optimizer);
    Adam generator_opt(generator.parameters(), options.generator_optimizer);
    Generator replay_generator = generator.clone();

    const std::size_t n_classes = target.n_classes();
    const std::size_t attack_batch = schedule.batch_size;
    const std::size_t requested = options.diversity.comparison_size ? options.diversity.comparison_size : n_classes;
    const std::size_t comparison = std::min(requested, attack_batch);
    if (!schedule.is_standard() && comparison < 2) throw ConfigError("diversity comparison set needs at least 2 samples");
    std::vector<std::size_t> comparison_idx(comparison);
    std::iota(comparison_idx.begin(), comparison_idx.end(), 0);
    const double m = options.diversity.m;

    auto notify = [&](StepKind kind, std::size_t epoch, std::size_t batch, bool replayed, double loss) {
        if (options.on_step) options.on_step({kind, epoch, batch, replayed, loss});
    };

    TrainResult result;
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t e = 0; e < schedule.epochs; ++e) {
        const std::size_t epoch = e + 1;
        const auto started = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        const bool gan_epoch = e >= schedule.epochs_target_alone;
        Mean l00, l01, l10, l11, l12, l13;
        std::size_t train_errors = 0;
        double best_l13 = std::numeric_limits<double>::infinity();
        std::optional<ModelCheckpoint> best_generator;

        std::size_t batch = 0;
        for (std::size_t start = 0; start < order.size(); start += schedule.batch_size, ++batch) {
            const std::size_t end = std::min(order.size(), start + schedule.batch_size);
            std::span<const std::size_t> idx(order.data() + start, end - start);

            bool attack = gan_epoch;
            if (gan_epoch && schedule.skip_attack_probability > 0.0) {
                attack = !(uniform01(skip_rng) < schedule.skip_attack_probability);
            }

            if (attack) {
                // Attacker steps: only generator parameters are updated.
                for (std::size_t s = 0; s < schedule.gan_steps_per_task_step; ++s) {
                    generator_opt.zero_grad();
                    // State that will produce this step's loss, running statistics included.
                    ModelCheckpoint before = generator.checkpoint(epoch, CheckpointTag::best_of_epoch);
                    Tensor seeds = generator.draw_seeds(attack_batch, seed_rng);
                    Tensor samples = generator.forward(seeds, true, true);
                    Tensor logits = target.forward(samples, {.mode = Mode::eval});
                    require_finite(logits, "target logits", epoch, batch);
                    Tensor attack_l = objectives::attack_loss(logits);
                    Tensor sub_seeds = ops::gather_rows(seeds, comparison_idx);
                    Tensor sample_div = objectives::sample_diversity_loss(
                        sub_seeds, ops::gather_rows(samples, comparison_idx), m);
                    Tensor output_div = objectives::output_diversity_loss(
                        sub_seeds, ops::softmax(ops::gather_rows(logits, comparison_idx)), m);
                    Tensor total = objectives::gan_loss(attack_l, sample_div, output_div);
                    require_finite(total, "attacker loss", epoch, batch);
                    l10.add(attack_l.item());
                    l11.add(sample_div.item());
                    l12.add(output_div.item());
                    l13.add(total.item());
                    if (total.item() < best_l13) {
                        best_l13 = total.item();
                        best_generator = std::move(before);
                    }
                    total.backward();
                    generator_opt.step();
                    notify(StepKind::gan, epoch, batch, false, total.item());
                }
                // Adversarial steps: only target parameters are updated.
                for (std::size_t s = 0; s < schedule.adversarial_steps_per_task_step; ++s) {
                    bool replayed = false;
                    if (!result.store.empty() && schedule.replay_probability > 0.0) {
                        replayed = uniform01(replay_rng) < schedule.replay_probability;
                    }
                    Tensor seeds = generator.draw_seeds(attack_batch, seed_rng);
                    Tensor samples;
                    {
                        NoGradGuard no_grad;
                        if (replayed) {
                            replay_generator.load(result.store.sample(replay_rng));
                            samples = replay_generator.forward(seeds, true, false);
                        } else {
                            samples = generator.forward(seeds, true, false);
                        }
                    }
                    target_opt.zero_grad();
                    Tensor logits = target.forward(samples, {.mode = Mode::train, .rng = &dropout_rng});
                    require_finite(logits, "target logits", epoch, batch);
                    Tensor conf_l = objectives::confidence_loss(logits);
                    require_finite(conf_l, "confidence loss", epoch, batch);
                    l01.add(conf_l.item());
                    conf_l.backward();
                    target_opt.step();
                    notify(StepKind::adversarial, epoch, batch, replayed, conf_l.item());
                }
            }

            target_opt.zero_grad();
            const auto labels = train_set.batch_labels(idx);
            Tensor logits = target.forward(train_set.batch(idx), {.mode = Mode::train, .rng = &dropout_rng});
            require_finite(logits, "target logits", epoch, batch);
            Tensor task_l = objectives::task_loss(logits, labels);
            require_finite(task_l, "task loss", epoch, batch);
            l00.add(task_l.item() * static_cast<double>(idx.size()));
            train_errors += count_errors(logits, labels);
            task_l.backward();
            target_opt.step();
            notify(StepKind::task, epoch, batch, false, task_l.item());
        }

        if (best_generator) snapshot_epoch(result.store, generator, std::move(*best_generator), epoch);
        result.target_checkpoints.push_back(target.checkpoint(epoch, CheckpointTag::end_of_epoch));

        const Validation val = validate_target(target, validation_set, std::max<std::size_t>(schedule.batch_size, 64));
        EpochRecord record;
        record.epoch = epoch;
        record.l00_train = l00.total / static_cast<double>(train_set.size());
        record.l00_val = val.loss;
        record.l01 = l01.value();
        record.l10 = l10.value();
        record.l11 = l11.value();
        record.l12 = l12.value();
        record.l13 = l13.value();
        record.err_train = static_cast<double>(train_errors) / static_cast<double>(train_set.size());
        record.err_val = val.error_rate;
        if (options.record_wall_time) {
            record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        }
        result.log.epochs.push_back(record);
    }

    result.best_target = select_best(result.log, result.target_checkpoints);
    return result;
}

ModelCheckpoint select_best(const TrainLog& log, const std::vector<ModelCheckpoint>& checkpoints) {
    if (log.epochs.empty()) throw StateError("select_best: no completed epoch");
    const EpochRecord* best = nullptr;
    for (const auto& r : log.epochs) {
        if (!best || r.l00_val < best->l00_val) best = &r;
    }
    for (const auto& ck : checkpoints) {
        if (ck.epoch == best->epoch) {
            ModelCheckpoint out = ck;
            out.tag = CheckpointTag::target_best;
            return out;
        }
    }
    throw StateError("select_best: no checkpoint for epoch " + std::to_string(best->epoch));
}

Tensor export_attack_samples(const GanSnapshotStore& store, const Generator& generator, std::size_t count,
                             std::uint64_t seed) {
    if (store.empty()) throw StateError("export_attack_samples: snapshot store is empty");
    if (count == 0) throw ConfigError("export_attack_samples: count must be positive");
    Rng rng = make_rng(seed, Stream::export_attacks);
    Tensor seeds = generator.draw_seeds(count, rng);
    std::vector<std::size_t> pick(count);
    for (auto& p : pick) {
        p = std::min(store.size() - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(store.size())));
    }

    NoGradGuard no_grad;
    Generator scratch = generator.clone();
    const std::size_t stride = seeds.numel() / count;
    std::vector<double> out(seeds.numel());
    // Running statistics make every sample independent of its batch-mates,
    // so samples that share a snapshot are generated together.
    for (std::size_t s = 0; s < store.size(); ++s) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < count; ++i) {
            if (pick[i] == s) rows.push_back(i);
        }
        if (rows.empty()) continue;
        scratch.load(store.at(s));
        Tensor generated = scratch.forward(ops::gather_rows(seeds, rows), false, false);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            std::copy_n(generated.data().begin() + static_cast<std::ptrdiff_t>(r * stride), stride,
                        out.begin() + static_cast<std::ptrdiff_t>(rows[r] * stride));
        }
    }
    return Tensor(seeds.shape(), std::move(out));
}

}  // namespace trustgan
