// Acceptance run: one PASS/FAIL/SKIP line per criterion, exit status 1 on any FAIL.
//
//   trustgan_acceptance [--mnist-dir DIR]
//
// DIR (or $TRUSTGAN_MNIST_DIR) must hold train-images-idx3-ubyte,
// train-labels-idx1-ubyte and fashion/t10k-images-idx3-ubyte.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "metric_oracle.hpp"
#include "trustgan/checkpoint.hpp"
#include "trustgan/data.hpp"
#include "trustgan/eval.hpp"
#include "trustgan/objectives.hpp"
#include "trustgan/ops.hpp"
#include "trustgan/trainer.hpp"

using namespace trustgan;
namespace fs = std::filesystem;

namespace {

enum class Verdict { pass, fail, skip };

struct Outcome {
    Verdict verdict;
    std::string detail;
};

class Clock {
public:
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* pattern, auto... args) {
    char buffer[512];
    std::snprintf(buffer, sizeof buffer, pattern, args...);
    return buffer;
}

// Collects failed sub-checks, then the measurements, into one detail line.
struct Checks {
    std::vector<std::string> failed;
    std::vector<std::string> notes;

    void expect(bool ok, std::string what) {
        if (!ok) failed.push_back(std::move(what));
    }
    Outcome outcome() const {
        std::string detail;
        std::vector<std::string> parts = failed;
        parts.insert(parts.end(), notes.begin(), notes.end());
        for (std::size_t i = 0; i < parts.size(); ++i) detail += (i ? "; " : "") + parts[i];
        return {failed.empty() ? Verdict::pass : Verdict::fail, detail};
    }
};

Tensor uniform_logits(std::size_t rows, std::size_t n) { return Tensor(Shape{rows, n}, 0.37); }

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
    Clock clock;
    Checks checks;
    std::size_t suites = 0;
    double worst = 0.0;
    auto run = [&](const std::vector<testing::GradSuite>& list) {
        for (const auto& suite : list) {
            const auto r = testing::run_suite(suite, 20, 20240611, 1e-5);
            ++suites;
            worst = std::max(worst, r.worst_error);
            checks.expect(r.instances >= 20 && r.worst_error < 1e-4,
                          fmt("%s: rel error %.3g over %zu instances", suite.name.c_str(), r.worst_error, r.instances));
        }
    };
    run(testing::operator_suites());
    run(testing::loss_suites());
    const double t = clock.seconds();
    checks.expect(t < 60.0, fmt("runtime %.1fs >= 60s", t));
    checks.notes.push_back(fmt("%zu suites x 20 instances, worst rel error %.2e, %.1fs", suites, worst, t));
    return checks.outcome();
}

Outcome analytic_losses() {
    Checks checks;
    double worst = 0.0;
    auto close = [&](double got, double want, const std::string& what) {
        worst = std::max(worst, std::abs(got - want));
        checks.expect(std::abs(got - want) <= 1e-9, fmt("%s = %.12g, want %.12g", what.c_str(), got, want));
    };
    for (std::size_t n : {2u, 5u, 10u}) {
        close(objectives::confidence_loss(uniform_logits(3, n)).item(), 1.0 / static_cast<double>(n),
              fmt("L01(uniform, n=%zu)", n));
        close(objectives::attack_loss(uniform_logits(3, n)).item(), 1.0, fmt("L10(uniform, n=%zu)", n));
    }

    Rng rng(7);
    std::uniform_int_distribution<std::size_t> classes(2, 12);
    double form_gap = 0.0;
    for (int row = 0; row < 1000; ++row) {
        const std::size_t n = classes(rng);
        const double scale = std::pow(10.0, 3.0 * uniform01(rng));
        Tensor logits = Tensor::uniform({1, n}, -scale, scale, rng);
        const double a = objectives::attack_loss(logits).item();
        const double b = objectives::attack_loss_log_prob_form(logits).item();
        form_gap = std::max(form_gap, std::abs(a - b));
    }
    checks.expect(form_gap <= 1e-9, fmt("L10 forms differ by %.3g on 1000 rows", form_gap));

    Tensor seeds = Tensor::uniform({4, 5}, 0, 1, rng);
    Tensor same(Shape{4, 3}, 0.25);
    close(objectives::sample_diversity_loss(seeds, same).item(), 1.0, "L11(identical samples)");

    Tensor pair_seeds = Tensor::uniform({2, 3}, 0, 1, rng);
    close(objectives::output_diversity_loss(pair_seeds, Tensor(Shape{2, 2}, 0.5)).item(), 1.0 / (1.0 + std::log(2.0)),
          "L12(two uniform n=2 rows)");

    checks.notes.push_back(fmt("worst |error| %.2e, L10 form gap %.2e on 1000 rows", worst, form_gap));
    return checks.outcome();
}

// ---------------------------------------------------------------------------

struct BlobTask {
    data::Dataset train, val;

    BlobTask(std::size_t per_class, double spread, std::uint64_t seed) {
        auto blobs = data::synth_blobs(3, per_class, spread, seed);
        std::tie(train, val) = data::split(blobs, {2.0 / 3.0, 1.0 / 3.0, seed});
    }
};

ClassifierConfig blob_target(std::vector<std::size_t> widths, std::uint64_t seed) {
    ClassifierConfig c;
    c.kind = ArchKind::mlp;
    c.in_channels = 2;
    c.n_classes = 3;
    c.widths = std::move(widths);
    c.seed = seed;
    return c;
}

GeneratorConfig blob_generator(std::size_t width, std::uint64_t seed) {
    GeneratorConfig g;
    g.widths = {width};
    g.seed = seed;
    return g;
}

Outcome baseline_identity() {
    BlobTask task(30, 0.2, 3);
    const auto cfg = blob_target({16, 16, 16}, 11);
    TrainingSchedule s;
    s.epochs = 6;
    s.epochs_target_alone = 6;
    s.batch_size = 16;
    s.seed = 23;

    auto target = build_target(cfg);
    auto gen = build_generator(blob_generator(4, 11), target, {2});
    train(target, gen, task.train, task.val, s);

    auto plain = build_target(cfg);
    Rng shuffle = make_rng(s.seed, Stream::shuffle);
    Rng dropout = make_rng(s.seed, Stream::dropout);
    Adam optimizer(plain.parameters());
    std::vector<std::size_t> order(task.train.size());
    for (std::size_t e = 0; e < s.epochs; ++e) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), shuffle);
        for (std::size_t start = 0; start < order.size(); start += s.batch_size) {
            std::span<const std::size_t> idx(order.data() + start, std::min(s.batch_size, order.size() - start));
            optimizer.zero_grad();
            Tensor logits = plain.forward(task.train.batch(idx), {.mode = Mode::train, .rng = &dropout});
            objectives::task_loss(logits, task.train.batch_labels(idx)).backward();
            optimizer.step();
        }
    }
    const bool same = bit_identical(target.checkpoint(0, CheckpointTag::end_of_epoch),
                                    plain.checkpoint(0, CheckpointTag::end_of_epoch));
    return {same ? Verdict::pass : Verdict::fail,
            same ? fmt("%zu epochs, %zu parameters bit-identical", s.epochs, target.parameter_count())
                 : std::string("parameters differ from the plain task-loss loop")};
}

Outcome metric_oracle() {
    Checks checks;
    const auto id = testing::frozen_id_set();
    const auto ood = testing::frozen_ood_set();
    checks.expect(id.size() == 20, "frozen set must hold 20 samples");
    std::size_t compared = 0;
    std::vector<double> thresholds{0.0, 0.9, 1.0};
    for (const auto& s : id) thresholds.push_back(s.confidence);
    for (double c : thresholds) {
        checks.expect(eval::tpr_at_confidence(id, c) == testing::oracle_tpr(id, c), fmt("TPR@%g", c));
        checks.expect(eval::fpr_id_at_confidence(id, c) == testing::oracle_fpr_id(id, c), fmt("FPR_ID@%g", c));
        checks.expect(eval::fpr_ood_at_confidence(ood, c) == testing::oracle_fpr_ood(ood, c), fmt("FPR_OoD@%g", c));
        compared += 3;
    }
    const auto c = testing::oracle_threshold_at_tpr(id, 0.9);
    if (!c) {
        checks.expect(false, "oracle finds no 0.90 TPR operating point");
    } else {
        checks.expect(eval::threshold_at_tpr(id, 0.9) == *c, "threshold@0.90TPR");
        checks.expect(eval::fpr_id_at_tpr(id, 0.9) == testing::oracle_fpr_id(id, *c), "FPR_ID@0.90TPR");
        checks.expect(eval::fpr_ood_at_tpr(id, ood, 0.9) == testing::oracle_fpr_ood(ood, *c), "FPR_OoD@0.90TPR");
        compared += 3;
        checks.notes.push_back(fmt("%zu values equal to brute force, C*@0.90TPR = %g", compared, *c));
    }
    return checks.outcome();
}

// ---------------------------------------------------------------------------

struct ModeResult {
    double accuracy = 0.0;
    double ood_confidence = 0.0;
    double fpr_ood = 0.0;
};

struct ModePair {
    ModeResult standard, trustgan;
};

// Trains the standard and the adversarial variant from the same initial
// weights and budget, then scores the best checkpoint of each.
template <class Build>
ModePair compare_modes(Build build, const data::Dataset& train_set, const data::Dataset& val_set,
                       const data::Dataset& ood_set, TrainingSchedule schedule, const TrainOptions& options = {}) {
    ModePair out;
    for (bool adversarial : {false, true}) {
        auto [target, generator] = build();
        schedule.epochs_target_alone = adversarial ? 0 : schedule.epochs;
        auto result = train(target, generator, train_set, val_set, schedule, options);
        target.load(result.best_target);
        const auto report = eval::build_report(target, val_set, {ood_set}, {eval::Method::mcp});
        const auto& m = report.methods.front();
        ModeResult r{m.id.accuracy, m.ood.front().mean_confidence, *m.ood.front().fpr_ood_at_conf.front().second};
        (adversarial ? out.trustgan : out.standard) = r;
    }
    return out;
}

Outcome synthetic_end_to_end() {
    Clock clock;
    constexpr double spread = 0.2;
    constexpr std::uint64_t seed = 1;
    BlobTask task(150, spread, seed);
    auto ring = data::synth_ood_ring(600, data::blob_region_radius(spread) + 0.1, data::kSyntheticExtent, seed + 7,
                                     spread);
    TrainingSchedule s;
    s.epochs = 100;
    s.batch_size = 32;
    s.seed = seed;
    auto build = [&] {
        auto target = build_target(blob_target({32, 32, 32}, seed));
        auto generator = build_generator(blob_generator(16, seed), target, {2});
        return std::pair{std::move(target), std::move(generator)};
    };
    const auto r = compare_modes(build, task.train, task.val, ring, s);
    const double t = clock.seconds();

    Checks checks;
    checks.expect(task.train.size() == 300 && task.val.size() == 150, "split must be 300/150");
    checks.expect(r.standard.accuracy >= 0.95 && r.trustgan.accuracy >= 0.95, "ID accuracy below 0.95");
    checks.expect(std::abs(r.standard.accuracy - r.trustgan.accuracy) <= 0.03, "ID accuracies differ by more than 0.03");
    checks.expect(r.trustgan.ood_confidence <= 0.5 * r.standard.ood_confidence,
                  "TrustGAN OoD confidence above half of standard");
    checks.expect(r.trustgan.fpr_ood < r.standard.fpr_ood, "FPR_OoD@0.90C not strictly lower");
    checks.expect(t < 300.0, fmt("runtime %.1fs >= 300s", t));
    const std::string numbers =
        fmt("acc %.3f/%.3f, OoD conf %.3f/%.3f, FPR_OoD@0.90C %.3f/%.3f (standard/TrustGAN), %zu epochs, %.1fs",
            r.standard.accuracy, r.trustgan.accuracy, r.standard.ood_confidence, r.trustgan.ood_confidence,
            r.standard.fpr_ood, r.trustgan.fpr_ood, s.epochs, t);
    checks.notes.push_back(numbers);
    auto out = checks.outcome();
    if (out.verdict == Verdict::fail) out.detail += " [" + numbers + "]";
    return out;
}

Outcome mnist_directional(const std::optional<fs::path>& dir) {
    if (!dir) return {Verdict::skip, "no MNIST directory (pass --mnist-dir or set TRUSTGAN_MNIST_DIR)"};
    const fs::path images = *dir / "train-images-idx3-ubyte";
    const fs::path labels = *dir / "train-labels-idx1-ubyte";
    const fs::path fashion = *dir / "fashion" / "t10k-images-idx3-ubyte";
    for (const auto& p : {images, labels, fashion}) {
        if (!fs::exists(p)) return {Verdict::skip, "missing " + p.string()};
    }
    Clock clock;
    auto mnist = data::load_idx(images, labels, 10);
    auto fmnist = data::load_idx(fashion);
    if (mnist.size() < 6000 || fmnist.size() < 1000) return {Verdict::fail, "MNIST files hold too few images"};
    std::vector<std::size_t> idx(6000);
    std::iota(idx.begin(), idx.end(), 0);
    auto train_set = mnist.subset(std::span(idx).first(5000));
    auto val_set = mnist.subset(std::span(idx).subspan(5000, 1000));
    auto ood_set = fmnist.subset(std::span(idx).first(1000));
    ood_set.name = "fashion_mnist";

    TrainingSchedule s;
    // Sized to the CPU budget: about 75 s per TrustGAN epoch.
    s.epochs = 10;
    s.batch_size = 64;
    s.seed = 1;
    auto build = [&] {
        ClassifierConfig c;
        c.widths = {8, 16, 16};
        // Receptive field covering the whole digit at no extra cost.
        c.dilations = {1, 2, 4};
        c.seed = 1;
        auto target = build_target(c);
        GeneratorConfig g;
        g.seed = 1;
        auto generator = build_generator(g, target, train_set.sample_shape);
        return std::pair{std::move(target), std::move(generator)};
    };
    TrainOptions options;
    options.target_optimizer.learning_rate = 3e-3;
    const auto r = compare_modes(build, train_set, val_set, ood_set, s, options);
    const double t = clock.seconds();
    const double reduction = r.standard.ood_confidence / std::max(r.trustgan.ood_confidence, 1e-300);

    Checks checks;
    checks.expect(reduction >= 3.0, fmt("OoD confidence reduction %.2fx < 3x", reduction));
    checks.expect(r.standard.accuracy - r.trustgan.accuracy <= 0.02, "ID accuracy drops by more than 0.02");
    checks.expect(t < 1800.0, fmt("runtime %.0fs >= 1800s", t));
    checks.notes.push_back(fmt("acc %.3f/%.3f, OoD conf %.3f/%.3f (%.1fx), %zu epochs, %.0fs", r.standard.accuracy,
                               r.trustgan.accuracy, r.standard.ood_confidence, r.trustgan.ood_confidence, reduction,
                               s.epochs, t));
    return checks.outcome();
}

// ---------------------------------------------------------------------------

Outcome mc_dropout_contract() {
    Checks checks;
    auto model = build_target(blob_target({16, 16, 16}, 5));
    auto ds = data::synth_blobs(3, 40, 0.2, 5);
    const Tensor mcp = eval::predict_scores(model, ds, eval::Method::mcp);
    const Tensor zero = eval::predict_scores(model, ds, eval::Method::mcdropout, {10, 0.0, 9});
    checks.expect(std::equal(mcp.data().begin(), mcp.data().end(), zero.data().begin(), zero.data().end()),
                  "rate 0 differs from MCP");
    const Tensor a = eval::predict_scores(model, ds, eval::Method::mcdropout, {10, 0.3, 9});
    const Tensor b = eval::predict_scores(model, ds, eval::Method::mcdropout, {10, 0.3, 9});
    checks.expect(std::equal(a.data().begin(), a.data().end(), b.data().begin(), b.data().end()),
                  "rate 0.3 is not seed-reproducible");
    checks.expect(!std::equal(a.data().begin(), a.data().end(), mcp.data().begin()), "rate 0.3 has no effect");
    double worst = 0.0;
    const std::size_t n = a.dim(1);
    for (std::size_t r = 0; r < a.dim(0); ++r) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double v = a.data()[r * n + i];
            checks.expect(v >= 0.0 && v <= 1.0, "score outside [0, 1]");
            total += v;
        }
        worst = std::max(worst, std::abs(total - 1.0));
    }
    checks.expect(worst <= 1e-9, fmt("row sum off by %.3g", worst));
    checks.notes.push_back(fmt("%zu rows, worst |row sum - 1| %.2e", a.dim(0), worst));
    return checks.outcome();
}

Outcome persistence() {
    Checks checks;
    const fs::path dir = fs::temp_directory_path() / "trustgan_acceptance";
    fs::remove_all(dir);

    auto model = build_target(blob_target({8, 8}, 3));
    auto ckpt = model.checkpoint(4, CheckpointTag::end_of_epoch);
    save_checkpoint(ckpt, dir / "model.ckpt");
    checks.expect(bit_identical(load_checkpoint(dir / "model.ckpt"), ckpt), "checkpoint round trip");

    Rng rng(12);
    std::vector<std::uint8_t> pixels(5 * 4 * 3), labels(5);
    for (auto& p : pixels) p = static_cast<std::uint8_t>(rng() & 0xff);
    for (auto& l : labels) l = static_cast<std::uint8_t>(rng() % 10);
    const auto image_bytes = data::encode_idx_images(5, 4, 3, pixels);
    const auto label_bytes = data::encode_idx_labels(labels);
    io::write_file(dir / "images.idx", image_bytes);
    io::write_file(dir / "labels.idx", label_bytes);
    const auto idx = data::load_idx(dir / "images.idx", dir / "labels.idx");
    checks.expect(idx.size() == 5 && idx.sample_shape == Shape{1, 4, 3}, "IDX shape");
    checks.expect(idx.labels && std::equal(labels.begin(), labels.end(), idx.labels->begin(), idx.labels->end()),
                  "IDX labels");
    checks.expect(io::read_file(dir / "images.idx") == image_bytes, "IDX bytes");

    data::Dataset signals;
    signals.name = "signals";
    signals.sample_shape = {2, 16};
    signals.n_classes = 3;
    signals.class_names = {"a", "b", "c"};
    signals.labels = std::vector<std::size_t>{0, 2, 1};
    for (std::size_t i = 0; i < 3 * 32; ++i) signals.values.push_back(std::ldexp(uniform01(rng) - 0.5, -3));
    const auto signal_bytes = data::encode_raw_signals(signals);
    const auto back = data::decode_raw_signals(signal_bytes, 2, "signals", false);
    checks.expect(back.values == signals.values && back.labels == signals.labels &&
                      back.class_names == signals.class_names,
                  "signal container round trip");
    checks.expect(data::encode_raw_signals(back) == signal_bytes, "signal container re-encoding");

    BlobTask task(20, 0.2, 4);
    auto target = build_target(blob_target({8, 8, 8}, 4));
    auto gen = build_generator(blob_generator(4, 4), target, {2});
    TrainingSchedule s;
    s.epochs = 5;
    s.epochs_target_alone = 2;
    s.batch_size = 16;
    s.seed = 4;
    auto result = train(target, gen, task.train, task.val, s);
    checks.expect(result.store.size() == 2 * (s.epochs - s.epochs_target_alone),
                  fmt("store holds %zu snapshots, want %zu", result.store.size(),
                      2 * (s.epochs - s.epochs_target_alone)));
    result.store.save(dir / "snapshots");
    const auto reloaded = GanSnapshotStore::load(dir / "snapshots");
    bool same = reloaded.size() == result.store.size();
    for (std::size_t i = 0; same && i < reloaded.size(); ++i) same = bit_identical(reloaded.at(i), result.store.at(i));
    checks.expect(same, "snapshot store round trip");

    const Tensor attacks = export_attack_samples(result.store, gen, 25, 8);
    checks.expect(attacks.shape() == Shape{25, 2}, "attack samples not shaped like training inputs");
    const auto [lo, hi] = std::minmax_element(attacks.data().begin(), attacks.data().end());
    checks.expect(*lo >= -1.0 && *hi <= 1.0, "attack samples outside [-1, 1]");
    checks.notes.push_back(fmt("checkpoint, IDX, signal and snapshot containers bit-exact; %zu snapshots; "
                               "attacks in [%.3f, %.3f]",
                               result.store.size(), *lo, *hi));
    fs::remove_all(dir);
    return checks.outcome();
}

}  // namespace

int main(int argc, char** argv) {
    std::optional<fs::path> mnist_dir;
    if (const char* env = std::getenv("TRUSTGAN_MNIST_DIR"); env && *env) mnist_dir = env;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--mnist-dir" && i + 1 < argc) {
            mnist_dir = argv[++i];
        } else {
            std::fprintf(stderr, "usage: %s [--mnist-dir DIR]\n", argv[0]);
            return 2;
        }
    }

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"1 gradient suite", gradient_suite},
        {"2 analytic loss values", analytic_losses},
        {"3 baseline identity", baseline_identity},
        {"4 metric oracle", metric_oracle},
        {"5 synthetic end-to-end", synthetic_end_to_end},
        {"6 MNIST directional", [&] { return mnist_directional(mnist_dir); }},
        {"7 MCDropout contract", mc_dropout_contract},
        {"8 persistence", persistence},
    };
    int failures = 0;
    for (const auto& [name, check] : criteria) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {Verdict::fail, std::string("exception: ") + e.what()};
        }
        const char* tag = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::fail ? "FAIL" : "SKIP";
        failures += o.verdict == Verdict::fail;
        std::printf("[%s] criterion %s: %s\n", tag, name.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
