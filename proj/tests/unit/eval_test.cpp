#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "metric_oracle.hpp"
#include "trustgan/errors.hpp"
#include "trustgan/eval.hpp"
#include "trustgan/objectives.hpp"

using namespace trustgan;
using namespace trustgan::eval;
using namespace trustgan::testing;

namespace {

ScoredSample id(std::size_t y, std::size_t pred, double c) { return {y, pred, c, DatasetTag::id}; }
ScoredSample ood(double c) { return {std::nullopt, 0, c, DatasetTag::ood}; }

// (correct, 0.95), (correct, 0.50), (wrong, 0.95), (wrong, 0.20)
std::vector<ScoredSample> four() { return {id(0, 0, 0.95), id(1, 1, 0.50), id(0, 1, 0.95), id(1, 0, 0.20)}; }

std::vector<ScoredSample> random_set(Rng& rng, std::size_t count, bool labeled) {
    std::vector<ScoredSample> out;
    for (std::size_t i = 0; i < count; ++i) {
        // A coarse grid forces ties with the thresholds.
        const double c = std::round(uniform01(rng) * 20.0) / 20.0;
        const std::size_t pred = static_cast<std::size_t>(uniform01(rng) * 3);
        if (labeled) {
            const std::size_t y = uniform01(rng) < 0.8 ? pred : (pred + 1) % 3;
            out.push_back(id(y, pred, c));
        } else {
            out.push_back(ood(c));
        }
    }
    return out;
}

ClassifierConfig mlp() {
    ClassifierConfig c;
    c.kind = ArchKind::mlp;
    c.in_channels = 2;
    c.n_classes = 3;
    c.widths = {8, 8, 8};
    c.seed = 2;
    return c;
}

}  // namespace

TEST(Tpr, FourSampleSet) {
    EXPECT_EQ(tpr_at_confidence(four(), 0.9), 0.25);
    EXPECT_EQ(tpr_at_confidence(four(), 0.0), 0.5);
    EXPECT_EQ(tpr_at_confidence(four(), 0.96), 0.0);
    EXPECT_THROW(tpr_at_confidence({}, 0.9), UndefinedMetric);
}

TEST(FprId, FourSampleSet) {
    EXPECT_EQ(fpr_id_at_confidence(four(), 0.9), 0.25);
    EXPECT_EQ(fpr_id_at_confidence(four(), 0.0), 0.5);
    std::vector<ScoredSample> all_correct{id(0, 0, 0.3), id(1, 1, 0.99)};
    for (double c : {0.0, 0.5, 0.9, 1.0}) EXPECT_EQ(fpr_id_at_confidence(all_correct, c), 0.0);
    EXPECT_THROW(fpr_id_at_confidence({}, 0.9), UndefinedMetric);
}

TEST(FprOod, ThreeSampleSet) {
    std::vector<ScoredSample> s{ood(0.95), ood(0.10), ood(0.20)};
    EXPECT_EQ(fpr_ood_at_confidence(s, 0.9), 1.0 / 3.0);
    EXPECT_EQ(fpr_ood_at_confidence(s, 0.0), 1.0);
    EXPECT_EQ(fpr_ood_at_confidence(s, 1.0 + 1e-12), 0.0);
    EXPECT_THROW(fpr_ood_at_confidence({}, 0.9), UndefinedMetric);
}

TEST(Threshold, InclusiveAtTies) {
    std::vector<ScoredSample> s{id(0, 0, 0.9), id(0, 1, 0.9)};
    EXPECT_EQ(tpr_at_confidence(s, 0.9), 0.5);
    EXPECT_EQ(fpr_id_at_confidence(s, 0.9), 0.5);
}

TEST(AtTpr, PerfectSet) {
    std::vector<ScoredSample> s{id(0, 0, 1.0), id(1, 1, 1.0), id(2, 2, 1.0)};
    EXPECT_EQ(threshold_at_tpr(s, 0.9), 1.0);
    EXPECT_EQ(fpr_id_at_tpr(s, 0.9), 0.0);
}

TEST(AtTpr, UnattainableBelowAccuracy) {
    EXPECT_THROW(threshold_at_tpr(four(), 0.9), UnattainableOperatingPoint);
    EXPECT_THROW(threshold_at_tpr(four(), 0.0), ConfigError);
}

TEST(AtTpr, SixStaggeredSamplesMatchSweepOracle) {
    std::vector<ScoredSample> s{id(0, 0, 0.97), id(1, 1, 0.81), id(2, 2, 0.64),
                                id(0, 0, 0.52), id(1, 2, 0.90), id(2, 2, 0.33)};
    std::vector<ScoredSample> o{ood(0.95), ood(0.6), ood(0.3), ood(0.5)};
    for (double target : {0.1, 0.5, 2.0 / 3.0, 0.8}) {
        const auto c = oracle_threshold_at_tpr(s, target);
        ASSERT_TRUE(c.has_value());
        EXPECT_EQ(threshold_at_tpr(s, target), *c);
        EXPECT_EQ(fpr_id_at_tpr(s, target), oracle_fpr_id(s, *c));
        EXPECT_EQ(fpr_ood_at_tpr(s, o, target), oracle_fpr_ood(o, *c));
    }
    EXPECT_EQ(threshold_at_tpr(s, 0.5), 0.64);
}

TEST(Metrics, OracleEquivalenceOnRandomSets) {
    Rng rng(31);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n_id = 1 + trial % 32, n_ood = 1 + (trial * 7) % 32;
        auto s = random_set(rng, n_id, true);
        auto o = random_set(rng, n_ood, false);
        for (double c : {0.0, 0.05, 0.5, 0.9, 1.0}) {
            ASSERT_EQ(tpr_at_confidence(s, c), oracle_tpr(s, c));
            ASSERT_EQ(fpr_id_at_confidence(s, c), oracle_fpr_id(s, c));
            ASSERT_EQ(fpr_ood_at_confidence(o, c), oracle_fpr_ood(o, c));
        }
        for (double target : {0.25, 0.5, 0.9}) {
            const auto c = oracle_threshold_at_tpr(s, target);
            if (!c) {
                ASSERT_THROW(threshold_at_tpr(s, target), UnattainableOperatingPoint);
                continue;
            }
            ASSERT_EQ(threshold_at_tpr(s, target), *c);
            ASSERT_EQ(fpr_id_at_tpr(s, target), oracle_fpr_id(s, *c));
            ASSERT_EQ(fpr_ood_at_tpr(s, o, target), oracle_fpr_ood(o, *c));
        }
    }
}

TEST(Metrics, MonotoneInThresholdWithBoundaryIdentities) {
    Rng rng(32);
    auto s = random_set(rng, 30, true);
    auto o = random_set(rng, 30, false);
    double prev_t = 2, prev_f = 2, prev_o = 2;
    for (int i = 0; i <= 100; ++i) {
        const double c = i / 100.0;
        const double t = tpr_at_confidence(s, c), f = fpr_id_at_confidence(s, c), x = fpr_ood_at_confidence(o, c);
        EXPECT_LE(t, prev_t);
        EXPECT_LE(f, prev_f);
        EXPECT_LE(x, prev_o);
        prev_t = t, prev_f = f, prev_o = x;
    }
    EXPECT_EQ(tpr_at_confidence(s, 0), accuracy(s));
    EXPECT_DOUBLE_EQ(fpr_id_at_confidence(s, 0), 1.0 - accuracy(s));
    EXPECT_EQ(fpr_ood_at_confidence(o, 0), 1.0);
}

TEST(Metrics, CalibratedToySet) {
    // Confidence 1 on correct predictions, 0 on mistakes.
    std::vector<ScoredSample> s{id(0, 0, 1), id(1, 1, 1), id(2, 0, 0), id(1, 1, 1), id(0, 2, 0)};
    EXPECT_EQ(tpr_at_confidence(s, 0.9), accuracy(s));
    EXPECT_EQ(fpr_id_at_confidence(s, 0.9), 0.0);
}

TEST(Histogram, FixedEdgesAndMass) {
    Rng rng(33);
    auto s = random_set(rng, 29, true);
    s.push_back(id(0, 0, 1.0));
    s.push_back(id(0, 0, 0.0));
    Histogram h = confidence_histogram(s);
    ASSERT_EQ(h.edges.size(), 51u);
    EXPECT_EQ(h.edges[0], 0.0);
    EXPECT_EQ(h.edges[50], 1.0);
    EXPECT_EQ(h.edges[45], 0.9);
    EXPECT_EQ(std::accumulate(h.counts.begin(), h.counts.end(), std::size_t{0}), s.size());
    EXPECT_GE(h.counts[49], 1u);
    // 0.9 falls in the bin that starts at 0.9.
    Histogram one = confidence_histogram(std::vector<ScoredSample>{id(0, 0, 0.9)});
    EXPECT_EQ(one.counts[45], 1u);
    EXPECT_EQ(one.to_csv().substr(0, 24), "bin_left,bin_right,count");
    EXPECT_THROW(confidence_histogram(std::vector<ScoredSample>{id(0, 0, 1.5)}), InvalidInput);
}

TEST(Scoring, McDropoutRateZeroEqualsMcp) {
    auto model = build_target(mlp());
    auto ds = data::synth_blobs(3, 10, 0.2, 1);
    Tensor a = predict_scores(model, ds, Method::mcp);
    Tensor b = predict_scores(model, ds, Method::mcdropout, {10, 0.0, 5});
    EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    Tensor c = predict_scores(model, ds, Method::mcdropout, {10, 0.3, 5});
    Tensor d = predict_scores(model, ds, Method::mcdropout, {10, 0.3, 5});
    EXPECT_TRUE(std::equal(c.data().begin(), c.data().end(), d.data().begin()));
}

TEST(Scoring, UnlabeledSetHasNoTrueLabels) {
    auto model = build_target(mlp());
    auto ring = data::synth_ood_ring(12, 2.0, 3.0, 1, 0.2);
    auto scored = score_dataset(model, ring, Method::mcp, {}, DatasetTag::ood);
    ASSERT_EQ(scored.size(), 12u);
    for (const auto& s : scored) {
        EXPECT_FALSE(s.true_label.has_value());
        EXPECT_GE(s.confidence, 0.0);
        EXPECT_LE(s.confidence, 1.0);
    }
}

TEST(Scoring, ShapeMismatchIsInvalidInput) {
    auto model = build_target(mlp());
    data::Dataset ds;
    ds.name = "wide";
    ds.sample_shape = {3};
    ds.values.assign(6, 0.1);
    EXPECT_THROW(score_dataset(model, ds, Method::mcp), InvalidInput);
}

TEST(Report, RowStructureAndRoundTrip) {
    auto model = build_target(mlp());
    auto blobs = data::synth_blobs(3, 20, 0.2, 1);
    auto ring = data::synth_ood_ring(30, 2.0, 3.0, 2, 0.2);
    auto ring2 = data::synth_ood_ring(30, 2.5, 3.0, 3, 0.2);
    ring2.name = "outer_ring";
    EvalSettings settings;
    settings.tpr_targets = {0.9, 0.05};
    auto report = build_report(model, blobs, {ring, ring2}, {Method::mcp, Method::mcdropout}, settings);
    ASSERT_EQ(report.methods.size(), 2u);
    for (const auto& m : report.methods) {
        EXPECT_EQ(m.ood.size(), 2u);
        EXPECT_EQ(m.id.histogram.counts.size(), 50u);
        for (const auto& [t, v] : m.id.tpr_at_conf) {
            ASSERT_TRUE(v.has_value());
            EXPECT_GE(*v, 0.0);
            EXPECT_LE(*v, 1.0);
        }
    }
    EXPECT_EQ(report.method(Method::mcdropout).ood[1].name, "outer_ring");

    const auto json = report.to_json();
    const auto text = json.dump();
    EXPECT_EQ(EvalReport::from_json(nlohmann::ordered_json::parse(text)), report);
    EXPECT_EQ(report.to_json().dump(), text);
    EXPECT_LT(text.find("\"id_name\""), text.find("\"methods\""));

    const std::string csv = report.to_csv();
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "method,ood_set,accuracy_id,loss_id,tpr_id@0.9C,fpr_id@0.9C,fpr_id@0.9TPR,fpr_id@0.05TPR,"
              "confidence_ood,fpr_ood@0.9C,fpr_ood@0.9TPR,fpr_ood@0.05TPR");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(Report, EmptyOodListGivesIdOnlyMetrics) {
    auto model = build_target(mlp());
    auto blobs = data::synth_blobs(3, 10, 0.2, 1);
    auto report = build_report(model, blobs, {}, {Method::mcp});
    EXPECT_TRUE(report.methods[0].ood.empty());
    const std::string csv = report.to_csv();
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}

TEST(Report, UnattainableOperatingPointIsNull) {
    auto model = build_target(mlp());  // untrained: accuracy far below 0.9
    auto blobs = data::synth_blobs(3, 10, 0.2, 1);
    auto report = build_report(model, blobs, {}, {Method::mcp});
    ASSERT_LT(report.methods[0].id.accuracy, 0.9);
    EXPECT_FALSE(report.methods[0].id.fpr_id_at_tpr[0].second.has_value());
    EXPECT_TRUE(report.to_json()["methods"][0]["id"]["fpr_id_at_tpr"]["0.9"].is_null());
}

TEST(Report, MeanLossIsCrossEntropy) {
    auto model = build_target(mlp());
    auto blobs = data::synth_blobs(3, 10, 0.2, 1);
    auto report = build_report(model, blobs, {}, {Method::mcp});
    const double expected = objectives::task_loss(model.forward(blobs.all()), *blobs.labels).item();
    EXPECT_NEAR(report.methods[0].id.mean_loss, expected, 1e-12);
}

TEST(FrozenSet, AllMetricsExact) {
    const auto s = frozen_id_set();
    const auto o = frozen_ood_set();
    EXPECT_EQ(s.size(), 20u);
    EXPECT_EQ(tpr_at_confidence(s, 0.9), oracle_tpr(s, 0.9));
    EXPECT_EQ(tpr_at_confidence(s, 0.9), 7.0 / 20.0);
    EXPECT_EQ(fpr_id_at_confidence(s, 0.9), 1.0 / 20.0);
    EXPECT_EQ(fpr_ood_at_confidence(o, 0.9), 2.0 / 8.0);
    EXPECT_EQ(threshold_at_tpr(s, 0.9), 0.12);
    EXPECT_EQ(fpr_id_at_tpr(s, 0.9), 1.0 / 20.0);
    EXPECT_EQ(fpr_ood_at_tpr(s, o, 0.9), 4.0 / 8.0);
}
