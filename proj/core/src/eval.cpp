#include "trustgan/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "trustgan/errors.hpp"
#include "trustgan/objectives.hpp"

namespace trustgan::eval {

namespace {

constexpr std::size_t kScoringChunk = 256;

void require_nonempty(std::span<const ScoredSample> samples, const char* metric) {
    if (samples.empty()) throw UndefinedMetric(std::string(metric) + " is undefined on an empty set");
}

void require_labeled(std::span<const ScoredSample> id, const char* metric) {
    require_nonempty(id, metric);
    for (const auto& s : id) {
        if (!s.true_label) throw InvalidInput(std::string(metric) + " needs labeled in-distribution samples");
    }
}

bool correct(const ScoredSample& s) { return s.true_label && *s.true_label == s.predicted_label; }

double fraction(std::size_t count, std::size_t total) { return static_cast<double>(count) / static_cast<double>(total); }

std::size_t tp_count(std::span<const ScoredSample> id, double threshold) {
    return static_cast<std::size_t>(
        std::count_if(id.begin(), id.end(), [&](const ScoredSample& s) { return correct(s) && s.confidence >= threshold; }));
}

// Rate comparisons in count space; the slack absorbs the rounding of target * N.
bool reaches(std::size_t count, std::size_t total, double target) {
    return static_cast<double>(count) >= target * static_cast<double>(total) - 1e-9;
}

nlohmann::ordered_json table_to_json(const RateTable& table) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [threshold, value] : table) {
        j[io::format_double(threshold)] = value ? nlohmann::ordered_json(*value) : nlohmann::ordered_json(nullptr);
    }
    return j;
}

RateTable table_from_json(const nlohmann::ordered_json& j) {
    RateTable out;
    for (const auto& [key, value] : j.items()) {
        out.emplace_back(std::stod(key), value.is_null() ? std::nullopt : std::optional<double>(value.get<double>()));
    }
    return out;
}

nlohmann::ordered_json histogram_to_json(const Histogram& h) {
    return {{"edges", h.edges}, {"counts", h.counts}};
}

Histogram histogram_from_json(const nlohmann::ordered_json& j) {
    return {j.at("edges").get<std::vector<double>>(), j.at("counts").get<std::vector<std::size_t>>()};
}

std::string cell(const std::optional<double>& v) { return v ? io::format_double(*v) : std::string(); }

template <class F>
RateTable rate_table(const std::vector<double>& thresholds, F f) {
    RateTable out;
    for (double t : thresholds) out.emplace_back(t, f(t));
    return out;
}

template <class F>
RateTable attainable_table(const std::vector<double>& targets, F f) {
    RateTable out;
    for (double t : targets) {
        try {
            out.emplace_back(t, f(t));
        } catch (const UnattainableOperatingPoint&) {
            out.emplace_back(t, std::nullopt);
        }
    }
    return out;
}

}  // namespace

std::string_view to_string(Method method) { return method == Method::mcp ? "mcp" : "mcdropout"; }

Method method_from_string(std::string_view text) {
    if (text == "mcp") return Method::mcp;
    if (text == "mcdropout") return Method::mcdropout;
    throw ConfigError("unknown scoring method '" + std::string(text) + "'");
}

Tensor predict_scores(const TargetClassifier& model, const data::Dataset& dataset, Method method,
                      const McDropoutParams& params) {
    if (dataset.empty()) throw InvalidInput("cannot score the empty dataset '" + dataset.name + "'");
    NoGradGuard no_grad;
    std::vector<double> scores;
    const std::size_t n = model.n_classes();
    scores.reserve(dataset.size() * n);
    std::size_t chunk_index = 0;
    for (std::size_t start = 0; start < dataset.size(); start += kScoringChunk, ++chunk_index) {
        const std::size_t end = std::min(dataset.size(), start + kScoringChunk);
        std::vector<std::size_t> idx(end - start);
        std::iota(idx.begin(), idx.end(), start);
        Tensor batch = dataset.batch(idx);
        Tensor s = method == Method::mcp
                       ? ops::softmax(model.forward(batch, {.mode = Mode::eval}))
                       : mc_dropout_forward(model, batch, params.realizations, params.rate,
                                            mix_seed(params.seed, chunk_index));
        scores.insert(scores.end(), s.data().begin(), s.data().end());
    }
    return Tensor(Shape{dataset.size(), n}, std::move(scores));
}

std::vector<ScoredSample> score_dataset(const TargetClassifier& model, const data::Dataset& dataset, Method method,
                                        const McDropoutParams& params, DatasetTag tag) {
    const Tensor scores = predict_scores(model, dataset, method, params);
    const auto conf = objectives::confidence_of(scores);
    std::vector<ScoredSample> out(conf.size());
    for (std::size_t i = 0; i < conf.size(); ++i) {
        if (dataset.labeled()) out[i].true_label = (*dataset.labels)[i];
        out[i].predicted_label = conf[i].class_index;
        out[i].confidence = conf[i].confidence;
        out[i].tag = tag;
    }
    return out;
}

double tpr_at_confidence(std::span<const ScoredSample> id, double threshold) {
    require_labeled(id, "TPR");
    return fraction(tp_count(id, threshold), id.size());
}

double fpr_id_at_confidence(std::span<const ScoredSample> id, double threshold) {
    require_labeled(id, "FPR_ID");
    const auto n = std::count_if(id.begin(), id.end(),
                                 [&](const ScoredSample& s) { return !correct(s) && s.confidence >= threshold; });
    return fraction(static_cast<std::size_t>(n), id.size());
}

double fpr_ood_at_confidence(std::span<const ScoredSample> ood, double threshold) {
    require_nonempty(ood, "FPR_OoD");
    const auto n = std::count_if(ood.begin(), ood.end(), [&](const ScoredSample& s) { return s.confidence >= threshold; });
    return fraction(static_cast<std::size_t>(n), ood.size());
}

double accuracy(std::span<const ScoredSample> id) {
    require_labeled(id, "accuracy");
    return fraction(static_cast<std::size_t>(std::count_if(id.begin(), id.end(), correct)), id.size());
}

double mean_confidence(std::span<const ScoredSample> samples) {
    require_nonempty(samples, "mean confidence");
    double total = 0.0;
    for (const auto& s : samples) total += s.confidence;
    return total / static_cast<double>(samples.size());
}

double threshold_at_tpr(std::span<const ScoredSample> id, double target_tpr) {
    require_labeled(id, "FPR@TPR");
    if (!(target_tpr > 0.0 && target_tpr <= 1.0)) throw ConfigError("target TPR must lie in (0, 1]");
    if (!reaches(tp_count(id, 0.0), id.size(), target_tpr)) {
        throw UnattainableOperatingPoint("accuracy " + io::format_double(accuracy(id)) + " is below the target TPR " +
                                         io::format_double(target_tpr));
    }
    std::vector<double> candidates{0.0, 1.0};
    for (const auto& s : id) candidates.push_back(s.confidence);
    std::sort(candidates.begin(), candidates.end(), std::greater<>());
    for (double c : candidates) {
        if (reaches(tp_count(id, c), id.size(), target_tpr)) return c;
    }
    return 0.0;
}

double fpr_id_at_tpr(std::span<const ScoredSample> id, double target_tpr) {
    return fpr_id_at_confidence(id, threshold_at_tpr(id, target_tpr));
}

double fpr_ood_at_tpr(std::span<const ScoredSample> id, std::span<const ScoredSample> ood, double target_tpr) {
    return fpr_ood_at_confidence(ood, threshold_at_tpr(id, target_tpr));
}

Histogram confidence_histogram(std::span<const ScoredSample> samples, std::size_t bins) {
    if (bins == 0) throw ConfigError("histogram needs at least one bin");
    Histogram h;
    h.edges.resize(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i) h.edges[i] = static_cast<double>(i) / static_cast<double>(bins);
    h.counts.assign(bins, 0);
    for (const auto& s : samples) {
        if (!(s.confidence >= 0.0 && s.confidence <= 1.0)) throw InvalidInput("confidence outside [0, 1]");
        auto bin = static_cast<std::size_t>(s.confidence * static_cast<double>(bins));
        bin = std::min(bin, bins - 1);
        // Keep the bin consistent with the stored edges under rounding.
        while (bin > 0 && s.confidence < h.edges[bin]) --bin;
        while (bin + 1 < bins && s.confidence >= h.edges[bin + 1]) ++bin;
        ++h.counts[bin];
    }
    return h;
}

std::string Histogram::to_csv() const {
    std::ostringstream out;
    out << "bin_left,bin_right,count\n";
    for (std::size_t i = 0; i < counts.size(); ++i) {
        out << io::format_double(edges[i]) << ',' << io::format_double(edges[i + 1]) << ',' << counts[i] << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------

const MethodReport& EvalReport::method(Method m) const {
    for (const auto& r : methods) {
        if (r.method == m) return r;
    }
    throw StateError("report has no '" + std::string(to_string(m)) + "' block");
}

nlohmann::ordered_json EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["id_name"] = id_name;
    auto list = nlohmann::ordered_json::array();
    for (const auto& m : methods) {
        nlohmann::ordered_json jm;
        jm["method"] = std::string(to_string(m.method));
        jm["id"] = {{"accuracy", m.id.accuracy},
                    {"mean_loss", m.id.mean_loss},
                    {"tpr_at_conf", table_to_json(m.id.tpr_at_conf)},
                    {"fpr_id_at_conf", table_to_json(m.id.fpr_id_at_conf)},
                    {"fpr_id_at_tpr", table_to_json(m.id.fpr_id_at_tpr)},
                    {"histogram", histogram_to_json(m.id.histogram)}};
        auto ood = nlohmann::ordered_json::array();
        for (const auto& o : m.ood) {
            ood.push_back({{"name", o.name},
                           {"mean_confidence", o.mean_confidence},
                           {"fpr_ood_at_conf", table_to_json(o.fpr_ood_at_conf)},
                           {"fpr_ood_at_tpr", table_to_json(o.fpr_ood_at_tpr)},
                           {"histogram", histogram_to_json(o.histogram)}});
        }
        jm["ood"] = std::move(ood);
        list.push_back(std::move(jm));
    }
    j["methods"] = std::move(list);
    return j;
}

EvalReport EvalReport::from_json(const nlohmann::ordered_json& j) {
    try {
        EvalReport r;
        r.id_name = j.at("id_name").get<std::string>();
        for (const auto& jm : j.at("methods")) {
            MethodReport m;
            m.method = method_from_string(jm.at("method").get<std::string>());
            const auto& jid = jm.at("id");
            m.id.accuracy = jid.at("accuracy").get<double>();
            m.id.mean_loss = jid.at("mean_loss").get<double>();
            m.id.tpr_at_conf = table_from_json(jid.at("tpr_at_conf"));
            m.id.fpr_id_at_conf = table_from_json(jid.at("fpr_id_at_conf"));
            m.id.fpr_id_at_tpr = table_from_json(jid.at("fpr_id_at_tpr"));
            m.id.histogram = histogram_from_json(jid.at("histogram"));
            for (const auto& jo : jm.at("ood")) {
                OodMetrics o;
                o.name = jo.at("name").get<std::string>();
                o.mean_confidence = jo.at("mean_confidence").get<double>();
                o.fpr_ood_at_conf = table_from_json(jo.at("fpr_ood_at_conf"));
                o.fpr_ood_at_tpr = table_from_json(jo.at("fpr_ood_at_tpr"));
                o.histogram = histogram_from_json(jo.at("histogram"));
                m.ood.push_back(std::move(o));
            }
            r.methods.push_back(std::move(m));
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("malformed evaluation report: ") + e.what());
    }
}

std::string EvalReport::to_csv() const {
    std::ostringstream out;
    out << "method,ood_set,accuracy_id,loss_id";
    const MethodReport* first = methods.empty() ? nullptr : &methods.front();
    if (first) {
        for (const auto& [t, v] : first->id.tpr_at_conf) out << ",tpr_id@" << io::format_double(t) << "C";
        for (const auto& [t, v] : first->id.fpr_id_at_conf) out << ",fpr_id@" << io::format_double(t) << "C";
        for (const auto& [t, v] : first->id.fpr_id_at_tpr) out << ",fpr_id@" << io::format_double(t) << "TPR";
    }
    out << ",confidence_ood";
    if (first && !first->ood.empty()) {
        for (const auto& [t, v] : first->ood.front().fpr_ood_at_conf) out << ",fpr_ood@" << io::format_double(t) << "C";
        for (const auto& [t, v] : first->ood.front().fpr_ood_at_tpr) out << ",fpr_ood@" << io::format_double(t) << "TPR";
    }
    out << '\n';
    for (const auto& m : methods) {
        auto id_cells = [&] {
            std::ostringstream s;
            s << io::format_double(m.id.accuracy) << ',' << io::format_double(m.id.mean_loss);
            for (const auto& [t, v] : m.id.tpr_at_conf) s << ',' << cell(v);
            for (const auto& [t, v] : m.id.fpr_id_at_conf) s << ',' << cell(v);
            for (const auto& [t, v] : m.id.fpr_id_at_tpr) s << ',' << cell(v);
            return s.str();
        };
        if (m.ood.empty()) {
            out << to_string(m.method) << ",," << id_cells() << ",\n";
            continue;
        }
        for (const auto& o : m.ood) {
            out << to_string(m.method) << ',' << o.name << ',' << id_cells() << ',' << io::format_double(o.mean_confidence);
            for (const auto& [t, v] : o.fpr_ood_at_conf) out << ',' << cell(v);
            for (const auto& [t, v] : o.fpr_ood_at_tpr) out << ',' << cell(v);
            out << '\n';
        }
    }
    return out.str();
}

EvalReport build_report(const TargetClassifier& model, const data::Dataset& id_set,
                        const std::vector<data::Dataset>& ood_sets, const std::vector<Method>& methods,
                        const EvalSettings& settings) {
    if (!id_set.labeled()) throw InvalidInput("in-distribution set '" + id_set.name + "' must be labeled");
    EvalReport report;
    report.id_name = id_set.name;
    for (Method method : methods) {
        MethodReport mr;
        mr.method = method;
        const Tensor scores = predict_scores(model, id_set, method, settings.mc_dropout);
        const auto conf = objectives::confidence_of(scores);
        std::vector<ScoredSample> id(conf.size());
        double loss = 0.0;
        const std::size_t n = scores.dim(1);
        for (std::size_t i = 0; i < conf.size(); ++i) {
            const std::size_t y = (*id_set.labels)[i];
            id[i] = {y, conf[i].class_index, conf[i].confidence, DatasetTag::id};
            loss -= std::log(std::max(scores.data()[i * n + y], 1e-300));
        }
        mr.id.accuracy = accuracy(id);
        mr.id.mean_loss = loss / static_cast<double>(id.size());
        mr.id.tpr_at_conf = rate_table(settings.confidence_thresholds, [&](double c) { return tpr_at_confidence(id, c); });
        mr.id.fpr_id_at_conf =
            rate_table(settings.confidence_thresholds, [&](double c) { return fpr_id_at_confidence(id, c); });
        mr.id.fpr_id_at_tpr = attainable_table(settings.tpr_targets, [&](double t) { return fpr_id_at_tpr(id, t); });
        mr.id.histogram = confidence_histogram(id, settings.histogram_bins);

        for (const auto& ood_set : ood_sets) {
            const auto ood = score_dataset(model, ood_set, method, settings.mc_dropout, DatasetTag::ood);
            OodMetrics om;
            om.name = ood_set.name;
            om.mean_confidence = mean_confidence(ood);
            om.fpr_ood_at_conf =
                rate_table(settings.confidence_thresholds, [&](double c) { return fpr_ood_at_confidence(ood, c); });
            om.fpr_ood_at_tpr =
                attainable_table(settings.tpr_targets, [&](double t) { return fpr_ood_at_tpr(id, ood, t); });
            om.histogram = confidence_histogram(ood, settings.histogram_bins);
            mr.ood.push_back(std::move(om));
        }
        report.methods.push_back(std::move(mr));
    }
    return report;
}

}  // namespace trustgan::eval
