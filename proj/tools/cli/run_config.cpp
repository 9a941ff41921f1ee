#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "trustgan/errors.hpp"

namespace trustgan::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(TrainMode mode) { return mode == TrainMode::standard ? "standard" : "trustgan"; }

namespace {

TrainMode mode_from_string(const std::string& text) {
    if (text == "standard") return TrainMode::standard;
    if (text == "trustgan") return TrainMode::trustgan;
    throw ConfigError("mode must be 'standard' or 'trustgan', got '" + text + "'");
}

std::string_view to_string(DatasetKind kind) {
    switch (kind) {
        case DatasetKind::blobs: return "blobs";
        case DatasetKind::ring: return "ring";
        case DatasetKind::idx: return "idx";
        case DatasetKind::signals: return "signals";
    }
    return "?";
}

DatasetKind dataset_kind_from_string(const std::string& text) {
    for (auto k : {DatasetKind::blobs, DatasetKind::ring, DatasetKind::idx, DatasetKind::signals}) {
        if (text == to_string(k)) return k;
    }
    throw ConfigError("unknown dataset kind '" + text + "'");
}

// Reads the members of one JSON object and rejects the ones nobody asked for.
class Section {
public:
    Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
    }

    template <class T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }

    template <class T>
    void read(const char* key, std::optional<T>& out) {
        T value{};
        if (!j_.contains(key)) {
            seen_.insert(key);
            return;
        }
        read(key, value);
        out = value;
    }

    std::optional<Section> child(const char* key) {
        seen_.insert(key);
        if (!j_.contains(key)) return std::nullopt;
        return Section(j_.at(key), where_ + "." + key);
    }

    const json* raw(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    const std::string& where() const { return where_; }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.contains(key)) throw ConfigError("unknown key " + where_ + "." + key);
        }
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string, std::less<>> seen_;
};

fs::path resolve(const fs::path& p, const fs::path& base) { return p.is_absolute() ? p : base / p; }

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::is_regular_file(p)) throw ConfigError(what + ": no such file '" + p.string() + "'");
}

DatasetSpec parse_dataset(Section s, const fs::path& base, const std::string& default_name) {
    DatasetSpec d;
    std::string kind = "blobs";
    s.read("kind", kind);
    d.kind = dataset_kind_from_string(kind);
    d.name = default_name;
    s.read("name", d.name);
    s.read("seed", d.seed);
    s.read("exclude_classes", d.exclude_classes);
    s.read("limit", d.limit);
    switch (d.kind) {
        case DatasetKind::blobs:
            s.read("n_classes", d.n_classes);
            s.read("per_class", d.per_class);
            s.read("spread", d.spread);
            break;
        case DatasetKind::ring:
            s.read("count", d.count);
            s.read("r_min", d.r_min);
            s.read("r_max", d.r_max);
            s.read("blob_spread", d.blob_spread);
            break;
        case DatasetKind::idx: {
            std::string images, labels;
            s.read("images", images);
            if (images.empty()) throw ConfigError(s.where() + ".images is required");
            d.path = resolve(images, base);
            require_file(d.path, s.where() + ".images");
            s.read("labels", labels);
            if (!labels.empty()) {
                d.labels = resolve(labels, base);
                require_file(*d.labels, s.where() + ".labels");
            }
            d.n_classes = 10;
            s.read("n_classes", d.n_classes);
            s.read("first_channel", d.first_channel);
            break;
        }
        case DatasetKind::signals: {
            std::string path;
            s.read("path", path);
            if (path.empty()) throw ConfigError(s.where() + ".path is required");
            d.path = resolve(path, base);
            require_file(d.path, s.where() + ".path");
            s.read("channels", d.channels);
            break;
        }
    }
    s.finish();
    return d;
}

void parse_adam(Section s, AdamConfig& a) {
    s.read("learning_rate", a.learning_rate);
    s.read("beta1", a.beta1);
    s.read("beta2", a.beta2);
    s.read("epsilon", a.epsilon);
    s.finish();
}

json adam_json(const AdamConfig& a) {
    return {{"learning_rate", a.learning_rate}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"epsilon", a.epsilon}};
}

nlohmann::ordered_json dataset_json(const DatasetSpec& d) {
    nlohmann::ordered_json j;
    j["kind"] = std::string(to_string(d.kind));
    j["name"] = d.name;
    switch (d.kind) {
        case DatasetKind::blobs:
            j["n_classes"] = d.n_classes;
            j["per_class"] = d.per_class;
            j["spread"] = d.spread;
            break;
        case DatasetKind::ring:
            j["count"] = d.count;
            j["r_min"] = d.r_min;
            j["r_max"] = d.r_max;
            if (d.blob_spread) j["blob_spread"] = *d.blob_spread;
            break;
        case DatasetKind::idx:
            j["images"] = d.path.string();
            if (d.labels) j["labels"] = d.labels->string();
            j["n_classes"] = d.n_classes;
            j["first_channel"] = d.first_channel;
            break;
        case DatasetKind::signals:
            j["path"] = d.path.string();
            j["channels"] = d.channels;
            break;
    }
    j["seed"] = d.seed;
    j["limit"] = d.limit;
    j["exclude_classes"] = d.exclude_classes;
    return j;
}

}  // namespace

void apply_override(json& document, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    json* node = &document;
    std::stringstream parts(key);
    std::string part;
    std::vector<std::string> path;
    while (std::getline(parts, part, '.')) path.push_back(part);
    for (std::size_t i = 0; i < path.size(); ++i) {
        const std::string& p = path[i];
        if (p.empty()) throw ConfigError("override key '" + key + "' has an empty segment");
        if (node->is_array()) {
            std::size_t index = 0;
            const auto [end, ec] = std::from_chars(p.data(), p.data() + p.size(), index);
            if (ec != std::errc{} || end != p.data() + p.size() || index >= node->size()) {
                throw ConfigError("override key '" + key + "': bad array index '" + p + "'");
            }
            node = &(*node)[index];
        } else {
            if (node->is_null()) *node = json::object();
            if (!node->is_object()) throw ConfigError("override key '" + key + "': '" + p + "' is not an object member");
            node = &(*node)[p];
        }
    }
    *node = std::move(value);
}

RunConfig parse_run_config(const json& document, const fs::path& base_dir) {
    RunConfig c;
    Section root(document, "config");

    std::string mode = "trustgan";
    root.read("mode", mode);
    c.mode = mode_from_string(mode);
    root.read("seed", c.seed);
    root.read("threshold", c.threshold);
    if (!(c.threshold >= 0.0 && c.threshold <= 1.0)) throw ConfigError("threshold must lie in [0, 1]");
    root.read("attack_count", c.attack_count);
    std::string out = c.output_dir.string();
    root.read("output_dir", out);
    c.output_dir = out;

    if (auto s = root.child("target")) {
        std::string kind = std::string(to_string(c.target.kind));
        s->read("kind", kind);
        c.target.kind = arch_kind_from_string(kind);
        c.target.in_channels = 0;
        c.target.n_classes = 0;
        s->read("in_channels", c.target.in_channels);
        s->read("n_classes", c.target.n_classes);
        s->read("widths", c.target.widths);
        s->read("kernel", c.target.kernel);
        s->read("dilations", c.target.dilations);
        s->read("dropout", c.target.dropout);
        s->finish();
    } else {
        c.target.in_channels = 0;
        c.target.n_classes = 0;
    }
    if (auto s = root.child("generator")) {
        s->read("widths", c.generator.widths);
        s->read("kernel", c.generator.kernel);
        s->read("leaky_slope", c.generator.leaky_slope);
        s->read("bn_momentum", c.generator.bn_momentum);
        s->read("bn_eps", c.generator.bn_eps);
        s->finish();
    }
    if (auto s = root.child("schedule")) {
        s->read("epochs", c.schedule.epochs);
        s->read("batch_size", c.schedule.batch_size);
        s->read("epochs_target_alone", c.schedule.epochs_target_alone);
        s->read("gan_steps_per_task_step", c.schedule.gan_steps_per_task_step);
        s->read("adversarial_steps_per_task_step", c.schedule.adversarial_steps_per_task_step);
        s->read("skip_attack_probability", c.schedule.skip_attack_probability);
        s->read("replay_probability", c.schedule.replay_probability);
        s->finish();
    }
    if (auto s = root.child("optimizer")) {
        if (auto t = s->child("target")) parse_adam(*t, c.target_optimizer);
        if (auto g = s->child("generator")) parse_adam(*g, c.generator_optimizer);
        s->finish();
    }
    if (auto s = root.child("diversity")) {
        s->read("m", c.diversity.m);
        s->read("comparison_size", c.diversity.comparison_size);
        s->finish();
    }

    auto data = root.child("data");
    if (!data) throw ConfigError("config.data is required");
    auto id = data->child("id");
    if (!id) throw ConfigError("config.data.id is required");
    c.id = parse_dataset(*id, base_dir, "id");
    if (auto s = data->child("split")) {
        s->read("train_fraction", c.split.train_fraction);
        s->read("validation_fraction", c.split.validation_fraction);
        s->read("seed", c.split.seed);
        s->finish();
    }
    if (const json* ood = data->raw("ood")) {
        if (!ood->is_array()) throw ConfigError("config.data.ood must be an array");
        for (std::size_t i = 0; i < ood->size(); ++i) {
            const std::string where = "config.data.ood." + std::to_string(i);
            c.ood.push_back(parse_dataset(Section((*ood)[i], where), base_dir, "ood" + std::to_string(i)));
        }
    }
    data->finish();

    if (auto s = root.child("eval")) {
        std::vector<std::string> methods;
        s->read("methods", methods);
        if (s->raw("methods")) {
            c.methods.clear();
            for (const auto& m : methods) c.methods.push_back(eval::method_from_string(m));
            if (c.methods.empty()) throw ConfigError("config.eval.methods must not be empty");
        }
        s->read("confidence_thresholds", c.eval.confidence_thresholds);
        s->read("tpr_targets", c.eval.tpr_targets);
        s->read("histogram_bins", c.eval.histogram_bins);
        if (auto mc = s->child("mc_dropout")) {
            mc->read("realizations", c.eval.mc_dropout.realizations);
            mc->read("rate", c.eval.mc_dropout.rate);
            mc->finish();
        }
        s->finish();
    }
    root.finish();

    c.target.seed = c.seed;
    c.generator.seed = c.seed;
    c.schedule.seed = c.seed;
    c.eval.mc_dropout.seed = c.seed;
    c.schedule.validate();
    return c;
}

RunConfig load_run_config(const fs::path& path, const ConfigOverrides& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    json document = json::parse(in, nullptr, false);
    if (document.is_discarded()) throw ConfigError("config '" + path.string() + "' is not valid JSON");
    for (const auto& a : overrides.assignments) apply_override(document, a);
    if (overrides.seed) document["seed"] = *overrides.seed;
    RunConfig c = parse_run_config(document, path.parent_path());
    if (overrides.output_dir) c.output_dir = *overrides.output_dir;
    return c;
}

nlohmann::ordered_json to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["mode"] = std::string(to_string(c.mode));
    j["seed"] = c.seed;
    j["threshold"] = c.threshold;
    j["attack_count"] = c.attack_count;
    j["output_dir"] = c.output_dir.string();
    j["target"] = {{"kind", std::string(to_string(c.target.kind))},
                   {"in_channels", c.target.in_channels},
                   {"n_classes", c.target.n_classes},
                   {"widths", c.target.widths},
                   {"kernel", c.target.kernel},
                   {"dilations", c.target.dilations},
                   {"dropout", c.target.dropout}};
    j["generator"] = {{"widths", c.generator.widths},
                      {"kernel", c.generator.kernel},
                      {"leaky_slope", c.generator.leaky_slope},
                      {"bn_momentum", c.generator.bn_momentum},
                      {"bn_eps", c.generator.bn_eps}};
    j["schedule"] = {{"epochs", c.schedule.epochs},
                     {"batch_size", c.schedule.batch_size},
                     {"epochs_target_alone", c.schedule.epochs_target_alone},
                     {"gan_steps_per_task_step", c.schedule.gan_steps_per_task_step},
                     {"adversarial_steps_per_task_step", c.schedule.adversarial_steps_per_task_step},
                     {"skip_attack_probability", c.schedule.skip_attack_probability},
                     {"replay_probability", c.schedule.replay_probability}};
    j["optimizer"] = {{"target", adam_json(c.target_optimizer)}, {"generator", adam_json(c.generator_optimizer)}};
    j["diversity"] = {{"m", c.diversity.m}, {"comparison_size", c.diversity.comparison_size}};
    nlohmann::ordered_json data;
    data["id"] = dataset_json(c.id);
    data["split"] = {{"train_fraction", c.split.train_fraction},
                     {"validation_fraction", c.split.validation_fraction},
                     {"seed", c.split.seed}};
    data["ood"] = nlohmann::ordered_json::array();
    for (const auto& o : c.ood) data["ood"].push_back(dataset_json(o));
    j["data"] = std::move(data);
    std::vector<std::string> methods;
    for (auto m : c.methods) methods.emplace_back(eval::to_string(m));
    j["eval"] = {{"methods", methods},
                 {"confidence_thresholds", c.eval.confidence_thresholds},
                 {"tpr_targets", c.eval.tpr_targets},
                 {"histogram_bins", c.eval.histogram_bins},
                 {"mc_dropout", {{"realizations", c.eval.mc_dropout.realizations}, {"rate", c.eval.mc_dropout.rate}}}};
    return j;
}

}  // namespace trustgan::cli
