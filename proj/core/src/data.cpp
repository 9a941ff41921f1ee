#include "trustgan/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "trustgan/checkpoint.hpp"
#include "trustgan/errors.hpp"
#include "trustgan/random.hpp"

namespace trustgan::data {

namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;
constexpr std::uint8_t kSignalMagic[4] = {'T', 'G', 'S', 'G'};
constexpr std::size_t kSignalHeader = 32;

}  // namespace

std::size_t Dataset::size() const {
    const std::size_t n = sample_numel();
    return n == 0 ? 0 : values.size() / n;
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
    if (indices.empty()) throw ContractViolation("dataset batch: empty index list");
    const std::size_t stride = sample_numel();
    std::vector<double> out(indices.size() * stride);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= size()) throw InvalidInput("dataset batch: index out of range");
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(indices[i] * stride), stride,
                    out.begin() + static_cast<std::ptrdiff_t>(i * stride));
    }
    Shape shape{indices.size()};
    shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
    return Tensor(std::move(shape), std::move(out));
}

std::vector<std::size_t> Dataset::batch_labels(std::span<const std::size_t> indices) const {
    if (!labels) throw StateError("dataset '" + name + "' has no labels");
    std::vector<std::size_t> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(labels->at(i));
    return out;
}

Tensor Dataset::all() const {
    if (empty()) throw StateError("dataset '" + name + "' is empty");
    std::vector<std::size_t> idx(size());
    std::iota(idx.begin(), idx.end(), 0);
    return batch(idx);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.name = name;
    out.sample_shape = sample_shape;
    out.n_classes = n_classes;
    out.class_names = class_names;
    const std::size_t stride = sample_numel();
    out.values.reserve(indices.size() * stride);
    if (labels) out.labels.emplace();
    for (auto i : indices) {
        if (i >= size()) throw InvalidInput("dataset subset: index out of range");
        out.values.insert(out.values.end(), values.begin() + static_cast<std::ptrdiff_t>(i * stride),
                          values.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
        if (labels) out.labels->push_back((*labels)[i]);
    }
    return out;
}

void Dataset::validate() const {
    if (sample_shape.empty() || sample_numel() == 0) throw InvalidInput("dataset '" + name + "' has no sample shape");
    if (values.size() % sample_numel() != 0) throw InvalidInput("dataset '" + name + "' holds a partial sample");
    if (labels) {
        if (labels->size() != size()) throw InvalidInput("dataset '" + name + "': label count does not match samples");
        for (auto y : *labels) {
            if (y >= n_classes) throw InvalidInput("dataset '" + name + "': label out of range");
        }
    }
}

// ---------------------------------------------------------------------------

void normalize_minmax_inplace(std::span<double> values, std::size_t sample_numel) {
    if (sample_numel == 0) return;
    for (std::size_t start = 0; start + sample_numel <= values.size(); start += sample_numel) {
        auto sample = values.subspan(start, sample_numel);
        const auto [lo, hi] = std::minmax_element(sample.begin(), sample.end());
        const double mn = *lo, mx = *hi;
        if (mx == mn) {
            std::fill(sample.begin(), sample.end(), 0.0);
            continue;
        }
        for (auto& v : sample) v = 2.0 * (v - mn) / (mx - mn) - 1.0;
    }
}

Tensor normalize_minmax(const Tensor& samples) {
    if (samples.rank() < 2) throw ContractViolation("normalize_minmax: expected [count, ...]");
    std::vector<double> values(samples.data().begin(), samples.data().end());
    normalize_minmax_inplace(values, samples.numel() / samples.dim(0));
    return Tensor(samples.shape(), std::move(values));
}

Tensor first_channel(const Tensor& samples) {
    if (samples.rank() < 3) throw ContractViolation("first_channel: expected [count, C, ...]");
    const std::size_t count = samples.dim(0), channels = samples.dim(1);
    const std::size_t plane = samples.numel() / (count * channels);
    std::vector<double> out(count * plane);
    for (std::size_t i = 0; i < count; ++i) {
        std::copy_n(samples.data().begin() + static_cast<std::ptrdiff_t>(i * channels * plane), plane,
                    out.begin() + static_cast<std::ptrdiff_t>(i * plane));
    }
    Shape shape = samples.shape();
    shape[1] = 1;
    return Tensor(std::move(shape), std::move(out));
}

Dataset first_channel(const Dataset& dataset) {
    if (dataset.sample_shape.size() < 2) throw ContractViolation("first_channel: samples need a channel axis");
    Dataset out = dataset;
    const std::size_t channels = dataset.sample_shape[0];
    const std::size_t plane = dataset.sample_numel() / channels;
    out.sample_shape[0] = 1;
    out.values.clear();
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        auto begin = dataset.values.begin() + static_cast<std::ptrdiff_t>(i * channels * plane);
        out.values.insert(out.values.end(), begin, begin + static_cast<std::ptrdiff_t>(plane));
    }
    return out;
}

// ---------------------------------------------------------------------------

Dataset load_idx(const std::filesystem::path& images_path, const std::optional<std::filesystem::path>& labels_path,
                 std::size_t n_classes) {
    const auto bytes = io::read_file(images_path);
    if (bytes.size() < 16) throw FormatError("IDX image header truncated", bytes.size());
    const std::uint32_t magic = io::get_u32_be(bytes, 0);
    if (magic != kIdxImages) throw FormatError("bad IDX image magic " + std::to_string(magic), 0);
    const std::size_t count = io::get_u32_be(bytes, 4);
    const std::size_t rows = io::get_u32_be(bytes, 8);
    const std::size_t cols = io::get_u32_be(bytes, 12);
    if (rows == 0 || cols == 0) throw FormatError("IDX image dimensions must be positive", 8);
    const std::size_t expected = 16 + count * rows * cols;
    if (bytes.size() < expected) throw FormatError("IDX image payload truncated", bytes.size());
    if (bytes.size() > expected) throw FormatError("IDX image file has trailing bytes", expected);

    Dataset ds;
    ds.name = images_path.stem().string();
    ds.sample_shape = {1, rows, cols};
    ds.values.assign(bytes.begin() + 16, bytes.end());
    normalize_minmax_inplace(ds.values, rows * cols);

    if (labels_path) {
        const auto lbytes = io::read_file(*labels_path);
        if (lbytes.size() < 8) throw FormatError("IDX label header truncated", lbytes.size());
        const std::uint32_t lmagic = io::get_u32_be(lbytes, 0);
        if (lmagic != kIdxLabels) throw FormatError("bad IDX label magic " + std::to_string(lmagic), 0);
        const std::size_t lcount = io::get_u32_be(lbytes, 4);
        if (lcount != count) {
            throw FormatError("IDX label count " + std::to_string(lcount) + " does not match image count " +
                                  std::to_string(count),
                              4);
        }
        if (lbytes.size() < 8 + lcount) throw FormatError("IDX label payload truncated", lbytes.size());
        if (lbytes.size() > 8 + lcount) throw FormatError("IDX label file has trailing bytes", 8 + lcount);
        ds.labels.emplace();
        for (std::size_t i = 0; i < lcount; ++i) {
            const std::size_t y = lbytes[8 + i];
            if (y >= n_classes) throw FormatError("IDX label " + std::to_string(y) + " out of range", 8 + i);
            ds.labels->push_back(y);
        }
        ds.n_classes = n_classes;
    }
    return ds;
}

std::vector<std::uint8_t> encode_idx_images(std::size_t count, std::size_t rows, std::size_t cols,
                                            std::span<const std::uint8_t> pixels) {
    if (pixels.size() != count * rows * cols) throw ContractViolation("encode_idx_images: pixel count mismatch");
    std::vector<std::uint8_t> out;
    for (std::uint32_t v : {kIdxImages, static_cast<std::uint32_t>(count), static_cast<std::uint32_t>(rows),
                            static_cast<std::uint32_t>(cols)}) {
        for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
    }
    out.insert(out.end(), pixels.begin(), pixels.end());
    return out;
}

std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels) {
    std::vector<std::uint8_t> out;
    for (std::uint32_t v : {kIdxLabels, static_cast<std::uint32_t>(labels.size())}) {
        for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
    }
    out.insert(out.end(), labels.begin(), labels.end());
    return out;
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_raw_signals(const Dataset& dataset, bool as_f64) {
    if (dataset.sample_shape.size() != 2) throw ContractViolation("signal container needs [channels, length] samples");
    std::vector<std::uint8_t> out(std::begin(kSignalMagic), std::end(kSignalMagic));
    io::put_u32_le(out, 1);
    io::put_u64_le(out, dataset.size());
    io::put_u32_le(out, static_cast<std::uint32_t>(dataset.sample_shape[0]));
    io::put_u64_le(out, dataset.sample_shape[1]);
    out.push_back(as_f64 ? 1 : 0);
    out.push_back(dataset.labeled() ? 1 : 0);
    out.push_back(0);
    out.push_back(0);
    if (dataset.labeled()) {
        io::put_u32_le(out, static_cast<std::uint32_t>(dataset.class_names.size()));
        for (const auto& n : dataset.class_names) {
            io::put_u32_le(out, static_cast<std::uint32_t>(n.size()));
            out.insert(out.end(), n.begin(), n.end());
        }
    }
    const std::size_t stride = dataset.sample_numel();
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (dataset.labeled()) io::put_u32_le(out, static_cast<std::uint32_t>((*dataset.labels)[i]));
        for (std::size_t k = 0; k < stride; ++k) {
            const double v = dataset.values[i * stride + k];
            if (as_f64) {
                io::put_f64_le(out, v);
            } else {
                io::put_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
            }
        }
    }
    return out;
}

Dataset decode_raw_signals(std::span<const std::uint8_t> bytes, std::size_t channels, const std::string& name,
                           bool normalize) {
    Dataset ds;
    ds.name = name;
    if (bytes.empty()) {
        ds.sample_shape = {channels, 1};
        return ds;
    }
    if (bytes.size() < kSignalHeader) throw FormatError("signal header truncated", bytes.size());
    if (!std::equal(std::begin(kSignalMagic), std::end(kSignalMagic), bytes.begin())) {
        throw FormatError("bad signal container magic", 0);
    }
    const std::uint32_t version = io::get_u32_le(bytes, 4);
    if (version != 1) throw FormatError("unsupported signal container version " + std::to_string(version), 4);
    const std::uint64_t count = io::get_u64_le(bytes, 8);
    const std::uint32_t file_channels = io::get_u32_le(bytes, 16);
    const std::uint64_t length = io::get_u64_le(bytes, 20);
    const bool is_f64 = bytes[28] != 0;
    const bool has_labels = bytes[29] != 0;
    if (file_channels != channels) {
        throw FormatError("signal container has " + std::to_string(file_channels) + " channels, expected " +
                              std::to_string(channels),
                          16);
    }
    if (length == 0) throw FormatError("signal length must be positive", 20);

    std::size_t offset = kSignalHeader;
    if (has_labels) {
        const std::uint32_t n_names = io::get_u32_le(bytes, offset);
        offset += 4;
        for (std::uint32_t i = 0; i < n_names; ++i) {
            const std::uint32_t len = io::get_u32_le(bytes, offset);
            offset += 4;
            if (offset + len > bytes.size()) throw FormatError("signal class name truncated", offset);
            ds.class_names.emplace_back(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                                        bytes.begin() + static_cast<std::ptrdiff_t>(offset + len));
            offset += len;
        }
        ds.n_classes = n_names;
        ds.labels.emplace();
    }

    const std::size_t values_per_record = channels * length;
    const std::size_t elem = is_f64 ? 8 : 4;
    const std::size_t record = values_per_record * elem + (has_labels ? 4 : 0);
    const std::size_t payload = bytes.size() - offset;
    if (payload % record != 0) {
        throw FormatError("signal payload of " + std::to_string(payload) + " bytes is not a whole number of " +
                              std::to_string(record) + "-byte records",
                          offset + (payload / record) * record);
    }
    if (payload / record != count) {
        throw FormatError("signal header announces " + std::to_string(count) + " records, payload holds " +
                              std::to_string(payload / record),
                          8);
    }

    ds.sample_shape = {channels, static_cast<std::size_t>(length)};
    ds.values.reserve(count * values_per_record);
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t pos = offset + i * record;
        if (has_labels) {
            const std::size_t y = io::get_u32_le(bytes, pos);
            if (y >= ds.n_classes) throw FormatError("signal label out of range", pos);
            ds.labels->push_back(y);
            pos += 4;
        }
        for (std::size_t k = 0; k < values_per_record; ++k) {
            const double v = is_f64 ? io::get_f64_le(bytes, pos + k * 8) : io::get_f32_le(bytes, pos + k * 4);
            if (!std::isfinite(v)) throw FormatError("non-finite signal value", pos + k * elem);
            ds.values.push_back(v);
        }
    }
    if (normalize) normalize_minmax_inplace(ds.values, values_per_record);
    return ds;
}

Dataset load_raw_signals(const std::filesystem::path& path, std::size_t channels) {
    return decode_raw_signals(io::read_file(path), channels, path.stem().string());
}

void save_raw_signals(const Dataset& dataset, const std::filesystem::path& path, bool as_f64) {
    io::write_file(path, encode_raw_signals(dataset, as_f64));
}

// ---------------------------------------------------------------------------

double blob_region_radius(double spread) { return 1.0 + 4.0 * spread; }

Dataset synth_blobs(std::size_t n_classes, std::size_t per_class, double spread, std::uint64_t seed) {
    if (n_classes < 2) throw ConfigError("synth_blobs: need at least 2 classes");
    if (!(spread >= 0.0)) throw ConfigError("synth_blobs: spread must be non-negative");
    if (blob_region_radius(spread) > kSyntheticExtent) throw ConfigError("synth_blobs: spread too large for the frame");
    Rng rng = make_rng(seed, Stream::data);
    std::normal_distribution<double> noise(0.0, 1.0);
    Dataset ds;
    ds.name = "blobs";
    ds.sample_shape = {2};
    ds.n_classes = n_classes;
    ds.labels.emplace();
    for (std::size_t c = 0; c < n_classes; ++c) ds.class_names.push_back("blob" + std::to_string(c));
    // Interleave classes so any prefix stays balanced.
    for (std::size_t i = 0; i < per_class; ++i) {
        for (std::size_t c = 0; c < n_classes; ++c) {
            const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(n_classes);
            const double x = std::cos(angle) + spread * noise(rng);
            const double y = std::sin(angle) + spread * noise(rng);
            ds.values.push_back(std::clamp(x / kSyntheticExtent, -1.0, 1.0));
            ds.values.push_back(std::clamp(y / kSyntheticExtent, -1.0, 1.0));
            ds.labels->push_back(c);
        }
    }
    return ds;
}

Dataset synth_ood_ring(std::size_t count, double r_min, double r_max, std::uint64_t seed, double blob_spread) {
    if (!(r_min > blob_region_radius(blob_spread))) {
        throw ConfigError("synth_ood_ring: inner radius " + std::to_string(r_min) + " overlaps the blob region (radius " +
                          std::to_string(blob_region_radius(blob_spread)) + ")");
    }
    if (!(r_max >= r_min)) throw ConfigError("synth_ood_ring: outer radius below inner radius");
    if (r_max > kSyntheticExtent) throw ConfigError("synth_ood_ring: outer radius exceeds the synthetic frame");
    Rng rng = make_rng(seed, Stream::data);
    Dataset ds;
    ds.name = "ring";
    ds.sample_shape = {2};
    for (std::size_t i = 0; i < count; ++i) {
        // Area-uniform radius.
        const double u = uniform01(rng);
        const double r = std::sqrt(r_min * r_min + u * (r_max * r_max - r_min * r_min));
        const double angle = 2.0 * std::numbers::pi * uniform01(rng);
        ds.values.push_back(r * std::cos(angle) / kSyntheticExtent);
        ds.values.push_back(r * std::sin(angle) / kSyntheticExtent);
    }
    return ds;
}

// ---------------------------------------------------------------------------

std::pair<Dataset, Dataset> split(const Dataset& dataset, const SplitSpec& spec) {
    if (!(spec.train_fraction > 0.0) || !(spec.validation_fraction > 0.0) ||
        spec.train_fraction + spec.validation_fraction > 1.0 + 1e-12) {
        throw ConfigError("split fractions must be positive and sum to at most 1");
    }
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(spec.seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n = static_cast<double>(dataset.size());
    const auto n_train = static_cast<std::size_t>(std::floor(spec.train_fraction * n + 1e-9));
    const auto n_val = std::min(dataset.size() - n_train,
                                static_cast<std::size_t>(std::floor(spec.validation_fraction * n + 1e-9)));
    std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> val_idx(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                                     order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    return {dataset.subset(train_idx), dataset.subset(val_idx)};
}

Dataset exclude_classes(const Dataset& dataset, const std::vector<std::string>& names, bool drop_labels) {
    if (!dataset.labeled()) throw StateError("exclude_classes: dataset '" + dataset.name + "' has no labels");
    std::vector<bool> excluded(dataset.n_classes, false);
    for (const auto& n : names) {
        auto it = std::find(dataset.class_names.begin(), dataset.class_names.end(), n);
        if (it != dataset.class_names.end()) excluded[static_cast<std::size_t>(it - dataset.class_names.begin())] = true;
    }
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (!excluded[(*dataset.labels)[i]]) keep.push_back(i);
    }
    Dataset out = dataset.subset(keep);
    if (drop_labels) {
        out.labels.reset();
        out.n_classes = 0;
    }
    return out;
}

}  // namespace trustgan::data
