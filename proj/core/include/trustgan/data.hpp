#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trustgan/tensor.hpp"

namespace trustgan::data {

/// A set of equally shaped samples stored contiguously, with optional labels.
/// Unlabeled sets (out-of-distribution inputs) carry no labels.
struct Dataset {
    std::string name;
    Shape sample_shape;
    std::vector<double> values;
    std::optional<std::vector<std::size_t>> labels;
    std::size_t n_classes = 0;
    /// Optional class names indexed by label.
    std::vector<std::string> class_names;

    std::size_t size() const;
    bool empty() const { return size() == 0; }
    std::size_t sample_numel() const { return shape_numel(sample_shape); }
    bool labeled() const { return labels.has_value(); }

    /// Samples at `indices` as a [k, sample_shape...] tensor.
    Tensor batch(std::span<const std::size_t> indices) const;
    std::vector<std::size_t> batch_labels(std::span<const std::size_t> indices) const;
    /// Every sample as one tensor. Throws StateError on an empty set.
    Tensor all() const;
    Dataset subset(std::span<const std::size_t> indices) const;

    /// Throws InvalidInput when values/labels/n_classes are inconsistent.
    void validate() const;
};

/// Per-sample min-max over every channel jointly, mapped to [-1, 1].
/// Constant samples map to all zeros. Input is [count, ...].
Tensor normalize_minmax(const Tensor& samples);
void normalize_minmax_inplace(std::span<double> values, std::size_t sample_numel);

/// [count, C, ...] -> [count, 1, ...] keeping channel 0.
Tensor first_channel(const Tensor& samples);
Dataset first_channel(const Dataset& dataset);

// ---------------------------------------------------------------------------
// IDX containers (big-endian; 0x00000803 images, 0x00000801 labels, u8 payload)

/// Images decode to [count, 1, H, W] and are min-max normalized per sample.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::optional<std::filesystem::path>& labels_path = std::nullopt, std::size_t n_classes = 10);
std::vector<std::uint8_t> encode_idx_images(std::size_t count, std::size_t rows, std::size_t cols,
                                            std::span<const std::uint8_t> pixels);
std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels);

// ---------------------------------------------------------------------------
// Raw signal container, little-endian:
//   0  "TGSG"          4  version u32 (1)
//   8  count u64      16  channels u32      20  length u64
//   28 is_f64 u8 (1: f64 payload, 0: f32)   29  has_labels u8   30 reserved u16
//   32 if has_labels: name count u32, then per name (u32 size, bytes)
//   records: [label u32 if has_labels] channels*length values, channel-major
// A zero-byte file is an empty dataset.

Dataset load_raw_signals(const std::filesystem::path& path, std::size_t channels = 2);
std::vector<std::uint8_t> encode_raw_signals(const Dataset& dataset, bool as_f64 = true);
Dataset decode_raw_signals(std::span<const std::uint8_t> bytes, std::size_t channels, const std::string& name,
                           bool normalize = true);
void save_raw_signals(const Dataset& dataset, const std::filesystem::path& path, bool as_f64 = true);

// ---------------------------------------------------------------------------
// Synthetic two-feature sets

/// Raw radius that maps to 1 after normalization.
inline constexpr double kSyntheticExtent = 3.0;

/// Radius of the region that holds the blobs for a given spread.
double blob_region_radius(double spread);

/// Gaussian clusters (isotropic std `spread`) centered on the unit circle,
/// `per_class` samples each, labels balanced, scaled by 1/kSyntheticExtent.
Dataset synth_blobs(std::size_t n_classes, std::size_t per_class, double spread, std::uint64_t seed);

/// Unlabeled samples uniform over the annulus r_min <= r <= r_max, using the
/// blobs' scaling. Requires blob_region_radius(blob_spread) < r_min and
/// r_max <= kSyntheticExtent.
Dataset synth_ood_ring(std::size_t count, double r_min, double r_max, std::uint64_t seed, double blob_spread);

// ---------------------------------------------------------------------------

struct SplitSpec {
    double train_fraction = 0.8;
    double validation_fraction = 0.2;
    std::uint64_t seed = 0;
};

/// Shuffles with the split seed, then takes floor(f * size) samples for each part.
std::pair<Dataset, Dataset> split(const Dataset& dataset, const SplitSpec& spec);

/// Drops every sample whose class name is listed; with `drop_labels` the
/// result is an unlabeled (out-of-distribution) set.
Dataset exclude_classes(const Dataset& dataset, const std::vector<std::string>& names, bool drop_labels);

}  // namespace trustgan::data
