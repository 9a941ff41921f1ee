#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "trustgan/tensor.hpp"

namespace trustgan {

enum class CheckpointTag { best_of_epoch, end_of_epoch, target_best };

std::string_view to_string(CheckpointTag tag);
CheckpointTag checkpoint_tag_from_string(std::string_view text);

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> values;

    friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

/// Value snapshot of a model: every parameter and buffer, plus the
/// architecture descriptor needed to rebuild it.
struct ModelCheckpoint {
    nlohmann::json architecture;
    std::vector<NamedArray> tensors;
    std::size_t epoch = 0;
    CheckpointTag tag = CheckpointTag::end_of_epoch;

    const NamedArray* find(std::string_view name) const;
};

bool bit_identical(const ModelCheckpoint& a, const ModelCheckpoint& b);

// Container layout:
//   bytes 0..7   magic "TGCKPT\0\1"
//   bytes 8..11  format version (u32 LE)
//   bytes 12..19 header length H (u64 LE)
//   H bytes      JSON header {version, architecture, epoch, tag,
//                 manifest: [{name, shape, offset, count}]}
//   payload      little-endian IEEE-754 doubles; manifest offsets are
//                relative to the first payload byte
std::vector<std::uint8_t> encode_checkpoint(const ModelCheckpoint& checkpoint);
ModelCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const ModelCheckpoint& checkpoint, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

// Small helpers shared by the binary containers.
namespace io {
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, std::string_view text);
void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v);
void put_f64_le(std::vector<std::uint8_t>& out, double v);
std::uint32_t get_u32_le(std::span<const std::uint8_t> bytes, std::size_t offset);
std::uint64_t get_u64_le(std::span<const std::uint8_t> bytes, std::size_t offset);
double get_f64_le(std::span<const std::uint8_t> bytes, std::size_t offset);
float get_f32_le(std::span<const std::uint8_t> bytes, std::size_t offset);
std::uint32_t get_u32_be(std::span<const std::uint8_t> bytes, std::size_t offset);
/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
}  // namespace io

}  // namespace trustgan
