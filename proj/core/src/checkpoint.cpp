#include "trustgan/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>

#include "trustgan/errors.hpp"

namespace trustgan {

namespace {
constexpr std::uint8_t kMagic[8] = {'T', 'G', 'C', 'K', 'P', 'T', 0, 1};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kPreamble = 8 + 4 + 8;
}  // namespace

std::string_view to_string(CheckpointTag tag) {
    switch (tag) {
        case CheckpointTag::best_of_epoch: return "best-of-epoch";
        case CheckpointTag::end_of_epoch: return "end-of-epoch";
        case CheckpointTag::target_best: return "target-best";
    }
    return "unknown";
}

CheckpointTag checkpoint_tag_from_string(std::string_view text) {
    if (text == "best-of-epoch") return CheckpointTag::best_of_epoch;
    if (text == "end-of-epoch") return CheckpointTag::end_of_epoch;
    if (text == "target-best") return CheckpointTag::target_best;
    throw InvalidInput("unknown checkpoint tag '" + std::string(text) + "'");
}

const NamedArray* ModelCheckpoint::find(std::string_view name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

bool bit_identical(const ModelCheckpoint& a, const ModelCheckpoint& b) {
    if (a.architecture != b.architecture || a.epoch != b.epoch || a.tag != b.tag) return false;
    if (a.tensors.size() != b.tensors.size()) return false;
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
        const auto& x = a.tensors[i];
        const auto& y = b.tensors[i];
        if (x.name != y.name || x.shape != y.shape || x.values.size() != y.values.size()) return false;
        if (!x.values.empty() && std::memcmp(x.values.data(), y.values.data(), x.values.size() * sizeof(double)) != 0) {
            return false;
        }
    }
    return true;
}

std::vector<std::uint8_t> encode_checkpoint(const ModelCheckpoint& checkpoint) {
    nlohmann::ordered_json header;
    header["version"] = kVersion;
    header["architecture"] = checkpoint.architecture;
    header["epoch"] = checkpoint.epoch;
    header["tag"] = std::string(to_string(checkpoint.tag));
    auto manifest = nlohmann::ordered_json::array();
    std::size_t offset = 0;
    for (const auto& t : checkpoint.tensors) {
        if (shape_numel(t.shape) != t.values.size()) {
            throw ContractViolation("checkpoint tensor '" + t.name + "' shape does not match value count");
        }
        manifest.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"count", t.values.size()}});
        offset += t.values.size() * sizeof(double);
    }
    header["manifest"] = std::move(manifest);
    const std::string text = header.dump();

    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    io::put_u32_le(out, kVersion);
    io::put_u64_le(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    out.reserve(out.size() + offset);
    for (const auto& t : checkpoint.tensors) {
        for (double v : t.values) io::put_f64_le(out, v);
    }
    return out;
}

ModelCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kPreamble) throw FormatError("checkpoint truncated before header", bytes.size());
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw FormatError("bad checkpoint magic", 0);
    const std::uint32_t version = io::get_u32_le(bytes, 8);
    if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version), 8);
    const std::uint64_t header_len = io::get_u64_le(bytes, 12);
    if (header_len > bytes.size() - kPreamble) throw FormatError("checkpoint header exceeds file", 12);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + kPreamble,
                                       bytes.begin() + static_cast<std::ptrdiff_t>(kPreamble + header_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what(), kPreamble);
    }

    ModelCheckpoint ck;
    const std::size_t payload = kPreamble + header_len;
    std::size_t end = payload;
    try {
        ck.architecture = header.at("architecture");
        ck.epoch = header.at("epoch").get<std::size_t>();
        ck.tag = checkpoint_tag_from_string(header.at("tag").get<std::string>());
        for (const auto& entry : header.at("manifest")) {
            NamedArray t;
            t.name = entry.at("name").get<std::string>();
            t.shape = entry.at("shape").get<Shape>();
            const auto offset = entry.at("offset").get<std::size_t>();
            const auto count = entry.at("count").get<std::size_t>();
            if (shape_numel(t.shape) != count) throw FormatError("manifest entry '" + t.name + "' is inconsistent", kPreamble);
            const std::size_t start = payload + offset;
            if (start + count * sizeof(double) > bytes.size()) {
                throw FormatError("checkpoint payload truncated in '" + t.name + "'", bytes.size());
            }
            t.values.resize(count);
            for (std::size_t i = 0; i < count; ++i) t.values[i] = io::get_f64_le(bytes, start + i * sizeof(double));
            end = std::max(end, start + count * sizeof(double));
            ck.tensors.push_back(std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint header is missing fields: ") + e.what(), kPreamble);
    }
    if (end != bytes.size()) throw FormatError("trailing bytes after checkpoint payload", end);
    return ck;
}

void save_checkpoint(const ModelCheckpoint& checkpoint, const std::filesystem::path& path) {
    io::write_file(path, encode_checkpoint(checkpoint));
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

namespace io {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open '" + path.string() + "'");
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InvalidInput("write failed for '" + path.string() + "'");
}

void write_text(const std::filesystem::path& path, std::string_view text) {
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64_le(std::vector<std::uint8_t>& out, double v) { put_u64_le(out, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t get_u32_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
    if (offset + 4 > bytes.size()) throw FormatError("unexpected end of data", bytes.size());
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
    return v;
}

std::uint64_t get_u64_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
    if (offset + 8 > bytes.size()) throw FormatError("unexpected end of data", bytes.size());
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[offset + i]) << (8 * i);
    return v;
}

double get_f64_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
    return std::bit_cast<double>(get_u64_le(bytes, offset));
}

float get_f32_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
    return std::bit_cast<float>(get_u32_le(bytes, offset));
}

std::uint32_t get_u32_be(std::span<const std::uint8_t> bytes, std::size_t offset) {
    if (offset + 4 > bytes.size()) throw FormatError("unexpected end of data", bytes.size());
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | bytes[offset + i];
    return v;
}

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) return "nan";
    return std::string(buf, end);
}

}  // namespace io

}  // namespace trustgan
