#include "lgap/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "lgap/error.hpp"

namespace lgap::io {

namespace {

static_assert(sizeof(float) == 4);

template <class T>
T to_little_endian(T value) {
    if constexpr (std::endian::native == std::endian::little) {
        return value;
    } else {
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, &value, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
        std::memcpy(&value, bytes, sizeof(T));
        return value;
    }
}

template <class T>
std::uint64_t checksum_le(std::span<const T> values) {
    if constexpr (std::endian::native == std::endian::little) {
        return fnv1a64(std::as_bytes(values));
    } else {
        std::vector<T> le(values.begin(), values.end());
        for (auto& v : le) v = to_little_endian(v);
        return fnv1a64(std::as_bytes(std::span<const T>(le)));
    }
}

template <class T>
void write_le(const fs::path& path, std::span<const T> values) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open for writing: " + path.string());
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    } else {
        for (T v : values) {
            v = to_little_endian(v);
            out.write(reinterpret_cast<const char*>(&v), sizeof(T));
        }
    }
    if (!out) throw Error("write failed: " + path.string());
}

template <class T>
std::vector<T> read_le(const fs::path& path, std::size_t expected_count) {
    std::error_code ec;
    const auto size = fs::file_size(path, ec);
    if (ec) throw CorruptDataError("missing blob: " + path.string());
    if (size != expected_count * sizeof(T))
        throw CorruptDataError("blob " + path.filename().string() + " holds " + std::to_string(size) +
                               " bytes, manifest expects " + std::to_string(expected_count * sizeof(T)));
    std::vector<T> values(expected_count);
    std::ifstream in(path, std::ios::binary);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(size));
    if (!in) throw CorruptDataError("short read: " + path.string());
    for (auto& v : values) v = to_little_endian(v);
    return values;
}

}  // namespace

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed) noexcept {
    std::uint64_t h = seed;
    for (std::byte b : bytes) {
        h ^= static_cast<std::uint64_t>(b);
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t fnv1a64(std::string_view text) noexcept {
    return fnv1a64(std::as_bytes(std::span<const char>(text.data(), text.size())));
}

std::uint64_t checksum_f32(std::span<const float> values) { return checksum_le(values); }
std::uint64_t checksum_u32(std::span<const std::uint32_t> values) { return checksum_le(values); }

std::string hex64(std::uint64_t value) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << value;
    return os.str();
}

std::uint64_t parse_hex64(const std::string& text) {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
        v = std::stoull(text, &used, 16);
    } catch (const std::exception&) {
        throw CorruptDataError("malformed checksum: " + text);
    }
    if (used != text.size()) throw CorruptDataError("malformed checksum: " + text);
    return v;
}

void write_f32le(const fs::path& path, std::span<const float> values) { write_le(path, values); }
void write_u32le(const fs::path& path, std::span<const std::uint32_t> values) { write_le(path, values); }
std::vector<float> read_f32le(const fs::path& path, std::size_t n) { return read_le<float>(path, n); }
std::vector<std::uint32_t> read_u32le(const fs::path& path, std::size_t n) { return read_le<std::uint32_t>(path, n); }

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw Error("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open: " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

nlohmann::json read_json(const fs::path& path) {
    const std::string text = read_text(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw CorruptDataError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const nlohmann::json& value) { write_text(path, value.dump(2) + "\n"); }

void save_checkpoint(const fs::path& dir, const CheckpointInfo& info, const nn::ConstParameterRefs& params) {
    fs::create_directories(dir);
    std::vector<float> blob;
    nlohmann::json entries = nlohmann::json::array();
    for (const nn::Parameter* p : params) {
        entries.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"offset", blob.size()}});
        blob.insert(blob.end(), p->value.values().begin(), p->value.values().end());
    }
    write_f32le(dir / "params.f32le", blob);
    nlohmann::json manifest = {
        {"format", "lgap-checkpoint"},
        {"version", kCheckpointVersion},
        {"kind", info.kind},
        {"architecture", info.architecture},
        {"seed", info.seed},
        {"step", info.step},
        {"parameters", entries},
        {"param_count", blob.size()},
        {"params_checksum", hex64(checksum_f32(blob))},
    };
    write_json(dir / "manifest.json", manifest);
}

namespace {
nlohmann::json read_checkpoint_manifest(const fs::path& dir) {
    const auto manifest = read_json(dir / "manifest.json");
    if (manifest.value("format", "") != "lgap-checkpoint")
        throw CorruptDataError("not a checkpoint manifest: " + dir.string());
    const int version = manifest.value("version", -1);
    if (version != kCheckpointVersion)
        throw CorruptDataError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                               std::to_string(kCheckpointVersion) + ")");
    return manifest;
}
}  // namespace

CheckpointInfo read_checkpoint_info(const fs::path& dir) {
    const auto m = read_checkpoint_manifest(dir);
    return {m.at("kind").get<std::string>(), m.at("architecture"), m.at("seed").get<std::uint64_t>(),
            m.at("step").get<std::uint64_t>()};
}

void load_checkpoint_parameters(const fs::path& dir, const nn::ParameterRefs& params) {
    const auto m = read_checkpoint_manifest(dir);
    const auto count = m.at("param_count").get<std::size_t>();
    const auto blob = read_f32le(dir / "params.f32le", count);
    if (checksum_f32(blob) != parse_hex64(m.at("params_checksum").get<std::string>()))
        throw CorruptDataError("checkpoint parameter checksum mismatch in " + dir.string());
    const auto& entries = m.at("parameters");
    if (entries.size() != params.size())
        throw ValidationError("checkpoint holds " + std::to_string(entries.size()) + " tensors, model expects " +
                              std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& e = entries[i];
        nn::Parameter& p = *params[i];
        const auto name = e.at("name").get<std::string>();
        const auto shape = e.at("shape").get<Shape>();
        if (name != p.name || shape != p.value.shape())
            throw ValidationError("checkpoint tensor " + name + shape_str(shape) + " does not match model tensor " +
                                  p.name + shape_str(p.value.shape()));
        const auto offset = e.at("offset").get<std::size_t>();
        if (offset + p.value.numel() > blob.size()) throw CorruptDataError("checkpoint offset out of range");
        std::copy_n(blob.begin() + static_cast<std::ptrdiff_t>(offset), p.value.numel(), p.value.data());
    }
}

}  // namespace lgap::io
