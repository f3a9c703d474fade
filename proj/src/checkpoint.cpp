#include "floodseg/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <stdexcept>

#include <json.hpp>

#include "floodseg/io.hpp"

namespace floodseg::checkpoint {

namespace {
constexpr char kMagic[8] = {'F', 'S', 'C', 'K', 'P', 'T', '\0', '\n'};
constexpr std::size_t kHeader = 20;
}  // namespace

bool operator==(const Entry& a, const Entry& b) {
    if (a.name != b.name || a.shape != b.shape || a.values.size() != b.values.size()) return false;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        if (std::bit_cast<std::uint64_t>(a.values[i]) != std::bit_cast<std::uint64_t>(b.values[i])) return false;
    }
    return true;
}

const Entry* Archive::find(const std::string& name) const {
    auto it = std::find_if(entries.begin(), entries.end(), [&](const Entry& e) { return e.name == name; });
    return it == entries.end() ? nullptr : &*it;
}

void Archive::add(std::string name, Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size()) throw ShapeError("checkpoint entry " + name + ": shape/value mismatch");
    if (find(name)) throw std::invalid_argument("duplicate checkpoint entry " + name);
    entries.push_back({std::move(name), std::move(shape), std::move(values)});
}

std::vector<std::uint8_t> encode(const Archive& archive) {
    nlohmann::json manifest;
    manifest["format_version"] = kFormatVersion;
    manifest["entries"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& e : archive.entries) {
        manifest["entries"].push_back({{"name", e.name},
                                       {"shape", e.shape},
                                       {"dtype", "f64"},
                                       {"offset", offset},
                                       {"count", e.values.size()}});
        offset += 8 * e.values.size();
    }
    const std::string text = manifest.dump();
    std::vector<std::uint8_t> out(kMagic, kMagic + 8);
    io::put_u32(out, kFormatVersion);
    io::put_u64(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    out.reserve(out.size() + offset);
    for (const auto& e : archive.entries)
        for (double v : e.values) io::put_f64(out, v);
    return out;
}

Archive decode(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kHeader) throw io::FormatError("checkpoint header truncated", bytes.size());
    if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw io::FormatError("bad checkpoint magic", 0);
    const auto version = io::get_u32(bytes.data() + 8);
    if (version != kFormatVersion) {
        throw io::FormatError("unsupported checkpoint version " + std::to_string(version), 8);
    }
    const auto mlen = io::get_u64(bytes.data() + 12);
    if (mlen > bytes.size() - kHeader) {
        throw io::FormatError("manifest truncated: expected " + std::to_string(mlen) + " bytes, have " +
                                  std::to_string(bytes.size() - kHeader),
                              bytes.size());
    }
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.begin() + kHeader, bytes.begin() + kHeader + static_cast<long>(mlen));
    } catch (const nlohmann::json::exception& e) {
        throw io::FormatError(std::string("malformed manifest: ") + e.what(), kHeader);
    }
    const std::size_t payload = kHeader + mlen;
    Archive archive;
    try {
        if (manifest.at("format_version").get<std::uint32_t>() != kFormatVersion) {
            throw io::FormatError("manifest version disagrees with header", kHeader);
        }
        for (const auto& e : manifest.at("entries")) {
            if (e.at("dtype").get<std::string>() != "f64") {
                throw io::FormatError("unsupported dtype " + e.at("dtype").get<std::string>(), kHeader);
            }
            const auto offset = e.at("offset").get<std::uint64_t>();
            const auto count = e.at("count").get<std::uint64_t>();
            const std::size_t begin = payload + offset, need = begin + 8 * count;
            if (need > bytes.size()) {
                throw io::FormatError("payload truncated: entry " + e.at("name").get<std::string>() + " needs bytes up to " +
                                          std::to_string(need) + ", file has " + std::to_string(bytes.size()),
                                      bytes.size());
            }
            std::vector<double> values(count);
            for (std::size_t i = 0; i < count; ++i) values[i] = io::get_f64(bytes.data() + begin + 8 * i);
            archive.add(e.at("name").get<std::string>(), e.at("shape").get<Shape>(), std::move(values));
        }
    } catch (const nlohmann::json::exception& e) {
        throw io::FormatError(std::string("malformed manifest: ") + e.what(), kHeader);
    } catch (const ShapeError& e) {
        throw io::FormatError(e.what(), kHeader);
    }
    return archive;
}

void save(const std::filesystem::path& path, const Archive& archive) { io::atomic_write(path, encode(archive)); }

Archive load(const std::filesystem::path& path) { return decode(io::read_file(path)); }

void export_state(const nn::StateDict& dict, const std::string& prefix, Archive& archive) {
    for (const auto& p : dict.params) {
        archive.add(prefix + p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()});
    }
    for (const auto& b : dict.buffers) archive.add(prefix + b.name, {b.values->size()}, *b.values);
}

void import_state(const Archive& archive, const std::string& prefix, nn::StateDict& dict) {
    auto fetch = [&](const std::string& name, std::size_t count) -> const Entry& {
        const Entry* e = archive.find(prefix + name);
        if (!e) throw std::runtime_error("checkpoint is missing " + prefix + name);
        if (e->values.size() != count) {
            throw ShapeError("checkpoint entry " + prefix + name + " has " + std::to_string(e->values.size()) +
                             " values, expected " + std::to_string(count));
        }
        return *e;
    };
    for (auto& p : dict.params) {
        const auto& e = fetch(p.name, p.tensor.numel());
        std::copy(e.values.begin(), e.values.end(), p.tensor.mutable_data().begin());
    }
    for (auto& b : dict.buffers) {
        const auto& e = fetch(b.name, b.values->size());
        *b.values = e.values;
    }
}

}  // namespace floodseg::checkpoint
