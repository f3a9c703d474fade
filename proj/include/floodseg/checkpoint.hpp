#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "floodseg/nn.hpp"
#include "floodseg/tensor.hpp"

/// Parameter archives.
///
/// Layout (all integers little-endian):
///   bytes 0..7   magic "FSCKPT\0\n"
///   bytes 8..11  u32 format version (1)
///   bytes 12..19 u64 manifest length M
///   M bytes      UTF-8 JSON manifest:
///                {"format_version":1,"entries":[{"name","shape","dtype":"f64","offset","count"}]}
///   payload      IEEE-754 binary64 values; entry offsets are relative to the
///                payload start and counted in bytes.
namespace floodseg::checkpoint {

inline constexpr std::uint32_t kFormatVersion = 1;

struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

/// Bitwise equality of values (NaN payloads included).
bool operator==(const Entry& a, const Entry& b);

struct Archive {
    std::vector<Entry> entries;

    const Entry* find(const std::string& name) const;
    void add(std::string name, Shape shape, std::vector<double> values);
    bool operator==(const Archive&) const = default;
};


std::vector<std::uint8_t> encode(const Archive& archive);
/// Throws io::FormatError on bad magic, unsupported version, malformed
/// manifest or truncated payload.
Archive decode(std::span<const std::uint8_t> bytes);

void save(const std::filesystem::path& path, const Archive& archive);
Archive load(const std::filesystem::path& path);

/// Appends every parameter and buffer of `dict` under `prefix`.
void export_state(const nn::StateDict& dict, const std::string& prefix, Archive& archive);
/// Copies matching entries into `dict`; every name must exist with the same
/// element count.
void import_state(const Archive& archive, const std::string& prefix, nn::StateDict& dict);

}  // namespace floodseg::checkpoint
