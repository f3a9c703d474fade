#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace floodseg {

/// Raised when an operation needs a band the raster does not carry.
class BandMissingError : public std::runtime_error {
public:
    explicit BandMissingError(const std::string& band);
    const std::string& band() const { return band_; }

private:
    std::string band_;
};

namespace bands {
inline constexpr const char* kRed = "R";
inline constexpr const char* kGreen = "G";
inline constexpr const char* kBlue = "B";
inline constexpr const char* kNir = "NIR";
inline constexpr const char* kSwir2 = "SWIR2";
}  // namespace bands

/// Multiband tile of float samples, one row-major plane per named band.
struct Raster {
    std::size_t width = 0, height = 0;
    std::vector<std::string> band_names;
    std::vector<std::vector<float>> planes;
    std::optional<float> nodata;

    Raster() = default;
    Raster(std::size_t width, std::size_t height) : width(width), height(height) {}

    std::size_t pixels() const { return width * height; }
    bool has_band(const std::string& name) const;
    const std::vector<float>& band(const std::string& name) const;
    std::vector<float>& band(const std::string& name);
    void add_band(std::string name, std::vector<float> plane);
    bool is_nodata(float v) const;
};

/// Per-pixel labels shared by coarse, refined and ground-truth masks.
enum class Label : std::uint8_t { NonWater = 0, Water = 1, Ignore = 255 };

struct Mask {
    std::size_t width = 0, height = 0;
    std::vector<Label> labels;

    Mask() = default;
    Mask(std::size_t width, std::size_t height, Label fill = Label::NonWater)
        : width(width), height(height), labels(width * height, fill) {}
    Label at(std::size_t x, std::size_t y) const { return labels[y * width + x]; }
    std::size_t count(Label l) const;
};

/// Band-sequential raster file.
///
/// A text header of "key value" lines terminated by "end\n":
///   FSRASTER
///   version 1
///   width <W>
///   height <H>
///   bands <N>
///   band_names <name> ... (N names, whitespace-free)
///   dtype f32
///   nodata none | <shortest round-trip float>
///   end
/// followed by N*W*H little-endian binary32 samples, band after band.
namespace raster_file {

inline constexpr int kVersion = 1;

std::vector<std::uint8_t> encode(const Raster& raster);
/// Throws io::FormatError with the byte offset of the failure.
Raster decode(std::span<const std::uint8_t> bytes);

void write(const std::filesystem::path& path, const Raster& raster);
Raster read(const std::filesystem::path& path);

/// One-band raster holding a mask: 0 non-water, 1 water, 255 ignore (nodata).
Raster from_mask(const Mask& mask);
Mask to_mask(const Raster& raster);

}  // namespace raster_file

}  // namespace floodseg
