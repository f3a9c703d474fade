#include "floodseg/raster.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <sstream>

#include "floodseg/io.hpp"

namespace floodseg {

BandMissingError::BandMissingError(const std::string& band)
    : std::runtime_error("raster has no band '" + band + "'"), band_(band) {}

bool Raster::has_band(const std::string& name) const {
    return std::find(band_names.begin(), band_names.end(), name) != band_names.end();
}

const std::vector<float>& Raster::band(const std::string& name) const {
    auto it = std::find(band_names.begin(), band_names.end(), name);
    if (it == band_names.end()) throw BandMissingError(name);
    return planes[static_cast<std::size_t>(it - band_names.begin())];
}

std::vector<float>& Raster::band(const std::string& name) {
    return const_cast<std::vector<float>&>(static_cast<const Raster&>(*this).band(name));
}

void Raster::add_band(std::string name, std::vector<float> plane) {
    if (plane.size() != pixels()) {
        throw std::invalid_argument("band " + name + " has " + std::to_string(plane.size()) + " samples, expected " +
                                    std::to_string(pixels()));
    }
    if (name.empty() || name.find_first_of(" \t\n") != std::string::npos) {
        throw std::invalid_argument("band names must be non-empty and whitespace-free");
    }
    if (has_band(name)) throw std::invalid_argument("duplicate band " + name);
    band_names.push_back(std::move(name));
    planes.push_back(std::move(plane));
}

bool Raster::is_nodata(float v) const {
    if (!nodata) return false;
    if (std::isnan(*nodata)) return std::isnan(v);
    return v == *nodata;
}

std::size_t Mask::count(Label l) const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), l)); }

namespace raster_file {

namespace {

std::string float_repr(float v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

class HeaderReader {
public:
    explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    // Returns the next line (without '\n') and its starting offset.
    std::pair<std::string, std::size_t> line() {
        const std::size_t start = pos_;
        auto end = std::find(bytes_.begin() + static_cast<long>(pos_), bytes_.end(), '\n');
        if (end == bytes_.end()) throw io::FormatError("raster header truncated", bytes_.size());
        std::string text(bytes_.begin() + static_cast<long>(pos_), end);
        pos_ = static_cast<std::size_t>(end - bytes_.begin()) + 1;
        return {text, start};
    }

    std::vector<std::string> fields(const std::string& key) {
        auto [text, at] = line();
        std::istringstream is(text);
        std::string k;
        is >> k;
        if (k != key) throw io::FormatError("expected header key '" + key + "', found '" + k + "'", at);
        std::vector<std::string> out;
        for (std::string f; is >> f;) out.push_back(f);
        last_ = at;
        return out;
    }

    std::size_t number(const std::string& key) {
        auto f = fields(key);
        std::size_t v = 0;
        if (f.size() != 1 || std::from_chars(f[0].data(), f[0].data() + f[0].size(), v).ec != std::errc()) {
            throw io::FormatError("header key '" + key + "' needs one integer", last_);
        }
        return v;
    }

    std::size_t pos() const { return pos_; }
    std::size_t last() const { return last_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0, last_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode(const Raster& raster) {
    if (raster.planes.size() != raster.band_names.size()) throw std::invalid_argument("band name/plane count mismatch");
    std::ostringstream h;
    h << "FSRASTER\n"
      << "version " << kVersion << "\n"
      << "width " << raster.width << "\n"
      << "height " << raster.height << "\n"
      << "bands " << raster.band_names.size() << "\n"
      << "band_names";
    for (const auto& n : raster.band_names) h << ' ' << n;
    h << "\ndtype f32\n"
      << "nodata " << (raster.nodata ? float_repr(*raster.nodata) : std::string("none")) << "\n"
      << "end\n";
    const std::string header = h.str();
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + 4 * raster.planes.size() * raster.pixels());
    for (const auto& plane : raster.planes) {
        if (plane.size() != raster.pixels()) throw std::invalid_argument("band plane size mismatch");
        for (float v : plane) io::put_f32(out, v);
    }
    return out;
}

Raster decode(std::span<const std::uint8_t> bytes) {
    HeaderReader r(bytes);
    {
        auto [magic, at] = r.line();
        if (magic != "FSRASTER") throw io::FormatError("bad raster magic", at);
    }
    const auto version = r.number("version");
    if (version != static_cast<std::size_t>(kVersion)) {
        throw io::FormatError("unsupported raster version " + std::to_string(version), r.last());
    }
    const auto width = r.number("width");
    const auto height = r.number("height");
    Raster raster(width, height);
    const auto count = r.number("bands");
    auto names = r.fields("band_names");
    if (names.size() != count) {
        throw io::FormatError("header lists " + std::to_string(names.size()) + " band names for " +
                                  std::to_string(count) + " bands",
                              r.last());
    }
    auto dtype = r.fields("dtype");
    if (dtype.size() != 1 || dtype[0] != "f32") throw io::FormatError("unsupported dtype", r.last());
    auto nodata = r.fields("nodata");
    if (nodata.size() != 1) throw io::FormatError("nodata needs one value", r.last());
    if (nodata[0] == "nan") {
        raster.nodata = std::numeric_limits<float>::quiet_NaN();
    } else if (nodata[0] != "none") {
        float v = 0;
        const auto& s = nodata[0];
        if (std::from_chars(s.data(), s.data() + s.size(), v).ec != std::errc()) {
            throw io::FormatError("unparsable nodata value '" + s + "'", r.last());
        }
        raster.nodata = v;
    }
    if (!r.fields("end").empty()) throw io::FormatError("unexpected tokens after end", r.last());

    const std::size_t payload = r.pos();
    const std::size_t expected = 4 * count * raster.pixels();
    const std::size_t actual = bytes.size() - payload;
    if (actual != expected) {
        throw io::FormatError("raster payload size mismatch: expected " + std::to_string(expected) + " bytes, got " +
                                  std::to_string(actual),
                              payload + std::min(actual, expected));
    }
    for (std::size_t b = 0; b < count; ++b) {
        std::vector<float> plane(raster.pixels());
        const std::uint8_t* base = bytes.data() + payload + 4 * b * raster.pixels();
        for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = io::get_f32(base + 4 * i);
        raster.band_names.push_back(names[b]);
        raster.planes.push_back(std::move(plane));
    }
    return raster;
}

void write(const std::filesystem::path& path, const Raster& raster) { io::atomic_write(path, encode(raster)); }

Raster read(const std::filesystem::path& path) { return decode(io::read_file(path)); }

Raster from_mask(const Mask& mask) {
    Raster r(mask.width, mask.height);
    std::vector<float> plane(mask.labels.size());
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = static_cast<float>(static_cast<int>(mask.labels[i]));
    r.add_band("MASK", std::move(plane));
    r.nodata = 255.0f;
    return r;
}

Mask to_mask(const Raster& raster) {
    if (raster.planes.size() != 1) throw std::invalid_argument("mask raster must have exactly one band");
    Mask m(raster.width, raster.height);
    const auto& plane = raster.planes[0];
    for (std::size_t i = 0; i < plane.size(); ++i) {
        const float v = plane[i];
        if (v == 1.0f) {
            m.labels[i] = Label::Water;
        } else if (v == 0.0f) {
            m.labels[i] = Label::NonWater;
        } else if (v == 255.0f || raster.is_nodata(v)) {
            m.labels[i] = Label::Ignore;
        } else {
            throw std::invalid_argument("mask raster holds non-label value " + std::to_string(v));
        }
    }
    return m;
}

}  // namespace raster_file

}  // namespace floodseg
