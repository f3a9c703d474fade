#include "floodseg/dataset.hpp"

#include <cmath>
#include <stdexcept>

namespace floodseg::dataset {

namespace {

std::size_t band_index(const BandStats& s, const std::string& band) {
    for (std::size_t i = 0; i < s.bands.size(); ++i) {
        if (s.bands[i] == band) return i;
    }
    throw BandMissingError(band);
}

}  // namespace

double BandStats::mean_of(const std::string& band) const { return mean[band_index(*this, band)]; }
double BandStats::stddev_of(const std::string& band) const { return stddev[band_index(*this, band)]; }

BandStats compute_band_stats(const std::vector<Raster>& rasters, const std::vector<std::string>& bands) {
    if (rasters.empty()) throw std::invalid_argument("compute_band_stats: no rasters");
    BandStats s;
    s.bands = bands;
    for (const auto& b : bands) {
        double sum = 0, sq = 0;
        std::size_t n = 0;
        for (const auto& r : rasters) {
            for (float v : r.band(b)) {
                if (r.is_nodata(v)) continue;
                sum += v;
                ++n;
            }
        }
        if (n == 0) throw std::invalid_argument("compute_band_stats: band " + b + " has no valid samples");
        const double mean = sum / static_cast<double>(n);
        for (const auto& r : rasters) {
            for (float v : r.band(b)) {
                if (!r.is_nodata(v)) sq += (v - mean) * (v - mean);
            }
        }
        s.mean.push_back(mean);
        s.stddev.push_back(std::max(std::sqrt(sq / static_cast<double>(n)), 1e-6));
    }
    return s;
}

std::vector<std::string> input_bands(bool use_nir) {
    std::vector<std::string> b{bands::kRed, bands::kGreen, bands::kBlue};
    if (use_nir) b.emplace_back(bands::kNir);
    return b;
}

Tensor normalized_input(const Raster& raster, const BandStats& stats, const std::vector<std::string>& names) {
    const std::size_t n = raster.pixels();
    std::vector<double> data;
    data.reserve(names.size() * n);
    for (const auto& b : names) {
        const double m = stats.mean_of(b), sd = stats.stddev_of(b);
        for (float v : raster.band(b)) data.push_back(raster.is_nodata(v) ? 0.0 : (v - m) / sd);
    }
    return Tensor({1, names.size(), raster.height, raster.width}, std::move(data));
}

Tensor swir_target(const Raster& raster) {
    const auto& s = raster.band(bands::kSwir2);
    return Tensor({1, 1, raster.height, raster.width}, std::vector<double>(s.begin(), s.end()));
}

Tensor stack(const std::vector<Tensor>& items) {
    if (items.empty()) throw ShapeError("stack: no tensors");
    Shape shape = items.front().shape();
    std::vector<double> data;
    for (const auto& t : items) {
        if (t.ndim() != 4 || t.dim(0) != 1 || t.dim(1) != shape[1] || t.dim(2) != shape[2] || t.dim(3) != shape[3]) {
            throw ShapeError("stack: " + shape_str(t.shape()) + " does not match " + shape_str(shape));
        }
        data.insert(data.end(), t.data().begin(), t.data().end());
    }
    shape[0] = items.size();
    return Tensor(shape, std::move(data));
}

Ingested ingest(const std::filesystem::path& path, const BandStats& stats, bool use_nir) {
    Ingested out;
    out.raw = raster_file::read(path);
    out.input = normalized_input(out.raw, stats, input_bands(use_nir));
    return out;
}

}  // namespace floodseg::dataset
