#include "floodseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "floodseg/distmap.hpp"
#include "floodseg/io.hpp"

namespace floodseg::synth {

namespace {

constexpr std::array<const char*, 5> kBands{bands::kRed, bands::kGreen, bands::kBlue, bands::kNir, bands::kSwir2};
constexpr std::size_t kGreenIdx = 1, kSwirIdx = 4;

struct Ellipse {
    double cx, cy, rx, ry, angle, wobble, phase;

    bool contains(double x, double y) const {
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = (x - cx) * c + (y - cy) * s, v = -(x - cx) * s + (y - cy) * c;
        const double theta = std::atan2(v, u);
        const double scale = 1.0 + wobble * std::sin(3.0 * theta + phase);
        return (u * u) / (rx * rx) + (v * v) / (ry * ry) <= scale * scale;
    }
};

struct Meander {
    double angle, offset, amplitude, wavelength, phase, half_width;

    bool contains(double x, double y) const {
        const double c = std::cos(angle), s = std::sin(angle);
        const double along = x * c + y * s, across = -x * s + y * c;
        const double center = offset + amplitude * std::sin(2.0 * std::numbers::pi * along / wavelength + phase);
        return std::abs(across - center) <= half_width;
    }
};

Ellipse random_ellipse(std::mt19937_64& rng, double w, double h, double rmin, double rmax) {
    std::uniform_real_distribution<double> ux(0.0, w), uy(0.0, h), ur(rmin, rmax), ua(0.0, std::numbers::pi),
        uw(0.0, 0.15), up(0.0, 2.0 * std::numbers::pi);
    Ellipse e{};
    e.cx = ux(rng);
    e.cy = uy(rng);
    e.rx = ur(rng);
    e.ry = ur(rng);
    e.angle = ua(rng);
    e.wobble = uw(rng);
    e.phase = up(rng);
    return e;
}

}  // namespace

LabeledScene generate_scene(const SceneSpec& spec) {
    if (spec.width == 0 || spec.height == 0) throw std::invalid_argument("scene size must be positive");
    if (spec.radius_min <= 0 || spec.radius_max < spec.radius_min) throw std::invalid_argument("bad radius range");
    const std::size_t w = spec.width, h = spec.height, n = w * h;
    const double wd = static_cast<double>(w), hd = static_cast<double>(h), side = std::min(wd, hd);
    std::mt19937_64 rng(spec.seed);

    std::vector<Ellipse> blobs;
    for (int i = 0; i < spec.blob_count; ++i) {
        blobs.push_back(random_ellipse(rng, wd, hd, spec.radius_min * side, spec.radius_max * side));
    }
    std::vector<Meander> meanders;
    for (int i = 0; i < spec.meander_count; ++i) {
        std::uniform_real_distribution<double> ua(0.0, std::numbers::pi), up(0.0, 2.0 * std::numbers::pi),
            uhw(spec.meander_half_width_min, spec.meander_half_width_max);
        Meander m{};
        m.angle = ua(rng);
        // Offset so the strip passes near the tile center.
        const double c = std::cos(m.angle), s = std::sin(m.angle);
        std::uniform_real_distribution<double> jitter(-0.25 * side, 0.25 * side);
        m.offset = -0.5 * wd * s + 0.5 * hd * c + jitter(rng);
        m.amplitude = spec.meander_amplitude * hd;
        m.wavelength = spec.meander_wavelength;
        m.phase = up(rng);
        m.half_width = uhw(rng);
        meanders.push_back(m);
    }
    std::vector<Ellipse> shadows;
    if (spec.shadows) {
        for (int i = 0; i < spec.shadow_count; ++i) shadows.push_back(random_ellipse(rng, wd, hd, 0.08 * side, 0.18 * side));
    }

    LabeledScene scene;
    scene.truth = Mask(w, h, Label::NonWater);
    std::vector<std::uint8_t> shadowed(n, 0);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double px = static_cast<double>(x), py = static_cast<double>(y);
            bool water = false;
            for (const auto& b : blobs) water = water || b.contains(px, py);
            for (const auto& m : meanders) water = water || m.contains(px, py);
            if (water) {
                scene.truth.labels[y * w + x] = Label::Water;
            } else {
                for (const auto& s : shadows) shadowed[y * w + x] |= s.contains(px, py) ? 1 : 0;
            }
        }
    }

    scene.corrupted.assign(n, 0);
    const auto& sp = spec.spectral;
    if (sp.boundary_band > 0) {
        std::vector<distmap::Point> water_pts, land_pts;
        for (std::size_t i = 0; i < n; ++i) {
            const distmap::Point p{static_cast<std::int32_t>(i % w), static_cast<std::int32_t>(i / w)};
            (scene.truth.labels[i] == Label::Water ? water_pts : land_pts).push_back(p);
        }
        if (!water_pts.empty() && !land_pts.empty()) {
            const auto to_water = distmap::distance_map(water_pts, w, h);
            const auto to_land = distmap::distance_map(land_pts, w, h);
            for (std::size_t i = 0; i < n; ++i) {
                const bool is_water = scene.truth.labels[i] == Label::Water;
                const double d = is_water ? to_land.values[i] : to_water.values[i];
                scene.corrupted[i] = d <= sp.boundary_band ? 1 : 0;
            }
        }
    }

    scene.raster = Raster(w, h);
    if (sp.pixel_std < 0 || sp.boundary_std < 0) throw std::invalid_argument("noise deviations must be non-negative");
    std::normal_distribution<double> noise(0.0, 1.0), edge(0.0, 1.0);
    std::vector<std::vector<float>> planes(kBands.size(), std::vector<float>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const BandMeans& mean = scene.truth.labels[i] == Label::Water ? sp.water : shadowed[i] ? sp.shadow : sp.land;
        for (std::size_t b = 0; b < kBands.size(); ++b) {
            double v = mean[b] + sp.pixel_std * noise(rng);
            if (b == kGreenIdx || b == kSwirIdx) {
                // Drawn for every pixel so the stream, and thus pixels outside
                // the band, do not depend on the noise mode.
                const double e = sp.boundary_std * edge(rng);
                if (scene.corrupted[i]) v += e;
            }
            planes[b][i] = static_cast<float>(std::max(v, 0.001));
        }
    }
    for (std::size_t b = 0; b < kBands.size(); ++b) scene.raster.add_band(kBands[b], std::move(planes[b]));
    return scene;
}

SplitCounts split_counts(std::size_t n, const SplitFractions& f) {
    if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
        throw std::invalid_argument("split fractions must be non-negative and sum to 1");
    }
    const double nd = static_cast<double>(n);
    SplitCounts c;
    // The epsilon absorbs representation error such as 0.05 * 20.
    c.val = static_cast<std::size_t>(std::floor(nd * f.val + 1e-9));
    c.test = static_cast<std::size_t>(std::floor(nd * f.test + 1e-9));
    c.train = n - c.val - c.test;
    return c;
}

std::vector<ManifestEntry> Manifest::split(const std::string& name) const {
    std::vector<ManifestEntry> out;
    for (const auto& s : scenes) {
        if (s.split == name) out.push_back(s);
    }
    return out;
}

std::string Manifest::to_json() const {
    nlohmann::ordered_json j;
    j["format_version"] = 1;
    j["width"] = width;
    j["height"] = height;
    j["seed"] = seed;
    j["scenes"] = nlohmann::ordered_json::array();
    for (const auto& s : scenes) {
        j["scenes"].push_back({{"id", s.id}, {"split", s.split}, {"image", s.image}, {"truth", s.truth}});
    }
    return j.dump(2) + "\n";
}

Manifest Manifest::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format_version").get<int>() != 1) throw std::runtime_error("unsupported manifest version");
    Manifest m;
    m.width = j.at("width").get<std::size_t>();
    m.height = j.at("height").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& s : j.at("scenes")) {
        ManifestEntry e{s.at("id").get<std::string>(), s.at("split").get<std::string>(),
                        s.at("image").get<std::string>(), s.at("truth").get<std::string>()};
        if (e.split != "train" && e.split != "val" && e.split != "test") {
            throw std::runtime_error("manifest scene " + e.id + " has unknown split " + e.split);
        }
        m.scenes.push_back(std::move(e));
    }
    return m;
}

Manifest generate_dataset(const SceneSpec& templ, std::size_t n, const SplitFractions& fractions,
                          const std::filesystem::path& dir) {
    const auto counts = split_counts(n, fractions);
    std::filesystem::create_directories(dir);
    Manifest m;
    m.width = templ.width;
    m.height = templ.height;
    m.seed = templ.seed;
    for (std::size_t i = 0; i < n; ++i) {
        SceneSpec spec = templ;
        spec.seed = templ.seed + i;
        const auto scene = generate_scene(spec);
        char id[32];
        std::snprintf(id, sizeof id, "scene_%04zu", i);
        ManifestEntry e;
        e.id = id;
        e.split = i < counts.train ? "train" : i < counts.train + counts.val ? "val" : "test";
        e.image = e.id + ".fsr";
        e.truth = e.id + "_truth.fsr";
        raster_file::write(dir / e.image, scene.raster);
        raster_file::write(dir / e.truth, raster_file::from_mask(scene.truth));
        m.scenes.push_back(std::move(e));
    }
    io::atomic_write(dir / "manifest.json", m.to_json());
    return m;
}

}  // namespace floodseg::synth
