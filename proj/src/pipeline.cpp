#include "floodseg/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <sstream>
#include <thread>

#include "floodseg/checkpoint.hpp"
#include "floodseg/indices.hpp"
#include "floodseg/io.hpp"
#include "floodseg/png.hpp"

extern char** environ;

namespace floodseg::pipeline {

using json = nlohmann::ordered_json;

namespace {

constexpr const char* kEnvPrefix = "FLOODSEG_";

// Structural merge of `input` into the defaults tree. Keys must exist in the
// defaults and leaves must keep their JSON type (an integer default only
// accepts integers).
void merge_checked(json& base, const json& input, const std::string& path) {
    if (!input.is_object()) throw ConfigError("config section '" + path + "' must be an object");
    for (auto it = input.begin(); it != input.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
        json& slot = base[it.key()];
        const json& v = it.value();
        if (key == "normalization") {
            slot = v;
        } else if (slot.is_object()) {
            merge_checked(slot, v, key);
        } else if (slot.is_boolean()) {
            if (!v.is_boolean()) throw ConfigError("config key '" + key + "' must be a boolean");
            slot = v;
        } else if (slot.is_number_integer()) {
            if (!v.is_number_integer()) throw ConfigError("config key '" + key + "' must be an integer");
            if (slot.is_number_unsigned() && v.get<long long>() < 0) {
                throw ConfigError("config key '" + key + "' must be non-negative");
            }
            slot = v;
        } else if (slot.is_number()) {
            if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
            slot = v.get<double>();
        } else if (slot.is_array()) {
            if (!v.is_array()) throw ConfigError("config key '" + key + "' must be an array");
            for (const auto& e : v) {
                if (!e.is_number_unsigned()) throw ConfigError("config key '" + key + "' must hold non-negative integers");
            }
            slot = v;
        } else {
            slot = v;
        }
    }
}

json normalization_json(const Normalization& n) {
    json j;
    j["bands"] = n.bands.bands;
    j["mean"] = n.bands.mean;
    j["stddev"] = n.bands.stddev;
    j["swir_mean"] = n.swir.mean;
    j["swir_stddev"] = n.swir.stddev;
    return j;
}

Normalization normalization_from(const json& j) {
    if (!j.is_object()) throw ConfigError("normalization must be an object or null");
    for (auto it = j.begin(); it != j.end(); ++it) {
        static const std::vector<std::string> keys{"bands", "mean", "stddev", "swir_mean", "swir_stddev"};
        if (std::find(keys.begin(), keys.end(), it.key()) == keys.end()) {
            throw ConfigError("unknown config key 'normalization." + it.key() + "'");
        }
    }
    Normalization n;
    try {
        n.bands.bands = j.at("bands").get<std::vector<std::string>>();
        n.bands.mean = j.at("mean").get<std::vector<double>>();
        n.bands.stddev = j.at("stddev").get<std::vector<double>>();
        n.swir.mean = j.at("swir_mean").get<double>();
        n.swir.stddev = j.at("swir_stddev").get<double>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("normalization: ") + e.what());
    }
    if (n.bands.mean.size() != n.bands.bands.size() || n.bands.stddev.size() != n.bands.bands.size()) {
        throw ConfigError("normalization: bands, mean and stddev differ in length");
    }
    for (double s : n.bands.stddev) {
        if (!(s > 0)) throw ConfigError("normalization: stddev must be positive");
    }
    if (!(n.swir.stddev > 0)) throw ConfigError("normalization: swir_stddev must be positive");
    return n;
}

json config_tree(const PipelineConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["use_nir"] = c.use_nir;
    const auto& d = c.data;
    j["data"] = {{"scenes", d.scenes},           {"tile", d.tile},
                 {"train", d.train},             {"val", d.val},
                 {"test", d.test},               {"blob_count", d.blob_count},
                 {"meander_count", d.meander_count}, {"shadows", d.shadows},
                 {"shadow_count", d.shadow_count}, {"boundary_band", d.boundary_band},
                 {"boundary_std", d.boundary_std}};
    const auto& r = c.refiner;
    j["refiner"] = {{"k_iterations", r.k_iterations}, {"learning_rate", r.learning_rate},
                    {"phi_high", r.phi_high},         {"phi_low", r.phi_low},
                    {"max_per_class", r.max_per_class}, {"width", r.width},
                    {"eps", r.eps},                   {"adaptive", r.adaptive},
                    {"coarse_threshold", r.coarse_threshold}};
    const auto& g = c.gan;
    j["gan"] = {{"generator_width", g.generator_width},
                {"discriminator_width", g.discriminator_width},
                {"dropout", g.dropout},
                {"lr_generator", g.lr_generator},
                {"lr_discriminator", g.lr_discriminator},
                {"min_lr_fraction", g.min_lr_fraction},
                {"lambda_g", g.lambda_g},
                {"lambda_d", g.lambda_d},
                {"lambda_f", g.lambda_f},
                {"batch_size", g.batch_size},
                {"warmup_epochs", g.warmup_epochs},
                {"adversarial_epochs", g.adversarial_epochs}};
    const auto& s = c.seg;
    j["seg"] = {{"widths", s.widths},
                {"lr_segmentor", s.lr_segmentor},
                {"lr_generator", s.lr_generator},
                {"min_lr_fraction", s.min_lr_fraction},
                {"batch_size", s.batch_size},
                {"joint_epochs", s.joint_epochs},
                {"use_swir", s.use_swir},
                {"freeze_generator", s.freeze_generator},
                {"cache_refined", s.cache_refined},
                {"coarse_supervision", s.coarse_supervision}};
    j["normalization"] = c.normalization ? normalization_json(*c.normalization) : json(nullptr);
    return j;
}

PipelineConfig config_from_tree(const json& j) {
    PipelineConfig c;
    c.seed = j["seed"].get<std::uint64_t>();
    c.threads = j["threads"].get<std::size_t>();
    c.use_nir = j["use_nir"].get<bool>();
    const auto& d = j["data"];
    c.data.scenes = d["scenes"];
    c.data.tile = d["tile"];
    c.data.train = d["train"];
    c.data.val = d["val"];
    c.data.test = d["test"];
    c.data.blob_count = d["blob_count"];
    c.data.meander_count = d["meander_count"];
    c.data.shadows = d["shadows"];
    c.data.shadow_count = d["shadow_count"];
    c.data.boundary_band = d["boundary_band"];
    c.data.boundary_std = d["boundary_std"];
    const auto& r = j["refiner"];
    c.refiner.k_iterations = r["k_iterations"];
    c.refiner.learning_rate = r["learning_rate"];
    c.refiner.phi_high = r["phi_high"];
    c.refiner.phi_low = r["phi_low"];
    c.refiner.max_per_class = r["max_per_class"];
    c.refiner.width = r["width"];
    c.refiner.eps = r["eps"];
    c.refiner.adaptive = r["adaptive"];
    c.refiner.coarse_threshold = r["coarse_threshold"];
    const auto& g = j["gan"];
    c.gan.generator_width = g["generator_width"];
    c.gan.discriminator_width = g["discriminator_width"];
    c.gan.dropout = g["dropout"];
    c.gan.lr_generator = g["lr_generator"];
    c.gan.lr_discriminator = g["lr_discriminator"];
    c.gan.min_lr_fraction = g["min_lr_fraction"];
    c.gan.lambda_g = g["lambda_g"];
    c.gan.lambda_d = g["lambda_d"];
    c.gan.lambda_f = g["lambda_f"];
    c.gan.batch_size = g["batch_size"];
    c.gan.warmup_epochs = g["warmup_epochs"];
    c.gan.adversarial_epochs = g["adversarial_epochs"];
    const auto& s = j["seg"];
    c.seg.widths = s["widths"].get<std::vector<std::size_t>>();
    c.seg.lr_segmentor = s["lr_segmentor"];
    c.seg.lr_generator = s["lr_generator"];
    c.seg.min_lr_fraction = s["min_lr_fraction"];
    c.seg.batch_size = s["batch_size"];
    c.seg.joint_epochs = s["joint_epochs"];
    c.seg.use_swir = s["use_swir"];
    c.seg.freeze_generator = s["freeze_generator"];
    c.seg.cache_refined = s["cache_refined"];
    c.seg.coarse_supervision = s["coarse_supervision"];
    if (!j["normalization"].is_null()) c.normalization = normalization_from(j["normalization"]);
    return c;
}

void leaf_paths(const json& j, const std::string& path, std::vector<std::string>& out) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string p = path.empty() ? it.key() : path + "." + it.key();
        if (p == "normalization") continue;
        if (it.value().is_object()) {
            leaf_paths(it.value(), p, out);
        } else {
            out.push_back(p);
        }
    }
}

std::string env_name(const std::string& path) {
    std::string name = kEnvPrefix;
    for (char ch : path) name += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    return name;
}

void write_effective_config(const PipelineConfig& config, const std::filesystem::path& dir) {
    io::atomic_write(dir / "config.json", config.to_json());
}

// A manifest entry with its raw raster.
struct Tile {
    synth::ManifestEntry entry;
    Raster raw;
};

synth::Manifest load_manifest(const Paths& paths) {
    const auto path = paths.data() / "manifest.json";
    if (!std::filesystem::exists(path)) throw std::runtime_error("missing dataset manifest " + path.string());
    const auto bytes = io::read_file(path);
    return synth::Manifest::from_json(std::string(bytes.begin(), bytes.end()));
}

std::vector<synth::ManifestEntry> entries_for(const synth::Manifest& m, const std::string& split) {
    if (split == "all") return m.scenes;
    if (split != "train" && split != "val" && split != "test") throw ConfigError("unknown split '" + split + "'");
    return m.split(split);
}

std::vector<Tile> load_tiles(const Paths& paths, const std::vector<synth::ManifestEntry>& entries) {
    std::vector<Tile> out;
    for (const auto& e : entries) out.push_back({e, raster_file::read(paths.data() / e.image)});
    return out;
}

Normalization ensure_normalization(PipelineConfig& config, const Paths& paths) {
    if (config.normalization) return *config.normalization;
    const auto stored = paths.out_dir / "normalization.json";
    if (std::filesystem::exists(stored)) {
        const auto bytes = io::read_file(stored);
        config.normalization = normalization_from(json::parse(bytes.begin(), bytes.end()));
        return *config.normalization;
    }
    const auto tiles = load_tiles(paths, load_manifest(paths).split("train"));
    if (tiles.empty()) throw std::runtime_error("training split is empty");
    std::vector<Raster> rasters;
    for (const auto& t : tiles) rasters.push_back(t.raw);
    config.normalization = compute_normalization(rasters, config.use_nir);
    io::atomic_write(stored, normalization_json(*config.normalization).dump(2) + "\n");
    return *config.normalization;
}

/// Epoch-wise shuffled batches of indices, fixed by the seed.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch, std::size_t epochs,
                                                   std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(n);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t e = 0; e < epochs; ++e) {
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t i = 0; i < n; i += batch) {
            out.emplace_back(order.begin() + static_cast<long>(i), order.begin() + static_cast<long>(std::min(n, i + batch)));
        }
    }
    return out;
}

std::size_t steps_per_epoch(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

Raster probability_raster(const seg::SegPrediction& p) {
    Raster r(p.probabilities.dim(3), p.probabilities.dim(2));
    std::vector<float> plane(r.pixels());
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = static_cast<float>(p.probabilities.data()[i]);
    r.add_band("P_WATER", std::move(plane));
    return r;
}

json report_json(const metrics::Report& r) { return {{"pa", r.pa}, {"miou", r.miou}, {"fwiou", r.fwiou}}; }

}  // namespace

void PipelineConfig::validate() const {
    if (threads == 0) throw ConfigError("threads must be at least 1");
    if (data.scenes == 0) throw ConfigError("data.scenes must be positive");
    if (data.tile < 32 || data.tile % 32 != 0) throw ConfigError("data.tile must be a positive multiple of 32");
    if (data.train < 0 || data.val < 0 || data.test < 0 || std::abs(data.train + data.val + data.test - 1.0) > 1e-9) {
        throw ConfigError("data split fractions must be non-negative and sum to 1");
    }
    if (data.blob_count < 0 || data.meander_count < 0 || data.shadow_count < 0) {
        throw ConfigError("data body counts must be non-negative");
    }
    if (data.boundary_band < 0 || data.boundary_std < 0) throw ConfigError("boundary noise settings must be non-negative");
    if (gan.batch_size == 0 || seg.batch_size == 0) throw ConfigError("batch sizes must be positive");
    if (gan.warmup_epochs + gan.adversarial_epochs == 0) throw ConfigError("GAN needs at least one epoch");
    if (seg.joint_epochs == 0) throw ConfigError("seg.joint_epochs must be positive");
    if (seg.widths.size() != 5) throw ConfigError("seg.widths needs five entries");
    for (auto w : seg.widths) {
        if (w == 0) throw ConfigError("seg.widths entries must be positive");
    }
    if (gan.generator_width == 0 || gan.discriminator_width == 0 || refiner.width == 0) {
        throw ConfigError("network widths must be positive");
    }
    if (gan.dropout < 0 || gan.dropout >= 1) throw ConfigError("gan.dropout must be in [0, 1)");
    if (normalization && normalization->bands.bands != dataset::input_bands(use_nir)) {
        throw ConfigError("normalization bands do not match the network inputs");
    }
    try {
        refiner_config().validate();
        gan_config(1, 0).validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (!(seg.lr_segmentor > 0) || !(seg.lr_generator > 0)) throw ConfigError("seg learning rates must be positive");
    if (seg.min_lr_fraction < 0 || seg.min_lr_fraction > 1) throw ConfigError("seg.min_lr_fraction must be in [0, 1]");
}

std::string PipelineConfig::to_json() const { return config_tree(*this).dump(2) + "\n"; }

PipelineConfig PipelineConfig::from_json(const std::string& text) {
    json input;
    try {
        input = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    json tree = config_tree(PipelineConfig{});
    merge_checked(tree, input, "");
    auto c = config_from_tree(tree);
    c.validate();
    return c;
}

refiner::RefinerConfig PipelineConfig::refiner_config() const {
    refiner::RefinerConfig r;
    r.k_iterations = refiner.k_iterations;
    r.learning_rate = refiner.learning_rate;
    r.thresholds = {refiner.phi_high, refiner.phi_low};
    r.seed = seed;
    r.max_per_class = refiner.max_per_class;
    r.eps = refiner.eps;
    r.width = refiner.width;
    r.adaptive = refiner.adaptive;
    r.coarse_threshold = refiner.coarse_threshold;
    r.fallback_when_no_points = true;
    return r;
}

gan::GanConfig PipelineConfig::gan_config(std::uint64_t total_steps, std::uint64_t warmup_steps) const {
    gan::GanConfig g;
    g.generator_width = gan.generator_width;
    g.discriminator_width = gan.discriminator_width;
    g.dropout = gan.dropout;
    g.lr_generator = gan.lr_generator;
    g.lr_discriminator = gan.lr_discriminator;
    g.total_steps = total_steps;
    g.min_lr_fraction = gan.min_lr_fraction;
    g.warmup_steps = warmup_steps;
    g.weights = {gan.lambda_g, gan.lambda_d, gan.lambda_f};
    g.seed = seed;
    g.use_nir = use_nir;
    return g;
}

synth::SceneSpec PipelineConfig::scene_template() const {
    synth::SceneSpec s;
    s.width = s.height = data.tile;
    s.seed = seed;
    s.blob_count = data.blob_count;
    s.meander_count = data.meander_count;
    s.shadows = data.shadows;
    s.shadow_count = data.shadow_count;
    s.spectral.boundary_band = data.boundary_band;
    s.spectral.boundary_std = data.boundary_std;
    return s;
}

PipelineConfig apply_env_overrides(const PipelineConfig& config, const std::map<std::string, std::string>& env) {
    json tree = config_tree(config);
    std::vector<std::string> paths;
    leaf_paths(tree, "", paths);
    std::map<std::string, std::string> by_env;
    for (const auto& p : paths) by_env[env_name(p)] = p;

    json overrides = json::object();
    bool any = false;
    for (const auto& [name, value] : env) {
        if (name.rfind(kEnvPrefix, 0) != 0) continue;
        auto it = by_env.find(name);
        if (it == by_env.end()) throw ConfigError("unknown config environment variable " + name);
        json parsed;
        try {
            parsed = json::parse(value);
        } catch (const json::parse_error&) {
            parsed = value;
        }
        json* slot = &overrides;
        std::istringstream parts(it->second);
        std::string part;
        std::vector<std::string> keys;
        while (std::getline(parts, part, '.')) keys.push_back(part);
        for (std::size_t k = 0; k + 1 < keys.size(); ++k) slot = &(*slot)[keys[k]];
        (*slot)[keys.back()] = parsed;
        any = true;
    }
    if (!any) return config;
    try {
        merge_checked(tree, overrides, "");
    } catch (const ConfigError& e) {
        throw ConfigError(std::string(e.what()) + " (from environment)");
    }
    auto c = config_from_tree(tree);
    c.validate();
    return c;
}

std::map<std::string, std::string> process_environment() {
    std::map<std::string, std::string> out;
    for (char** e = environ; e && *e; ++e) {
        std::string kv(*e);
        const auto eq = kv.find('=');
        if (eq != std::string::npos) out[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    return out;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t count = std::max<std::size_t>(1, std::min(threads, n));
    if (count == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

Normalization compute_normalization(const std::vector<Raster>& rasters, bool use_nir) {
    Normalization n;
    n.bands = dataset::compute_band_stats(rasters, dataset::input_bands(use_nir));
    const auto swir = dataset::compute_band_stats(rasters, {bands::kSwir2});
    n.swir = {swir.mean[0], swir.stddev[0]};
    return n;
}

synth::Manifest cmd_synth_data(const PipelineConfig& config, const Paths& paths) {
    config.validate();
    auto m = synth::generate_dataset(config.scene_template(), config.data.scenes,
                                     {config.data.train, config.data.val, config.data.test}, paths.data());
    write_effective_config(config, paths.data());
    return m;
}

GanRun cmd_train_gan(PipelineConfig config, const Paths& paths) {
    config.validate();
    const auto norm = ensure_normalization(config, paths);
    const auto tiles = load_tiles(paths, load_manifest(paths).split("train"));
    if (tiles.empty()) throw std::runtime_error("training split is empty");
    const auto bands = dataset::input_bands(config.use_nir);
    std::vector<Tensor> inputs, targets;
    for (const auto& t : tiles) {
        inputs.push_back(dataset::normalized_input(t.raw, norm.bands, bands));
        targets.push_back(dataset::swir_target(t.raw));
    }
    const std::size_t spe = steps_per_epoch(tiles.size(), config.gan.batch_size);
    const auto batches = make_batches(tiles.size(), config.gan.batch_size,
                                      config.gan.warmup_epochs + config.gan.adversarial_epochs, config.seed ^ 0x6a09e667ULL);
    gan::GanTrainer trainer(config.gan_config(batches.size(), config.gan.warmup_epochs * spe));
    GanRun run;
    for (const auto& b : batches) {
        std::vector<Tensor> x, s;
        for (auto i : b) {
            x.push_back(inputs[i]);
            s.push_back(targets[i]);
        }
        const auto r = trainer.step(dataset::stack(x), dataset::stack(s));
        if (run.steps == 0) run.first_pixel = r.pixel;
        run.last_pixel = r.pixel;
        ++run.steps;
    }
    checkpoint::Archive archive;
    trainer.export_state(archive);
    checkpoint::save(paths.gan() / "gan.ckpt", archive);
    trainer.write_loss_csv(paths.gan() / "loss.csv");
    write_effective_config(config, paths.gan());
    return run;
}

std::vector<RefineRow> cmd_refine(const PipelineConfig& config, const Paths& paths, const std::string& split) {
    config.validate();
    const auto tiles = load_tiles(paths, entries_for(load_manifest(paths), split));
    if (tiles.empty()) throw std::runtime_error("split '" + split + "' is empty");

    // Per tile: threshold, two-map and adaptive confusion matrices.
    std::vector<std::array<metrics::ConfusionMatrix, 3>> cms(tiles.size());
    parallel_for(tiles.size(), config.threads, [&](std::size_t i) {
        const auto& t = tiles[i];
        const auto truth = raster_file::to_mask(raster_file::read(paths.data() / t.entry.truth));
        const auto index = indices::mndwi(t.raw);
        metrics::accumulate(cms[i][0], indices::threshold_mask(index, config.refiner.coarse_threshold), truth);
        auto rc = config.refiner_config();
        rc.seed = config.seed + i;
        for (bool adaptive : {false, true}) {
            rc.adaptive = adaptive;
            const auto result = refiner::refine(index, rc);
            metrics::accumulate(cms[i][adaptive ? 2 : 1], result.mask.labels, truth);
            if (adaptive == config.refiner.adaptive) {
                raster_file::write(paths.refine() / (t.entry.id + "_refined.fsr"), raster_file::from_mask(result.mask.labels));
                png::write_mask(paths.refine() / (t.entry.id + "_refined.png"), result.mask.labels);
            }
        }
    });

    const char* names[3] = {"MNDWI threshold", "Refiner (two distance maps)", "Refiner (adaptive distance map)"};
    std::vector<RefineRow> rows;
    json j;
    j["split"] = split;
    j["tiles"] = tiles.size();
    j["rows"] = json::array();
    std::string csv = "method,pa,miou,fwiou\n";
    for (std::size_t m = 0; m < 3; ++m) {
        metrics::ConfusionMatrix total;
        for (const auto& c : cms) total += c[m];
        rows.push_back({names[m], metrics::report(total)});
        json row = {{"method", names[m]}};
        row.update(report_json(rows.back().report));
        j["rows"].push_back(row);
        csv += std::string(names[m]) + "," + fmt(rows.back().report.pa) + "," + fmt(rows.back().report.miou) + "," +
               fmt(rows.back().report.fwiou) + "\n";
    }
    io::atomic_write(paths.refine() / "report.json", j.dump(2) + "\n");
    io::atomic_write(paths.refine() / "report.csv", csv);
    write_effective_config(config, paths.refine());
    return rows;
}

SegRun cmd_train_seg(PipelineConfig config, const Paths& paths) {
    config.validate();
    const auto norm = ensure_normalization(config, paths);
    const auto tiles = load_tiles(paths, load_manifest(paths).split("train"));
    if (tiles.empty()) throw std::runtime_error("training split is empty");

    std::optional<gan::GanTrainer> gan_trainer;
    if (config.seg.use_swir) {
        const auto ckpt = paths.gan() / "gan.ckpt";
        if (!std::filesystem::exists(ckpt)) cmd_train_gan(config, paths);
        gan_trainer.emplace(config.gan_config(1, 0));
        gan_trainer->import_state(checkpoint::load(ckpt));
    }

    const auto bands = dataset::input_bands(config.use_nir);
    std::vector<seg::Sample> samples;
    for (const auto& t : tiles) {
        samples.push_back({t.entry.id, dataset::normalized_input(t.raw, norm.bands, bands), indices::mndwi(t.raw)});
    }
    const auto batches =
        make_batches(samples.size(), config.seg.batch_size, config.seg.joint_epochs, config.seed ^ 0xbb67ae85ULL);

    seg::JointConfig jc;
    jc.use_swir = config.seg.use_swir;
    jc.freeze_generator = config.seg.freeze_generator;
    jc.cache_refined = config.seg.cache_refined;
    jc.coarse_supervision = config.seg.coarse_supervision;
    jc.lr_segmentor = config.seg.lr_segmentor;
    jc.lr_generator = config.seg.lr_generator;
    jc.total_steps = batches.size();
    jc.min_lr_fraction = config.seg.min_lr_fraction;
    jc.widths = config.seg.widths;
    jc.refiner = config.refiner_config();
    jc.swir_scale = norm.swir;
    jc.seed = config.seed;
    seg::JointTrainer trainer(jc, gan_trainer ? &*gan_trainer : nullptr);

    SegRun run;
    std::string csv = "step,lr,lr_generator,loss,fallbacks\n";
    for (const auto& b : batches) {
        std::vector<seg::Sample> batch;
        for (auto i : b) batch.push_back(samples[i]);
        const auto r = trainer.step(batch);
        if (run.steps == 0) run.first_loss = r.loss;
        run.last_loss = r.loss;
        run.fallbacks += r.fallbacks;
        ++run.steps;
        csv += std::to_string(r.step) + "," + fmt(r.lr_segmentor) + "," + fmt(r.lr_generator) + "," + fmt(r.loss) + "," +
               std::to_string(r.fallbacks) + "\n";
    }
    checkpoint::Archive archive;
    trainer.export_state(archive);
    if (gan_trainer) gan_trainer->export_state(archive);
    checkpoint::save(paths.seg() / "seg.ckpt", archive);
    io::atomic_write(paths.seg() / "loss.csv", csv);
    write_effective_config(config, paths.seg());
    return run;
}

void cmd_predict(const PipelineConfig& config_in, const Paths& paths, const std::string& split) {
    PipelineConfig config = config_in;
    config.validate();
    const auto norm = ensure_normalization(config, paths);
    const auto ckpt = paths.seg() / "seg.ckpt";
    if (!std::filesystem::exists(ckpt)) throw std::runtime_error("missing segmentation checkpoint " + ckpt.string());
    const auto archive = checkpoint::load(ckpt);
    const auto tiles = load_tiles(paths, entries_for(load_manifest(paths), split));
    const auto bands = dataset::input_bands(config.use_nir);

    // Each tile gets its own copy of the networks, loaded from the read-only
    // archive, so workers share nothing mutable.
    parallel_for(tiles.size(), config.threads, [&](std::size_t i) {
        std::mt19937_64 rng(0);
        seg::SegmentorNet net(config.seg.use_swir ? 4 : 3, config.seg.widths, rng);
        nn::StateDict seg_dict;
        net.collect("segmentor.", seg_dict);
        checkpoint::import_state(archive, "", seg_dict);
        std::optional<gan::Generator> gen;
        if (config.seg.use_swir) {
            gen.emplace(gan::generator_inputs(config.use_nir), config.gan.generator_width, rng);
            nn::StateDict g_dict;
            gen->collect("generator.", g_dict);
            checkpoint::import_state(archive, "", g_dict);
        }
        const auto& t = tiles[i];
        const auto pred = seg::predict_tile(dataset::normalized_input(t.raw, norm.bands, bands), gen ? &*gen : nullptr,
                                            net, norm.swir);
        const auto mask = pred.labels(0);
        raster_file::write(paths.predictions() / (t.entry.id + "_mask.fsr"), raster_file::from_mask(mask));
        raster_file::write(paths.predictions() / (t.entry.id + "_prob.fsr"), probability_raster(pred));
        png::write_mask(paths.predictions() / (t.entry.id + ".png"), mask);
    });
    write_effective_config(config, paths.predictions());
}

metrics::Report cmd_evaluate(const PipelineConfig& config, const Paths& paths, const EvalOptions& options) {
    config.validate();
    const auto pred_dir = options.pred_dir.empty() ? paths.predictions() : options.pred_dir;
    const auto truth_dir = options.truth_dir.empty() ? paths.data() : options.truth_dir;
    const auto entries = entries_for(load_manifest(paths), options.split);
    if (entries.empty()) throw std::runtime_error("split '" + options.split + "' is empty");

    std::vector<metrics::ConfusionMatrix> cms(entries.size());
    parallel_for(entries.size(), config.threads, [&](std::size_t i) {
        const auto pred_path = pred_dir / (entries[i].id + options.pred_suffix);
        const auto truth_path = truth_dir / (entries[i].id + options.truth_suffix);
        if (!std::filesystem::exists(pred_path)) throw std::runtime_error("missing prediction " + pred_path.string());
        const auto pred = raster_file::to_mask(raster_file::read(pred_path));
        const auto truth = raster_file::to_mask(raster_file::read(truth_path));
        if (pred.width != truth.width || pred.height != truth.height) {
            throw ShapeError("prediction " + pred_path.string() + " does not match its truth size");
        }
        metrics::accumulate(cms[i], pred, truth);
    });

    metrics::ConfusionMatrix total;
    json j;
    j["split"] = options.split;
    j["tiles"] = entries.size();
    j["per_tile"] = json::array();
    std::string csv = "id,pa,miou,fwiou\n";
    for (std::size_t i = 0; i < entries.size(); ++i) {
        total += cms[i];
        const auto r = metrics::report(cms[i]);
        json row = {{"id", entries[i].id}};
        row.update(report_json(r));
        j["per_tile"].push_back(row);
        csv += entries[i].id + "," + fmt(r.pa) + "," + fmt(r.miou) + "," + fmt(r.fwiou) + "\n";
    }
    const auto overall = metrics::report(total);
    json row = {{"method", options.method}};
    row.update(report_json(overall));
    j["rows"] = json::array({row});
    csv += "all," + fmt(overall.pa) + "," + fmt(overall.miou) + "," + fmt(overall.fwiou) + "\n";
    io::atomic_write(paths.eval() / "metrics.json", j.dump(2) + "\n");
    io::atomic_write(paths.eval() / "metrics.csv", csv);
    write_effective_config(config, paths.eval());
    return overall;
}

}  // namespace floodseg::pipeline
