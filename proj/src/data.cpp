#include "rsovs/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <set>

#include "rsovs/nn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace rsovs {

void CategoryRegistry::validate() const {
    std::set<std::string> seen;
    for (const auto& n : names) {
        if (n.empty()) throw ConfigError("category names must not be empty");
        if (!seen.insert(n).second) throw ConfigError("duplicate category name \"" + n + "\"");
    }
}

int64_t CategoryRegistry::index_of(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int64_t>(i);
    return -1;
}

CategoryRegistry builtin_registry(const std::string& dataset_id) {
    if (dataset_id == "isaid")
        return {dataset_id,
                {"ship", "storage tank", "baseball diamond", "tennis court", "basketball court", "ground track field",
                 "bridge", "large vehicle", "small vehicle", "helicopter", "swimming pool", "roundabout",
                 "soccer ball field", "plane", "harbor"}};
    if (dataset_id == "dlrsd")
        return {dataset_id,
                {"airplane", "bare soil", "buildings", "cars", "chaparral", "court", "dock", "field", "grass",
                 "mobile home", "pavement", "sand", "sea", "ship", "tanks", "trees", "water"}};
    if (dataset_id == "potsdam" || dataset_id == "vaihingen")
        return {dataset_id, {"impervious surfaces", "Building", "Low vegetation", "Tree", "Car", "background"}};
    throw ConfigError("unknown built-in dataset \"" + dataset_id + "\"");
}

std::string to_string(Split s) { return s == Split::Train ? "train" : "val"; }

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    throw ConfigError("unknown split \"" + s + "\"");
}

std::vector<Sample> Manifest::split(Split s) const {
    std::vector<Sample> out;
    for (const auto& x : samples)
        if (x.split == s) out.push_back(x);
    return out;
}

Manifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path.string());
    Manifest m;
    m.root = path.parent_path();
    try {
        json j = json::parse(in);
        if (j.value("format", "") != "rsovs-manifest") throw ConfigError("not a manifest (format field)");
        if (j.at("version").get<int>() != 1) throw ConfigError("unsupported manifest version");
        m.registry.dataset_id = j.at("dataset_id").get<std::string>();
        m.registry.names = j.at("categories").get<std::vector<std::string>>();
        m.ignore_index = j.value("ignore_index", kIgnoreIndex);
        for (const auto& s : j.at("samples")) {
            Sample x;
            x.id = s.at("id").get<std::string>();
            x.image = s.at("image").get<std::string>();
            x.mask = s.at("mask").get<std::string>();
            x.split = split_from_string(s.at("split").get<std::string>());
            m.samples.push_back(std::move(x));
        }
    } catch (const json::exception& e) {
        throw ConfigError("malformed manifest " + path.string() + ": " + e.what());
    }
    if (m.registry.names.empty()) throw ConfigError("manifest " + path.string() + " lists no categories");
    m.registry.validate();
    if (m.samples.empty()) throw ConfigError("manifest " + path.string() + " lists no samples");
    for (const auto& s : m.samples)
        for (const auto& p : {s.image, s.mask})
            if (!fs::exists(p.is_absolute() ? p : m.root / p))
                throw DataError("sample " + s.id + ": missing file " + (m.root / p).string());
    return m;
}

void save_manifest(const fs::path& path, const Manifest& m) {
    json j;
    j["format"] = "rsovs-manifest";
    j["version"] = 1;
    j["dataset_id"] = m.registry.dataset_id;
    j["categories"] = m.registry.names;
    j["ignore_index"] = m.ignore_index;
    j["samples"] = json::array();
    for (const auto& s : m.samples)
        j["samples"].push_back(
            {{"id", s.id}, {"image", s.image.generic_string()}, {"mask", s.mask.generic_string()}, {"split", to_string(s.split)}});
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest " + path.string());
    out << j.dump(2) << '\n';
}

LoadedSample load_sample(const Manifest& m, const Sample& s, int64_t image_side) {
    const fs::path ip = s.image.is_absolute() ? s.image : m.root / s.image;
    const fs::path mp = s.mask.is_absolute() ? s.mask : m.root / s.mask;
    const auto rgb = read_png_rgb(ip.string());
    const auto gray = read_png_gray(mp.string());
    if (rgb.dim(0) != gray.dim(0) || rgb.dim(1) != gray.dim(1))
        throw DataError("sample " + s.id + ": image " + shape_str(rgb.shape) + " and mask " + shape_str(gray.shape) +
                        " differ in size");
    for (int64_t i = 0; i < gray.numel(); ++i) {
        const int v = gray.data[i];
        if (v != m.ignore_index && v >= m.registry.size())
            throw DataError("mask " + mp.string() + ": value " + std::to_string(v) + " is not a category index");
    }
    LoadedSample out;
    out.id = s.id;
    ImageGrid full = image_from_rgb8(rgb);
    out.image = ImageGrid(bilinear_resize(full.pixels, image_side, image_side));
    out.mask = nearest_resize(gray.cast<int32_t>(), image_side, image_side);
    return out;
}

void SynthConfig::validate() const {
    if (num_images < 1) throw ConfigError("synth num_images must be positive");
    if (image_side < 1) throw ConfigError("synth image_side must be positive");
    if (num_categories < 2 || num_categories > 8) throw ConfigError("synth num_categories must be in [2, 8]");
    if (min_shapes < 1 || max_shapes < min_shapes) throw ConfigError("synth shape count range is invalid");
    if (!(scale_min > 0) || scale_max > 1 || scale_max < scale_min) throw ConfigError("synth scale range must lie in (0, 1]");
    if (val_fraction < 0 || val_fraction >= 1) throw ConfigError("synth val_fraction must be in [0, 1)");
}

namespace {

constexpr const char* kSynthNames[8] = {"background", "ship",   "storage tank",  "plane",
                                        "harbor",     "bridge", "small vehicle", "roundabout"};

constexpr double kPalette[8][3] = {{0.45, 0.42, 0.38}, {0.80, 0.15, 0.15}, {0.15, 0.30, 0.85}, {0.90, 0.85, 0.20},
                                   {0.20, 0.75, 0.80}, {0.70, 0.25, 0.75}, {0.95, 0.55, 0.10}, {0.25, 0.70, 0.20}};

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

bool covers(const ShapeRecord& s, double px, double py) {
    const double dx = px - s.center_x, dy = py - s.center_y;
    const double c = std::cos(s.angle), sn = std::sin(s.angle);
    const double u = dx * c + dy * sn;
    const double v = -dx * sn + dy * c;
    const double hu = s.length / 2, hv = s.width / 2;
    if (s.kind == ShapeKind::Ellipse) return (u * u) / (hu * hu) + (v * v) / (hv * hv) <= 1.0;
    return std::abs(u) <= hu && std::abs(v) <= hv;
}

}  // namespace

std::vector<std::string> synth_category_names(int64_t num_categories) {
    if (num_categories < 1 || num_categories > 8) throw ConfigError("synthetic category count must be in [1, 8]");
    return {kSynthNames, kSynthNames + num_categories};
}

SynthScene synth_render(const SynthConfig& cfg, int64_t index) {
    cfg.validate();
    Rng rng(splitmix64(cfg.seed) ^ splitmix64(static_cast<uint64_t>(index) + 1));
    const int64_t side = cfg.image_side;
    SynthScene scene;
    scene.rgb = Tensor<uint8_t>({side, side, 3});
    scene.mask = Tensor<uint8_t>({side, side}, 0);

    const double bg_gain = rng.uniform(0.9, 1.0);
    std::vector<double> color(side * side * 3);
    for (int64_t p = 0; p < side * side; ++p)
        for (int c = 0; c < 3; ++c) color[p * 3 + c] = kPalette[0][c] * bg_gain;

    const int64_t count = rng.uniform_int(cfg.min_shapes, cfg.max_shapes);
    const int64_t fg = cfg.num_categories - 1;
    for (int64_t k = 0; k < count; ++k) {
        ShapeRecord s;
        s.category = static_cast<int32_t>(k == 0 ? 1 + index % fg : 1 + rng.uniform_int(0, fg - 1));
        s.kind = static_cast<ShapeKind>((s.category - 1) % 3);
        s.length = rng.uniform(cfg.scale_min, cfg.scale_max) * static_cast<double>(side);
        const double aspect = s.kind == ShapeKind::Bar ? 3.5 : rng.uniform(1.0, s.kind == ShapeKind::Rectangle ? 2.0 : 1.8);
        s.width = s.length / aspect;
        s.center_x = rng.uniform(0.0, static_cast<double>(side));
        s.center_y = rng.uniform(0.0, static_cast<double>(side));
        s.angle = cfg.orientation_jitter ? rng.uniform(0.0, std::numbers::pi) : 0.0;
        const double gain = rng.uniform(0.85, 1.0);
        for (int64_t y = 0; y < side; ++y)
            for (int64_t x = 0; x < side; ++x) {
                if (!covers(s, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) continue;
                scene.mask.data[y * side + x] = static_cast<uint8_t>(s.category);
                for (int c = 0; c < 3; ++c) color[(y * side + x) * 3 + c] = kPalette[s.category][c] * gain;
            }
        scene.shapes.push_back(s);
    }
    for (size_t i = 0; i < color.size(); ++i)
        scene.rgb.data[i] = static_cast<uint8_t>(std::lround(std::clamp(color[i], 0.0, 1.0) * 255.0));
    return scene;
}

SynthSummary synth_generate(const SynthConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    fs::create_directories(out_dir / "masks", ec);
    if (ec) throw DataError("cannot create dataset directory " + out_dir.string() + ": " + ec.message());

    SynthSummary summary;
    Manifest& m = summary.manifest;
    m.registry = {"synthetic", synth_category_names(cfg.num_categories)};
    m.root = out_dir;
    summary.histogram.assign(cfg.num_categories, 0);

    const int64_t n_val = cfg.val_rotated_copy ? 0 : static_cast<int64_t>(std::lround(cfg.num_images * cfg.val_fraction));
    auto emit = [&](const std::string& id, const Tensor<uint8_t>& rgb, const Tensor<uint8_t>& mask, Split split) {
        const std::string img = "images/" + id + ".png", msk = "masks/" + id + ".png";
        write_png_rgb((out_dir / img).string(), rgb);
        write_png_gray((out_dir / msk).string(), mask);
        for (uint8_t v : mask.data) ++summary.histogram[v];
        m.samples.push_back({id, img, msk, split});
    };
    for (int64_t i = 0; i < cfg.num_images; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "img_%04lld", static_cast<long long>(i));
        const auto scene = synth_render(cfg, i);
        emit(id, scene.rgb, scene.mask, i < cfg.num_images - n_val ? Split::Train : Split::Val);
        if (cfg.val_rotated_copy)
            emit(std::string(id) + "_rot90", rotate_grid(scene.rgb, Orientation(1)), rotate_grid(scene.mask, Orientation(1)),
                 Split::Val);
    }
    save_manifest(out_dir / "manifest.json", m);
    return summary;
}

}  // namespace rsovs
