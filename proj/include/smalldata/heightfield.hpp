#pragma once

// Height-profile data model and the seeded synthetic defect generator.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "smalldata/error.hpp"
#include "smalldata/labels.hpp"
#include "smalldata/rng.hpp"

namespace smalldata {

/// Sensor calibration of a height-profile raster.
struct Calibration {
    double z_microns_per_gray = 1.77;
    double x_mm_per_px = 0.041;
    double y_mm_per_px = 0.4;
    int tape_height_gray = 79;
    double tape_width_mm = 12.54;

    double tape_thickness_microns() const noexcept { return tape_height_gray * z_microns_per_gray; }

    void validate() const {
        if (!(z_microns_per_gray > 0.0) || !(x_mm_per_px > 0.0) || !(y_mm_per_px > 0.0) ||
            tape_height_gray <= 0 || !(tape_width_mm > 0.0)) {
            throw ConfigError("calibration: all fields must be strictly positive");
        }
    }

    friend bool operator==(const Calibration&, const Calibration&) = default;
};

/// Row-major 16-bit height raster.
class HeightImage {
public:
    HeightImage() = default;

    HeightImage(int width_px, int height_px, std::vector<std::uint16_t> pixels, Calibration calibration = {})
        : width_(width_px), height_(height_px), pixels_(std::move(pixels)), calibration_(calibration) {
        if (width_ <= 0 || height_ <= 0) {
            throw DimensionError("height image: dimensions must be positive, got " + std::to_string(width_) + "x" +
                                 std::to_string(height_));
        }
        if (pixels_.size() != static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_)) {
            throw DimensionError("height image: pixel count " + std::to_string(pixels_.size()) +
                                 " does not match " + std::to_string(width_) + "x" + std::to_string(height_));
        }
        calibration_.validate();
    }

    /// Image filled with a single gray level.
    static HeightImage filled(int width_px, int height_px, std::uint16_t level, Calibration calibration = {}) {
        const auto n = static_cast<std::size_t>(std::max(width_px, 0)) * static_cast<std::size_t>(std::max(height_px, 0));
        return HeightImage(width_px, height_px, std::vector<std::uint16_t>(n, level), calibration);
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return pixels_.size(); }
    bool empty() const noexcept { return pixels_.empty(); }

    std::span<const std::uint16_t> pixels() const noexcept { return pixels_; }
    std::span<std::uint16_t> pixels() noexcept { return pixels_; }

    std::uint16_t at(int x, int y) const { return pixels_[index(x, y)]; }
    std::uint16_t& at(int x, int y) { return pixels_[index(x, y)]; }

    const Calibration& calibration() const noexcept { return calibration_; }

    friend bool operator==(const HeightImage&, const HeightImage&) = default;

private:
    std::size_t index(int x, int y) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint16_t> pixels_;
    Calibration calibration_;
};

struct PhysicalExtent {
    double width_mm = 0.0;
    double length_mm = 0.0;
    double z_range_microns = 0.0;
};

inline PhysicalExtent physical_extent(const HeightImage& img) {
    const auto& cal = img.calibration();
    PhysicalExtent out;
    out.width_mm = img.width() * cal.x_mm_per_px;
    out.length_mm = img.height() * cal.y_mm_per_px;
    if (!img.empty()) {
        const auto [lo, hi] = std::minmax_element(img.pixels().begin(), img.pixels().end());
        out.z_range_microns = static_cast<double>(*hi - *lo) * cal.z_microns_per_gray;
    }
    return out;
}

inline constexpr int kPatchWidth = 152;
inline constexpr int kPatchHeight = 100;

struct Provenance {
    std::uint64_t seed = 0;
    std::optional<int> defect_column_px; // leftmost column of the defect strip
    std::optional<int> defect_width_px;
    double noise_sigma_gray = 0.0;

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct LabeledPatch {
    HeightImage image;
    DefectLabel label = DefectLabel::nominal;
    Provenance provenance;

    void validate() const {
        if (image.width() != kPatchWidth || image.height() != kPatchHeight) {
            throw DimensionError("labeled patch must be " + std::to_string(kPatchWidth) + "x" +
                                 std::to_string(kPatchHeight) + ", got " + std::to_string(image.width()) + "x" +
                                 std::to_string(image.height()));
        }
        const bool has_defect = provenance.defect_column_px.has_value() && provenance.defect_width_px.has_value();
        const bool has_any = provenance.defect_column_px.has_value() || provenance.defect_width_px.has_value();
        if (label == DefectLabel::nominal ? has_any : !has_defect) {
            throw GeometryError("labeled patch: defect provenance inconsistent with label " +
                                std::string(to_string(label)));
        }
    }
};

struct IntRange {
    int lo = 0;
    int hi = 0;

    bool empty() const noexcept { return lo > hi; }
    friend bool operator==(const IntRange&, const IntRange&) = default;
};

struct SynthesisConfig {
    int substrate_level_gray = 20000;
    double noise_sigma_gray = 3.0;
    IntRange defect_width_px{3, 20};
    IntRange boundary_column_px{30, 120};
    std::uint64_t seed = 0;
    Calibration calibration{};

    void validate() const {
        calibration.validate();
        if (substrate_level_gray < 0 ||
            substrate_level_gray + 2 * calibration.tape_height_gray > std::numeric_limits<std::uint16_t>::max()) {
            throw ConfigError("synthesis config: substrate_level_gray + 2 * tape_height_gray must lie in [0, 65535]");
        }
        if (!(noise_sigma_gray >= 0.0) || !std::isfinite(noise_sigma_gray)) {
            throw ConfigError("synthesis config: noise_sigma_gray must be finite and >= 0");
        }
        if (defect_width_px.empty() || defect_width_px.lo < 1 || defect_width_px.hi > kPatchWidth) {
            throw ConfigError("synthesis config: defect_width_px range must be non-empty and inside [1, 152]");
        }
        if (boundary_column_px.empty() || boundary_column_px.lo < 1 || boundary_column_px.hi > kPatchWidth - 1) {
            throw ConfigError("synthesis config: boundary_column_px range must be non-empty and inside [1, 151]");
        }
    }
};

/// Generates one 152x100 patch. The tape plateau occupies the columns left of
/// the boundary, bare substrate the columns right of it. A gap is a substrate
/// strip with tape on both sides; an overlap is a double-height strip that
/// covers at least one column on each side of the boundary.
inline LabeledPatch synthesize_patch(const SynthesisConfig& cfg, DefectLabel label, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);

    const int substrate = cfg.substrate_level_gray;
    const int tape = cfg.calibration.tape_height_gray;
    const int boundary = uniform_int(rng, cfg.boundary_column_px.lo, cfg.boundary_column_px.hi);

    std::vector<int> profile(kPatchWidth, substrate);
    std::fill(profile.begin(), profile.begin() + boundary, substrate + tape);

    Provenance prov;
    prov.seed = seed;
    prov.noise_sigma_gray = cfg.noise_sigma_gray;

    if (label != DefectLabel::nominal) {
        const int width = uniform_int(rng, cfg.defect_width_px.lo, cfg.defect_width_px.hi);
        int first = 0;
        int last = -1;
        if (label == DefectLabel::gap) {
            // [start, start + width) inside [1, boundary - 1)
            first = 1;
            last = boundary - 1 - width;
        } else {
            // start <= boundary - 1 and start + width >= boundary + 1
            first = std::max(0, boundary - width + 1);
            last = std::min(boundary - 1, kPatchWidth - width);
        }
        if (last < first) {
            throw GeometryError("defect strip of width " + std::to_string(width) + " does not fit a " +
                                std::string(to_string(label)) + " at boundary column " + std::to_string(boundary));
        }
        const int start = uniform_int(rng, first, last);
        const int level = label == DefectLabel::gap ? substrate : substrate + 2 * tape;
        std::fill(profile.begin() + start, profile.begin() + start + width, level);
        prov.defect_column_px = start;
        prov.defect_width_px = width;
    }

    std::vector<std::uint16_t> pixels(static_cast<std::size_t>(kPatchWidth) * kPatchHeight);
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma_gray > 0.0 ? cfg.noise_sigma_gray : 1.0);
    for (int y = 0; y < kPatchHeight; ++y) {
        for (int x = 0; x < kPatchWidth; ++x) {
            double v = profile[static_cast<std::size_t>(x)];
            if (cfg.noise_sigma_gray > 0.0) {
                v += noise(rng);
            }
            v = std::clamp(std::round(v), 0.0, 65535.0);
            pixels[static_cast<std::size_t>(y) * kPatchWidth + static_cast<std::size_t>(x)] =
                static_cast<std::uint16_t>(v);
        }
    }

    return LabeledPatch{HeightImage(kPatchWidth, kPatchHeight, std::move(pixels), cfg.calibration), label, prov};
}

/// Seed of the `index`-th patch of `label` under a dataset seed. Distinct
/// (label, index) pairs map to distinct seeds.
constexpr std::uint64_t patch_seed(std::uint64_t dataset_seed, DefectLabel label, std::uint64_t index) noexcept {
    return mix64(dataset_seed + 0x9e3779b97f4a7c15ULL * ((static_cast<std::uint64_t>(label_index(label)) << 40) + index));
}

inline std::string patch_item_id(DefectLabel label, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%06zu", std::string(to_string(label)).c_str(), index);
    return buf;
}

using LabelCounts = std::array<std::size_t, kNumLabels>;

/// Splits `total` into nominal/gap/overlap counts at the 84/12/4 ratio using
/// largest-remainder rounding.
inline LabelCounts default_label_counts(std::size_t total) {
    constexpr std::array<std::size_t, kNumLabels> weights{84, 12, 4};
    LabelCounts counts{};
    std::array<std::size_t, kNumLabels> remainders{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < kNumLabels; ++i) {
        counts[i] = total * weights[i] / 100;
        remainders[i] = total * weights[i] % 100;
        assigned += counts[i];
    }
    while (assigned < total) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < kNumLabels; ++i) {
            if (remainders[i] > remainders[best]) {
                best = i;
            }
        }
        ++counts[best];
        remainders[best] = 0;
        ++assigned;
    }
    return counts;
}

struct ManifestEntry {
    std::string item_id;
    std::string file;
    DefectLabel label = DefectLabel::nominal;
    Provenance provenance;
};

struct DatasetManifest {
    SynthesisConfig config;
    LabelCounts counts{};
    std::vector<ManifestEntry> patches;
};

/// Generates `counts[label]` patches per label. Patches are ordered by label,
/// then by index, and each carries its own derived seed.
inline std::pair<std::vector<LabeledPatch>, DatasetManifest> synthesize_dataset(const SynthesisConfig& cfg,
                                                                                const LabelCounts& counts) {
    cfg.validate();
    std::pair<std::vector<LabeledPatch>, DatasetManifest> out;
    auto& [patches, manifest] = out;
    manifest.config = cfg;
    manifest.counts = counts;
    std::size_t total = 0;
    for (auto c : counts) {
        total += c;
    }
    patches.reserve(total);
    manifest.patches.reserve(total);
    for (auto label : kAllLabels) {
        for (std::size_t i = 0; i < counts[label_index(label)]; ++i) {
            auto patch = synthesize_patch(cfg, label, patch_seed(cfg.seed, label, i));
            auto id = patch_item_id(label, i);
            manifest.patches.push_back(ManifestEntry{id, id + ".tif", label, patch.provenance});
            patches.push_back(std::move(patch));
        }
    }
    return out;
}

inline std::pair<std::vector<LabeledPatch>, DatasetManifest> synthesize_dataset(
    const SynthesisConfig& cfg, const std::map<DefectLabel, std::size_t>& counts) {
    LabelCounts dense{};
    for (const auto& [label, n] : counts) {
        dense[label_index(label)] = n;
    }
    return synthesize_dataset(cfg, dense);
}

// JSON ----------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const Calibration& c) {
    j = {{"z_microns_per_gray", c.z_microns_per_gray},
         {"x_mm_per_px", c.x_mm_per_px},
         {"y_mm_per_px", c.y_mm_per_px},
         {"tape_height_gray", c.tape_height_gray},
         {"tape_width_mm", c.tape_width_mm}};
}

inline void from_json(const nlohmann::json& j, Calibration& c) {
    c = Calibration{};
    c.z_microns_per_gray = j.value("z_microns_per_gray", c.z_microns_per_gray);
    c.x_mm_per_px = j.value("x_mm_per_px", c.x_mm_per_px);
    c.y_mm_per_px = j.value("y_mm_per_px", c.y_mm_per_px);
    c.tape_height_gray = j.value("tape_height_gray", c.tape_height_gray);
    c.tape_width_mm = j.value("tape_width_mm", c.tape_width_mm);
}

inline void to_json(nlohmann::json& j, const SynthesisConfig& c) {
    j = {{"substrate_level_gray", c.substrate_level_gray},
         {"noise_sigma_gray", c.noise_sigma_gray},
         {"defect_width_px", {c.defect_width_px.lo, c.defect_width_px.hi}},
         {"boundary_column_px", {c.boundary_column_px.lo, c.boundary_column_px.hi}},
         {"seed", c.seed},
         {"calibration", c.calibration}};
}

/// Missing keys keep their defaults, so partial config files are accepted.
inline void from_json(const nlohmann::json& j, SynthesisConfig& c) {
    c = SynthesisConfig{};
    c.substrate_level_gray = j.value("substrate_level_gray", c.substrate_level_gray);
    c.noise_sigma_gray = j.value("noise_sigma_gray", c.noise_sigma_gray);
    if (j.contains("defect_width_px")) {
        const auto& r = j.at("defect_width_px");
        c.defect_width_px = {r.at(0).get<int>(), r.at(1).get<int>()};
    }
    if (j.contains("boundary_column_px")) {
        const auto& r = j.at("boundary_column_px");
        c.boundary_column_px = {r.at(0).get<int>(), r.at(1).get<int>()};
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("calibration")) {
        c.calibration = j.at("calibration").get<Calibration>();
    }
}

inline void to_json(nlohmann::json& j, const ManifestEntry& e) {
    j = {{"id", e.item_id},
         {"file", e.file},
         {"label", e.label},
         {"seed", e.provenance.seed},
         {"noise_sigma_gray", e.provenance.noise_sigma_gray}};
    j["defect_column_px"] = e.provenance.defect_column_px ? nlohmann::json(*e.provenance.defect_column_px) : nlohmann::json(nullptr);
    j["defect_width_px"] = e.provenance.defect_width_px ? nlohmann::json(*e.provenance.defect_width_px) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, ManifestEntry& e) {
    e.item_id = j.at("id").get<std::string>();
    e.file = j.at("file").get<std::string>();
    e.label = j.at("label").get<DefectLabel>();
    e.provenance.seed = j.at("seed").get<std::uint64_t>();
    e.provenance.noise_sigma_gray = j.value("noise_sigma_gray", 0.0);
    e.provenance.defect_column_px.reset();
    e.provenance.defect_width_px.reset();
    if (j.contains("defect_column_px") && !j.at("defect_column_px").is_null()) {
        e.provenance.defect_column_px = j.at("defect_column_px").get<int>();
    }
    if (j.contains("defect_width_px") && !j.at("defect_width_px").is_null()) {
        e.provenance.defect_width_px = j.at("defect_width_px").get<int>();
    }
}

inline void to_json(nlohmann::json& j, const DatasetManifest& m) {
    nlohmann::json counts = nlohmann::json::object();
    for (auto label : kAllLabels) {
        counts[std::string(to_string(label))] = m.counts[label_index(label)];
    }
    j = {{"version", 1}, {"config", m.config}, {"counts", counts}, {"patches", m.patches}};
}

inline void from_json(const nlohmann::json& j, DatasetManifest& m) {
    if (j.value("version", 0) != 1) {
        throw FormatError("dataset manifest: unsupported version");
    }
    m.config = j.at("config").get<SynthesisConfig>();
    m.counts = {};
    for (auto label : kAllLabels) {
        m.counts[label_index(label)] = j.at("counts").value(std::string(to_string(label)), std::size_t{0});
    }
    m.patches = j.at("patches").get<std::vector<ManifestEntry>>();
}

} // namespace smalldata
