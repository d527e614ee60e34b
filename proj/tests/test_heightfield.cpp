#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "smalldata/heightfield.hpp"

using namespace smalldata;

namespace {

SynthesisConfig noiseless() {
    SynthesisConfig cfg;
    cfg.noise_sigma_gray = 0.0;
    return cfg;
}

// Column values of a noise-free patch (every row is identical).
std::vector<int> columns(const HeightImage& img) {
    std::vector<int> out;
    for (int x = 0; x < img.width(); ++x) {
        out.push_back(img.at(x, 0));
    }
    return out;
}

} // namespace

TEST(Calibration, DefaultsAndTapeThickness) {
    Calibration c;
    EXPECT_DOUBLE_EQ(c.z_microns_per_gray, 1.77);
    EXPECT_DOUBLE_EQ(c.x_mm_per_px, 0.041);
    EXPECT_DOUBLE_EQ(c.y_mm_per_px, 0.4);
    EXPECT_EQ(c.tape_height_gray, 79);
    EXPECT_DOUBLE_EQ(c.tape_width_mm, 12.54);
    EXPECT_NEAR(c.tape_thickness_microns(), 139.83, 1e-9);
}

TEST(Calibration, RejectsNonPositiveFields) {
    Calibration c;
    c.x_mm_per_px = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = Calibration{};
    c.tape_height_gray = -1;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(HeightImage, RejectsPixelCountMismatch) {
    EXPECT_THROW(HeightImage(2, 2, std::vector<std::uint16_t>(3)), DimensionError);
    EXPECT_THROW(HeightImage(0, 2, {}), DimensionError);
}

TEST(PhysicalExtent, PatchMatchesSixPointTwoByForty) {
    const auto e = physical_extent(HeightImage::filled(152, 100, 20000));
    EXPECT_NEAR(e.width_mm, 6.232, 1e-12);
    EXPECT_NEAR(e.length_mm, 40.0, 1e-12);
    EXPECT_DOUBLE_EQ(e.z_range_microns, 0.0);
}

TEST(PhysicalExtent, TwoLevelImageSpansOneTape) {
    auto img = HeightImage::filled(4, 1, 20000);
    img.at(3, 0) = 20079;
    EXPECT_NEAR(physical_extent(img).z_range_microns, 139.83, 1e-9);
}

TEST(PhysicalExtent, LinearInWidth) {
    const auto a = physical_extent(HeightImage::filled(50, 10, 1));
    const auto b = physical_extent(HeightImage::filled(100, 10, 1));
    EXPECT_DOUBLE_EQ(b.width_mm, 2.0 * a.width_mm);
}

TEST(SynthesisConfig, Validation) {
    SynthesisConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.substrate_level_gray = 65535 - 100;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = SynthesisConfig{};
    cfg.noise_sigma_gray = -1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = SynthesisConfig{};
    cfg.defect_width_px = {10, 5};
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = SynthesisConfig{};
    cfg.boundary_column_px = {30, 200};
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(SynthesizePatch, NominalNoiseFreeHasTwoPlateaus) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto p = synthesize_patch(noiseless(), DefectLabel::nominal, seed);
        EXPECT_NO_THROW(p.validate());
        EXPECT_FALSE(p.provenance.defect_column_px.has_value());
        std::set<int> values(p.image.pixels().begin(), p.image.pixels().end());
        EXPECT_EQ(values, (std::set<int>{20000, 20079})) << "seed " << seed;
    }
}

TEST(SynthesizePatch, OverlapNoiseFreeHasDoubleHeightBlock) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto p = synthesize_patch(noiseless(), DefectLabel::overlap, seed);
        const auto cols = columns(p.image);
        // every row equals row 0
        for (int y = 1; y < p.image.height(); ++y) {
            for (int x = 0; x < p.image.width(); ++x) {
                ASSERT_EQ(p.image.at(x, y), cols[static_cast<std::size_t>(x)]);
            }
        }
        const auto hi = std::count(cols.begin(), cols.end(), 20158);
        EXPECT_GT(hi, 0);
        EXPECT_EQ(hi, *p.provenance.defect_width_px);
        for (int v : cols) {
            EXPECT_TRUE(v == 20158 || v <= 20079);
        }
        // the strip straddles the tape edge: tape on neither side is required,
        // but it must touch both the tape plateau region and the substrate region
        const int start = *p.provenance.defect_column_px;
        const int end = start + *p.provenance.defect_width_px;
        EXPECT_TRUE(start == 0 || cols[static_cast<std::size_t>(start - 1)] == 20079);
        EXPECT_TRUE(end == 152 || cols[static_cast<std::size_t>(end)] == 20000);
    }
}

TEST(SynthesizePatch, GapNoiseFreeIsSubstrateStripInsideTape) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto p = synthesize_patch(noiseless(), DefectLabel::gap, seed);
        const auto cols = columns(p.image);
        const int start = *p.provenance.defect_column_px;
        const int end = start + *p.provenance.defect_width_px;
        ASSERT_GE(start, 1);
        EXPECT_EQ(cols[static_cast<std::size_t>(start - 1)], 20079);
        EXPECT_EQ(cols[static_cast<std::size_t>(end)], 20079);
        for (int x = start; x < end; ++x) {
            EXPECT_EQ(cols[static_cast<std::size_t>(x)], 20000);
        }
    }
}

// Label soundness from the column profile alone: a substrate column strictly
// between tape columns marks a gap, a double-height column an overlap.
TEST(SynthesizePatch, LabelSoundnessProperty) {
    auto has_gap = [](const std::vector<int>& c) {
        for (std::size_t x = 0; x < c.size(); ++x) {
            if (c[x] != 20000) {
                continue;
            }
            const bool tape_left = std::any_of(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(x),
                                               [](int v) { return v == 20079; });
            const bool tape_right = std::any_of(c.begin() + static_cast<std::ptrdiff_t>(x), c.end(),
                                                [](int v) { return v == 20079; });
            if (tape_left && tape_right) {
                return true;
            }
        }
        return false;
    };
    auto has_overlap = [](const std::vector<int>& c) { return std::count(c.begin(), c.end(), 20158) > 0; };
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        for (auto label : kAllLabels) {
            const auto cols = columns(synthesize_patch(noiseless(), label, seed).image);
            EXPECT_EQ(has_gap(cols), label == DefectLabel::gap);
            EXPECT_EQ(has_overlap(cols), label == DefectLabel::overlap);
        }
    }
}

TEST(SynthesizePatch, Deterministic) {
    const SynthesisConfig cfg;
    for (auto label : kAllLabels) {
        const auto a = synthesize_patch(cfg, label, 1234);
        const auto b = synthesize_patch(cfg, label, 1234);
        EXPECT_EQ(a.image, b.image);
        EXPECT_EQ(a.provenance, b.provenance);
    }
    EXPECT_NE(synthesize_patch(cfg, DefectLabel::gap, 1).image, synthesize_patch(cfg, DefectLabel::gap, 2).image);
}

TEST(SynthesizePatch, NoiseHasRequestedSpread) {
    SynthesisConfig cfg;
    cfg.noise_sigma_gray = 3.0;
    const auto p = synthesize_patch(cfg, DefectLabel::nominal, 5);
    const auto clean = synthesize_patch(noiseless(), DefectLabel::nominal, 5);
    double ss = 0.0;
    for (std::size_t i = 0; i < p.image.size(); ++i) {
        const double d = static_cast<double>(p.image.pixels()[i]) - clean.image.pixels()[i];
        ss += d * d;
    }
    // rounding adds 1/12 of variance
    const double sd = std::sqrt(ss / static_cast<double>(p.image.size()));
    EXPECT_NEAR(sd, std::sqrt(9.0 + 1.0 / 12.0), 0.1);
    EXPECT_DOUBLE_EQ(p.provenance.noise_sigma_gray, 3.0);
}

TEST(SynthesizePatch, ClampsAtTheTopOfTheRange) {
    SynthesisConfig cfg;
    cfg.substrate_level_gray = 65535 - 2 * 79;
    cfg.noise_sigma_gray = 50.0;
    const auto p = synthesize_patch(cfg, DefectLabel::overlap, 3);
    EXPECT_EQ(*std::max_element(p.image.pixels().begin(), p.image.pixels().end()), 65535);
}

TEST(SynthesizePatch, StripThatCannotFitIsAGeometryError) {
    SynthesisConfig cfg = noiseless();
    cfg.boundary_column_px = {10, 10};
    cfg.defect_width_px = {20, 20};
    EXPECT_THROW(synthesize_patch(cfg, DefectLabel::gap, 0), GeometryError);
    EXPECT_NO_THROW(synthesize_patch(cfg, DefectLabel::nominal, 0));
}

TEST(DefaultLabelCounts, EightyFourTwelveFour) {
    EXPECT_EQ(default_label_counts(100), (LabelCounts{84, 12, 4}));
    EXPECT_EQ(default_label_counts(3000), (LabelCounts{2520, 360, 120}));
    for (std::size_t total = 0; total < 300; ++total) {
        const auto c = default_label_counts(total);
        EXPECT_EQ(c[0] + c[1] + c[2], total);
    }
}

TEST(SynthesizeDataset, HistogramMatchesRequest) {
    const auto [patches, manifest] = synthesize_dataset(SynthesisConfig{}, LabelCounts{84, 12, 4});
    ASSERT_EQ(patches.size(), 100u);
    LabelCounts seen{};
    std::set<std::uint64_t> seeds;
    for (const auto& p : patches) {
        ++seen[label_index(p.label)];
        seeds.insert(p.provenance.seed);
    }
    EXPECT_EQ(seen, (LabelCounts{84, 12, 4}));
    EXPECT_EQ(seeds.size(), 100u);
    EXPECT_EQ(manifest.patches.size(), 100u);
    EXPECT_EQ(manifest.counts, (LabelCounts{84, 12, 4}));
}

TEST(SynthesizeDataset, ZeroCountsGiveEmptyValidManifest) {
    const auto [patches, manifest] = synthesize_dataset(SynthesisConfig{}, LabelCounts{0, 0, 0});
    EXPECT_TRUE(patches.empty());
    const nlohmann::json j = manifest;
    const auto back = j.get<DatasetManifest>();
    EXPECT_TRUE(back.patches.empty());
}

TEST(SynthesizeDataset, SingleLabelMap) {
    const auto [patches, manifest] = synthesize_dataset(SynthesisConfig{}, std::map<DefectLabel, std::size_t>{{DefectLabel::gap, 5}});
    ASSERT_EQ(patches.size(), 5u);
    for (const auto& p : patches) {
        EXPECT_EQ(p.label, DefectLabel::gap);
    }
    EXPECT_EQ(manifest.patches.front().item_id, "gap_000000");
    EXPECT_EQ(manifest.patches.front().file, "gap_000000.tif");
}

TEST(Manifest, JsonRoundTrip) {
    SynthesisConfig cfg;
    cfg.seed = 99;
    cfg.noise_sigma_gray = 1.5;
    const auto manifest = synthesize_dataset(cfg, LabelCounts{3, 2, 1}).second;
    const nlohmann::json j = manifest;
    const auto back = j.get<DatasetManifest>();
    EXPECT_EQ(back.counts, manifest.counts);
    EXPECT_EQ(back.config.seed, 99u);
    EXPECT_DOUBLE_EQ(back.config.noise_sigma_gray, 1.5);
    ASSERT_EQ(back.patches.size(), manifest.patches.size());
    for (std::size_t i = 0; i < back.patches.size(); ++i) {
        EXPECT_EQ(back.patches[i].item_id, manifest.patches[i].item_id);
        EXPECT_EQ(back.patches[i].label, manifest.patches[i].label);
        EXPECT_EQ(back.patches[i].provenance, manifest.patches[i].provenance);
    }
}

TEST(Manifest, RejectsUnknownVersion) {
    nlohmann::json j = synthesize_dataset(SynthesisConfig{}, LabelCounts{1, 0, 0}).second;
    j["version"] = 7;
    EXPECT_THROW(j.get<DatasetManifest>(), FormatError);
}
