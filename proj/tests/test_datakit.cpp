#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "smalldata/datakit.hpp"

using namespace smalldata;

namespace {

DatasetIndex make_index(LabelCounts counts) {
    std::vector<IndexEntry> entries;
    for (auto label : kAllLabels) {
        for (std::size_t i = 0; i < counts[label_index(label)]; ++i) {
            entries.push_back({patch_item_id(label, i), label});
        }
    }
    // interleave labels so source order is not label-sorted
    std::mt19937_64 rng(1);
    std::shuffle(entries.begin(), entries.end(), rng);
    return DatasetIndex(std::move(entries));
}

bool subset_of(const DatasetIndex& a, const DatasetIndex& b) {
    const auto ids = b.id_set();
    return std::all_of(a.entries().begin(), a.entries().end(), [&](const IndexEntry& e) { return ids.count(e.item_id); });
}

void expect_valid_split(const DatasetIndex& index, const SplitResult& r, const SplitSpec& spec) {
    const auto train = r.train.id_set();
    const auto eval = r.eval.id_set();
    const auto test = r.test.id_set();
    for (const auto& id : train) {
        ASSERT_EQ(eval.count(id) + test.count(id), 0u);
    }
    for (const auto& id : eval) {
        ASSERT_EQ(test.count(id), 0u);
    }
    ASSERT_EQ(train.size() + eval.size() + test.size(), index.size());
    for (const auto& e : index.entries()) {
        ASSERT_EQ(train.count(e.item_id) + eval.count(e.item_id) + test.count(e.item_id), 1u);
    }
    for (auto label : kAllLabels) {
        const double n = static_cast<double>(index.count(label));
        const double f = spec.train_fraction;
        const double g = spec.eval_fraction_of_train;
        EXPECT_LE(std::abs(static_cast<double>(r.train.count(label)) - f * (1.0 - g) * n), 1.0);
        EXPECT_LE(std::abs(static_cast<double>(r.eval.count(label)) - f * g * n), 1.0);
        EXPECT_LE(std::abs(static_cast<double>(r.test.count(label)) - (1.0 - f) * n), 1.0);
    }
}

} // namespace

TEST(DatasetIndex, HistogramAndDuplicates) {
    const auto idx = make_index({5, 3, 2});
    EXPECT_EQ(idx.histogram(), (LabelCounts{5, 3, 2}));
    EXPECT_EQ(idx.size(), 10u);
    EXPECT_THROW(DatasetIndex({{"a", DefectLabel::gap}, {"a", DefectLabel::nominal}}), FormatError);
}

TEST(StratifiedSplit, WorkedExample) {
    const auto idx = make_index({200, 100, 100});
    const auto r = stratified_split(idx, SplitSpec{});
    EXPECT_EQ(r.train.histogram(), (LabelCounts{126, 63, 63}));
    EXPECT_EQ(r.eval.histogram(), (LabelCounts{14, 7, 7}));
    EXPECT_EQ(r.test.histogram(), (LabelCounts{60, 30, 30}));
    expect_valid_split(idx, r, SplitSpec{});
}

TEST(StratifiedSplit, DivisibleCaseIsExact) {
    const auto idx = make_index({40, 20, 20});
    SplitSpec spec;
    spec.train_fraction = 0.5;
    spec.eval_fraction_of_train = 0.5;
    const auto r = stratified_split(idx, spec);
    EXPECT_EQ(r.test.histogram(), (LabelCounts{20, 10, 10}));
    EXPECT_EQ(r.eval.histogram(), (LabelCounts{10, 5, 5}));
    EXPECT_EQ(r.train.histogram(), (LabelCounts{10, 5, 5}));
}

TEST(StratifiedSplit, DeterministicAndSeedSensitive) {
    const auto idx = make_index({50, 30, 20});
    SplitSpec spec;
    spec.seed = 4;
    const auto a = stratified_split(idx, spec);
    const auto b = stratified_split(idx, spec);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.eval, b.eval);
    EXPECT_EQ(a.test, b.test);
    spec.seed = 5;
    EXPECT_NE(stratified_split(idx, spec).test, a.test);
}

TEST(StratifiedSplit, PartsKeepSourceOrder) {
    const auto idx = make_index({30, 30, 30});
    const auto r = stratified_split(idx, SplitSpec{});
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        pos[idx.entries()[i].item_id] = i;
    }
    for (const auto* part : {&r.train, &r.eval, &r.test}) {
        for (std::size_t i = 1; i < part->size(); ++i) {
            EXPECT_LT(pos[part->entries()[i - 1].item_id], pos[part->entries()[i].item_id]);
        }
    }
}

TEST(StratifiedSplit, TooFewItemsNamesLabel) {
    const auto idx = make_index({10, 10, 2});
    try {
        stratified_split(idx, SplitSpec{});
        FAIL();
    } catch (const StratificationError& e) {
        EXPECT_NE(std::string(e.what()).find("overlap"), std::string::npos);
    }
}

TEST(StratifiedSplit, RejectsBadFractions) {
    SplitSpec spec;
    spec.train_fraction = 1.0;
    EXPECT_THROW(stratified_split(make_index({5, 5, 5}), spec), ConfigError);
}

TEST(StratifiedSplit, ProportionPropertyOnRandomHistograms) {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> count(3, 400);
    std::uniform_real_distribution<double> frac(0.05, 0.95);
    for (int i = 0; i < 60; ++i) {
        const auto idx = make_index({count(rng), count(rng), count(rng)});
        SplitSpec spec{frac(rng), frac(rng), rng()};
        expect_valid_split(idx, stratified_split(idx, spec), spec);
    }
}

TEST(Balance, UniformHistogram) {
    const auto idx = make_index({300, 250, 200});
    const auto b = balance(idx, 200, 1);
    EXPECT_EQ(b.histogram(), (LabelCounts{200, 200, 200}));
    EXPECT_TRUE(subset_of(b, idx));
    EXPECT_EQ(b, balance(idx, 200, 1));
}

TEST(Balance, SmallestClassBoundary) {
    const auto idx = make_index({30, 20, 12});
    const auto b = balance(idx, 12, 3);
    for (const auto& e : idx.entries()) {
        if (e.label == DefectLabel::overlap) {
            EXPECT_TRUE(b.id_set().count(e.item_id));
        }
    }
    try {
        balance(idx, 13, 3);
        FAIL();
    } catch (const BalanceError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("overlap"), std::string::npos);
        EXPECT_NE(msg.find("12"), std::string::npos);
    }
}

TEST(SubsetLadder, NestedAndUniform) {
    const auto idx = make_index({900, 700, 500});
    const std::vector<std::size_t> sizes{200, 400};
    const auto ladder = subset_ladder(idx, sizes, 8);
    ASSERT_EQ(ladder.size(), 2u);
    EXPECT_EQ(ladder[0].histogram(), (LabelCounts{200, 200, 200}));
    EXPECT_EQ(ladder[1].histogram(), (LabelCounts{400, 400, 400}));
    EXPECT_TRUE(subset_of(ladder[0], ladder[1]));
}

TEST(SubsetLadder, SingleRungEqualsBalance) {
    const auto idx = make_index({50, 40, 30});
    const std::vector<std::size_t> sizes{25};
    EXPECT_EQ(subset_ladder(idx, sizes, 6).front(), balance(idx, 25, 6));
}

TEST(SubsetLadder, RejectsUnorderedSizes) {
    const auto idx = make_index({900, 700, 500});
    const std::vector<std::size_t> sizes{400, 200};
    EXPECT_THROW(subset_ladder(idx, sizes, 0), ConfigError);
    const std::vector<std::size_t> too_big{100, 600};
    EXPECT_THROW(subset_ladder(idx, too_big, 0), BalanceError);
}

TEST(SubsetLadder, NestingPropertyOnRandomHistograms) {
    std::mt19937_64 rng(77);
    for (int i = 0; i < 30; ++i) {
        const auto idx = make_index({50 + rng() % 300, 50 + rng() % 300, 50 + rng() % 300});
        std::vector<std::size_t> sizes;
        for (std::size_t s = 1 + rng() % 10; s <= 50; s += 1 + rng() % 15) {
            sizes.push_back(s);
        }
        const auto ladder = subset_ladder(idx, sizes, rng());
        for (std::size_t k = 0; k < ladder.size(); ++k) {
            EXPECT_EQ(ladder[k].histogram(), (LabelCounts{sizes[k], sizes[k], sizes[k]}));
            if (k > 0) {
                EXPECT_TRUE(subset_of(ladder[k - 1], ladder[k]));
            }
        }
    }
}

TEST(DatakitJson, SplitRoundTrip) {
    const auto idx = make_index({20, 10, 10});
    const auto r = stratified_split(idx, SplitSpec{0.7, 0.1, 3});
    const nlohmann::json j = r;
    const auto back = j.get<SplitResult>();
    EXPECT_EQ(back.train, r.train);
    EXPECT_EQ(back.eval, r.eval);
    EXPECT_EQ(back.test, r.test);
    const nlohmann::json s = SplitSpec{0.6, 0.2, 9};
    const auto spec = s.get<SplitSpec>();
    EXPECT_DOUBLE_EQ(spec.train_fraction, 0.6);
    EXPECT_EQ(spec.seed, 9u);
}

TEST(DatakitJson, FromManifest) {
    const auto manifest = synthesize_dataset(SynthesisConfig{}, LabelCounts{4, 3, 3}).second;
    const auto idx = DatasetIndex::from_manifest(manifest);
    EXPECT_EQ(idx.histogram(), (LabelCounts{4, 3, 3}));
    EXPECT_EQ(idx.entries().front().item_id, "nominal_000000");
}
