#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <mutex>
#include <random>
#include <set>
#include <sstream>

#include "smalldata/audit.hpp"
#include "smalldata/sweep.hpp"

using namespace smalldata;
using namespace smalldata::sweep;
namespace fs = std::filesystem;

namespace {

std::set<std::string> ordered_ids(const DatasetIndex& index) {
    const auto ids = index.id_set();
    return {ids.begin(), ids.end()};
}

DatasetIndex make_index(LabelCounts counts) {
    std::vector<IndexEntry> entries;
    for (auto label : kAllLabels) {
        for (std::size_t i = 0; i < counts[label_index(label)]; ++i) {
            entries.push_back({patch_item_id(label, i), label});
        }
    }
    return DatasetIndex(std::move(entries));
}

// Peaks at lr = 1e-5, independent of budget.
double lr_score(double lr) {
    const double d = std::log10(lr) + 5.0;
    return std::exp(-d * d);
}

// Test predictions: the first round(q * n) items right, the rest nominal,
// where q rises with the training-subset size.
class MockHandle final : public TrainerHandle {
public:
    MockHandle(std::size_t train_size, std::vector<DefectLabel> test) : train_size_(train_size), test_(std::move(test)) {}

    void init(const TrainConfig& c) override { lr_ = c.learning_rate; }
    double train(int epochs) override {
        epochs_ += epochs;
        return lr_score(lr_);
    }
    EvalReport evaluate_test() override {
        const double q = lr_score(lr_) * static_cast<double>(train_size_) / static_cast<double>(train_size_ + 10);
        std::vector<DefectLabel> pred(test_.size(), DefectLabel::nominal);
        const auto hits = static_cast<std::size_t>(std::lround(q * static_cast<double>(test_.size())));
        for (std::size_t i = 0; i < hits && i < test_.size(); ++i) {
            pred[i] = test_[i];
        }
        return evaluate(confusion(test_, pred));
    }
    std::string pause() override { return std::to_string(epochs_); }
    void resume(const std::string& token) override { epochs_ = std::stoi(token); }
    void shutdown() override {}

private:
    std::size_t train_size_;
    std::vector<DefectLabel> test_;
    double lr_ = 0.0;
    int epochs_ = 0;
};

struct MockContext {
    Context ctx;
    std::mutex mu;
    // (trainer, train size, seed via subset) -> ids seen
    std::vector<std::tuple<std::string, std::set<std::string>, std::set<std::string>, std::set<std::string>>> seen;

    MockContext() {
        ctx.make_trainer = [this](const TrainerSpec& spec, const DatasetIndex& train, const DatasetIndex& eval,
                                  const DatasetIndex& test) -> TrainerFactory {
            {
                std::lock_guard g(mu);
                seen.emplace_back(spec.name, ordered_ids(train), ordered_ids(eval), ordered_ids(test));
            }
            std::vector<DefectLabel> labels;
            for (const auto& e : test.entries()) {
                labels.push_back(e.label);
            }
            const std::size_t n = train.size() / 3;
            return [n, labels] { return std::make_unique<MockHandle>(n, labels); };
        };
    }
};

ExperimentPlan mock_plan() {
    ExperimentPlan plan;
    plan.ladder_sizes = {20, 40};
    plan.tuning_examples_per_class = 30;
    plan.seeds = {0, 1};
    plan.asha.n_trials = 16;
    plan.asha.workers = 2;
    plan.epochs = 4;
    return plan;
}

SplitResult mock_split() { return stratified_split(make_index({200, 150, 120}), SplitSpec{}); }

// Small synthetic dataset with its features computed from the generator.
struct SyntheticFixture {
    DatasetManifest manifest;
    DatasetIndex index;
    SplitResult split;
    FeatureStore store;

    SyntheticFixture(LabelCounts counts, std::uint64_t seed)
        : manifest(make_manifest(counts, seed)), index(DatasetIndex::from_manifest(manifest)),
          split(stratified_split(index, SplitSpec{})), store(manifest_source(manifest), 4) {}

    static DatasetManifest make_manifest(LabelCounts counts, std::uint64_t seed) {
        SynthesisConfig cfg;
        cfg.seed = seed;
        cfg.noise_sigma_gray = 3.0;
        return synthesize_dataset(cfg, counts).second;
    }
};

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("smalldata_sweep_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        std::vector<std::string> row;
        std::stringstream ls(line);
        for (std::string field; std::getline(ls, field, ',');) {
            row.push_back(field);
        }
        if (!line.empty() && line.back() == ',') {
            row.emplace_back();
        }
        rows.push_back(row);
    }
    return rows;
}

} // namespace

TEST(TrainerArg, Parse) {
    EXPECT_EQ(parse_trainer_arg("builtin").kind, TrainerKind::builtin);
    const auto ext = parse_trainer_arg("external:python3 adapter.py");
    EXPECT_EQ(ext.kind, TrainerKind::external);
    EXPECT_EQ(ext.command, "python3 adapter.py");
    EXPECT_THROW(parse_trainer_arg("external:"), ConfigError);
    EXPECT_THROW(parse_trainer_arg("gpu"), ConfigError);
}

TEST(Plan, ValidateRejectsBadPlans) {
    ExperimentPlan p;
    EXPECT_NO_THROW(p.validate());
    p.ladder_sizes = {400, 200};
    EXPECT_THROW(p.validate(), ConfigError);
    p = ExperimentPlan{};
    p.seeds.clear();
    EXPECT_THROW(p.validate(), ConfigError);
    p = ExperimentPlan{};
    p.trainers.push_back(TrainerSpec{});
    EXPECT_THROW(p.validate(), ConfigError);
    p = ExperimentPlan{};
    TrainerSpec ext;
    ext.name = "x";
    ext.kind = TrainerKind::external;
    p.trainers.push_back(ext);
    EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Plan, JsonRoundTripAndCatalog) {
    const auto j = nlohmann::json::parse(R"({
        "trainers": [{"kind": "builtin"},
                     {"kind": "external", "catalog": "resnet-18", "command": "adapter"}],
        "ladder_sizes": [200, 800],
        "seeds": [3, 4],
        "asha": {"n_trials": 8, "workers": 2}
    })");
    const auto plan = j.get<ExperimentPlan>();
    ASSERT_EQ(plan.trainers.size(), 2u);
    EXPECT_EQ(plan.trainers[1].name, "resnet-18");
    EXPECT_EQ(plan.trainers[1].checkpoint, "microsoft/resnet-18");
    EXPECT_EQ(plan.trainers[1].model_size_mb, 46);
    EXPECT_EQ(plan.epochs, 32);
    EXPECT_EQ(plan.asha.max_t, 32);
    EXPECT_EQ(plan.tuning_examples_per_class, 512u);
    const nlohmann::json back = plan;
    const auto again = back.get<ExperimentPlan>();
    EXPECT_EQ(again.ladder_sizes, plan.ladder_sizes);
    EXPECT_EQ(again.seeds, plan.seeds);
    EXPECT_EQ(again.trainers[1].checkpoint, "microsoft/resnet-18");
    EXPECT_THROW(nlohmann::json::parse(R"({"trainers":[{"kind":"external","catalog":"nope"}]})").get<ExperimentPlan>(),
                 ConfigError);
}

TEST(Tune, MockPicksAnalyticallyBestTrial) {
    MockContext mc;
    auto plan = mock_plan();
    plan.search_space.lr_min = 1e-7;
    plan.search_space.lr_max = 1e-3;
    const auto result = tune(plan, TrainerSpec{}, mock_split(), mc.ctx);

    // enumerate the trials the scheduler samples and score them directly
    int best = -1;
    double best_score = -1.0;
    for (int i = 0; i < plan.asha.n_trials; ++i) {
        const auto c = asha::sample_trial(plan.search_space, derive_seed(plan.seeds.front(), static_cast<std::uint64_t>(i)));
        if (lr_score(c.learning_rate) > best_score) {
            best_score = lr_score(c.learning_rate);
            best = i;
        }
    }
    EXPECT_EQ(result.best.trial, best);
    EXPECT_EQ(result.best.metric, best_score);
    EXPECT_TRUE(asha::audit_event_log(result.event_log).ok());
}

TEST(Tune, TestSplitNeverReachesTuning) {
    MockContext mc;
    const auto split = mock_split();
    tune(mock_plan(), TrainerSpec{}, split, mc.ctx);
    ASSERT_EQ(mc.seen.size(), 1u);
    const auto& [name, train, eval, test] = mc.seen.front();
    EXPECT_TRUE(test.empty());
    EXPECT_EQ(train.size(), 90u);
    for (const auto& id : split.test.id_set()) {
        EXPECT_EQ(train.count(id) + eval.count(id), 0u);
    }
}

TEST(Tune, TuningSubsetTooLarge) {
    MockContext mc;
    auto plan = mock_plan();
    plan.tuning_examples_per_class = 512;
    EXPECT_THROW(tune(plan, TrainerSpec{}, mock_split(), mc.ctx), BalanceError);
}

TEST(Tune, PersistsEventLogAndResults) {
    MockContext mc;
    mc.ctx.run_dir = fresh_dir("tune");
    const auto r = tune(mock_plan(), TrainerSpec{}, mock_split(), mc.ctx);
    std::ifstream in(mc.ctx.run_dir / "tune" / "baseline" / "events.jsonl");
    std::stringstream ss;
    ss << in.rdbuf();
    EXPECT_EQ(ss.str(), r.event_log);
    const auto configs = tuned_configs_from_json(tuning_results_json({r}));
    EXPECT_EQ(configs.at("baseline"), r.best.config);
    fs::remove_all(mc.ctx.run_dir);
}

TEST(Tune, BuiltinStaysInSearchDomain) {
    SyntheticFixture fx({60, 60, 60}, 3);
    Context ctx;
    ctx.features = &fx.store;
    auto plan = mock_plan();
    plan.tuning_examples_per_class = 20;
    plan.asha.max_t = 8;
    plan.asha.grace_period = 2;
    plan.asha.n_trials = 6;
    const auto r = tune(plan, TrainerSpec{}, fx.split, ctx);
    EXPECT_GE(r.best.config.learning_rate, 1e-6);
    EXPECT_LE(r.best.config.learning_rate, 1e-4);
    const std::set<int> batches{16, 32, 64, 128};
    EXPECT_TRUE(batches.count(r.best.config.batch_size));
}

TEST(Sweep, MinimalPlanOneRecord) {
    SyntheticFixture fx({40, 40, 40}, 5);
    Context ctx;
    ctx.features = &fx.store;
    ExperimentPlan plan;
    plan.ladder_sizes = {20};
    plan.epochs = 4;
    const auto report = run_sweep(plan, {{"baseline", TrainConfig{1e-4, 16, 0}}}, fx.split, ctx);
    ASSERT_EQ(report.records.size(), 1u);
    const auto& r = report.records[0];
    ASSERT_FALSE(r.failed()) << r.error;
    EXPECT_EQ(r.train_size, 20u);
    EXPECT_EQ(r.report->per_class.size(), 3u);
    EXPECT_EQ(r.report->n_items, fx.split.test.size());
    ASSERT_EQ(report.aggregates.size(), 1u);
    EXPECT_EQ(report.aggregates[0].runs, 1u);
    EXPECT_EQ(report.aggregates[0].spread, 0.0);
}

TEST(Sweep, MissingTunedConfigRejected) {
    MockContext mc;
    EXPECT_THROW(run_sweep(mock_plan(), {}, mock_split(), mc.ctx), ConfigError);
}

TEST(Sweep, TwoSeedMeanAndSpread) {
    MockContext mc;
    const auto plan = mock_plan();
    const auto report = run_sweep(plan, {{"baseline", TrainConfig{3e-5, 16, 0}}}, mock_split(), mc.ctx);
    ASSERT_EQ(report.records.size(), 4u);
    for (const auto& a : report.aggregates) {
        std::vector<double> v;
        for (const auto& r : report.records) {
            if (r.train_size == a.train_size) {
                v.push_back(r.report->macro_f1);
            }
        }
        ASSERT_EQ(v.size(), 2u);
        EXPECT_DOUBLE_EQ(a.mean_macro_f1, (v[0] + v[1]) / 2.0);
        EXPECT_NEAR(a.spread, std::abs(v[0] - v[1]) / std::sqrt(2.0), 1e-15);
    }
}

TEST(Sweep, CellsUseFreshSeedAndTunedConfig) {
    MockContext mc;
    const auto report = run_sweep(mock_plan(), {{"baseline", TrainConfig{3e-5, 32, 99}}}, mock_split(), mc.ctx);
    for (const auto& r : report.records) {
        EXPECT_EQ(r.config.learning_rate, 3e-5);
        EXPECT_EQ(r.config.batch_size, 32);
        EXPECT_EQ(r.config.seed, r.seed);
    }
}

TEST(Sweep, NestedSubsetsSharedAcrossTrainersAndTestIsolated) {
    MockContext mc;
    auto plan = mock_plan();
    TrainerSpec second;
    second.name = "other";
    plan.trainers.push_back(second);
    const auto split = mock_split();
    const std::map<std::string, TrainConfig> tuned{{"baseline", TrainConfig{1e-5, 16, 0}},
                                                   {"other", TrainConfig{1e-6, 16, 0}}};
    run_sweep(plan, tuned, split, mc.ctx);
    ASSERT_EQ(mc.seen.size(), 8u);

    std::map<std::string, std::vector<std::set<std::string>>> by_trainer;
    const auto test_ids = ordered_ids(split.test);
    const auto eval_ids = ordered_ids(split.eval);
    for (const auto& [name, train, eval, test] : mc.seen) {
        by_trainer[name].push_back(train);
        EXPECT_EQ(test, test_ids);
        EXPECT_EQ(eval, eval_ids);
        for (const auto& id : train) {
            EXPECT_EQ(test_ids.count(id) + eval_ids.count(id), 0u);
        }
    }
    auto a = by_trainer["baseline"];
    auto b = by_trainer["other"];
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
    // the size-20 subset at each seed sits inside the size-40 one
    std::size_t nested = 0;
    for (const auto& small : a) {
        for (const auto& big : a) {
            if (small.size() == 60 && big.size() == 120 &&
                std::includes(big.begin(), big.end(), small.begin(), small.end())) {
                ++nested;
            }
        }
    }
    EXPECT_GE(nested, 2u);
}

TEST(Sweep, BuiltinIsReproducible) {
    SyntheticFixture fx({40, 40, 40}, 8);
    auto run_once = [&](int workers) {
        FeatureStore store(manifest_source(fx.manifest), 4);
        Context ctx;
        ctx.features = &store;
        ExperimentPlan plan;
        plan.ladder_sizes = {10, 20};
        plan.seeds = {0, 1};
        plan.epochs = 3;
        plan.asha.workers = workers;
        return run_sweep(plan, {{"baseline", TrainConfig{1e-4, 16, 0}}}, fx.split, ctx);
    };
    const auto a = run_once(1);
    const auto b = run_once(3);
    ASSERT_EQ(a.records.size(), b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        ASSERT_FALSE(a.records[i].failed());
        EXPECT_EQ(a.records[i].report->macro_f1, b.records[i].report->macro_f1);
        EXPECT_EQ(a.records[i].train_size, b.records[i].train_size);
        EXPECT_EQ(a.records[i].seed, b.records[i].seed);
    }
}

TEST(Sweep, FailedExternalCellIsRecordedAndSweepContinues) {
    MockContext mc;
    Context ctx;
    ctx.run_dir = fresh_dir("failed");
    ctx.inputs_dir = ctx.run_dir / "inputs";
    ctx.make_trainer = [&](const TrainerSpec& spec, const DatasetIndex& train, const DatasetIndex& eval,
                           const DatasetIndex& test) -> TrainerFactory {
        if (spec.kind == TrainerKind::external) {
            ExternalTrainerOptions opts;
            opts.command = spec.command;
            opts.checkpoint = spec.checkpoint;
            opts.timeout = std::chrono::seconds(10);
            return [opts] { return std::make_unique<ExternalTrainer>(opts); };
        }
        return mc.ctx.make_trainer(spec, train, eval, test);
    };
    auto plan = mock_plan();
    TrainerSpec crash;
    crash.name = "crashy";
    crash.kind = TrainerKind::external;
    crash.command = std::string(FAKE_TRAINER_PATH) + " --mode crash-on-train";
    crash.checkpoint = "fake/echo";
    plan.trainers.push_back(crash);
    const std::map<std::string, TrainConfig> tuned{{"baseline", TrainConfig{1e-5, 16, 0}},
                                                   {"crashy", TrainConfig{1e-5, 16, 0}}};
    const auto report = run_sweep(plan, tuned, mock_split(), ctx);
    ASSERT_EQ(report.records.size(), 8u);
    for (const auto& r : report.records) {
        if (r.trainer == "crashy") {
            EXPECT_TRUE(r.failed());
            EXPECT_FALSE(r.error.empty());
        } else {
            EXPECT_FALSE(r.failed()) << r.error;
        }
    }
    for (const auto& a : report.aggregates) {
        if (a.trainer == "crashy") {
            EXPECT_EQ(a.failed, 2u);
            EXPECT_EQ(a.runs, 0u);
            EXPECT_TRUE(std::isnan(a.mean_macro_f1));
        }
    }
    // failed cells survive every output format
    const auto csv = parse_csv(emit_report(report, ReportFormat::csv));
    EXPECT_EQ(csv.size(), 9u);
    const auto plot = nlohmann::json::parse(emit_report(report, ReportFormat::plotdata));
    EXPECT_TRUE(plot.at("series").at(1).at("y").at(0).is_null());
    fs::remove_all(ctx.run_dir);
}

TEST(Sweep, ExternalCellsWriteDataManifests) {
    SyntheticFixture fx({20, 20, 20}, 2);
    Context ctx;
    ctx.run_dir = fresh_dir("external");
    ctx.inputs_dir = ctx.run_dir / "inputs";
    ExperimentPlan plan;
    TrainerSpec ext;
    ext.name = "fake";
    ext.kind = TrainerKind::external;
    ext.command = FAKE_TRAINER_PATH;
    ext.checkpoint = "fake/echo";
    plan.trainers = {ext};
    plan.ladder_sizes = {5};
    plan.epochs = 4;
    const auto report = run_sweep(plan, {{"fake", TrainConfig{1e-5, 16, 0}}}, fx.split, ctx);
    ASSERT_EQ(report.records.size(), 1u);
    ASSERT_FALSE(report.records[0].failed()) << report.records[0].error;
    const auto manifest_path = ctx.run_dir / "cells" / "fake_5_0" / "data.json";
    ASSERT_TRUE(fs::exists(manifest_path));
    std::ifstream in(manifest_path);
    const auto manifest = nlohmann::json::parse(in);
    EXPECT_EQ(manifest.at("train").size(), 15u);
    EXPECT_EQ(manifest.at("test").size(), fx.split.test.size());

    // the adapter's skill at lr 1e-5 after 4 epochs is 0.5: half the test
    // items are right, the rest called nominal
    std::vector<DefectLabel> truths;
    for (const auto& e : fx.split.test.entries()) {
        truths.push_back(e.label);
    }
    std::vector<DefectLabel> pred(truths.size(), DefectLabel::nominal);
    const auto hits = static_cast<std::size_t>(std::lround(0.5 * static_cast<double>(truths.size())));
    std::copy(truths.begin(), truths.begin() + static_cast<std::ptrdiff_t>(hits), pred.begin());
    EXPECT_NEAR(report.records[0].report->macro_f1, macro_f1(truths, pred), 1e-9);
    fs::remove_all(ctx.run_dir);
}

TEST(Report, CsvLayout) {
    MockContext mc;
    auto plan = mock_plan();
    plan.seeds = {0};
    plan.ladder_sizes = {20};
    const auto report = run_sweep(plan, {{"baseline", TrainConfig{1e-5, 16, 0}}}, mock_split(), mc.ctx);
    const auto rows = parse_csv(emit_report(report, ReportFormat::csv));
    ASSERT_EQ(rows.size(), 2u);
    const std::vector<std::string> header{"trainer",  "train_size", "seed",    "lr",          "batch_size",
                                          "macro_f1", "nominal_acc", "gap_acc", "overlap_acc", "wall_seconds"};
    EXPECT_EQ(rows[0], header);
    EXPECT_EQ(rows[1].size(), header.size());
    EXPECT_EQ(rows[1][0], "baseline");
    EXPECT_EQ(rows[1][1], "20");
}

TEST(Report, JsonToCsvRoundTrip) {
    MockContext mc;
    const auto report = run_sweep(mock_plan(), {{"baseline", TrainConfig{2e-5, 64, 0}}}, mock_split(), mc.ctx);
    const auto direct = parse_csv(emit_report(report, ReportFormat::csv));
    const auto via_json =
        parse_csv(emit_report(report_from_json(nlohmann::json::parse(emit_report(report, ReportFormat::json))),
                              ReportFormat::csv));
    ASSERT_EQ(direct.size(), via_json.size());
    for (std::size_t i = 1; i < direct.size(); ++i) {
        ASSERT_EQ(direct[i].size(), via_json[i].size());
        EXPECT_EQ(direct[i][0], via_json[i][0]);
        for (std::size_t c = 1; c < direct[i].size(); ++c) {
            EXPECT_NEAR(std::stod(direct[i][c]), std::stod(via_json[i][c]), 5e-7) << "column " << c;
        }
    }
}

TEST(Report, PlotdataSeriesPerTrainer) {
    MockContext mc;
    auto plan = mock_plan();
    TrainerSpec b;
    b.name = "b";
    b.model_size_mb = 46;
    plan.trainers.push_back(b);
    const auto report = run_sweep(plan, {{"baseline", TrainConfig{1e-5, 16, 0}}, {"b", TrainConfig{1e-6, 16, 0}}},
                                  mock_split(), mc.ctx);
    const auto plot = nlohmann::json::parse(emit_report(report, ReportFormat::plotdata));
    ASSERT_EQ(plot.at("series").size(), 2u);
    const auto& s = plot.at("series").at(1);
    EXPECT_EQ(s.at("trainer"), "b");
    EXPECT_EQ(s.at("x"), nlohmann::json({20, 40}));
    EXPECT_EQ(s.at("model_size_mb"), 46);
    EXPECT_EQ(s.at("error").size(), 2u);
    EXPECT_FALSE(plot.at("series").at(0).contains("model_size_mb"));
}

TEST(Report, EmptyAndUnknownFormat) {
    EXPECT_THROW(emit_report(SweepReport{}, ReportFormat::csv), ConfigError);
    EXPECT_THROW(parse_report_format("xlsx"), ConfigError);
    EXPECT_EQ(parse_report_format("plotdata"), ReportFormat::plotdata);
}

TEST(Sweep, LargerSubsetDoesNotHurt) {
    // ladder [200, 2000] on generator data with the builtin learner
    SyntheticFixture fx({3200, 3200, 3200}, 11);
    Context ctx;
    ctx.features = &fx.store;
    ExperimentPlan plan;
    plan.ladder_sizes = {200, 2000};
    plan.epochs = 32;
    const auto report = run_sweep(plan, {{"baseline", TrainConfig{1e-4, 16, 0}}}, fx.split, ctx);
    ASSERT_EQ(report.aggregates.size(), 2u);
    const double small = report.aggregates[0].mean_macro_f1;
    const double large = report.aggregates[1].mean_macro_f1;
    RecordProperty("macro_f1_200", format_double(small));
    RecordProperty("macro_f1_2000", format_double(large));
    EXPECT_GE(large, small - 0.02);
}
