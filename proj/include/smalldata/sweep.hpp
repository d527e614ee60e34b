#pragma once

// Two-phase experiment: ASHA tuning of each trainer on a balanced tuning
// subset, then fine-tuning from scratch on every rung of the nested
// training-size ladder for every seed, scored on the untouched test split.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "smalldata/asha.hpp"
#include "smalldata/catalog.hpp"
#include "smalldata/datakit.hpp"
#include "smalldata/error.hpp"
#include "smalldata/external.hpp"
#include "smalldata/format.hpp"
#include "smalldata/heightfield.hpp"
#include "smalldata/learner.hpp"
#include "smalldata/metrics.hpp"
#include "smalldata/preprocess.hpp"
#include "smalldata/tiff.hpp"

namespace smalldata::sweep {

namespace fs = std::filesystem;

enum class TrainerKind { builtin, external };

struct TrainerSpec {
    std::string name = "baseline";
    TrainerKind kind = TrainerKind::builtin;
    std::string command;    // external only
    std::string checkpoint; // external only
    std::optional<int> model_size_mb;
};

/// "builtin" or "external:<command>".
inline TrainerSpec parse_trainer_arg(const std::string& arg) {
    if (arg == "builtin") {
        return TrainerSpec{};
    }
    constexpr std::string_view prefix = "external:";
    if (arg.rfind(prefix, 0) == 0 && arg.size() > prefix.size()) {
        TrainerSpec s;
        s.name = "external";
        s.kind = TrainerKind::external;
        s.command = arg.substr(prefix.size());
        return s;
    }
    throw ConfigError("trainer must be 'builtin' or 'external:<command>', got '" + arg + "'");
}

struct ExperimentPlan {
    std::vector<TrainerSpec> trainers{TrainerSpec{}};
    std::vector<std::size_t> ladder_sizes{200, 400, 600, 800, 1200, 1600, 2000};
    std::size_t tuning_examples_per_class = 512;
    asha::AshaConfig asha{};
    asha::SearchSpace search_space{};
    SplitSpec split{};
    std::vector<std::uint64_t> seeds{0};
    int epochs = 32;
    int pool_factor = 4;

    void validate() const {
        if (trainers.empty()) {
            throw ConfigError("plan: no trainers");
        }
        std::unordered_set<std::string> names;
        for (const auto& t : trainers) {
            if (!names.insert(t.name).second) {
                throw ConfigError("plan: duplicate trainer name '" + t.name + "'");
            }
            if (t.kind == TrainerKind::external && t.command.empty()) {
                throw ConfigError("plan: external trainer '" + t.name + "' has no command");
            }
        }
        if (ladder_sizes.empty()) {
            throw ConfigError("plan: ladder is empty");
        }
        for (std::size_t i = 0; i < ladder_sizes.size(); ++i) {
            if (ladder_sizes[i] == 0 || (i > 0 && ladder_sizes[i] <= ladder_sizes[i - 1])) {
                throw ConfigError("plan: ladder sizes must be positive and strictly increasing");
            }
        }
        if (seeds.empty()) {
            throw ConfigError("plan: seeds must be non-empty");
        }
        if (epochs < 0) {
            throw ConfigError("plan: epochs must be >= 0");
        }
        asha.validate();
        search_space.validate();
        split.validate();
    }
};

// Data access ---------------------------------------------------------------------

using PatchSource = std::function<HeightImage(const IndexEntry&)>;

/// Reads `<dir>/<file>` for each manifest entry, or regenerates the patch from
/// its recorded seed when no directory is given.
inline PatchSource manifest_source(const DatasetManifest& manifest, std::optional<fs::path> dir = std::nullopt) {
    auto by_id = std::make_shared<std::unordered_map<std::string, ManifestEntry>>();
    for (const auto& e : manifest.patches) {
        by_id->emplace(e.item_id, e);
    }
    const auto cfg = manifest.config;
    return [by_id, cfg, dir](const IndexEntry& entry) {
        const auto it = by_id->find(entry.item_id);
        if (it == by_id->end()) {
            throw IoError("item '" + entry.item_id + "' not in dataset manifest");
        }
        if (dir) {
            return tiff::read_file(*dir / it->second.file, cfg.calibration);
        }
        return synthesize_patch(cfg, it->second.label, it->second.provenance.seed).image;
    };
}

/// Features per item id, computed once through quantize_center + featurize.
class FeatureStore {
public:
    FeatureStore(PatchSource source, int pool_factor) : source_(std::move(source)), pool_factor_(pool_factor) {}

    void prepare(const DatasetIndex& index) {
        for (const auto& e : index.entries()) {
            if (features_.count(e.item_id) == 0) {
                features_.emplace(e.item_id, featurize(quantize_center(source_(e)), pool_factor_));
            }
        }
    }

    /// Requires every entry to have been prepared; safe to call concurrently.
    LabeledFeatures gather(const DatasetIndex& index) const {
        LabeledFeatures out;
        for (const auto& e : index.entries()) {
            const auto it = features_.find(e.item_id);
            if (it == features_.end()) {
                throw Error("feature store: item '" + e.item_id + "' not prepared");
            }
            out.add(e.item_id, e.label, it->second);
        }
        return out;
    }

    int pool_factor() const noexcept { return pool_factor_; }
    std::size_t size() const noexcept { return features_.size(); }

private:
    PatchSource source_;
    int pool_factor_;
    std::unordered_map<std::string, std::vector<double>> features_;
};

struct Context {
    FeatureStore* features = nullptr; // builtin trainers
    fs::path run_dir;                 // event logs and external data manifests (optional)
    fs::path inputs_dir;              // serialized ModelInputs for external trainers
    std::function<void(const std::string&)> log;
    /// Overrides trainer construction for every spec (test doubles, custom
    /// in-process trainers). Arguments: spec, train, eval, test.
    std::function<TrainerFactory(const TrainerSpec&, const DatasetIndex&, const DatasetIndex&, const DatasetIndex&)>
        make_trainer;
};

namespace detail {

inline void say(const Context& ctx, const std::string& msg) {
    if (ctx.log) {
        ctx.log(msg);
    }
}

inline void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out << text;
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

inline nlohmann::json input_list(const DatasetIndex& index, const fs::path& inputs_dir) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : index.entries()) {
        arr.push_back({{"id", e.item_id}, {"label", e.label}, {"input", (inputs_dir / (e.item_id + ".smi")).string()}});
    }
    return arr;
}

inline TrainerFactory make_factory(const TrainerSpec& spec, const ExperimentPlan& plan, const Context& ctx,
                                   const fs::path& data_manifest, const DatasetIndex& train, const DatasetIndex& eval,
                                   const DatasetIndex& test) {
    if (ctx.make_trainer) {
        return ctx.make_trainer(spec, train, eval, test);
    }
    if (spec.kind == TrainerKind::builtin) {
        if (ctx.features == nullptr) {
            throw ConfigError("builtin trainer needs a feature store");
        }
        auto data = std::make_shared<LearnerData>();
        data->train = ctx.features->gather(train);
        data->eval = ctx.features->gather(eval);
        data->test = ctx.features->gather(test);
        data->pool_factor = plan.pool_factor;
        std::shared_ptr<const LearnerData> shared = data;
        return [shared] { return std::make_unique<BaselineTrainer>(shared); };
    }
    if (ctx.run_dir.empty()) {
        throw ConfigError("external trainer '" + spec.name + "' needs a run directory");
    }
    nlohmann::json manifest = {{"train", input_list(train, ctx.inputs_dir)},
                               {"eval", input_list(eval, ctx.inputs_dir)},
                               {"test", input_list(test, ctx.inputs_dir)}};
    write_text(data_manifest, manifest.dump(1));
    ExternalTrainerOptions opts;
    opts.command = spec.command;
    opts.checkpoint = spec.checkpoint;
    opts.data_manifest = data_manifest.string();
    return [opts] { return std::make_unique<ExternalTrainer>(opts); };
}

inline void check_hygiene(const DatasetIndex& test, std::initializer_list<const DatasetIndex*> others) {
    const auto test_ids = test.id_set();
    for (const auto* part : others) {
        for (const auto& e : part->entries()) {
            if (test_ids.count(e.item_id) != 0) {
                throw Error("test split contaminated by training/eval item '" + e.item_id + "'");
            }
        }
    }
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
    const auto threads = static_cast<std::size_t>(std::max(1, workers));
    if (threads == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                fn(i);
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
}

} // namespace detail

// Tuning ----------------------------------------------------------------------

struct TuneResult {
    std::string trainer;
    asha::BestTrial best;
    asha::RunStats stats;
    std::string event_log;
};

/// ASHA over the tuning subset (train split balanced to
/// tuning_examples_per_class) scored on the eval split. Persists the event
/// log under <run_dir>/tune/<trainer>/ when a run directory is set.
inline TuneResult tune(const ExperimentPlan& plan, const TrainerSpec& spec, const SplitResult& split,
                       const Context& ctx) {
    plan.validate();
    const std::uint64_t seed = plan.seeds.front();
    const auto tuning_train = balance(split.train, plan.tuning_examples_per_class, seed);
    detail::check_hygiene(split.test, {&tuning_train, &split.eval});
    if (ctx.features != nullptr && spec.kind == TrainerKind::builtin && !ctx.make_trainer) {
        ctx.features->prepare(tuning_train);
        ctx.features->prepare(split.eval);
    }
    const fs::path dir = ctx.run_dir.empty() ? fs::path{} : ctx.run_dir / "tune" / spec.name;
    auto factory = detail::make_factory(spec, plan, ctx, dir / "data.json", tuning_train, split.eval, DatasetIndex{});

    asha::Scheduler sched(plan.asha, plan.search_space, seed);
    detail::say(ctx, "tuning '" + spec.name + "': " + std::to_string(plan.asha.n_trials) + " trials, " +
                         std::to_string(tuning_train.size()) + " training items");
    TuneResult out;
    out.trainer = spec.name;
    out.stats = asha::run(sched, plan.asha.workers, asha::trainer_executor(std::move(factory)));
    out.event_log = asha::event_log_jsonl(sched);
    if (!dir.empty()) {
        detail::write_text(dir / "events.jsonl", out.event_log);
    }
    out.best = sched.best_trial();
    return out;
}

/// Tuning result file: best configuration per trainer name.
inline nlohmann::json tuning_results_json(const std::vector<TuneResult>& results) {
    nlohmann::json models = nlohmann::json::object();
    for (const auto& r : results) {
        models[r.trainer] = {{"learning_rate", r.best.config.learning_rate},
                             {"batch_size", r.best.config.batch_size},
                             {"seed", r.best.config.seed},
                             {"trial", r.best.trial},
                             {"rung", r.best.rung},
                             {"metric", r.best.metric}};
    }
    return {{"models", models}};
}

inline std::map<std::string, TrainConfig> tuned_configs_from_json(const nlohmann::json& j) {
    std::map<std::string, TrainConfig> out;
    for (const auto& [name, v] : j.at("models").items()) {
        out[name] = v.get<TrainConfig>();
    }
    return out;
}

// Sweep ---------------------------------------------------------------------

struct RunRecord {
    std::string trainer;
    std::size_t train_size = 0;
    std::uint64_t seed = 0;
    TrainConfig config;
    std::optional<EvalReport> report; // empty when the cell failed
    double wall_seconds = 0.0;
    std::string error;

    bool failed() const noexcept { return !report.has_value(); }
};

struct Aggregate {
    std::string trainer;
    std::size_t train_size = 0;
    double mean_macro_f1 = 0.0;
    double spread = 0.0; // sample standard deviation over seeds
    std::size_t runs = 0;
    std::size_t failed = 0;
    std::optional<int> model_size_mb;
};

struct SweepReport {
    std::vector<RunRecord> records;
    std::vector<Aggregate> aggregates;
};

inline std::vector<Aggregate> aggregate(const std::vector<RunRecord>& records,
                                        const std::map<std::string, int>& sizes_mb = {}) {
    std::vector<Aggregate> out;
    auto find = [&](const RunRecord& r) -> Aggregate& {
        for (auto& a : out) {
            if (a.trainer == r.trainer && a.train_size == r.train_size) {
                return a;
            }
        }
        Aggregate a;
        a.trainer = r.trainer;
        a.train_size = r.train_size;
        if (const auto it = sizes_mb.find(r.trainer); it != sizes_mb.end()) {
            a.model_size_mb = it->second;
        }
        out.push_back(a);
        return out.back();
    };
    std::map<std::pair<std::string, std::size_t>, std::vector<double>> values;
    for (const auto& r : records) {
        auto& a = find(r);
        if (r.failed()) {
            ++a.failed;
        } else {
            ++a.runs;
            values[{r.trainer, r.train_size}].push_back(r.report->macro_f1);
        }
    }
    for (auto& a : out) {
        const auto& v = values[{a.trainer, a.train_size}];
        if (v.empty()) {
            a.mean_macro_f1 = std::nan("");
            continue;
        }
        double sum = 0.0;
        for (double x : v) {
            sum += x;
        }
        a.mean_macro_f1 = sum / static_cast<double>(v.size());
        if (v.size() > 1) {
            double ss = 0.0;
            for (double x : v) {
                ss += (x - a.mean_macro_f1) * (x - a.mean_macro_f1);
            }
            a.spread = std::sqrt(ss / static_cast<double>(v.size() - 1));
        }
    }
    return out;
}

/// Fine-tunes every (trainer, ladder size, seed) cell from a fresh
/// initialization with the trainer's tuned configuration. Failed cells are
/// recorded and the sweep continues.
inline SweepReport run_sweep(const ExperimentPlan& plan, const std::map<std::string, TrainConfig>& tuned,
                             const SplitResult& split, const Context& ctx) {
    plan.validate();
    for (const auto& t : plan.trainers) {
        if (tuned.count(t.name) == 0) {
            throw ConfigError("sweep: no tuned configuration for trainer '" + t.name + "'");
        }
    }

    // Ladders depend only on (train split, seed, sizes): shared by all trainers.
    std::vector<std::vector<DatasetIndex>> ladders;
    for (auto seed : plan.seeds) {
        ladders.push_back(subset_ladder(split.train, plan.ladder_sizes, seed));
        detail::check_hygiene(split.test, {&ladders.back().back(), &split.eval});
    }
    const bool any_builtin = std::any_of(plan.trainers.begin(), plan.trainers.end(),
                                         [](const TrainerSpec& t) { return t.kind == TrainerKind::builtin; });
    if (any_builtin && ctx.features != nullptr && !ctx.make_trainer) {
        for (const auto& ladder : ladders) {
            ctx.features->prepare(ladder.back());
        }
        ctx.features->prepare(split.eval);
        ctx.features->prepare(split.test);
    }

    struct Cell {
        std::size_t trainer;
        std::size_t size;
        std::size_t seed;
    };
    std::vector<Cell> cells;
    for (std::size_t t = 0; t < plan.trainers.size(); ++t) {
        for (std::size_t s = 0; s < plan.ladder_sizes.size(); ++s) {
            for (std::size_t k = 0; k < plan.seeds.size(); ++k) {
                cells.push_back({t, s, k});
            }
        }
    }

    std::vector<RunRecord> records(cells.size());
    std::mutex log_mu;
    detail::parallel_for(cells.size(), plan.asha.workers, [&](std::size_t i) {
        const auto& cell = cells[i];
        const auto& spec = plan.trainers[cell.trainer];
        RunRecord& rec = records[i];
        rec.trainer = spec.name;
        rec.train_size = plan.ladder_sizes[cell.size];
        rec.seed = plan.seeds[cell.seed];
        rec.config = tuned.at(spec.name);
        rec.config.seed = rec.seed;
        const auto start = std::chrono::steady_clock::now();
        try {
            const auto& subset = ladders[cell.seed][cell.size];
            const fs::path data_manifest = ctx.run_dir.empty()
                                               ? fs::path{}
                                               : ctx.run_dir / "cells" /
                                                     (spec.name + "_" + std::to_string(rec.train_size) + "_" +
                                                      std::to_string(rec.seed)) /
                                                     "data.json";
            auto factory = detail::make_factory(spec, plan, ctx, data_manifest, subset, split.eval, split.test);
            auto handle = factory();
            handle->init(rec.config);
            handle->train(plan.epochs);
            rec.report = handle->evaluate_test();
            handle->shutdown();
        } catch (const std::exception& e) {
            rec.error = e.what();
        }
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::lock_guard guard(log_mu);
        detail::say(ctx, spec.name + " size=" + std::to_string(rec.train_size) + " seed=" + std::to_string(rec.seed) +
                             (rec.failed() ? " FAILED: " + rec.error
                                           : " macro_f1=" + format_double(rec.report->macro_f1)));
    });

    std::map<std::string, int> sizes_mb;
    for (const auto& t : plan.trainers) {
        if (t.model_size_mb) {
            sizes_mb[t.name] = *t.model_size_mb;
        }
    }
    SweepReport report;
    report.aggregates = aggregate(records, sizes_mb);
    report.records = std::move(records);
    return report;
}

// Report output ------------------------------------------------------------------

enum class ReportFormat { csv, json, plotdata };

inline ReportFormat parse_report_format(const std::string& s) {
    if (s == "csv") {
        return ReportFormat::csv;
    }
    if (s == "json") {
        return ReportFormat::json;
    }
    if (s == "plotdata") {
        return ReportFormat::plotdata;
    }
    throw ConfigError("unknown report format '" + s + "' (csv, json, plotdata)");
}

inline constexpr std::string_view kCsvHeader =
    "trainer,train_size,seed,lr,batch_size,macro_f1,nominal_acc,gap_acc,overlap_acc,wall_seconds";

namespace detail {

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    return out + "\"";
}

inline std::string class_accuracy(const RunRecord& r, DefectLabel label) {
    if (r.failed()) {
        return {};
    }
    const auto* s = r.report->find(label);
    return s ? format_double(s->accuracy) : std::string{};
}

} // namespace detail

inline nlohmann::json to_json(const SweepReport& report) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : report.records) {
        nlohmann::json j = {{"trainer", r.trainer},     {"train_size", r.train_size},
                            {"seed", r.seed},           {"config", r.config},
                            {"wall_seconds", r.wall_seconds}};
        j["report"] = r.report ? nlohmann::json(*r.report) : nlohmann::json(nullptr);
        if (!r.error.empty()) {
            j["error"] = r.error;
        }
        records.push_back(std::move(j));
    }
    nlohmann::json aggregates = nlohmann::json::array();
    for (const auto& a : report.aggregates) {
        nlohmann::json j = {{"trainer", a.trainer}, {"train_size", a.train_size}, {"runs", a.runs},
                            {"failed", a.failed},   {"spread", a.spread}};
        j["mean_macro_f1"] = std::isnan(a.mean_macro_f1) ? nlohmann::json(nullptr) : nlohmann::json(a.mean_macro_f1);
        if (a.model_size_mb) {
            j["model_size_mb"] = *a.model_size_mb;
        }
        aggregates.push_back(std::move(j));
    }
    return {{"records", records}, {"aggregates", aggregates}};
}

inline SweepReport report_from_json(const nlohmann::json& j) {
    SweepReport out;
    std::map<std::string, int> sizes_mb;
    for (const auto& r : j.at("records")) {
        RunRecord rec;
        rec.trainer = r.at("trainer").get<std::string>();
        rec.train_size = r.at("train_size").get<std::size_t>();
        rec.seed = r.at("seed").get<std::uint64_t>();
        rec.config = r.at("config").get<TrainConfig>();
        rec.wall_seconds = r.value("wall_seconds", 0.0);
        if (r.contains("report") && !r.at("report").is_null()) {
            rec.report = r.at("report").get<EvalReport>();
        }
        rec.error = r.value("error", std::string{});
        out.records.push_back(std::move(rec));
    }
    if (j.contains("aggregates")) {
        for (const auto& a : j.at("aggregates")) {
            if (a.contains("model_size_mb")) {
                sizes_mb[a.at("trainer").get<std::string>()] = a.at("model_size_mb").get<int>();
            }
        }
    }
    out.aggregates = aggregate(out.records, sizes_mb);
    return out;
}

inline std::string emit_report(const SweepReport& report, ReportFormat format) {
    if (report.records.empty()) {
        throw ConfigError("report: no records");
    }
    switch (format) {
    case ReportFormat::json:
        return to_json(report).dump(2) + "\n";
    case ReportFormat::csv: {
        std::string out(kCsvHeader);
        out += '\n';
        for (const auto& r : report.records) {
            out += detail::csv_field(r.trainer) + ',' + std::to_string(r.train_size) + ',' + std::to_string(r.seed) +
                   ',' + format_double(r.config.learning_rate) + ',' + std::to_string(r.config.batch_size) + ',' +
                   (r.failed() ? std::string{} : format_double(r.report->macro_f1)) + ',' +
                   detail::class_accuracy(r, DefectLabel::nominal) + ',' + detail::class_accuracy(r, DefectLabel::gap) +
                   ',' + detail::class_accuracy(r, DefectLabel::overlap) + ',' + format_double(r.wall_seconds) + '\n';
        }
        return out;
    }
    case ReportFormat::plotdata: {
        nlohmann::json series = nlohmann::json::array();
        std::vector<std::string> order;
        for (const auto& a : report.aggregates) {
            if (std::find(order.begin(), order.end(), a.trainer) == order.end()) {
                order.push_back(a.trainer);
            }
        }
        for (const auto& name : order) {
            nlohmann::json s = {{"trainer", name}, {"x", nlohmann::json::array()}, {"y", nlohmann::json::array()},
                                {"error", nlohmann::json::array()}};
            for (const auto& a : report.aggregates) {
                if (a.trainer != name) {
                    continue;
                }
                s["x"].push_back(a.train_size);
                s["y"].push_back(std::isnan(a.mean_macro_f1) ? nlohmann::json(nullptr)
                                                             : nlohmann::json(a.mean_macro_f1));
                s["error"].push_back(a.spread);
                if (a.model_size_mb) {
                    s["model_size_mb"] = *a.model_size_mb;
                }
            }
            series.push_back(std::move(s));
        }
        return nlohmann::json({{"series", series}}).dump(2) + "\n";
    }
    }
    return {};
}

// Plan file -------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const TrainerSpec& t) {
    j = {{"name", t.name}, {"kind", t.kind == TrainerKind::builtin ? "builtin" : "external"}};
    if (t.kind == TrainerKind::external) {
        j["command"] = t.command;
        j["checkpoint"] = t.checkpoint;
    }
    if (t.model_size_mb) {
        j["model_size_mb"] = *t.model_size_mb;
    }
}

/// An external spec may name a catalog entry ("catalog": "resnet-18") to pick
/// up its checkpoint id and model size.
inline void from_json(const nlohmann::json& j, TrainerSpec& t) {
    t = TrainerSpec{};
    const auto kind = j.value("kind", std::string("builtin"));
    if (kind == "builtin") {
        t.kind = TrainerKind::builtin;
    } else if (kind == "external") {
        t.kind = TrainerKind::external;
    } else {
        throw ConfigError("plan: unknown trainer kind '" + kind + "'");
    }
    t.name = j.value("name", kind == "builtin" ? std::string("baseline") : std::string("external"));
    t.command = j.value("command", std::string{});
    if (j.contains("catalog")) {
        const auto name = j.at("catalog").get<std::string>();
        const auto entry = find_catalog_entry(name);
        if (!entry) {
            throw ConfigError("plan: unknown catalog model '" + name + "'");
        }
        t.checkpoint = std::string(entry->checkpoint);
        t.model_size_mb = entry->model_size_mb;
        if (!j.contains("name")) {
            t.name = name;
        }
    }
    t.checkpoint = j.value("checkpoint", t.checkpoint);
    if (j.contains("model_size_mb")) {
        t.model_size_mb = j.at("model_size_mb").get<int>();
    }
}

inline void to_json(nlohmann::json& j, const ExperimentPlan& p) {
    j = {{"trainers", p.trainers},
         {"ladder_sizes", p.ladder_sizes},
         {"tuning_examples_per_class", p.tuning_examples_per_class},
         {"asha", p.asha},
         {"search_space", p.search_space},
         {"split", p.split},
         {"seeds", p.seeds},
         {"epochs", p.epochs},
         {"pool_factor", p.pool_factor}};
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, ExperimentPlan& p) {
    p = ExperimentPlan{};
    if (j.contains("trainers")) {
        p.trainers = j.at("trainers").get<std::vector<TrainerSpec>>();
    }
    if (j.contains("ladder_sizes")) {
        p.ladder_sizes = j.at("ladder_sizes").get<std::vector<std::size_t>>();
    }
    p.tuning_examples_per_class = j.value("tuning_examples_per_class", p.tuning_examples_per_class);
    if (j.contains("asha")) {
        p.asha = j.at("asha").get<asha::AshaConfig>();
    }
    if (j.contains("search_space")) {
        p.search_space = j.at("search_space").get<asha::SearchSpace>();
    }
    if (j.contains("split")) {
        p.split = j.at("split").get<SplitSpec>();
    }
    if (j.contains("seeds")) {
        p.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    }
    p.epochs = j.value("epochs", p.asha.max_t);
    p.pool_factor = j.value("pool_factor", p.pool_factor);
}

} // namespace smalldata::sweep
