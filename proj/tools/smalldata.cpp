// smalldata: command-line driver for dataset generation, splitting,
// preprocessing, ASHA tuning, the training-size sweep and reporting.
//
// Exit codes: 0 success, 1 domain or IO failure, 2 usage error.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "smalldata/asha.hpp"
#include "smalldata/audit.hpp"
#include "smalldata/datakit.hpp"
#include "smalldata/heightfield.hpp"
#include "smalldata/learner.hpp"
#include "smalldata/preprocess.hpp"
#include "smalldata/sweep.hpp"
#include "smalldata/tiff.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace smalldata;

namespace {

constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kSplitFile = "split.json";
constexpr const char* kTuningFile = "tuning.json";
constexpr const char* kReportFile = "report.json";
constexpr const char* kRunFile = "run.json";

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
}

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

LabelCounts parse_counts(const std::string& text) {
    LabelCounts counts{};
    std::stringstream ss(text);
    std::string part;
    std::size_t i = 0;
    while (std::getline(ss, part, ',')) {
        if (i >= kNumLabels || part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
            throw UsageError("--counts expects three non-negative integers N,N,N");
        }
        counts[i++] = std::stoull(part);
    }
    if (i != kNumLabels) {
        throw UsageError("--counts expects three non-negative integers N,N,N");
    }
    return counts;
}

// Config file: one JSON document {"synthesis": {...}, "plan": {...}}.
json load_config(const std::string& path) {
    if (path.empty()) {
        return json::object();
    }
    auto j = read_json(path);
    if (!j.is_object()) {
        throw ConfigError(path + ": config must be a JSON object");
    }
    return j;
}

struct DataSet {
    fs::path dir;
    DatasetManifest manifest;
    DatasetIndex index;
};

DataSet load_data(const fs::path& dir) {
    DataSet d;
    d.dir = dir;
    d.manifest = read_json(dir / kManifestFile).get<DatasetManifest>();
    d.index = DatasetIndex::from_manifest(d.manifest);
    return d;
}

// Appends one entry to <run>/run.json, the only file carrying timestamps.
void record_run(const fs::path& run, const std::string& command, const std::vector<std::string>& argv,
                const std::string& started, const json& extra) {
    json manifest = fs::exists(run / kRunFile) ? read_json(run / kRunFile) : json{{"version", 1}, {"steps", json::array()}};
    json step = {{"command", command}, {"argv", argv}, {"started", started}, {"finished", utc_now()}};
    for (const auto& [k, v] : extra.items()) {
        step[k] = v;
    }
    manifest["steps"].push_back(step);
    write_file(run / kRunFile, manifest.dump(2) + "\n");
}

SplitResult load_or_make_split(const fs::path& run, const DataSet& data, const SplitSpec& spec) {
    const auto path = run / kSplitFile;
    if (fs::exists(path)) {
        const auto j = read_json(path);
        return j.at("split").get<SplitResult>();
    }
    auto split = stratified_split(data.index, spec);
    write_file(path, json({{"spec", spec}, {"split", split}}).dump(1) + "\n");
    return split;
}

std::string histogram_text(const LabelCounts& c) {
    std::string out;
    for (auto label : kAllLabels) {
        out += std::string(to_string(label)) + "=" + std::to_string(c[label_index(label)]) + " ";
    }
    out.pop_back();
    return out;
}

// Experiment options shared by tune and sweep.
struct ExperimentArgs {
    std::string data;
    std::string run;
    std::string config;
    std::vector<std::string> trainers;
    std::string checkpoint;
    std::string inputs;
    std::optional<int> workers;
    std::optional<int> trials;
    std::optional<int> epochs;
    std::string ladder;
    std::string seeds;
    std::optional<std::size_t> tuning_per_class;
};

void add_experiment_options(CLI::App* cmd, ExperimentArgs& a) {
    cmd->add_option("--data", a.data, "dataset directory (from generate)")->required();
    cmd->add_option("--run", a.run, "run directory")->required();
    cmd->add_option("--config", a.config, "JSON config file");
    cmd->add_option("--trainer", a.trainers, "builtin | external:<command> (repeatable)");
    cmd->add_option("--checkpoint", a.checkpoint, "checkpoint id for --trainer external:<command>");
    cmd->add_option("--inputs", a.inputs, "ModelInput directory for external trainers (default RUN/inputs)");
    cmd->add_option("--workers", a.workers, "worker count (overrides SMALLDATA_WORKERS and config)")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--trials", a.trials, "ASHA trial count")->check(CLI::PositiveNumber);
    cmd->add_option("--epochs", a.epochs, "fine-tuning epochs per sweep cell")->check(CLI::NonNegativeNumber);
    cmd->add_option("--ladder", a.ladder, "per-class training sizes, e.g. 200,400,800");
    cmd->add_option("--seeds", a.seeds, "sweep seeds, e.g. 0,1,2");
    cmd->add_option("--tuning-per-class", a.tuning_per_class, "tuning subset size per class");
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::string& flag) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
            throw UsageError(flag + " expects a comma-separated list of non-negative integers");
        }
        out.push_back(static_cast<T>(std::stoull(part)));
    }
    if (out.empty()) {
        throw UsageError(flag + " is empty");
    }
    return out;
}

/// Precedence: flag, then SMALLDATA_WORKERS, then config file, then default.
sweep::ExperimentPlan resolve_plan(const ExperimentArgs& a) {
    const auto cfg = load_config(a.config);
    auto plan = cfg.contains("plan") ? cfg.at("plan").get<sweep::ExperimentPlan>() : sweep::ExperimentPlan{};
    if (!a.trainers.empty()) {
        plan.trainers.clear();
        for (const auto& t : a.trainers) {
            auto spec = sweep::parse_trainer_arg(t);
            if (spec.kind == sweep::TrainerKind::external) {
                spec.checkpoint = a.checkpoint;
                const auto n = std::count_if(plan.trainers.begin(), plan.trainers.end(),
                                             [](const auto& s) { return s.kind == sweep::TrainerKind::external; });
                if (n > 0) {
                    spec.name += "-" + std::to_string(n + 1);
                }
            }
            plan.trainers.push_back(spec);
        }
    }
    if (const char* env = std::getenv("SMALLDATA_WORKERS"); env != nullptr && *env != '\0') {
        const std::string text(env);
        if (text.find_first_not_of("0123456789") != std::string::npos || std::stoi(text) < 1) {
            throw ConfigError("SMALLDATA_WORKERS must be a positive integer, got '" + text + "'");
        }
        plan.asha.workers = std::stoi(text);
    }
    if (a.workers) {
        plan.asha.workers = *a.workers;
    }
    if (a.trials) {
        plan.asha.n_trials = *a.trials;
    }
    if (a.epochs) {
        plan.epochs = *a.epochs;
    }
    if (!a.ladder.empty()) {
        plan.ladder_sizes = parse_list<std::size_t>(a.ladder, "--ladder");
    }
    if (!a.seeds.empty()) {
        plan.seeds = parse_list<std::uint64_t>(a.seeds, "--seeds");
    }
    if (a.tuning_per_class) {
        plan.tuning_examples_per_class = *a.tuning_per_class;
    }
    plan.validate();
    return plan;
}

// Writes any missing ModelInput files for the items of `split`.
void ensure_inputs(const DataSet& data, const SplitResult& split, const fs::path& inputs) {
    const auto source = sweep::manifest_source(data.manifest, data.dir);
    fs::create_directories(inputs);
    for (const auto* part : {&split.train, &split.eval, &split.test}) {
        for (const auto& e : part->entries()) {
            const auto path = inputs / (e.item_id + ".smi");
            if (!fs::exists(path)) {
                write_model_input(path, preprocess(source(e), e.item_id));
            }
        }
    }
}

struct Experiment {
    sweep::ExperimentPlan plan;
    DataSet data;
    SplitResult split;
    sweep::FeatureStore store;
    sweep::Context ctx;

    explicit Experiment(const ExperimentArgs& a)
        : plan(resolve_plan(a)), data(load_data(a.data)),
          split(load_or_make_split(a.run, data, plan.split)),
          store(sweep::manifest_source(data.manifest, data.dir), plan.pool_factor) {
        ctx.features = &store;
        ctx.run_dir = a.run;
        ctx.inputs_dir = a.inputs.empty() ? fs::path(a.run) / "inputs" : fs::path(a.inputs);
        ctx.log = [](const std::string& msg) { std::cerr << msg << "\n"; };
        const bool external = std::any_of(plan.trainers.begin(), plan.trainers.end(),
                                          [](const auto& t) { return t.kind == sweep::TrainerKind::external; });
        if (external) {
            ensure_inputs(data, split, ctx.inputs_dir);
        }
    }
};

int cmd_generate(const std::string& out, const std::string& counts_text, std::optional<std::size_t> total,
                 std::optional<std::uint64_t> seed, std::optional<double> noise, const std::string& config) {
    const auto cfg_doc = load_config(config);
    auto cfg = cfg_doc.contains("synthesis") ? cfg_doc.at("synthesis").get<SynthesisConfig>() : SynthesisConfig{};
    if (seed) {
        cfg.seed = *seed;
    }
    if (noise) {
        cfg.noise_sigma_gray = *noise;
    }
    if (counts_text.empty() == !total.has_value()) {
        throw UsageError("generate needs exactly one of --counts or --total");
    }
    const LabelCounts counts = total ? default_label_counts(*total) : parse_counts(counts_text);
    const auto [patches, manifest] = synthesize_dataset(cfg, counts);
    const fs::path dir(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
    }
    for (std::size_t i = 0; i < patches.size(); ++i) {
        tiff::write_file(dir / manifest.patches[i].file, patches[i].image);
    }
    write_file(dir / kManifestFile, json(manifest).dump(1) + "\n");
    std::cout << "wrote " << patches.size() << " patches to " << dir.string() << ": " << histogram_text(counts)
              << "\n";
    return 0;
}

int cmd_split(const std::string& data_dir, const std::string& run, const std::string& config,
              std::optional<std::uint64_t> seed, std::optional<double> train_fraction,
              std::optional<double> eval_fraction, const std::vector<std::string>& argv) {
    const auto started = utc_now();
    const auto cfg = load_config(config);
    auto spec = SplitSpec{};
    if (cfg.contains("plan") && cfg.at("plan").contains("split")) {
        spec = cfg.at("plan").at("split").get<SplitSpec>();
    }
    if (seed) {
        spec.seed = *seed;
    }
    if (train_fraction) {
        spec.train_fraction = *train_fraction;
    }
    if (eval_fraction) {
        spec.eval_fraction_of_train = *eval_fraction;
    }
    const auto data = load_data(data_dir);
    const auto split = stratified_split(data.index, spec);
    write_file(fs::path(run) / kSplitFile, json({{"spec", spec}, {"split", split}}).dump(1) + "\n");
    std::cout << "train: " << histogram_text(split.train.histogram()) << "\n"
              << "eval:  " << histogram_text(split.eval.histogram()) << "\n"
              << "test:  " << histogram_text(split.test.histogram()) << "\n";
    record_run(run, "split", argv, started, {{"data", data_dir}, {"spec", spec}});
    return 0;
}

int cmd_preprocess(const std::string& data_dir, const std::string& out) {
    const auto data = load_data(data_dir);
    const auto source = sweep::manifest_source(data.manifest, data.dir);
    fs::create_directories(out);
    for (const auto& e : data.index.entries()) {
        write_model_input(fs::path(out) / (e.item_id + ".smi"), preprocess(source(e), e.item_id));
    }
    std::cout << "wrote " << data.index.size() << " model inputs to " << out << "\n";
    return 0;
}

int cmd_tune(const ExperimentArgs& a, const std::vector<std::string>& argv) {
    const auto started = utc_now();
    Experiment ex(a);
    std::vector<sweep::TuneResult> results;
    for (const auto& spec : ex.plan.trainers) {
        results.push_back(sweep::tune(ex.plan, spec, ex.split, ex.ctx));
        const auto& b = results.back().best;
        std::cout << spec.name << ": lr=" << format_double(b.config.learning_rate)
                  << " batch_size=" << b.config.batch_size << " rung=" << b.rung
                  << " eval_macro_f1=" << format_double(b.metric) << "\n";
    }
    write_file(fs::path(a.run) / kTuningFile, sweep::tuning_results_json(results).dump(2) + "\n");
    record_run(a.run, "tune", argv, started, {{"data", a.data}, {"plan", ex.plan}});
    return 0;
}

int cmd_sweep(const ExperimentArgs& a, const std::vector<std::string>& argv) {
    const auto started = utc_now();
    Experiment ex(a);
    const auto tuning_path = fs::path(a.run) / kTuningFile;
    if (!fs::exists(tuning_path)) {
        throw ConfigError("no tuning results at " + tuning_path.string() + " (run 'tune' first)");
    }
    const auto tuned = sweep::tuned_configs_from_json(read_json(tuning_path));
    const auto report = sweep::run_sweep(ex.plan, tuned, ex.split, ex.ctx);
    write_file(fs::path(a.run) / kReportFile, sweep::emit_report(report, sweep::ReportFormat::json));
    for (const auto& agg : report.aggregates) {
        std::cout << agg.trainer << " size=" << agg.train_size << " mean_macro_f1=" << format_double(agg.mean_macro_f1)
                  << " spread=" << format_double(agg.spread) << " runs=" << agg.runs << " failed=" << agg.failed
                  << "\n";
    }
    record_run(a.run, "sweep", argv, started, {{"data", a.data}, {"plan", ex.plan}});
    return 0;
}

int cmd_report(const std::string& in, const std::string& format, const std::string& out) {
    const auto report = sweep::report_from_json(read_json(in));
    const auto text = sweep::emit_report(report, sweep::parse_report_format(format));
    if (out.empty()) {
        std::cout << text;
    } else {
        write_file(out, text);
    }
    return 0;
}

int cmd_audit(const std::string& log) {
    std::ifstream in(log);
    if (!in) {
        throw IoError("cannot read " + log);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    const auto r = asha::audit_event_log(ss.str());
    for (const auto& v : r.violations) {
        std::cout << log << ":" << v.line << ": " << v.message << "\n";
    }
    std::cout << (r.ok() ? "ok" : "FAILED") << ": " << r.events << " events, " << r.promotions << " promotions, "
              << r.violations.size() << " violations, budget " << r.budget << "\n";
    return r.ok() ? 0 : 1;
}

int cmd_gradcheck(int draws, std::uint64_t seed, double eps) {
    const auto r = random_gradient_checks(draws, seed, 950, 4, eps);
    const bool ok = r.max_relative_error < 1e-4;
    std::cout << "max relative error " << format_double(r.max_relative_error) << " over " << draws << " draws"
              << (ok ? "" : " (exceeds 1e-4)") << "\n";
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"smalldata: synthetic tape-defect data, ASHA tuning and training-size sweeps"};
    app.require_subcommand(1);
    const std::vector<std::string> args(argv, argv + argc);

    std::string g_out, g_counts, g_config;
    std::optional<std::size_t> g_total;
    std::optional<std::uint64_t> g_seed;
    std::optional<double> g_noise;
    auto* generate = app.add_subcommand("generate", "write synthetic TIFF patches and a manifest");
    generate->add_option("--out", g_out, "output directory")->required();
    generate->add_option("--counts", g_counts, "patches per label: nominal,gap,overlap");
    generate->add_option("--total", g_total, "total patches at the default label ratio");
    generate->add_option("--seed", g_seed, "master seed");
    generate->add_option("--noise", g_noise, "noise sigma in gray levels")->check(CLI::NonNegativeNumber);
    generate->add_option("--config", g_config, "JSON config file");

    std::string s_data, s_run, s_config;
    std::optional<std::uint64_t> s_seed;
    std::optional<double> s_train, s_eval;
    auto* split = app.add_subcommand("split", "stratified train/eval/test split");
    split->add_option("--data", s_data, "dataset directory")->required();
    split->add_option("--out", s_run, "run directory")->required();
    split->add_option("--config", s_config, "JSON config file");
    split->add_option("--seed", s_seed, "split seed");
    split->add_option("--train-fraction", s_train, "fraction of each label for training");
    split->add_option("--eval-fraction", s_eval, "fraction of the training part carved out for eval");

    std::string p_data, p_out;
    auto* prep = app.add_subcommand("preprocess", "write 224x224x3 model inputs for every patch");
    prep->add_option("--data", p_data, "dataset directory")->required();
    prep->add_option("--out", p_out, "output directory")->required();

    ExperimentArgs tune_args;
    auto* tune = app.add_subcommand("tune", "ASHA hyperparameter search per trainer");
    add_experiment_options(tune, tune_args);

    ExperimentArgs sweep_args;
    auto* sweep_cmd = app.add_subcommand("sweep", "fine-tune every trainer on every ladder size and seed");
    add_experiment_options(sweep_cmd, sweep_args);

    std::string r_in, r_format = "csv", r_out;
    auto* report = app.add_subcommand("report", "convert report.json to csv, json or plotdata");
    report->add_option("--in", r_in, "report.json")->required();
    report->add_option("--format", r_format, "csv | json | plotdata")->check(CLI::IsMember({"csv", "json", "plotdata"}));
    report->add_option("--out", r_out, "output file (default stdout)");

    std::string a_log;
    auto* audit = app.add_subcommand("audit", "replay an ASHA event log and check every promotion");
    audit->add_option("--log", a_log, "events.jsonl")->required();

    int gc_draws = 20;
    std::uint64_t gc_seed = 2024;
    double gc_eps = 1e-5;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the learner gradient");
    gradcheck->add_option("--draws", gc_draws, "random draws")->check(CLI::PositiveNumber);
    gradcheck->add_option("--seed", gc_seed, "seed");
    gradcheck->add_option("--eps", gc_eps, "central-difference step")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*generate) {
            return cmd_generate(g_out, g_counts, g_total, g_seed, g_noise, g_config);
        }
        if (*split) {
            return cmd_split(s_data, s_run, s_config, s_seed, s_train, s_eval, args);
        }
        if (*prep) {
            return cmd_preprocess(p_data, p_out);
        }
        if (*tune) {
            return cmd_tune(tune_args, args);
        }
        if (*sweep_cmd) {
            return cmd_sweep(sweep_args, args);
        }
        if (*report) {
            return cmd_report(r_in, r_format, r_out);
        }
        if (*audit) {
            return cmd_audit(a_log);
        }
        if (*gradcheck) {
            return cmd_gradcheck(gc_draws, gc_seed, gc_eps);
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
