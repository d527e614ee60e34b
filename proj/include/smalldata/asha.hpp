#pragma once

// Asynchronous successive halving (pause-and-promote variant).
//
// Trials run to a rung budget, report their eval metric and pause. get_job()
// promotes the best paused trial that sits in the top 1/eta of its rung,
// scanning from the second-highest rung down; otherwise it starts a new trial
// until n_trials have been started. It never blocks on stragglers: with
// nothing to hand out it returns Wait (work still running) or Done.

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "smalldata/error.hpp"
#include "smalldata/learner.hpp"
#include "smalldata/rng.hpp"

namespace smalldata::asha {

struct SearchSpace {
    double lr_min = 1e-6;
    double lr_max = 1e-4;
    std::vector<int> batch_sizes{16, 32, 64, 128};

    // lr_min == lr_max is accepted as a degenerate (fixed) learning rate.
    void validate() const {
        if (!(lr_min > 0.0) || !(lr_min <= lr_max) || !std::isfinite(lr_max)) {
            throw ConfigError("search space: need 0 < lr_min <= lr_max");
        }
        if (batch_sizes.empty()) {
            throw ConfigError("search space: batch size set is empty");
        }
        for (int b : batch_sizes) {
            TrainConfig{lr_min, b, 0}.validate();
        }
    }
};

/// exp(uniform(ln lo, ln hi)) at uniform variate u in [0, 1).
inline double log_uniform(double lo, double hi, double u) {
    if (lo == hi) {
        return lo;
    }
    const double a = std::log(lo);
    const double b = std::log(hi);
    return std::clamp(std::exp(a + u * (b - a)), lo, hi);
}

inline TrainConfig sample_trial(const SearchSpace& space, std::uint64_t seed) {
    space.validate();
    Rng rng(seed);
    TrainConfig c;
    c.learning_rate = log_uniform(space.lr_min, space.lr_max, uniform01(rng));
    c.batch_size = space.batch_sizes[uniform_index(rng, space.batch_sizes.size())];
    c.seed = rng();
    return c;
}

struct AshaConfig {
    int max_t = 32;
    int grace_period = 4;
    int reduction_factor = 2;
    int n_trials = 64;
    int workers = 6;

    void validate() const;
};

/// Rung budgets grace * eta^k, k = 0.., ending exactly at max_t.
inline std::vector<int> rung_levels(const AshaConfig& cfg) {
    if (cfg.grace_period < 1) {
        throw ConfigError("asha: grace_period must be >= 1");
    }
    if (cfg.reduction_factor < 2) {
        throw ConfigError("asha: reduction_factor must be >= 2");
    }
    std::vector<int> levels;
    long long t = cfg.grace_period;
    while (t < cfg.max_t) {
        levels.push_back(static_cast<int>(t));
        t *= cfg.reduction_factor;
    }
    if (t != cfg.max_t) {
        throw ConfigError("asha: grace_period * reduction_factor^k never equals max_t = " + std::to_string(cfg.max_t));
    }
    levels.push_back(cfg.max_t);
    return levels;
}

inline void AshaConfig::validate() const {
    rung_levels(*this);
    if (n_trials < reduction_factor) {
        throw ConfigError("asha: n_trials must be >= reduction_factor");
    }
    if (workers < 1) {
        throw ConfigError("asha: workers must be >= 1");
    }
}

enum class TrialStatus { pending, running, paused, completed, terminated };

inline const char* to_string(TrialStatus s) {
    switch (s) {
    case TrialStatus::pending:
        return "pending";
    case TrialStatus::running:
        return "running";
    case TrialStatus::paused:
        return "paused";
    case TrialStatus::completed:
        return "completed";
    case TrialStatus::terminated:
        return "terminated";
    }
    return "unknown";
}

struct Trial {
    int id = 0;
    TrainConfig hyperparams;
    int rung_index = 0;              // rung currently being run toward, or last reached
    std::map<int, double> metrics;   // rung index -> eval metric
    TrialStatus status = TrialStatus::pending;
    std::optional<std::string> checkpoint;
};

struct RungResult {
    int trial = 0;
    double metric = 0.0;
};

struct Rung {
    int budget = 0;
    std::vector<RungResult> recorded;
    std::set<int> promoted;
};

enum class EventKind { config, trial_started, metric_reported, promoted, completed, terminated };

inline const char* to_string(EventKind k) {
    switch (k) {
    case EventKind::config:
        return "config";
    case EventKind::trial_started:
        return "trial_started";
    case EventKind::metric_reported:
        return "metric_reported";
    case EventKind::promoted:
        return "promoted";
    case EventKind::completed:
        return "completed";
    case EventKind::terminated:
        return "terminated";
    }
    return "unknown";
}

struct SchedulerEvent {
    std::uint64_t seq = 0;
    EventKind kind = EventKind::config;
    int trial = -1;
    int rung = -1; // rung reported at, or rung promoted from
    double value = 0.0;
    std::optional<TrainConfig> config;
    std::string note;
};

struct Job {
    enum class Kind { promote, start_new, wait, done };

    Kind kind = Kind::wait;
    int trial = -1;
    int rung = 0;   // rung the trial now runs toward
    int budget = 0; // cumulative epochs at the end of this job
    int epochs = 0; // epochs to train in this job
    TrainConfig config;
    std::optional<std::string> checkpoint;
};

struct BestTrial {
    int trial = -1;
    TrainConfig config;
    int rung = -1;
    double metric = 0.0;
};

class Scheduler {
public:
    Scheduler(AshaConfig cfg, SearchSpace space, std::uint64_t seed)
        : cfg_(cfg), space_(std::move(space)), seed_(seed) {
        cfg_.validate();
        space_.validate();
        for (int budget : rung_levels(cfg_)) {
            rungs_.push_back(Rung{budget, {}, {}});
        }
        SchedulerEvent e;
        e.kind = EventKind::config;
        log(std::move(e));
    }

    const AshaConfig& config() const noexcept { return cfg_; }
    const SearchSpace& space() const noexcept { return space_; }
    const std::vector<Rung>& rungs() const noexcept { return rungs_; }
    const std::vector<Trial>& trials() const noexcept { return trials_; }
    const std::vector<SchedulerEvent>& events() const noexcept { return events_; }
    int top_rung() const noexcept { return static_cast<int>(rungs_.size()) - 1; }

    int running() const {
        return static_cast<int>(std::count_if(trials_.begin(), trials_.end(),
                                              [](const Trial& t) { return t.status == TrialStatus::running; }));
    }

    Job get_job() {
        for (int k = top_rung() - 1; k >= 0; --k) {
            if (auto id = promotable(k)) {
                return promote(*id, k);
            }
        }
        if (static_cast<int>(trials_.size()) < cfg_.n_trials) {
            return start_new();
        }
        Job j;
        j.kind = running() > 0 ? Job::Kind::wait : Job::Kind::done;
        return j;
    }

    void report(int trial_id, int rung, double metric, std::optional<std::string> checkpoint = std::nullopt) {
        Trial& t = trial(trial_id);
        if (t.metrics.count(rung) != 0) {
            throw ProtocolError("asha: duplicate report for trial " + std::to_string(trial_id) + " at rung " +
                                std::to_string(rung));
        }
        if (t.status != TrialStatus::running || t.rung_index != rung) {
            throw ProtocolError("asha: trial " + std::to_string(trial_id) + " is not running at rung " +
                                std::to_string(rung));
        }
        if (!std::isfinite(metric)) {
            throw ProtocolError("asha: non-finite metric for trial " + std::to_string(trial_id));
        }
        t.metrics[rung] = metric;
        t.checkpoint = std::move(checkpoint);
        rungs_[static_cast<std::size_t>(rung)].recorded.push_back({trial_id, metric});
        SchedulerEvent e;
        e.kind = EventKind::metric_reported;
        e.trial = trial_id;
        e.rung = rung;
        e.value = metric;
        log(std::move(e));
        if (rung == top_rung()) {
            t.status = TrialStatus::completed;
            SchedulerEvent done;
            done.kind = EventKind::completed;
            done.trial = trial_id;
            done.rung = rung;
            log(std::move(done));
        } else {
            t.status = TrialStatus::paused;
        }
    }

    void terminate(int trial_id, std::string reason) {
        Trial& t = trial(trial_id);
        t.status = TrialStatus::terminated;
        t.checkpoint.reset();
        SchedulerEvent e;
        e.kind = EventKind::terminated;
        e.trial = trial_id;
        e.rung = t.rung_index;
        e.note = std::move(reason);
        log(std::move(e));
    }

    /// Highest rung reached wins; then metric; then lower id.
    BestTrial best_trial() const {
        BestTrial best;
        for (const auto& t : trials_) {
            if (t.metrics.empty()) {
                continue;
            }
            const auto& [rung, metric] = *t.metrics.rbegin();
            const bool better = best.trial < 0 || rung > best.rung || (rung == best.rung && metric > best.metric);
            if (better) {
                best = BestTrial{t.id, t.hyperparams, rung, metric};
            }
        }
        if (best.trial < 0) {
            throw ProtocolError("asha: no metrics recorded");
        }
        return best;
    }

    /// Sum over trials of the cumulative budget of the highest rung reported.
    long long consumed_budget() const {
        long long total = 0;
        for (const auto& t : trials_) {
            if (!t.metrics.empty()) {
                total += rungs_[static_cast<std::size_t>(t.metrics.rbegin()->first)].budget;
            }
        }
        return total;
    }

private:
    Trial& trial(int id) {
        if (id < 0 || id >= static_cast<int>(trials_.size())) {
            throw ProtocolError("asha: unknown trial " + std::to_string(id));
        }
        return trials_[static_cast<std::size_t>(id)];
    }

    std::optional<int> promotable(int k) const {
        const auto& rung = rungs_[static_cast<std::size_t>(k)];
        auto ranked = rung.recorded;
        std::sort(ranked.begin(), ranked.end(), [](const RungResult& a, const RungResult& b) {
            return a.metric != b.metric ? a.metric > b.metric : a.trial < b.trial;
        });
        const std::size_t keep = ranked.size() / static_cast<std::size_t>(cfg_.reduction_factor);
        for (std::size_t i = 0; i < keep; ++i) {
            const int id = ranked[i].trial;
            const auto& t = trials_[static_cast<std::size_t>(id)];
            if (rung.promoted.count(id) == 0 && t.status == TrialStatus::paused && t.rung_index == k) {
                return id;
            }
        }
        return std::nullopt;
    }

    Job promote(int id, int from) {
        Trial& t = trials_[static_cast<std::size_t>(id)];
        rungs_[static_cast<std::size_t>(from)].promoted.insert(id);
        t.rung_index = from + 1;
        t.status = TrialStatus::running;
        SchedulerEvent e;
        e.kind = EventKind::promoted;
        e.trial = id;
        e.rung = from;
        log(std::move(e));

        Job j;
        j.kind = Job::Kind::promote;
        j.trial = id;
        j.rung = from + 1;
        j.budget = rungs_[static_cast<std::size_t>(from + 1)].budget;
        j.epochs = j.budget - rungs_[static_cast<std::size_t>(from)].budget;
        j.config = t.hyperparams;
        j.checkpoint = t.checkpoint;
        return j;
    }

    Job start_new() {
        Trial t;
        t.id = static_cast<int>(trials_.size());
        t.hyperparams = sample_trial(space_, derive_seed(seed_, static_cast<std::uint64_t>(t.id)));
        t.status = TrialStatus::running;
        trials_.push_back(t);
        SchedulerEvent e;
        e.kind = EventKind::trial_started;
        e.trial = t.id;
        e.rung = 0;
        e.config = t.hyperparams;
        log(std::move(e));

        Job j;
        j.kind = Job::Kind::start_new;
        j.trial = t.id;
        j.rung = 0;
        j.budget = rungs_.front().budget;
        j.epochs = j.budget;
        j.config = t.hyperparams;
        return j;
    }

    void log(SchedulerEvent e) {
        e.seq = events_.size();
        events_.push_back(std::move(e));
    }

    AshaConfig cfg_;
    SearchSpace space_;
    std::uint64_t seed_;
    std::vector<Rung> rungs_;
    std::vector<Trial> trials_;
    std::vector<SchedulerEvent> events_;
};

// Event log (JSON lines) --------------------------------------------------------

inline nlohmann::json event_to_json(const SchedulerEvent& e, const Scheduler* sched = nullptr) {
    nlohmann::json j = {{"seq", e.seq}, {"event", to_string(e.kind)}};
    switch (e.kind) {
    case EventKind::config:
        if (sched != nullptr) {
            const auto& c = sched->config();
            j["max_t"] = c.max_t;
            j["grace_period"] = c.grace_period;
            j["reduction_factor"] = c.reduction_factor;
            j["n_trials"] = c.n_trials;
            j["levels"] = rung_levels(c);
        }
        break;
    case EventKind::trial_started:
        j["trial"] = e.trial;
        if (e.config) {
            j["learning_rate"] = e.config->learning_rate;
            j["batch_size"] = e.config->batch_size;
            j["seed"] = e.config->seed;
        }
        break;
    case EventKind::metric_reported:
        j["trial"] = e.trial;
        j["rung"] = e.rung;
        j["value"] = e.value;
        break;
    case EventKind::promoted:
        j["trial"] = e.trial;
        j["from_rung"] = e.rung;
        break;
    case EventKind::completed:
        j["trial"] = e.trial;
        break;
    case EventKind::terminated:
        j["trial"] = e.trial;
        j["rung"] = e.rung;
        j["reason"] = e.note;
        break;
    }
    return j;
}

inline std::string event_log_jsonl(const Scheduler& sched) {
    std::string out;
    for (const auto& e : sched.events()) {
        out += event_to_json(e, &sched).dump();
        out += '\n';
    }
    return out;
}

// Driver ----------------------------------------------------------------------

struct TrialOutcome {
    double metric = 0.0;
    std::optional<std::string> checkpoint;
};

struct RunStats {
    long long epochs_trained = 0;
    int jobs = 0;
    int failures = 0;
};

/// Runs the scheduler to completion with up to `workers` concurrent jobs.
/// `execute(const Job&) -> TrialOutcome` trains one job; an exception from it
/// terminates that trial. Scheduler calls stay on the calling thread, so the
/// scheduler itself needs no locking. With one worker, jobs run inline and
/// the event log is reproducible.
template <typename Executor>
RunStats run(Scheduler& sched, int workers, Executor&& execute) {
    if (workers < 1) {
        throw ConfigError("asha: workers must be >= 1");
    }
    RunStats stats;

    struct Completion {
        Job job;
        std::optional<TrialOutcome> outcome;
        std::string error;
    };

    auto apply = [&](Completion& c) {
        ++stats.jobs;
        if (c.outcome) {
            stats.epochs_trained += c.job.epochs;
            sched.report(c.job.trial, c.job.rung, c.outcome->metric, std::move(c.outcome->checkpoint));
        } else {
            ++stats.failures;
            sched.terminate(c.job.trial, c.error);
        }
    };

    auto attempt = [&](const Job& job) {
        Completion c{job, std::nullopt, {}};
        try {
            c.outcome = execute(job);
        } catch (const std::exception& e) {
            c.error = e.what();
        } catch (...) {
            c.error = "unknown error";
        }
        return c;
    };

    if (workers == 1) {
        for (;;) {
            const Job job = sched.get_job();
            if (job.kind == Job::Kind::done || job.kind == Job::Kind::wait) {
                break; // nothing runs concurrently, so wait cannot occur
            }
            auto c = attempt(job);
            apply(c);
        }
        return stats;
    }

    std::mutex mu;
    std::condition_variable cv;
    std::deque<Completion> finished;
    std::vector<std::thread> threads;
    struct JoinAll {
        std::vector<std::thread>& threads;
        ~JoinAll() {
            for (auto& t : threads) {
                if (t.joinable()) {
                    t.join();
                }
            }
        }
    } join_all{threads}; // also on the exception path
    int active = 0;

    for (;;) {
        {
            std::unique_lock lock(mu);
            while (!finished.empty()) {
                auto c = std::move(finished.front());
                finished.pop_front();
                lock.unlock();
                apply(c);
                lock.lock();
                --active;
            }
        }
        bool need_wait = active >= workers;
        if (!need_wait) {
            const Job job = sched.get_job();
            if (job.kind == Job::Kind::done) {
                break;
            }
            if (job.kind == Job::Kind::wait) {
                need_wait = true;
            } else {
                ++active;
                threads.emplace_back([&, job] {
                    auto c = attempt(job);
                    {
                        std::lock_guard guard(mu);
                        finished.push_back(std::move(c));
                    }
                    cv.notify_one();
                });
            }
        }
        if (need_wait) {
            std::unique_lock lock(mu);
            cv.wait(lock, [&] { return !finished.empty(); });
        }
    }
    return stats;
}

/// Adapts a trainer factory to the driver: init (then resume, for promoted
/// trials), train the job's epochs, pause, shut down.
inline auto trainer_executor(TrainerFactory factory) {
    return [factory = std::move(factory)](const Job& job) {
        auto handle = factory();
        handle->init(job.config);
        if (job.checkpoint) {
            handle->resume(*job.checkpoint);
        }
        TrialOutcome out;
        out.metric = handle->train(job.epochs);
        out.checkpoint = handle->pause();
        handle->shutdown();
        return out;
    };
}

inline void to_json(nlohmann::json& j, const SearchSpace& s) {
    j = {{"lr_min", s.lr_min}, {"lr_max", s.lr_max}, {"batch_sizes", s.batch_sizes}};
}

inline void from_json(const nlohmann::json& j, SearchSpace& s) {
    s = SearchSpace{};
    s.lr_min = j.value("lr_min", s.lr_min);
    s.lr_max = j.value("lr_max", s.lr_max);
    if (j.contains("batch_sizes")) {
        s.batch_sizes = j.at("batch_sizes").get<std::vector<int>>();
    }
}

inline void to_json(nlohmann::json& j, const AshaConfig& c) {
    j = {{"max_t", c.max_t},
         {"grace_period", c.grace_period},
         {"reduction_factor", c.reduction_factor},
         {"n_trials", c.n_trials},
         {"workers", c.workers}};
}

inline void from_json(const nlohmann::json& j, AshaConfig& c) {
    c = AshaConfig{};
    c.max_t = j.value("max_t", c.max_t);
    c.grace_period = j.value("grace_period", c.grace_period);
    c.reduction_factor = j.value("reduction_factor", c.reduction_factor);
    c.n_trials = j.value("n_trials", c.n_trials);
    c.workers = j.value("workers", c.workers);
}

} // namespace smalldata::asha
