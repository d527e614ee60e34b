#pragma once

// Replays an ASHA event log and checks every promotion against the rung
// table reconstructed from the log alone. Shares no code with the scheduler.

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace smalldata::asha {

struct AuditViolation {
    std::size_t line = 0; // 1-based line in the log
    std::int64_t seq = -1;
    std::string message;
};

struct AuditResult {
    std::vector<AuditViolation> violations;
    std::size_t events = 0;
    std::size_t promotions = 0;
    long long budget = 0; // sum over trials of the highest rung budget reached

    bool ok() const noexcept { return violations.empty(); }
};

inline AuditResult audit_event_log(const std::string& jsonl) {
    AuditResult out;
    std::istringstream in(jsonl);
    std::string text;
    std::size_t line_no = 0;

    int eta = 0;
    int n_trials = 0;
    std::vector<long long> levels;
    bool configured = false;
    std::int64_t last_seq = -1;

    struct TrialState {
        int rung = 0;
        bool running = false;
        bool finished = false; // completed or terminated
        std::map<int, double> metrics;
    };
    std::map<int, TrialState> trials;
    std::map<int, std::vector<std::pair<int, double>>> recorded; // rung -> (trial, metric)
    std::map<int, std::set<int>> promoted;                       // rung -> trials

    for (;;) {
        if (!std::getline(in, text)) {
            break;
        }
        ++line_no;
        if (text.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        ++out.events;
        std::int64_t seq = -1;
        auto fail = [&](const std::string& msg) { out.violations.push_back({line_no, seq, msg}); };

        nlohmann::json e;
        try {
            e = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception&) {
            fail("unparseable event");
            continue;
        }
        try {
            seq = e.at("seq").get<std::int64_t>();
            const auto kind = e.at("event").get<std::string>();
            const std::string where = kind + " event seq " + std::to_string(seq);
            if (seq <= last_seq) {
                fail(where + ": sequence number not increasing");
            }
            last_seq = seq;

            if (kind == "config") {
                eta = e.at("reduction_factor").get<int>();
                n_trials = e.at("n_trials").get<int>();
                levels = e.at("levels").get<std::vector<long long>>();
                configured = eta >= 2 && !levels.empty();
                if (!configured) {
                    fail(where + ": invalid scheduler configuration");
                }
                continue;
            }
            if (!configured) {
                fail(where + ": event before config header");
                continue;
            }
            const int top = static_cast<int>(levels.size()) - 1;
            const int id = e.at("trial").get<int>();

            if (kind == "trial_started") {
                if (trials.count(id) != 0) {
                    fail(where + ": trial " + std::to_string(id) + " started twice");
                }
                if (static_cast<int>(trials.size()) >= n_trials) {
                    fail(where + ": more than n_trials started");
                }
                trials[id] = TrialState{0, true, false, {}};
                continue;
            }
            auto it = trials.find(id);
            if (it == trials.end()) {
                fail(where + ": unknown trial " + std::to_string(id));
                continue;
            }
            TrialState& t = it->second;

            if (kind == "metric_reported") {
                const int rung = e.at("rung").get<int>();
                const double value = e.at("value").get<double>();
                if (t.metrics.count(rung) != 0) {
                    fail(where + ": duplicate report for trial " + std::to_string(id) + " at rung " +
                         std::to_string(rung));
                    continue;
                }
                if (!t.running || t.rung != rung) {
                    fail(where + ": trial " + std::to_string(id) + " reported at rung " + std::to_string(rung) +
                         " without running there");
                }
                t.metrics[rung] = value;
                t.running = false;
                recorded[rung].push_back({id, value});
            } else if (kind == "promoted") {
                ++out.promotions;
                const int from = e.at("from_rung").get<int>();
                const auto mine = t.metrics.find(from);
                if (mine == t.metrics.end()) {
                    fail(where + ": trial " + std::to_string(id) + " promoted from rung " + std::to_string(from) +
                         " before reporting there");
                    continue;
                }
                if (from >= top) {
                    fail(where + ": promotion out of the top rung");
                }
                if (promoted[from].count(id) != 0) {
                    fail(where + ": trial " + std::to_string(id) + " promoted twice from rung " +
                         std::to_string(from));
                }
                if (t.running || t.finished || t.rung != from) {
                    fail(where + ": trial " + std::to_string(id) + " was not paused at rung " + std::to_string(from));
                }
                // rank = number of results at this rung that beat ours (ties -> lower id)
                const auto& results = recorded[from];
                std::size_t rank = 0;
                for (const auto& [other, metric] : results) {
                    if (metric > mine->second || (metric == mine->second && other < id)) {
                        ++rank;
                    }
                }
                const std::size_t slots = results.size() / static_cast<std::size_t>(eta);
                if (rank >= slots) {
                    fail(where + ": trial " + std::to_string(id) + " ranked " + std::to_string(rank + 1) + " of " +
                         std::to_string(results.size()) + " at rung " + std::to_string(from) + ", only " +
                         std::to_string(slots) + " promotable");
                }
                promoted[from].insert(id);
                t.rung = from + 1;
                t.running = true;
            } else if (kind == "completed") {
                if (t.metrics.count(top) == 0) {
                    fail(where + ": trial " + std::to_string(id) + " completed without a top-rung report");
                }
                t.finished = true;
            } else if (kind == "terminated") {
                t.finished = true;
                t.running = false;
            } else {
                fail(where + ": unknown event kind");
            }
        } catch (const nlohmann::json::exception& ex) {
            fail(std::string("malformed event: ") + ex.what());
        }
    }

    for (const auto& [id, t] : trials) {
        if (!t.metrics.empty()) {
            const auto rung = static_cast<std::size_t>(t.metrics.rbegin()->first);
            if (rung < levels.size()) {
                out.budget += levels[rung];
            }
        }
    }
    return out;
}

} // namespace smalldata::asha
