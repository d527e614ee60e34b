#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "smalldata/error.hpp"
#include "smalldata/labels.hpp"

namespace smalldata {

/// K x K counts, rows = truth, columns = prediction.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::vector<DefectLabel> labels = {kAllLabels.begin(), kAllLabels.end()})
        : labels_(std::move(labels)), counts_(labels_.size() * labels_.size(), 0) {}

    const std::vector<DefectLabel>& labels() const noexcept { return labels_; }
    std::size_t classes() const noexcept { return labels_.size(); }

    std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * classes() + pred]; }
    std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts_[truth * classes() + pred]; }

    std::uint64_t total() const noexcept {
        std::uint64_t t = 0;
        for (auto c : counts_) {
            t += c;
        }
        return t;
    }

    /// Position of `label` in the declared label list; MetricError if absent.
    std::size_t position(DefectLabel label) const {
        const auto it = std::find(labels_.begin(), labels_.end(), label);
        if (it == labels_.end()) {
            throw MetricError("confusion: label '" + std::string(to_string(label)) + "' not in declared set");
        }
        return static_cast<std::size_t>(it - labels_.begin());
    }

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    std::vector<DefectLabel> labels_;
    std::vector<std::uint64_t> counts_;
};

inline ConfusionMatrix confusion(std::span<const DefectLabel> truths, std::span<const DefectLabel> preds,
                                 std::vector<DefectLabel> labels = {kAllLabels.begin(), kAllLabels.end()}) {
    if (truths.size() != preds.size()) {
        throw MetricError("confusion: " + std::to_string(truths.size()) + " truths vs " +
                          std::to_string(preds.size()) + " predictions");
    }
    ConfusionMatrix m(std::move(labels));
    for (std::size_t i = 0; i < truths.size(); ++i) {
        ++m.at(m.position(truths[i]), m.position(preds[i]));
    }
    return m;
}

struct ClassScores {
    DefectLabel label = DefectLabel::nominal;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double accuracy = 0.0; // hit rate on true members of the class (= recall)
    std::uint64_t support = 0;
};

struct EvalReport {
    std::vector<ClassScores> per_class;
    double macro_f1 = 0.0;
    double micro_f1 = 0.0;
    std::uint64_t n_items = 0;

    /// Scores for `label`, or nullptr if the label was not evaluated.
    const ClassScores* find(DefectLabel label) const {
        for (const auto& c : per_class) {
            if (c.label == label) {
                return &c;
            }
        }
        return nullptr;
    }
};

/// Zero denominators yield 0 for the affected precision/recall/F1.
inline EvalReport evaluate(const ConfusionMatrix& m) {
    EvalReport r;
    const std::size_t k = m.classes();
    r.n_items = m.total();
    std::uint64_t trace = 0;
    double f1_sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        std::uint64_t tp = m.at(c, c);
        std::uint64_t predicted = 0;
        std::uint64_t actual = 0;
        for (std::size_t o = 0; o < k; ++o) {
            predicted += m.at(o, c);
            actual += m.at(c, o);
        }
        ClassScores s;
        s.label = m.labels()[c];
        s.support = actual;
        s.precision = predicted == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(predicted);
        s.recall = actual == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(actual);
        // 2PR / (P + R) written over the integer counts: one rounding, and
        // zero exactly when P + R is zero
        s.f1 = tp == 0 ? 0.0
                       : static_cast<double>(2 * tp) / static_cast<double>(2 * tp + (predicted - tp) + (actual - tp));
        s.accuracy = s.recall;
        f1_sum += s.f1;
        trace += tp;
        r.per_class.push_back(s);
    }
    r.macro_f1 = k == 0 ? 0.0 : f1_sum / static_cast<double>(k);
    r.micro_f1 = r.n_items == 0 ? 0.0 : static_cast<double>(trace) / static_cast<double>(r.n_items);
    return r;
}

inline double macro_f1(std::span<const DefectLabel> truths, std::span<const DefectLabel> preds) {
    return evaluate(confusion(truths, preds)).macro_f1;
}

inline void to_json(nlohmann::json& j, const ClassScores& s) {
    j = {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"accuracy", s.accuracy},
         {"support", s.support}};
}

inline void to_json(nlohmann::json& j, const EvalReport& r) {
    nlohmann::json per_class = nlohmann::json::object();
    for (const auto& s : r.per_class) {
        per_class[std::string(to_string(s.label))] = s;
    }
    j = {{"per_class", per_class}, {"macro_f1", r.macro_f1}, {"micro_f1", r.micro_f1}, {"n_items", r.n_items}};
}

inline void from_json(const nlohmann::json& j, EvalReport& r) {
    r = EvalReport{};
    r.macro_f1 = j.at("macro_f1").get<double>();
    r.micro_f1 = j.value("micro_f1", 0.0);
    r.n_items = j.value("n_items", std::uint64_t{0});
    const auto& per_class = j.at("per_class");
    for (auto label : kAllLabels) {
        const auto key = std::string(to_string(label));
        if (!per_class.contains(key)) {
            continue;
        }
        const auto& s = per_class.at(key);
        ClassScores c;
        c.label = label;
        c.precision = s.at("precision").get<double>();
        c.recall = s.at("recall").get<double>();
        c.f1 = s.at("f1").get<double>();
        c.accuracy = s.at("accuracy").get<double>();
        c.support = s.value("support", std::uint64_t{0});
        r.per_class.push_back(c);
    }
}

} // namespace smalldata
