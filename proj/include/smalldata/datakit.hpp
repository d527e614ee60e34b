#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "smalldata/error.hpp"
#include "smalldata/heightfield.hpp"
#include "smalldata/labels.hpp"
#include "smalldata/rng.hpp"

namespace smalldata {

struct IndexEntry {
    std::string item_id;
    DefectLabel label = DefectLabel::nominal;

    friend bool operator==(const IndexEntry&, const IndexEntry&) = default;
};

/// Ordered, duplicate-free list of labelled item ids.
class DatasetIndex {
public:
    DatasetIndex() = default;

    explicit DatasetIndex(std::vector<IndexEntry> entries) : entries_(std::move(entries)) {
        std::unordered_set<std::string> seen;
        seen.reserve(entries_.size());
        for (const auto& e : entries_) {
            if (!seen.insert(e.item_id).second) {
                throw FormatError("dataset index: duplicate item id '" + e.item_id + "'");
            }
            ++histogram_[label_index(e.label)];
        }
    }

    static DatasetIndex from_manifest(const DatasetManifest& manifest) {
        std::vector<IndexEntry> entries;
        entries.reserve(manifest.patches.size());
        for (const auto& p : manifest.patches) {
            entries.push_back({p.item_id, p.label});
        }
        return DatasetIndex(std::move(entries));
    }

    const std::vector<IndexEntry>& entries() const noexcept { return entries_; }
    const LabelCounts& histogram() const noexcept { return histogram_; }
    std::size_t count(DefectLabel label) const noexcept { return histogram_[label_index(label)]; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    std::unordered_set<std::string> id_set() const {
        std::unordered_set<std::string> ids;
        ids.reserve(entries_.size());
        for (const auto& e : entries_) {
            ids.insert(e.item_id);
        }
        return ids;
    }

    friend bool operator==(const DatasetIndex& a, const DatasetIndex& b) { return a.entries_ == b.entries_; }

private:
    std::vector<IndexEntry> entries_;
    LabelCounts histogram_{};
};

struct SplitSpec {
    double train_fraction = 0.7;
    double eval_fraction_of_train = 0.1;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
            throw ConfigError("split: train_fraction must lie in (0, 1)");
        }
        if (!(eval_fraction_of_train > 0.0 && eval_fraction_of_train < 1.0)) {
            throw ConfigError("split: eval_fraction_of_train must lie in (0, 1)");
        }
    }
};

struct SplitResult {
    DatasetIndex train;
    DatasetIndex eval;
    DatasetIndex test;
};

namespace detail {

/// Two-part largest-remainder apportionment of n items: size of the part that
/// receives `fraction` of them. Ties go to that part.
inline std::size_t apportion(std::size_t n, double fraction) {
    const double exact_first = static_cast<double>(n) * fraction;
    const double exact_second = static_cast<double>(n) * (1.0 - fraction);
    auto first = std::min(n, static_cast<std::size_t>(std::floor(exact_first)));
    auto second = std::min(n - first, static_cast<std::size_t>(std::floor(exact_second)));
    while (first + second < n) {
        if (exact_first - static_cast<double>(first) >= exact_second - static_cast<double>(second)) {
            ++first;
        } else {
            ++second;
        }
    }
    return first;
}

/// Per-label positions of `index` in a seeded shuffled order. The stream for
/// each label depends only on (seed, label), never on the other labels.
inline std::array<std::vector<std::size_t>, kNumLabels> shuffled_positions(const DatasetIndex& index,
                                                                           std::uint64_t seed) {
    std::array<std::vector<std::size_t>, kNumLabels> by_label;
    for (std::size_t i = 0; i < index.entries().size(); ++i) {
        by_label[label_index(index.entries()[i].label)].push_back(i);
    }
    for (auto label : kAllLabels) {
        Rng rng(derive_seed(seed, label_index(label)));
        shuffle(std::span<std::size_t>(by_label[label_index(label)]), rng);
    }
    return by_label;
}

/// Entries at `positions`, re-emitted in source order.
inline DatasetIndex select(const DatasetIndex& index, std::vector<std::size_t> positions) {
    std::sort(positions.begin(), positions.end());
    std::vector<IndexEntry> entries;
    entries.reserve(positions.size());
    for (auto p : positions) {
        entries.push_back(index.entries()[p]);
    }
    return DatasetIndex(std::move(entries));
}

} // namespace detail

/// Per-label seeded shuffle; train/test sizes by largest remainder, then eval
/// carved out of train the same way. Parts keep the source ordering.
inline SplitResult stratified_split(const DatasetIndex& index, const SplitSpec& spec) {
    spec.validate();
    for (auto label : kAllLabels) {
        if (index.count(label) < 3) {
            throw StratificationError("stratified split: label '" + std::string(to_string(label)) + "' has " +
                                      std::to_string(index.count(label)) + " items, need at least 3");
        }
    }
    const auto by_label = detail::shuffled_positions(index, spec.seed);
    std::vector<std::size_t> train, eval, test;
    for (const auto& positions : by_label) {
        const std::size_t n = positions.size();
        const std::size_t n_train_total = detail::apportion(n, spec.train_fraction);
        const std::size_t n_eval = detail::apportion(n_train_total, spec.eval_fraction_of_train);
        for (std::size_t k = 0; k < n; ++k) {
            if (k < n_eval) {
                eval.push_back(positions[k]);
            } else if (k < n_train_total) {
                train.push_back(positions[k]);
            } else {
                test.push_back(positions[k]);
            }
        }
    }
    return {detail::select(index, std::move(train)), detail::select(index, std::move(eval)),
            detail::select(index, std::move(test))};
}

/// Downsamples every label to exactly n_per_class items without replacement.
inline DatasetIndex balance(const DatasetIndex& index, std::size_t n_per_class, std::uint64_t seed) {
    for (auto label : kAllLabels) {
        if (index.count(label) < n_per_class) {
            throw BalanceError("balance: label '" + std::string(to_string(label)) + "' has " +
                               std::to_string(index.count(label)) + " items available, " +
                               std::to_string(n_per_class) + " requested");
        }
    }
    const auto by_label = detail::shuffled_positions(index, seed);
    std::vector<std::size_t> chosen;
    chosen.reserve(n_per_class * kNumLabels);
    for (const auto& positions : by_label) {
        chosen.insert(chosen.end(), positions.begin(), positions.begin() + static_cast<std::ptrdiff_t>(n_per_class));
    }
    return detail::select(index, std::move(chosen));
}

/// Nested balanced subsets: each rung is a prefix of the same per-label
/// shuffle, so smaller rungs are contained in larger ones.
inline std::vector<DatasetIndex> subset_ladder(const DatasetIndex& index, std::span<const std::size_t> sizes,
                                               std::uint64_t seed) {
    if (sizes.empty()) {
        throw ConfigError("subset ladder: no sizes given");
    }
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (sizes[i] == 0 || (i > 0 && sizes[i] <= sizes[i - 1])) {
            throw ConfigError("subset ladder: sizes must be positive and strictly increasing");
        }
    }
    std::vector<DatasetIndex> out;
    out.reserve(sizes.size());
    for (auto s : sizes) {
        out.push_back(balance(index, s, seed));
    }
    return out;
}

inline void to_json(nlohmann::json& j, const DatasetIndex& index) {
    j = nlohmann::json::array();
    for (const auto& e : index.entries()) {
        j.push_back({{"id", e.item_id}, {"label", e.label}});
    }
}

inline void from_json(const nlohmann::json& j, DatasetIndex& index) {
    std::vector<IndexEntry> entries;
    entries.reserve(j.size());
    for (const auto& e : j) {
        entries.push_back({e.at("id").get<std::string>(), e.at("label").get<DefectLabel>()});
    }
    index = DatasetIndex(std::move(entries));
}

inline void to_json(nlohmann::json& j, const SplitSpec& s) {
    j = {{"train_fraction", s.train_fraction}, {"eval_fraction_of_train", s.eval_fraction_of_train}, {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SplitSpec& s) {
    s = SplitSpec{};
    s.train_fraction = j.value("train_fraction", s.train_fraction);
    s.eval_fraction_of_train = j.value("eval_fraction_of_train", s.eval_fraction_of_train);
    s.seed = j.value("seed", s.seed);
}

inline void to_json(nlohmann::json& j, const SplitResult& r) {
    j = {{"train", r.train}, {"eval", r.eval}, {"test", r.test}};
}

inline void from_json(const nlohmann::json& j, SplitResult& r) {
    r.train = j.at("train").get<DatasetIndex>();
    r.eval = j.at("eval").get<DatasetIndex>();
    r.test = j.at("test").get<DatasetIndex>();
}

} // namespace smalldata
