#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "smalldata/error.hpp"

namespace smalldata {

enum class DefectLabel : std::uint8_t { nominal = 0, gap = 1, overlap = 2 };

inline constexpr std::size_t kNumLabels = 3;
inline constexpr std::array<DefectLabel, kNumLabels> kAllLabels{DefectLabel::nominal, DefectLabel::gap,
                                                                 DefectLabel::overlap};

constexpr std::size_t label_index(DefectLabel label) noexcept {
    return static_cast<std::size_t>(label);
}

constexpr std::string_view to_string(DefectLabel label) noexcept {
    switch (label) {
    case DefectLabel::nominal:
        return "nominal";
    case DefectLabel::gap:
        return "gap";
    case DefectLabel::overlap:
        return "overlap";
    }
    return "unknown";
}

inline DefectLabel label_from_string(std::string_view name) {
    for (auto label : kAllLabels) {
        if (to_string(label) == name) {
            return label;
        }
    }
    throw FormatError("unknown defect label '" + std::string(name) + "'");
}

inline DefectLabel label_from_index(std::size_t index) {
    if (index >= kNumLabels) {
        throw FormatError("label index " + std::to_string(index) + " out of range");
    }
    return kAllLabels[index];
}

inline void to_json(nlohmann::json& j, DefectLabel label) { j = std::string(to_string(label)); }
inline void from_json(const nlohmann::json& j, DefectLabel& label) { label = label_from_string(j.get<std::string>()); }

} // namespace smalldata
