#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace smalldata {

/// Public pretrained checkpoints with their reported tuned hyperparameters
/// and binary size. Consumed as defaults for external trainer specs.
struct CatalogEntry {
    std::string_view short_name;
    std::string_view checkpoint;
    int model_size_mb;
    int batch_size;
    double learning_rate;
};

inline constexpr std::array<CatalogEntry, 12> kPretrainedCatalog{{
    {"beit-base", "microsoft/beit-base-patch16-224", 350, 32, 3.80e-06},
    {"beit-large", "microsoft/beit-large-patch16-224", 1259, 64, 3.72e-05},
    {"deit-tiny", "facebook/deit-tiny-patch16-224", 23, 16, 3.63e-05},
    {"deit-base", "facebook/deit-base-patch16-224", 346, 16, 4.14e-05},
    {"dinov2-small", "facebook/dinov2-small", 88, 16, 5.61e-06},
    {"focalnet-tiny", "microsoft/focalnet-tiny", 114, 16, 5.61e-06},
    {"focalnet-base", "microsoft/focalnet-base", 353, 32, 8.41e-05},
    {"resnet-18", "microsoft/resnet-18", 46, 16, 3.63e-05},
    {"resnet-50", "microsoft/resnet-50", 103, 16, 9.26e-05},
    {"resnet-101", "microsoft/resnet-101", 167, 16, 9.26e-05},
    {"vit-base", "google/vit-base-patch16-224-in21k", 1198, 32, 1.15e-05},
    {"vit-large", "google/vit-large-patch16-224-in21k", 1249, 64, 2.78e-05},
}};

inline std::optional<CatalogEntry> find_catalog_entry(std::string_view short_name) {
    for (const auto& e : kPretrainedCatalog) {
        if (e.short_name == short_name) {
            return e;
        }
    }
    return std::nullopt;
}

} // namespace smalldata
