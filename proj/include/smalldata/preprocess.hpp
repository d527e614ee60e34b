#pragma once

// 16-bit height patch -> 8-bit model input: mean-centre at mid-gray with
// clamping (no scale normalisation), triplicate into three channels, then
// zero-pad to 224x224 without resampling.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "smalldata/error.hpp"
#include "smalldata/heightfield.hpp"

namespace smalldata {

struct GrayPatch8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels; // row-major

    std::uint8_t at(int x, int y) const {
        return pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)];
    }

    friend bool operator==(const GrayPatch8&, const GrayPatch8&) = default;
};

/// Three-channel patch, channel-interleaved (HWC).
struct ChannelPatch {
    static constexpr int kChannels = 3;
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> values;

    std::uint8_t at(int x, int y, int c) const {
        return values[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
                          kChannels +
                      static_cast<std::size_t>(c)];
    }
};

struct ModelInput {
    static constexpr int kSide = 224;
    static constexpr int kChannels = 3;

    std::vector<std::uint8_t> values = std::vector<std::uint8_t>(static_cast<std::size_t>(kSide) * kSide * kChannels);
    std::string source_id;

    std::uint8_t at(int x, int y, int c) const {
        return values[(static_cast<std::size_t>(y) * kSide + static_cast<std::size_t>(x)) * kChannels +
                      static_cast<std::size_t>(c)];
    }

    friend bool operator==(const ModelInput&, const ModelInput&) = default;
};

/// out = clamp(round_half_away(v - mean + 128), 0, 255), evaluated in exact
/// integer arithmetic so results do not depend on floating-point rounding.
inline GrayPatch8 quantize_center(const HeightImage& img) {
    if (img.empty()) {
        throw DimensionError("quantize_center: empty image");
    }
    const auto n = static_cast<std::int64_t>(img.size());
    std::int64_t sum = 0;
    for (auto v : img.pixels()) {
        sum += v;
    }
    GrayPatch8 out{img.width(), img.height(), std::vector<std::uint8_t>(img.size())};
    for (std::size_t i = 0; i < img.size(); ++i) {
        // (v - sum/n + 128) == num / n
        const std::int64_t num = n * (static_cast<std::int64_t>(img.pixels()[i]) + 128) - sum;
        std::int64_t q = 0;
        if (num > 0) {
            q = std::min<std::int64_t>(255, (2 * num + n) / (2 * n));
        }
        out.pixels[i] = static_cast<std::uint8_t>(q);
    }
    return out;
}

inline ChannelPatch triplicate(const GrayPatch8& g) {
    ChannelPatch out{g.width, g.height, std::vector<std::uint8_t>(g.pixels.size() * ChannelPatch::kChannels)};
    for (std::size_t i = 0; i < g.pixels.size(); ++i) {
        for (std::size_t c = 0; c < ChannelPatch::kChannels; ++c) {
            out.values[i * ChannelPatch::kChannels + c] = g.pixels[i];
        }
    }
    return out;
}

struct PadOffsets {
    int left = 0;
    int top = 0;
};

constexpr PadOffsets pad_offsets(int width, int height) noexcept {
    return {(ModelInput::kSide - width) / 2, (ModelInput::kSide - height) / 2};
}

inline ModelInput pad_center(const ChannelPatch& p, std::string source_id = {}) {
    if (p.width > ModelInput::kSide || p.height > ModelInput::kSide) {
        throw DimensionError("pad_center: source " + std::to_string(p.width) + "x" + std::to_string(p.height) +
                             " exceeds target 224x224");
    }
    if (p.width < 0 || p.height < 0) {
        throw DimensionError("pad_center: negative source dimensions");
    }
    ModelInput out;
    out.source_id = std::move(source_id);
    const auto [left, top] = pad_offsets(p.width, p.height);
    constexpr auto C = static_cast<std::size_t>(ModelInput::kChannels);
    const auto row_bytes = static_cast<std::size_t>(p.width) * C;
    for (int y = 0; y < p.height; ++y) {
        const auto src = p.values.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(y) * row_bytes);
        const auto dst = (static_cast<std::size_t>(y + top) * ModelInput::kSide + static_cast<std::size_t>(left)) * C;
        std::copy(src, src + static_cast<std::ptrdiff_t>(row_bytes), out.values.begin() + static_cast<std::ptrdiff_t>(dst));
    }
    return out;
}

inline ModelInput preprocess(const HeightImage& img, std::string source_id = {}) {
    return pad_center(triplicate(quantize_center(img)), std::move(source_id));
}

// Serialized ModelInput, all integers little-endian:
//   u32 width | u32 height | u32 channels | u32 id_length | id bytes (UTF-8)
//   | width*height*channels bytes, row-major, channel-interleaved

inline std::vector<std::uint8_t> serialize(const ModelInput& in) {
    std::vector<std::uint8_t> out;
    out.reserve(16 + in.source_id.size() + in.values.size());
    auto put32 = [&](std::uint32_t v) {
        for (int shift = 0; shift < 32; shift += 8) {
            out.push_back(static_cast<std::uint8_t>((v >> shift) & 0xff));
        }
    };
    put32(ModelInput::kSide);
    put32(ModelInput::kSide);
    put32(ModelInput::kChannels);
    put32(static_cast<std::uint32_t>(in.source_id.size()));
    out.insert(out.end(), in.source_id.begin(), in.source_id.end());
    out.insert(out.end(), in.values.begin(), in.values.end());
    return out;
}

inline ModelInput deserialize_model_input(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 0;
    auto get32 = [&](const char* field) {
        if (bytes.size() - pos < 4) {
            throw FormatError(std::string("model input: truncated at ") + field);
        }
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) {
            v |= static_cast<std::uint32_t>(bytes[pos++]) << (8 * k);
        }
        return v;
    };
    const auto w = get32("width");
    const auto h = get32("height");
    const auto c = get32("channels");
    if (w != ModelInput::kSide || h != ModelInput::kSide || c != ModelInput::kChannels) {
        throw FormatError("model input: expected 224x224x3 header");
    }
    const auto id_len = get32("source_id length");
    if (bytes.size() - pos < id_len) {
        throw FormatError("model input: truncated at source_id");
    }
    ModelInput out;
    out.source_id.assign(reinterpret_cast<const char*>(bytes.data() + pos), id_len);
    pos += id_len;
    if (bytes.size() - pos != out.values.size()) {
        throw FormatError("model input: payload is " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                          std::to_string(out.values.size()));
    }
    std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end(), out.values.begin());
    return out;
}

inline void write_model_input(const std::filesystem::path& path, const ModelInput& in) {
    const auto bytes = serialize(in);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

inline ModelInput read_model_input(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_model_input(bytes);
}

} // namespace smalldata
