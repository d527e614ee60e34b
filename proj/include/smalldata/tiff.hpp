#pragma once

// Minimal 16-bit grayscale TIFF codec: little-endian, uncompressed, one strip.
// Anything outside that subset is rejected with a FormatError that names the
// offending field.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smalldata/error.hpp"
#include "smalldata/heightfield.hpp"

namespace smalldata::tiff {

namespace tag {
inline constexpr std::uint16_t image_width = 256;
inline constexpr std::uint16_t image_length = 257;
inline constexpr std::uint16_t bits_per_sample = 258;
inline constexpr std::uint16_t compression = 259;
inline constexpr std::uint16_t photometric = 262;
inline constexpr std::uint16_t strip_offsets = 273;
inline constexpr std::uint16_t samples_per_pixel = 277;
inline constexpr std::uint16_t rows_per_strip = 278;
inline constexpr std::uint16_t strip_byte_counts = 279;
inline constexpr std::uint16_t sample_format = 339;
} // namespace tag

namespace detail {

enum : std::uint16_t { kShort = 3, kLong = 4 };

inline void put16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int shift = 0; shift < 32; shift += 8) {
        out.push_back(static_cast<std::uint8_t>((v >> shift) & 0xff));
    }
}

inline void put_entry(std::vector<std::uint8_t>& out, std::uint16_t id, std::uint16_t type, std::uint32_t value) {
    put16(out, id);
    put16(out, type);
    put32(out, 1);
    if (type == kShort) {
        put16(out, static_cast<std::uint16_t>(value));
        put16(out, 0);
    } else {
        put32(out, value);
    }
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint16_t u16(std::size_t at, const char* what) const {
        need(at, 2, what);
        return static_cast<std::uint16_t>(bytes_[at] | (bytes_[at + 1] << 8));
    }

    std::uint32_t u32(std::size_t at, const char* what) const {
        need(at, 4, what);
        return static_cast<std::uint32_t>(bytes_[at]) | (static_cast<std::uint32_t>(bytes_[at + 1]) << 8) |
               (static_cast<std::uint32_t>(bytes_[at + 2]) << 16) | (static_cast<std::uint32_t>(bytes_[at + 3]) << 24);
    }

    void need(std::size_t at, std::size_t n, const char* what) const {
        if (at > bytes_.size() || n > bytes_.size() - at) {
            throw FormatError(std::string("tiff: truncated file while reading ") + what);
        }
    }

private:
    std::span<const std::uint8_t> bytes_;
};

} // namespace detail

inline std::vector<std::uint8_t> encode_image(const HeightImage& img) {
    using namespace detail;
    constexpr std::uint16_t kEntries = 9;
    constexpr std::uint32_t kIfdOffset = 8;
    constexpr std::uint32_t kDataOffset = kIfdOffset + 2 + kEntries * 12 + 4;
    const auto width = static_cast<std::uint32_t>(img.width());
    const auto height = static_cast<std::uint32_t>(img.height());
    const auto data_bytes = static_cast<std::uint32_t>(img.size() * 2);

    std::vector<std::uint8_t> out;
    out.reserve(kDataOffset + data_bytes);
    out.push_back('I');
    out.push_back('I');
    put16(out, 42);
    put32(out, kIfdOffset);

    put16(out, kEntries);
    put_entry(out, tag::image_width, kLong, width);
    put_entry(out, tag::image_length, kLong, height);
    put_entry(out, tag::bits_per_sample, kShort, 16);
    put_entry(out, tag::compression, kShort, 1);
    put_entry(out, tag::photometric, kShort, 1);
    put_entry(out, tag::strip_offsets, kLong, kDataOffset);
    put_entry(out, tag::rows_per_strip, kLong, height);
    put_entry(out, tag::strip_byte_counts, kLong, data_bytes);
    put_entry(out, tag::sample_format, kShort, 1);
    put32(out, 0);

    for (auto px : img.pixels()) {
        put16(out, px);
    }
    return out;
}

/// Calibration is not stored in the file; the caller supplies it.
inline HeightImage decode_image(std::span<const std::uint8_t> bytes, const Calibration& calibration = {}) {
    using namespace detail;
    const Reader r(bytes);
    r.need(0, 8, "header");
    if (bytes[0] == 'M' && bytes[1] == 'M') {
        throw FormatError("tiff: ByteOrder big-endian (MM) is not supported");
    }
    if (bytes[0] != 'I' || bytes[1] != 'I') {
        throw FormatError("tiff: ByteOrder marker is not 'II'");
    }
    if (r.u16(2, "magic") != 42) {
        throw FormatError("tiff: magic number is not 42");
    }
    const std::size_t ifd = r.u32(4, "IFD offset");
    const std::size_t n_entries = r.u16(ifd, "IFD entry count");

    std::optional<std::uint32_t> width, height, strip_offset, strip_bytes, rows_per_strip;
    std::uint32_t bits = 1;
    std::uint32_t compression = 1;
    std::uint32_t photometric = 1;
    std::uint32_t samples = 1;
    std::uint32_t sample_format = 1;

    for (std::size_t i = 0; i < n_entries; ++i) {
        const std::size_t at = ifd + 2 + i * 12;
        const auto id = r.u16(at, "IFD entry");
        const auto type = r.u16(at + 2, "IFD entry");
        const auto count = r.u32(at + 4, "IFD entry");
        auto scalar = [&](const char* name) -> std::uint32_t {
            if (count != 1) {
                throw FormatError(std::string("tiff: ") + name + " must have exactly one value, has " +
                                  std::to_string(count));
            }
            if (type == kShort) {
                return r.u16(at + 8, name);
            }
            if (type == kLong) {
                return r.u32(at + 8, name);
            }
            throw FormatError(std::string("tiff: ") + name + " has unsupported field type " + std::to_string(type));
        };
        switch (id) {
        case tag::image_width:
            width = scalar("ImageWidth");
            break;
        case tag::image_length:
            height = scalar("ImageLength");
            break;
        case tag::bits_per_sample:
            bits = scalar("BitsPerSample");
            break;
        case tag::compression:
            compression = scalar("Compression");
            break;
        case tag::photometric:
            photometric = scalar("PhotometricInterpretation");
            break;
        case tag::strip_offsets:
            strip_offset = scalar("StripOffsets");
            break;
        case tag::samples_per_pixel:
            samples = scalar("SamplesPerPixel");
            break;
        case tag::rows_per_strip:
            rows_per_strip = scalar("RowsPerStrip");
            break;
        case tag::strip_byte_counts:
            strip_bytes = scalar("StripByteCounts");
            break;
        case tag::sample_format:
            sample_format = scalar("SampleFormat");
            break;
        default:
            break; // unknown tags are ignored
        }
    }

    if (!width || *width == 0) {
        throw FormatError("tiff: ImageWidth missing or zero");
    }
    if (!height || *height == 0) {
        throw FormatError("tiff: ImageLength missing or zero");
    }
    if (compression != 1) {
        throw FormatError("tiff: Compression " + std::to_string(compression) + " unsupported (only 1 = none)");
    }
    if (bits != 16) {
        throw FormatError("tiff: BitsPerSample " + std::to_string(bits) + " unsupported (only 16)");
    }
    if (samples != 1) {
        throw FormatError("tiff: SamplesPerPixel " + std::to_string(samples) + " unsupported (only 1)");
    }
    if (sample_format != 1) {
        throw FormatError("tiff: SampleFormat " + std::to_string(sample_format) + " unsupported (only 1 = unsigned)");
    }
    if (photometric != 1) {
        throw FormatError("tiff: PhotometricInterpretation " + std::to_string(photometric) +
                          " unsupported (only 1 = BlackIsZero)");
    }
    if (rows_per_strip && *rows_per_strip < *height) {
        throw FormatError("tiff: RowsPerStrip " + std::to_string(*rows_per_strip) + " smaller than ImageLength");
    }
    if (!strip_offset) {
        throw FormatError("tiff: StripOffsets missing");
    }
    const std::size_t n = static_cast<std::size_t>(*width) * *height;
    if (strip_bytes && *strip_bytes != n * 2) {
        throw FormatError("tiff: StripByteCounts " + std::to_string(*strip_bytes) + " does not match image size");
    }
    r.need(*strip_offset, n * 2, "pixel data");

    std::vector<std::uint16_t> pixels(n);
    for (std::size_t i = 0; i < n; ++i) {
        pixels[i] = r.u16(*strip_offset + 2 * i, "pixel data");
    }
    return HeightImage(static_cast<int>(*width), static_cast<int>(*height), std::move(pixels), calibration);
}

inline void write_file(const std::filesystem::path& path, const HeightImage& img) {
    const auto bytes = encode_image(img);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

inline HeightImage read_file(const std::filesystem::path& path, const Calibration& calibration = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_image(bytes, calibration);
}

} // namespace smalldata::tiff
