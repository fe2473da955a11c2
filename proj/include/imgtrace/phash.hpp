#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace imgtrace::phash {

// 64-bit DCT perceptual fingerprint. Bit (63 - i) holds the predicate for
// low-frequency coefficient i in row-major order, so the hex form reads the
// 8x8 block top-left to bottom-right.
struct PHash64 {
    uint64_t bits = 0;

    friend auto operator<=>(const PHash64&, const PHash64&) = default;
};

int hamming(PHash64 a, PHash64 b);

std::string to_hex(PHash64 h);
PHash64 from_hex(std::string_view hex);  // 16 hex chars; throws ParseError

// Reference to one corpus image. `path` or `bytes` carries the payload.
struct ImageRef {
    std::string id;
    std::string path;
    std::vector<uint8_t> bytes;
    std::optional<std::string> community;
    std::optional<int64_t> timestamp;
};

// Single-channel float raster, row-major.
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<float> pixels;

    float at(int x, int y) const { return pixels[static_cast<size_t>(y) * width + x]; }
};

// Decodes PNG/JPEG/BMP/TIFF/WebP payloads to BT.601 luma. Animated
// containers (GIF) are rejected rather than truncated to a first frame.
// Throws DecodeError on undecodable or zero-area input.
GrayImage decode_gray(std::span<const uint8_t> payload);
GrayImage load_gray(const std::string& path);

// Luma from 8-bit RGB, ITU-R BT.601 weights.
GrayImage gray_from_rgb8(const uint8_t* rgb, int width, int height);
GrayImage gray_from_gray8(const uint8_t* gray, int width, int height);

// Separable triangle-filter resampling ("bilinear"); the kernel support is
// widened by the scale factor when shrinking, and src==dst is an exact copy.
GrayImage resize_bilinear(const GrayImage& src, int out_width, int out_height);

// Top-left 8x8 block of the orthonormal 2-D DCT-II of a 32x32 image,
// row-major (index 0 is the DC term). Computed as two separable passes.
std::array<double, 64> lowfreq_dct_block(const GrayImage& img32);

// bit = coefficient > median of the 63 non-DC coefficients; the DC bit is
// compared against the same median.
PHash64 bits_from_block(const std::array<double, 64>& block);

PHash64 compute_phash(const GrayImage& gray);
PHash64 compute_phash(std::span<const uint8_t> payload);
PHash64 compute_phash_file(const std::string& path);

// Re-encodes a decoded image (used by fixtures and tests); format is an
// extension like ".png" or ".bmp".
std::vector<uint8_t> encode_gray(const GrayImage& img, const std::string& format);

}  // namespace imgtrace::phash
