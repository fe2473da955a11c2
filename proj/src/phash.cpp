#include "imgtrace/phash.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "imgtrace/detail/format.hpp"
#include "imgtrace/detail/io.hpp"
#include "imgtrace/errors.hpp"

namespace imgtrace::phash {

namespace {

constexpr int kResize = 32;
constexpr int kBlock = 8;

// 32-point orthonormal DCT-II basis, row u, column x.
const std::array<double, kResize * kResize>& dct_basis() {
    static const auto basis = [] {
        std::array<double, kResize * kResize> b{};
        const double n = kResize;
        for (int u = 0; u < kResize; ++u) {
            const double alpha = u == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
            for (int x = 0; x < kResize; ++x) {
                b[static_cast<size_t>(u) * kResize + x] =
                    alpha * std::cos(std::numbers::pi * (2 * x + 1) * u / (2.0 * n));
            }
        }
        return b;
    }();
    return basis;
}

bool looks_like_gif(std::span<const uint8_t> payload) {
    static const uint8_t magic[4] = {'G', 'I', 'F', '8'};
    return payload.size() >= 4 && std::equal(magic, magic + 4, payload.begin());
}

}  // namespace

int hamming(PHash64 a, PHash64 b) {
    return std::popcount(a.bits ^ b.bits);
}

std::string to_hex(PHash64 h) {
    return detail::to_hex64(h.bits);
}

PHash64 from_hex(std::string_view hex) {
    return PHash64{detail::from_hex64(hex)};
}

GrayImage gray_from_rgb8(const uint8_t* rgb, int width, int height) {
    GrayImage out{width, height, {}};
    out.pixels.resize(static_cast<size_t>(width) * height);
    for (size_t i = 0; i < out.pixels.size(); ++i) {
        const uint8_t r = rgb[i * 3], g = rgb[i * 3 + 1], b = rgb[i * 3 + 2];
        out.pixels[i] = static_cast<float>(0.299 * r + 0.587 * g + 0.114 * b);
    }
    return out;
}

GrayImage gray_from_gray8(const uint8_t* gray, int width, int height) {
    GrayImage out{width, height, {}};
    out.pixels.assign(gray, gray + static_cast<size_t>(width) * height);
    return out;
}

GrayImage decode_gray(std::span<const uint8_t> payload) {
    if (payload.empty()) throw DecodeError("empty image payload");
    if (looks_like_gif(payload)) {
        throw DecodeError("animated formats are not supported");
    }
    cv::Mat raw(1, static_cast<int>(payload.size()), CV_8U,
                const_cast<uint8_t*>(payload.data()));
    cv::Mat img = cv::imdecode(raw, cv::IMREAD_COLOR);
    if (img.empty()) throw DecodeError("undecodable image payload");
    if (img.cols < 1 || img.rows < 1) throw DecodeError("zero-area image");

    GrayImage out{img.cols, img.rows, {}};
    out.pixels.resize(static_cast<size_t>(img.cols) * img.rows);
    for (int y = 0; y < img.rows; ++y) {
        const cv::Vec3b* row = img.ptr<cv::Vec3b>(y);  // BGR
        for (int x = 0; x < img.cols; ++x) {
            const auto& px = row[x];
            out.pixels[static_cast<size_t>(y) * img.cols + x] =
                static_cast<float>(0.299 * px[2] + 0.587 * px[1] + 0.114 * px[0]);
        }
    }
    return out;
}

GrayImage load_gray(const std::string& path) {
    return decode_gray(detail::read_file_bytes(path));
}

namespace {

// One resampling axis: for each output coordinate, the contributing source
// range and normalized triangle weights.
struct FilterTap {
    int first;
    std::vector<double> weights;
};

std::vector<FilterTap> build_taps(int src, int dst) {
    std::vector<FilterTap> taps(static_cast<size_t>(dst));
    const double scale = static_cast<double>(src) / dst;
    const double support = std::max(1.0, scale);
    for (int o = 0; o < dst; ++o) {
        const double center = (o + 0.5) * scale;
        int lo = static_cast<int>(std::floor(center - support + 0.5));
        int hi = static_cast<int>(std::ceil(center + support - 0.5));
        lo = std::max(lo, 0);
        hi = std::min(hi, src - 1);
        FilterTap tap{lo, {}};
        double sum = 0.0;
        for (int s = lo; s <= hi; ++s) {
            const double d = std::abs((s + 0.5) - center) / support;
            const double w = d < 1.0 ? 1.0 - d : 0.0;
            tap.weights.push_back(w);
            sum += w;
        }
        if (sum <= 0.0) {  // degenerate window; fall back to nearest
            tap.first = std::clamp(static_cast<int>(center), 0, src - 1);
            tap.weights.assign(1, 1.0);
            sum = 1.0;
        }
        for (double& w : tap.weights) w /= sum;
        taps[static_cast<size_t>(o)] = std::move(tap);
    }
    return taps;
}

}  // namespace

GrayImage resize_bilinear(const GrayImage& src, int out_width, int out_height) {
    if (src.width < 1 || src.height < 1) throw DecodeError("zero-area image");
    if (out_width < 1 || out_height < 1) throw ConfigError("resize target must be positive");
    if (src.width == out_width && src.height == out_height) return src;

    const auto xtaps = build_taps(src.width, out_width);
    const auto ytaps = build_taps(src.height, out_height);

    // horizontal pass, then vertical
    std::vector<double> mid(static_cast<size_t>(src.height) * out_width);
    for (int y = 0; y < src.height; ++y) {
        const float* row = src.pixels.data() + static_cast<size_t>(y) * src.width;
        for (int x = 0; x < out_width; ++x) {
            const auto& tap = xtaps[static_cast<size_t>(x)];
            double acc = 0.0;
            for (size_t k = 0; k < tap.weights.size(); ++k) {
                acc += tap.weights[k] * row[tap.first + static_cast<int>(k)];
            }
            mid[static_cast<size_t>(y) * out_width + x] = acc;
        }
    }
    GrayImage out{out_width, out_height, {}};
    out.pixels.resize(static_cast<size_t>(out_width) * out_height);
    for (int y = 0; y < out_height; ++y) {
        const auto& tap = ytaps[static_cast<size_t>(y)];
        for (int x = 0; x < out_width; ++x) {
            double acc = 0.0;
            for (size_t k = 0; k < tap.weights.size(); ++k) {
                acc += tap.weights[k] * mid[static_cast<size_t>(tap.first + k) * out_width + x];
            }
            out.pixels[static_cast<size_t>(y) * out_width + x] = static_cast<float>(acc);
        }
    }
    return out;
}

std::array<double, 64> lowfreq_dct_block(const GrayImage& img32) {
    if (img32.width != kResize || img32.height != kResize) {
        throw ConfigError("lowfreq_dct_block expects a 32x32 image");
    }
    const auto& basis = dct_basis();

    // rows pass: T[u][y] = sum_x basis[u][x] * p[y][x], only u < 8 needed
    std::array<double, kBlock * kResize> rows{};
    for (int u = 0; u < kBlock; ++u) {
        for (int y = 0; y < kResize; ++y) {
            double acc = 0.0;
            for (int x = 0; x < kResize; ++x) {
                acc += basis[static_cast<size_t>(u) * kResize + x] * img32.at(x, y);
            }
            rows[static_cast<size_t>(u) * kResize + y] = acc;
        }
    }
    // columns pass: C[v][u] = sum_y basis[v][y] * T[u][y]
    std::array<double, 64> block{};
    for (int v = 0; v < kBlock; ++v) {
        for (int u = 0; u < kBlock; ++u) {
            double acc = 0.0;
            for (int y = 0; y < kResize; ++y) {
                acc += basis[static_cast<size_t>(v) * kResize + y] *
                       rows[static_cast<size_t>(u) * kResize + y];
            }
            block[static_cast<size_t>(v) * kBlock + u] = acc;
        }
    }
    return block;
}

PHash64 bits_from_block(const std::array<double, 64>& block) {
    std::array<double, 63> ac{};
    std::copy(block.begin() + 1, block.end(), ac.begin());
    std::nth_element(ac.begin(), ac.begin() + 31, ac.end());
    const double median = ac[31];

    uint64_t bits = 0;
    for (int i = 0; i < 64; ++i) {
        if (block[static_cast<size_t>(i)] > median) {
            bits |= 1ull << (63 - i);
        }
    }
    return PHash64{bits};
}

PHash64 compute_phash(const GrayImage& gray) {
    const GrayImage small = resize_bilinear(gray, kResize, kResize);
    return bits_from_block(lowfreq_dct_block(small));
}

PHash64 compute_phash(std::span<const uint8_t> payload) {
    return compute_phash(decode_gray(payload));
}

PHash64 compute_phash_file(const std::string& path) {
    return compute_phash(load_gray(path));
}

std::vector<uint8_t> encode_gray(const GrayImage& img, const std::string& format) {
    cv::Mat mat(img.height, img.width, CV_8U);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            mat.at<uint8_t>(y, x) = static_cast<uint8_t>(
                std::clamp(std::lround(img.at(x, y)), 0l, 255l));
        }
    }
    std::vector<uint8_t> out;
    if (!cv::imencode(format, mat, out)) {
        throw IoError("cannot encode image as " + format);
    }
    return out;
}

}  // namespace imgtrace::phash
