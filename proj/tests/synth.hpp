// Deterministic synthetic inputs for the test suites: procedural images and
// a small planted end-to-end fixture (corpus + annotation fixture + event
// log simulated from a known six-process model).
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "imgtrace/hawkes.hpp"
#include "imgtrace/phash.hpp"

namespace synth {

// Single-frequency cosine grating: mean + amplitude * cos(pi*fx*(2x+1)/(2w))
// * cos(pi*fy*(2y+1)/(2h)). With integer fx/fy on a 32x32 canvas its DCT is
// a single known coefficient, which is what the hash oracle wants.
imgtrace::phash::GrayImage grating(int width, int height, int fx, int fy,
                                   double amplitude = 60.0, double mean = 128.0);

// The same grating superimposed on a graded bed that gives every one of the
// 64 low-frequency cells a distinct, well-separated coefficient. A pure
// grating leaves 62 coefficients tied at ~0 = the median, where hash bits
// would be decided by floating-point noise; the bed removes the ties so two
// DCT implementations must agree bit for bit.
imgtrace::phash::GrayImage graded_grating(int fx, int fy);

// Smooth pseudo-photo: a seeded sum of a few low-frequency gratings plus a
// touch of pixel noise, normalized into [8, 247].
imgtrace::phash::GrayImage smooth_field(int width, int height, uint64_t seed);

// Adds N(0, sigma) pixel noise (clamped to [0,255]).
imgtrace::phash::GrayImage jitter(const imgtrace::phash::GrayImage& src, uint64_t seed,
                                  double sigma);

// Resizes to the given fraction of the original dimensions.
imgtrace::phash::GrayImage rescale(const imgtrace::phash::GrayImage& src, double factor);

std::vector<uint8_t> png(const imgtrace::phash::GrayImage& img);

// Planted pipeline fixture: 50 images (12 near-duplicate groups of 4 plus 2
// loners), a web-detection fixture covering every corpus hash, and an event
// CSV simulated from a known stable 6-process model, one series per group
// hash. Everything is derived from `seed`.
struct Fixture {
    std::filesystem::path corpus_dir;
    std::filesystem::path fixture_json;
    std::filesystem::path events_csv;
    std::filesystem::path config_json;
    std::filesystem::path output_dir;

    std::vector<std::string> communities;
    imgtrace::hawkes::HawkesModel model;
    int64_t window_start = 0;
    int64_t window_end = 0;

    // Ground truth aggregated over all simulated series.
    std::vector<std::vector<double>> true_C;  // [source][dest] kept children
    std::vector<double> true_B;               // immigrants per process
    std::vector<uint64_t> true_N;             // events per process
};

Fixture build_fixture(const std::filesystem::path& root, uint64_t seed);

}  // namespace synth
