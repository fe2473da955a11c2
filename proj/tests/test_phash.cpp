#include <doctest.h>

#include <random>

#include "imgtrace/errors.hpp"
#include "imgtrace/phash.hpp"
#include "oracles.hpp"
#include "synth.hpp"

using namespace imgtrace;

TEST_CASE("hamming basics") {
    CHECK(phash::hamming({0x0}, {0x0}) == 0);
    CHECK(phash::hamming({0x0}, {~0ull}) == 64);
    CHECK(phash::hamming({0b1010}, {0b0110}) == 2);
    CHECK(phash::hamming({0xdeadbeef}, {0xdeadbeef}) == 0);
    // symmetry on a few random pairs
    std::mt19937_64 rng(11);
    for (int i = 0; i < 20; ++i) {
        const phash::PHash64 a{rng()}, b{rng()};
        CHECK(phash::hamming(a, b) == phash::hamming(b, a));
        CHECK(phash::hamming(a, b) <= 64);
    }
}

TEST_CASE("hamming triangle inequality on sampled triples") {
    std::mt19937_64 rng(42);
    for (int i = 0; i < 200; ++i) {
        const phash::PHash64 a{rng()}, b{rng()}, c{rng()};
        CHECK(phash::hamming(a, c) <= phash::hamming(a, b) + phash::hamming(b, c));
    }
}

TEST_CASE("hex round trip is 16 lowercase chars") {
    const phash::PHash64 h{0x0123456789abcdefull};
    const std::string hex = phash::to_hex(h);
    CHECK(hex == "0123456789abcdef");
    CHECK(phash::from_hex(hex) == h);
    CHECK(phash::to_hex({0}) == "0000000000000000");
    CHECK_THROWS_AS(phash::from_hex("123"), ParseError);
    CHECK_THROWS_AS(phash::from_hex("zzzzzzzzzzzzzzzz"), ParseError);
}

TEST_CASE("hash bits match the brute-force DCT oracle on gratings") {
    // 32x32 inputs skip the resize, so every bit is decided by the DCT and
    // median logic alone. The graded variant keeps every coefficient clear of
    // the median — a pure grating leaves 62 coefficients tied at ~0, where
    // bits would be decided by rounding noise rather than the algorithm.
    for (const auto [fx, fy] : {std::pair{1, 0}, {0, 1}, {3, 2}, {7, 7}, {5, 1}}) {
        const phash::GrayImage img = synth::graded_grating(fx, fy);
        CHECK(phash::compute_phash(img) == oracle::phash_direct(img));
    }
    // and on less structured content
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        const phash::GrayImage img = synth::smooth_field(32, 32, seed);
        CHECK(phash::compute_phash(img) == oracle::phash_direct(img));
    }
}

TEST_CASE("byte-identical and losslessly re-encoded images hash equal") {
    const phash::GrayImage img = synth::smooth_field(64, 48, 99);
    const std::vector<uint8_t> a = synth::png(img);
    const std::vector<uint8_t> b = synth::png(img);
    CHECK(a == b);
    CHECK(phash::compute_phash(a) == phash::compute_phash(b));

    // PNG and BMP of the same pixel data decode to the same luma.
    const phash::GrayImage decoded = phash::decode_gray(a);
    const std::vector<uint8_t> bmp = phash::encode_gray(decoded, ".bmp");
    CHECK(phash::compute_phash(bmp) == phash::compute_phash(a));
}

TEST_CASE("undecodable payloads are rejected") {
    const std::vector<uint8_t> garbage = {1, 2, 3, 4, 5};
    CHECK_THROWS_AS(phash::decode_gray(garbage), DecodeError);
    CHECK_THROWS_AS(phash::decode_gray({}), DecodeError);
    // animated containers are rejected outright, not truncated
    const std::vector<uint8_t> gif = {'G', 'I', 'F', '8', '9', 'a', 0, 0};
    CHECK_THROWS_AS(phash::decode_gray(gif), DecodeError);
}

TEST_CASE("resize: identity copy and basic shrink sanity") {
    const phash::GrayImage img = synth::smooth_field(32, 32, 5);
    const phash::GrayImage same = phash::resize_bilinear(img, 32, 32);
    CHECK(same.pixels == img.pixels);

    const phash::GrayImage small = phash::resize_bilinear(img, 8, 8);
    CHECK(small.width == 8);
    CHECK(small.height == 8);
    for (float p : small.pixels) {
        CHECK(p >= 0.0f);
        CHECK(p <= 255.0f);
    }
}

TEST_CASE("hash survives a 90% rescale on smooth images") {
    int ok = 0;
    for (uint64_t seed = 0; seed < 5; ++seed) {
        const phash::GrayImage img = synth::smooth_field(128, 128, 500 + seed);
        const phash::PHash64 a = phash::compute_phash(img);
        const phash::PHash64 b = phash::compute_phash(synth::rescale(img, 0.9));
        if (phash::hamming(a, b) <= 10) ++ok;
    }
    CHECK(ok >= 4);
}
