// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <queue>

#include "doctest.h"

#include "cfgrpo/counterfactual.hpp"
#include "cfgrpo/error.hpp"
#include "cfgrpo/raster.hpp"
#include "cfgrpo/rng.hpp"

using namespace cfgrpo;

namespace {

RasterImage random_image(int h, int w, int c, uint64_t seed) {
    RasterImage img(h, w, c);
    Rng rng(seed);
    for (auto& v : img.values) v = rng.uniform();
    return img;
}

// direct 2-D convolution with the outer-product kernel and symmetric reflection
RasterImage direct_blur(const RasterImage& in, double sigma, int radius) {
    const auto k = gaussian_kernel(sigma, radius);
    RasterImage out(in.height, in.width, in.channels);
    for (int c = 0; c < in.channels; ++c)
        for (int y = 0; y < in.height; ++y)
            for (int x = 0; x < in.width; ++x) {
                double s = 0;
                for (int dy = -radius; dy <= radius; ++dy)
                    for (int dx = -radius; dx <= radius; ++dx)
                        s += k[dy + radius] * k[dx + radius] *
                             in.at(reflect_index(y + dy, in.height), reflect_index(x + dx, in.width), c);
                out.at(y, x, c) = s;
            }
    return out;
}

int count_components(const RasterImage& img, double threshold) {
    std::vector<uint8_t> seen(img.values.size(), 0);
    int n = 0;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            if (seen[img.index(y, x)] || img.at(y, x) <= threshold) continue;
            ++n;
            std::queue<std::pair<int, int>> q;
            q.push({y, x});
            seen[img.index(y, x)] = 1;
            while (!q.empty()) {
                auto [cy, cx] = q.front();
                q.pop();
                const int d[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
                for (auto& o : d) {
                    const int ny = cy + o[0], nx = cx + o[1];
                    if (ny < 0 || nx < 0 || ny >= img.height || nx >= img.width) continue;
                    if (seen[img.index(ny, nx)] || img.at(ny, nx) <= threshold) continue;
                    seen[img.index(ny, nx)] = 1;
                    q.push({ny, nx});
                }
            }
        }
    return n;
}

std::string temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("cfgrpo_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

} // namespace

TEST_CASE("gaussian kernel") {
    for (double sigma : {0.5, 1.0, 3.0, 8.0}) {
        const auto k = gaussian_kernel(sigma, static_cast<int>(std::ceil(3 * sigma)));
        CHECK(std::abs(std::accumulate(k.begin(), k.end(), 0.0) - 1.0) < 1e-12);
        for (size_t i = 0; i < k.size() / 2; ++i) CHECK(k[i] == k[k.size() - 1 - i]);
    }
    CHECK_THROWS_AS(gaussian_kernel(0.0, 3), ContractViolation);
    CHECK_THROWS_AS(gaussian_kernel(1.0, 0), ContractViolation);
}

TEST_CASE("reflect index is symmetric half-sample reflection") {
    CHECK(reflect_index(-1, 5) == 0);
    CHECK(reflect_index(-2, 5) == 1);
    CHECK(reflect_index(5, 5) == 4);
    CHECK(reflect_index(6, 5) == 3);
    CHECK(reflect_index(2, 5) == 2);
    CHECK(reflect_index(-30, 7) >= 0);
    CHECK(reflect_index(-30, 7) < 7);
    CHECK(reflect_index(0, 1) == 0);
    CHECK(reflect_index(-3, 1) == 0);
}

TEST_CASE("gaussian blur") {
    SUBCASE("constant image is preserved exactly") {
        RasterImage img(9, 13, 1, 0.5);
        CHECK(gaussian_blur(img, 2.0, 6) == img);
    }
    SUBCASE("tiny sigma is near identity") {
        const auto img = random_image(10, 10, 1, 3);
        const auto out = gaussian_blur(img, 0.01, 1);
        for (size_t i = 0; i < img.size(); ++i) CHECK(std::abs(out.values[i] - img.values[i]) < 1e-6);
    }
    SUBCASE("single white pixel") {
        RasterImage img(7, 7, 1, 0.0);
        img.at(3, 3) = 1.0;
        const auto out = gaussian_blur(img, 1.0, 3);
        const auto k = gaussian_kernel(1.0, 3);
        CHECK(out.at(3, 3) == doctest::Approx(k[3] * k[3]).epsilon(1e-14));
        CHECK(std::abs(std::accumulate(out.values.begin(), out.values.end(), 0.0) - 1.0) < 1e-9);
    }
    SUBCASE("separable equals direct convolution") {
        for (uint64_t seed = 0; seed < 5; ++seed) {
            const auto img = random_image(16, 16, 1 + static_cast<int>(seed % 2) * 2, seed);
            const auto a = gaussian_blur(img, 1.7, 5);
            const auto b = direct_blur(img, 1.7, 5);
            for (size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.values[i] - b.values[i]) < 1e-9);
        }
    }
    SUBCASE("radius larger than the image") {
        const auto img = random_image(5, 6, 1, 9);
        const auto a = gaussian_blur(img, 8.0, 24);
        const auto b = direct_blur(img, 8.0, 24);
        for (size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.values[i] - b.values[i]) < 1e-9);
    }
    SUBCASE("linearity for convex combinations") {
        const auto x = random_image(12, 12, 1, 1), y = random_image(12, 12, 1, 2);
        RasterImage mix(12, 12, 1);
        for (size_t i = 0; i < mix.size(); ++i) mix.values[i] = 0.3 * x.values[i] + 0.7 * y.values[i];
        const auto bx = gaussian_blur(x, 2.0, 6), by = gaussian_blur(y, 2.0, 6), bm = gaussian_blur(mix, 2.0, 6);
        for (size_t i = 0; i < mix.size(); ++i) CHECK(std::abs(bm.values[i] - (0.3 * bx.values[i] + 0.7 * by.values[i])) < 1e-9);
    }
    SUBCASE("range preserved") {
        const auto out = gaussian_blur(random_image(20, 20, 3, 4), 3.0, 9);
        for (double v : out.values) CHECK((v >= 0.0 && v <= 1.0));
    }
    CHECK_THROWS_AS(gaussian_blur(RasterImage{}, 1.0, 3), ContractViolation);
}

TEST_CASE("synthesize counterfactual") {
    const auto img = random_image(16, 16, 1, 21);
    SUBCASE("empty mask is identity") {
        LesionMask m(16, 16);
        CHECK(synthesize_counterfactual(img, m, GaussianBlur{}) == img);
        CHECK(synthesize_counterfactual(img, m, SolidFill{}) == img);
    }
    SUBCASE("full mask with white fill") {
        LesionMask m(16, 16);
        std::fill(m.values.begin(), m.values.end(), 1);
        for (double v : synthesize_counterfactual(img, m, SolidFill{1.0}).values) CHECK(v == 1.0);
    }
    SUBCASE("half plane with blur") {
        LesionMask m(16, 16);
        for (int y = 0; y < 16; ++y)
            for (int x = 8; x < 16; ++x) m.at(y, x) = 1;
        const auto out = synthesize_counterfactual(img, m, GaussianBlur{2.0, 6});
        const auto blurred = gaussian_blur(img, 2.0, 6);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) CHECK(out.at(y, x) == (x < 8 ? img.at(y, x) : blurred.at(y, x)));
    }
    SUBCASE("multi-channel partition") {
        const auto rgb = random_image(8, 8, 3, 5);
        LesionMask m(8, 8);
        m.at(2, 3) = m.at(4, 4) = 1;
        const auto out = synthesize_counterfactual(rgb, m, SolidFill{0.25});
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                for (int c = 0; c < 3; ++c) CHECK(out.at(y, x, c) == (m.at(y, x) ? 0.25 : rgb.at(y, x, c)));
    }
    CHECK_THROWS_AS(synthesize_counterfactual(img, LesionMask(8, 8), GaussianBlur{}), ContractViolation);
}

TEST_CASE("spot interference") {
    RasterImage gray(64, 64, 1, 0.5);
    SpotInterferenceConfig cfg;
    SUBCASE("zero spots") {
        cfg.n_spots = 0;
        CHECK(apply_spot_interference(gray, cfg) == gray);
    }
    SUBCASE("seeded determinism") {
        cfg.seed = 77;
        CHECK(apply_spot_interference(gray, cfg) == apply_spot_interference(gray, cfg));
        auto other = cfg;
        other.seed = 78;
        CHECK_FALSE(apply_spot_interference(gray, cfg) == apply_spot_interference(gray, other));
    }
    SUBCASE("five separate bright components") {
        cfg.n_spots = 5;
        cfg.intensity = 0.9;
        for (uint64_t seed = 0; seed < 20; ++seed) {
            cfg.seed = seed;
            CHECK(count_components(apply_spot_interference(gray, cfg), 0.7) == 5);
        }
    }
    SUBCASE("range preserved") {
        for (double v : apply_spot_interference(random_image(32, 32, 3, 8), cfg).values) CHECK((v >= 0 && v <= 1));
    }
    SUBCASE("invalid config") {
        cfg.radius_min = 8;
        cfg.radius_max = 4;
        CHECK_THROWS_AS(apply_spot_interference(gray, cfg), ConfigError);
    }
}

TEST_CASE("raster format") {
    SUBCASE("header layout") {
        RasterImage img(2, 3, 1, 0.25);
        const auto bytes = encode_raster(img);
        REQUIRE(bytes.size() == 8 + 6 * 4);
        CHECK(bytes[0] == 'C');
        CHECK(bytes[1] == 'F');
        CHECK((bytes[2] | bytes[3] << 8) == 2);
        CHECK((bytes[4] | bytes[5] << 8) == 3);
        CHECK((bytes[6] | bytes[7] << 8) == 1);
        float f;
        std::memcpy(&f, bytes.data() + 8, 4);
        CHECK(f == 0.25f);
    }
    SUBCASE("file round trip is bitwise after quantization") {
        auto img = random_image(17, 11, 3, 6);
        img.quantize();
        const auto dir = temp_dir("raster");
        save_raster(img, dir + "/a.raster");
        CHECK(load_raster(dir + "/a.raster") == img);
    }
    SUBCASE("mask round trip") {
        LesionMask m(5, 4);
        m.at(1, 2) = m.at(4, 3) = 1;
        const auto dir = temp_dir("mask");
        save_mask(m, dir + "/m.raster");
        CHECK(load_mask(dir + "/m.raster") == m);
    }
    SUBCASE("truncated and malformed inputs") {
        auto bytes = encode_raster(RasterImage(4, 4, 1, 0.5));
        bytes.pop_back();
        CHECK_THROWS_AS(decode_raster(bytes, "t"), IoError);
        auto bad = encode_raster(RasterImage(4, 4, 1, 0.5));
        bad[0] = 'X';
        CHECK_THROWS_AS(decode_raster(bad, "t"), IoError);
        CHECK_THROWS_AS(load_raster("/nonexistent/cfgrpo.raster"), IoError);
    }
    SUBCASE("values outside [0,1] are rejected") {
        RasterImage img(2, 2, 1, 0.5);
        img.values[1] = 1.5;
        CHECK_THROWS_AS(img.validate(), ContractViolation);
    }
}
