#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "kinfit/image.hpp"
#include "kinfit/preprocess.hpp"
#include "kinfit/time_grid.hpp"

using namespace kinfit;

namespace {

TimeGrid flat_grid(int frames) {
    std::vector<double> starts(static_cast<std::size_t>(frames));
    std::vector<double> durs(static_cast<std::size_t>(frames), 10.0);
    for (int t = 0; t < frames; ++t) starts[static_cast<std::size_t>(t)] = 10.0 * t;
    return TimeGrid(starts, durs);
}

/// Independent convolution oracle: scatter each source pixel into a
/// zero-padded accumulator, then crop.
Image2D convolve_oracle(const Image2D& img, const Image2D& kernel) {
    const int half = kernel.rows() / 2;
    const int pr = img.rows() + 2 * half, pc = img.cols() + 2 * half;
    std::vector<double> padded(static_cast<std::size_t>(pr) * pc, 0.0);
    for (int i = 0; i < img.rows(); ++i)
        for (int j = 0; j < img.cols(); ++j)
            for (int a = 0; a < kernel.rows(); ++a)
                for (int b = 0; b < kernel.cols(); ++b)
                    padded[static_cast<std::size_t>(i + a) * pc + (j + b)] +=
                        img.at(i, j) * kernel.at(kernel.rows() - 1 - a, kernel.cols() - 1 - b);
    Image2D out(img.rows(), img.cols());
    for (int i = 0; i < img.rows(); ++i)
        for (int j = 0; j < img.cols(); ++j)
            out.at(i, j) = padded[static_cast<std::size_t>(i + half) * pc + (j + half)];
    return out;
}

Image2D disk_image(int n, double cx, double cy, double radius, double inside, double outside) {
    Image2D img(n, n, outside);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if ((i - cx) * (i - cx) + (j - cy) * (j - cy) <= radius * radius)
                img.at(i, j) = inside;
    return img;
}

}  // namespace

TEST_CASE("gaussian_kernel: degenerate, closed-form and limiting cases") {
    SECTION("single-tap window") {
        const auto k = gaussian_kernel(1.0, 1);
        REQUIRE(k.rows() == 1);
        CHECK(k.at(0, 0) == Catch::Approx(1.0));
    }
    SECTION("sigma 1, 3x3: closed form and 8-fold symmetry") {
        const auto k = gaussian_kernel(1.0, 3);
        const double e1 = std::exp(-0.5), e2 = std::exp(-1.0);
        const double norm = 1.0 + 4.0 * e1 + 4.0 * e2;
        CHECK(k.at(1, 1) == Catch::Approx(1.0 / norm));
        CHECK(k.at(0, 1) == Catch::Approx(e1 / norm));
        CHECK(k.at(0, 0) == Catch::Approx(e2 / norm));
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                CHECK(k.at(i, j) == Catch::Approx(k.at(2 - i, j)));
                CHECK(k.at(i, j) == Catch::Approx(k.at(j, i)));
            }
        double sum = 0.0;
        for (double v : k.values()) sum += v;
        CHECK(sum == Catch::Approx(1.0));
    }
    SECTION("huge sigma tends to the uniform window") {
        const auto k = gaussian_kernel(1e6, 3);
        for (double v : k.values()) CHECK(std::abs(v - 1.0 / 9.0) < 1e-6);
    }
    SECTION("invalid arguments") {
        CHECK_THROWS_AS(gaussian_kernel(1.0, 4), std::invalid_argument);
        CHECK_THROWS_AS(gaussian_kernel(0.0, 3), std::invalid_argument);
    }
}

TEST_CASE("smooth_frames: identity on constants, kernel stamp on impulses") {
    const auto kernel = gaussian_kernel(1.0, 3);
    const auto grid = flat_grid(2);

    SECTION("constant frames are fixed points") {
        DynamicImage dyn(8, 8, grid);
        for (double& v : dyn.values()) v = 3.7;
        const auto smooth = smooth_frames(dyn, kernel);
        for (int i = 1; i < 7; ++i)
            for (int j = 1; j < 7; ++j)
                CHECK(smooth.at(i, j, 0) == Catch::Approx(3.7).epsilon(1e-12));
    }

    SECTION("interior impulse reproduces the kernel") {
        DynamicImage dyn(9, 9, grid);
        dyn.at(4, 4, 1) = 2.0;
        const auto smooth = smooth_frames(dyn, kernel);
        for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj)
                CHECK(smooth.at(4 + di, 4 + dj, 1) ==
                      Catch::Approx(2.0 * kernel.at(1 + di, 1 + dj)));
        CHECK(smooth.at(0, 0, 1) == 0.0);
        CHECK(smooth.frame(0).sum() == 0.0);
    }
}

TEST_CASE("smooth_frames: random frame matches the brute-force oracle") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> uni(0.0, 10.0);
    DynamicImage dyn(16, 16, flat_grid(1));
    for (double& v : dyn.values()) v = uni(rng);
    const auto kernel = gaussian_kernel(1.3, 5);
    const auto smooth = smooth_frames(dyn, kernel);
    const auto expected = convolve_oracle(dyn.frame(0), kernel);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j)
            CHECK(smooth.at(i, j, 0) == Catch::Approx(expected.at(i, j)).margin(1e-12));
}

TEST_CASE("smooth_frames: interior mass preservation and positivity") {
    const auto kernel = gaussian_kernel(1.0, 3);
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> uni(0.0, 5.0);
    DynamicImage dyn(12, 12, flat_grid(1));
    // support kept one kernel radius away from the border
    for (int i = 2; i < 10; ++i)
        for (int j = 2; j < 10; ++j) dyn.at(i, j, 0) = uni(rng);
    const double before = dyn.frame(0).sum();
    const auto smooth = smooth_frames(dyn, kernel);
    CHECK(smooth.frame(0).sum() == Catch::Approx(before).epsilon(1e-12));
    for (double v : smooth.values()) CHECK(v >= 0.0);
}

TEST_CASE("time_average: means over frames") {
    SECTION("single frame is its own average") {
        DynamicImage dyn(4, 4, flat_grid(1));
        dyn.at(2, 3, 0) = 5.0;
        const auto avg = time_average(dyn);
        CHECK(avg.at(2, 3) == Catch::Approx(5.0));
        CHECK(avg.at(0, 0) == 0.0);
    }
    SECTION("two constant frames average to their midpoint") {
        DynamicImage dyn(3, 3, flat_grid(2));
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                dyn.at(i, j, 0) = 1.0;
                dyn.at(i, j, 1) = 3.0;
            }
        const auto avg = time_average(dyn);
        for (double v : avg.values()) CHECK(v == Catch::Approx(2.0));
    }
    SECTION("27-frame stack matches independent accumulation") {
        std::mt19937_64 rng(5);
        std::uniform_real_distribution<double> uni(0.0, 100.0);
        DynamicImage dyn(6, 7, flat_grid(27));
        for (double& v : dyn.values()) v = uni(rng);
        const auto avg = time_average(dyn);
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 7; ++j) {
                double acc = 0.0;
                for (int t = 26; t >= 0; --t) acc += dyn.at(i, j, t);  // reversed order
                CHECK(avg.at(i, j) == Catch::Approx(acc / 27.0));
            }
    }
}

TEST_CASE("segment_roi: blurred uniform disk recovered with Dice >= 0.9") {
    // Uniform disk (value 10, background 0.1, radius 16) under a mild
    // sigma = 0.5 blur; the separation threshold must land strictly between
    // background and plateau so the mask stays within ~1 px of the disk.
    const auto truth = disk_image(64, 32.0, 32.0, 16.0, 1.0, 0.0);
    auto img = disk_image(64, 32.0, 32.0, 16.0, 10.0, 0.1);
    img = convolve(img, gaussian_kernel(0.5, 3));

    const auto roi = segment_roi(img, 20);
    INFO("threshold " << roi.threshold << " sigma " << roi.fitted_sigma);
    CHECK(roi.threshold > 0.1);
    CHECK(roi.threshold <= 10.0);
    CHECK(dice_coefficient(roi.mask, truth) >= 0.9);

    SECTION("mask is exactly the superlevel set") {
        for (int i = 0; i < 64; ++i)
            for (int j = 0; j < 64; ++j)
                CHECK(roi.mask.at(i, j) == (img.at(i, j) >= roi.threshold ? 1.0 : 0.0));
    }
}

TEST_CASE("segment_roi: gaussian row profile with a plateau") {
    // Row through the peak: discretized Gaussian (sigma 4) plus a plateau of
    // value 2 at columns peak+10 .. peak+20. The largest deviation between
    // the row and its Gaussian fit sits at the plateau, so the threshold
    // equals the plateau level and the mask keeps the plateau exactly.
    const int n = 64, ci = 32, cj = 32;
    const double plateau = 2.0;
    Image2D img(n, n);
    for (int i = 0; i < n; ++i) {
        const double row_scale = i == ci ? 1.0 : 0.5;
        for (int j = 0; j < n; ++j) {
            const double dj = j - cj;
            double v = 10.0 * std::exp(-dj * dj / 32.0);
            if (j >= cj + 10 && j <= cj + 20) v = std::max(v, plateau);
            img.at(i, j) = row_scale * v;
        }
    }
    const auto roi = segment_roi(img, 25);
    CHECK(roi.seed_i == ci);
    CHECK(roi.seed_j == cj);
    CHECK(roi.threshold == Catch::Approx(plateau));
    for (int j = cj + 10; j <= cj + 20; ++j) CHECK(roi.mask.at(ci, j) == 1.0);
    CHECK(roi.mask.at(ci, cj + 21) == 0.0);
    CHECK(roi.mask.at(ci, cj + 9) == 0.0);
    CHECK(roi.mask.at(ci, cj) == 1.0);
}

TEST_CASE("segment_roi: single hot pixel dominates the mask") {
    // The threshold is an image value at the max-deviation column, so the
    // pixel defining it always enters the mask along with the peak; the
    // rest of a strictly-below-threshold background stays excluded.
    Image2D img(16, 16, 0.003);
    img.at(7, 9) = 50.0;
    img.at(7, 8) = 0.01;
    img.at(7, 10) = 0.01;
    const auto roi = segment_roi(img, 2);
    CHECK(roi.seed_i == 7);
    CHECK(roi.seed_j == 9);
    CHECK(roi.threshold == Catch::Approx(0.01));
    CHECK(roi.mask.at(7, 9) == 1.0);
    CHECK(roi.count() <= 3);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j)
            if (!(i == 7 && j >= 8 && j <= 10)) CHECK(roi.mask.at(i, j) == 0.0);
}

TEST_CASE("segment_roi: degenerate inputs") {
    SECTION("flat image is an error") {
        Image2D img(8, 8, 1.0);
        CHECK_THROWS_WITH(segment_roi(img), "degenerate segmentation input");
    }
    SECTION("tied maxima flagged, lexicographically smallest kept") {
        Image2D img(8, 8, 0.0);
        img.at(2, 3) = 5.0;
        img.at(5, 1) = 5.0;
        const auto roi = segment_roi(img, 3);
        CHECK(roi.tied_max);
        CHECK(roi.seed_i == 2);
        CHECK(roi.seed_j == 3);
    }
}

TEST_CASE("segment_roi: row fit beats a 100-point sigma scan") {
    auto img = disk_image(64, 30.0, 34.0, 10.0, 8.0, 0.05);
    img = convolve(img, gaussian_kernel(1.0, 3));
    const auto roi = segment_roi(img, 14);

    std::vector<double> row(64);
    double amp = 0.0;
    for (int j = 0; j < 64; ++j) {
        row[static_cast<std::size_t>(j)] = img.at(roi.seed_i, j);
        amp = std::max(amp, row[static_cast<std::size_t>(j)]);
    }
    const auto sse = [&](double sigma) {
        double acc = 0.0;
        for (int j = 0; j < 64; ++j) {
            const double dj = j - roi.seed_j;
            const double g = amp * std::exp(-dj * dj / (2.0 * sigma * sigma));
            acc += (row[static_cast<std::size_t>(j)] - g) * (row[static_cast<std::size_t>(j)] - g);
        }
        return acc;
    };
    const double fit_sse = sse(roi.fitted_sigma);
    for (int s = 0; s < 100; ++s) {
        const double sigma = 0.5 + (64.0 - 0.5) * s / 99.0;
        CHECK(fit_sse <= sse(sigma) * (1.0 + 1e-9));
    }
}
