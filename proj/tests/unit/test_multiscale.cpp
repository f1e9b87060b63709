#include "doctest.h"

#include "tiersplat/multiscale/levels.hpp"

#include "../support/fd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace tiersplat;
using namespace tiersplat::multiscale;
using tiersplat::testing::code_of;

namespace {

    // Brute-force oracle: repeatedly split the sorted sample at the mean of
    // the samples inside the current range.
    std::vector<std::pair<double, double>> mean_split_oracle(std::vector<double> xs, int L) {
        std::sort(xs.begin(), xs.end());
        double lo = xs.front(), hi = xs.back();
        std::vector<std::pair<double, double>> out;
        for (int l = 1; l < L; ++l) {
            double sum = 0.0;
            int n = 0;
            for (double x : xs)
                if (x >= lo && x <= hi) {
                    sum += x;
                    ++n;
                }
            const double split = n >= 10 ? sum / n : 0.5 * (lo + hi);
            out.emplace_back(split, hi);
            hi = split;
        }
        out.emplace_back(lo, hi);
        return out;
    }

    std::vector<double> uniform_samples(int n, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::vector<double> xs(static_cast<std::size_t>(n));
        for (double& x : xs) x = u(rng);
        return xs;
    }

} // namespace

TEST_CASE("threshold table") {
    CHECK(threshold_for_level(1, 0.01) == 0.01);
    CHECK(threshold_for_level(2, 0.01) == 0.0025);
    CHECK(threshold_for_level(3, 0.01) == 0.000625);
    for (int l = 1; l < 8; ++l) CHECK(threshold_for_level(l + 1, 0.01) < threshold_for_level(l, 0.01));
}

TEST_CASE("partition of uniform scales") {
    const auto xs = uniform_samples(10000, 42);
    const auto stats = measure_scales(xs);
    CHECK(stats.s_min0 <= stats.s_mean0);
    CHECK(stats.s_mean0 <= stats.s_max0);

    const auto one = partition_scales(stats, xs, 1);
    REQUIRE(one.size() == 1);
    CHECK(one[0].s_min == stats.s_min0);
    CHECK(one[0].s_max == stats.s_max0);
    CHECK(one[0].res_factor == 1.0);

    const auto two = partition_scales(stats, xs, 2);
    REQUIRE(two.size() == 2);
    CHECK(std::abs(two[0].s_min - 0.5) < 0.02);
    CHECK(std::abs(two[0].s_max - 1.0) < 0.02);
    CHECK(std::abs(two[1].s_max - 0.5) < 0.02);
    CHECK(std::abs(two[1].s_min) < 0.02);

    const auto three = partition_scales(stats, xs, 3);
    REQUIRE(three.size() == 3);
    const auto oracle = mean_split_oracle(xs, 3);
    const double expected[3][2] = {{0.5, 1.0}, {0.25, 0.5}, {0.0, 0.25}};
    double length = 0.0;
    for (int l = 0; l < 3; ++l) {
        CHECK(three[l].l == l + 1);
        CHECK(std::abs(three[l].s_min - expected[l][0]) < 0.02);
        CHECK(std::abs(three[l].s_max - expected[l][1]) < 0.02);
        CHECK(std::abs(three[l].s_min - oracle[l].first) < 1e-12);
        CHECK(std::abs(three[l].s_max - oracle[l].second) < 1e-12);
        length += three[l].s_max - three[l].s_min;
        if (l > 0) CHECK(three[l].s_max == three[l - 1].s_min);
    }
    CHECK(std::abs(length - (stats.s_max0 - stats.s_min0)) < 1e-12);
    CHECK(three[0].res_factor == 0.25);
    CHECK(three[1].res_factor == 0.5);
    CHECK(three[2].res_factor == 1.0);
    CHECK(three[0].tau_add == 0.01);
    CHECK(three[1].tau_add == 0.0025);
    CHECK(three[2].tau_add == 0.000625);
}

TEST_CASE("partition errors and small-sample fallback") {
    const std::vector<double> xs{0.1, 0.2, 0.9};
    const auto stats = measure_scales(xs);
    CHECK(code_of([&] { partition_scales(stats, xs, 0); }) == ErrorCode::BadLevelCount);
    CHECK(code_of([&] { measure_scales({}); }) == ErrorCode::EmptyInput);
    CHECK(code_of([&] { partition_scales(stats, {}, 2); }) == ErrorCode::EmptyInput);
    // Fewer than 10 samples: midpoint split.
    const auto two = partition_scales(stats, xs, 2);
    CHECK(std::abs(two[0].s_min - 0.5) < 1e-12);
}

TEST_CASE("clamp_scale") {
    ScaleLevel lv;
    lv.s_min = 0.1;
    lv.s_max = 0.5;
    CHECK(clamp_scale(Vec3(0.2, 0.3, 0.4), lv) == Vec3(0.2, 0.3, 0.4));
    CHECK(clamp_scale(Vec3(0.01, 0.3, 0.4), lv).x() == 0.1);
    CHECK(clamp_scale(Vec3(0.9, 0.3, 0.4), lv).x() == 0.5);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        const Vec3 s(u(rng), u(rng), u(rng));
        CHECK(clamp_scale(clamp_scale(s, lv), lv) == clamp_scale(s, lv));
    }
}

TEST_CASE("level assignment") {
    const auto xs = uniform_samples(2000, 5);
    const auto levels = partition_scales(measure_scales(xs), xs, 3);
    for (double x : xs) {
        const int l = level_for_scale(levels, x);
        CHECK(x >= levels[static_cast<std::size_t>(l - 1)].s_min);
        CHECK(x <= levels[static_cast<std::size_t>(l - 1)].s_max);
    }
    CHECK(level_for_scale(levels, levels[0].s_min) == 1);
}

TEST_CASE("downsample pyramid") {
    ScaleLevel a, b, c;
    a.res_factor = 0.25;
    b.res_factor = 0.5;
    c.res_factor = 1.0;
    const std::vector<ScaleLevel> levels{a, b, c};
    Image gray(8, 8, 3, 0.37);
    const auto pyr = downsample_pyramid(gray, levels);
    REQUIRE(pyr.size() == 3);
    CHECK(pyr[0].width == 2);
    CHECK(pyr[1].width == 4);
    for (const auto& img : pyr)
        for (double v : img.data) CHECK(std::abs(v - 0.37) < 1e-15);
    CHECK(pyr[2] == gray);
}
