#include "tiersplat/multiscale/levels.hpp"
#include "tiersplat/core/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tiersplat::multiscale {

    int ScaleLevel::downsample_factor() const {
        return static_cast<int>(std::lround(1.0 / res_factor));
    }

    ScaleStats measure_scales(std::span<const double> scales) {
        if (scales.empty()) {
            throw Error(ErrorCode::EmptyInput, "no scales to measure");
        }
        const auto [lo, hi] = std::minmax_element(scales.begin(), scales.end());
        const double mean = std::accumulate(scales.begin(), scales.end(), 0.0) / static_cast<double>(scales.size());
        return {*lo, *hi, mean};
    }

    std::vector<ScaleLevel> partition_scales(const ScaleStats& stats, std::span<const double> scales, int L,
                                             double tau_base) {
        if (L < 1) {
            throw Error(ErrorCode::BadLevelCount, "at least one scale level is required");
        }
        if (scales.empty()) {
            throw Error(ErrorCode::EmptyInput, "no scales to partition");
        }
        if (!(stats.s_max0 > stats.s_min0)) {
            throw Error(ErrorCode::DegenerateRange, "scale range is empty");
        }
        std::vector<ScaleLevel> levels;
        double lo = stats.s_min0;
        double hi = stats.s_max0;
        for (int l = 1; l <= L; ++l) {
            ScaleLevel level;
            level.l = l;
            level.res_factor = std::ldexp(1.0, -(L - l));
            level.tau_add = threshold_for_level(l, tau_base);
            if (l == L) {
                level.s_min = lo;
                level.s_max = hi;
            } else {
                double sum = 0.0;
                std::size_t count = 0;
                for (double s : scales) {
                    if (s >= lo && s <= hi) {
                        sum += s;
                        ++count;
                    }
                }
                double split = count >= kMinSamplesForMean ? sum / static_cast<double>(count) : 0.5 * (lo + hi);
                if (!(split > lo && split < hi)) {
                    split = 0.5 * (lo + hi);
                }
                level.s_min = split;
                level.s_max = hi;
                hi = split;
            }
            levels.push_back(level);
        }
        return levels;
    }

    Vec3 clamp_scale(const Vec3& s, const ScaleLevel& level) {
        return s.cwiseMax(level.s_min).cwiseMin(level.s_max);
    }

    double threshold_for_level(int l, double base) {
        if (l < 1 || !(base > 0.0)) {
            throw Error(ErrorCode::BadConfig, "threshold needs l >= 1 and base > 0");
        }
        return base / std::pow(4.0, l - 1);
    }

    int level_for_scale(std::span<const ScaleLevel> levels, double max_axis_scale) {
        if (levels.empty()) {
            throw Error(ErrorCode::EmptyInput, "no scale levels");
        }
        for (const auto& level : levels) {
            if (max_axis_scale >= level.s_min && max_axis_scale <= level.s_max) {
                return level.l;
            }
        }
        return max_axis_scale > levels.front().s_max ? levels.front().l : levels.back().l;
    }

    std::vector<Image> downsample_pyramid(const Image& image, std::span<const ScaleLevel> levels) {
        std::vector<Image> out;
        out.reserve(levels.size());
        for (const auto& level : levels) {
            out.push_back(box_downsample(image, level.downsample_factor()));
        }
        return out;
    }

} // namespace tiersplat::multiscale
