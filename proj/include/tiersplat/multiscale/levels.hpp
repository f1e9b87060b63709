#pragma once

#include "tiersplat/core/geometry.hpp"
#include "tiersplat/core/image.hpp"

#include <span>
#include <vector>

namespace tiersplat::multiscale {

    /// One tier of the scale hierarchy. Level 1 is the coarsest.
    struct ScaleLevel {
        int l = 1;
        double s_min = 0.0;
        double s_max = 0.0;
        double res_factor = 1.0;
        double tau_add = 0.0;
        bool active = true;

        /// Integer block size used to box-downsample full-resolution images.
        int downsample_factor() const;

        friend bool operator==(const ScaleLevel&, const ScaleLevel&) = default;
    };

    struct ScaleStats {
        double s_min0 = 0.0;
        double s_max0 = 0.0;
        double s_mean0 = 0.0;
    };

    /// Below this many samples a sub-range splits at its midpoint instead of its mean.
    inline constexpr std::size_t kMinSamplesForMean = 10;
    inline constexpr double kDefaultTauBase = 0.01;

    ScaleStats measure_scales(std::span<const double> scales);

    /// Recursive mean split: level l keeps [mean, hi] of the current range and
    /// the remainder [lo, mean] is handed to level l + 1. The last level keeps
    /// what is left. Resolution factors are 2^-(L-l).
    std::vector<ScaleLevel> partition_scales(const ScaleStats& stats, std::span<const double> scales, int L,
                                             double tau_base = kDefaultTauBase);

    Vec3 clamp_scale(const Vec3& s, const ScaleLevel& level);

    /// base / 4^(l-1)
    double threshold_for_level(int l, double base);

    /// Level whose range contains `max_axis_scale`; coarser level wins on a
    /// shared endpoint. Values outside the hierarchy go to the nearest end.
    int level_for_scale(std::span<const ScaleLevel> levels, double max_axis_scale);

    /// One image per level, box-filtered by each level's resolution factor.
    std::vector<Image> downsample_pyramid(const Image& image, std::span<const ScaleLevel> levels);

} // namespace tiersplat::multiscale
