#pragma once

#include "tiersplat/core/image.hpp"

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace tiersplat::pipeline {

    /// PSNR reported for identical images.
    inline constexpr double kPsnrIdentical = 99.0;

    struct ImageMetrics {
        double psnr = 0.0;
        double ssim = 0.0;
    };

    /// PSNR (peak 1) and mean SSIM. Throws ShapeError on mismatched images.
    ImageMetrics compute_metrics(const Image& rendered, const Image& reference);

    struct FrameMetrics {
        int frame = 0;
        double psnr = 0.0;
        double ssim = 0.0;
        double train_s = 0.0;
        std::size_t n_gauss_pre = 0;
        std::size_t n_gauss_post = 0;
        std::size_t n_dynamic_anchors = 0;
        std::size_t n_views = 0;
    };

    inline constexpr const char* kMetricsHeader =
        "frame,psnr,ssim,train_s,n_gauss_pre,n_gauss_post,n_dynamic_anchors,n_views";

    /// One CSV row; train_s is written as 0 when `with_timing` is false.
    std::string metrics_row(const FrameMetrics& m, bool with_timing = true);

    /// Appends a row, writing the header first when the file is new or empty.
    void append_metrics(const std::filesystem::path& path, const FrameMetrics& m, bool with_timing = true);

    std::vector<FrameMetrics> read_metrics(const std::filesystem::path& path);

} // namespace tiersplat::pipeline
