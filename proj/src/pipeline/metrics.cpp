#include "tiersplat/pipeline/metrics.hpp"
#include "tiersplat/core/error.hpp"
#include "tiersplat/optim/loss.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace tiersplat::pipeline {

    ImageMetrics compute_metrics(const Image& rendered, const Image& reference) {
        if (!rendered.same_shape(reference) || rendered.data.empty()) {
            throw Error(ErrorCode::ShapeError, "metric images differ in shape");
        }
        double se = 0.0;
        for (std::size_t i = 0; i < rendered.data.size(); ++i) {
            const double d = rendered.data[i] - reference.data[i];
            se += d * d;
        }
        const double mse = se / static_cast<double>(rendered.data.size());
        ImageMetrics m;
        m.psnr = mse > 0.0 ? std::min(kPsnrIdentical, -10.0 * std::log10(mse)) : kPsnrIdentical;
        m.ssim = optim::ssim(rendered, reference);
        return m;
    }

    std::string metrics_row(const FrameMetrics& m, bool with_timing) {
        return fmt::format("{},{:.6f},{:.6f},{:.3f},{},{},{},{}", m.frame, m.psnr, m.ssim,
                           with_timing ? m.train_s : 0.0, m.n_gauss_pre, m.n_gauss_post, m.n_dynamic_anchors,
                           m.n_views);
    }

    void append_metrics(const std::filesystem::path& path, const FrameMetrics& m, bool with_timing) {
        const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
        std::ofstream f(path, std::ios::app);
        if (!f) throw Error(ErrorCode::IoError, "cannot append to " + path.string());
        if (fresh) f << kMetricsHeader << "\n";
        f << metrics_row(m, with_timing) << "\n";
        f.flush();
        if (!f) throw Error(ErrorCode::IoError, "write failed: " + path.string());
    }

    std::vector<FrameMetrics> read_metrics(const std::filesystem::path& path) {
        std::ifstream f(path);
        if (!f) throw Error(ErrorCode::IoError, "cannot read " + path.string());
        std::string line;
        if (!std::getline(f, line) || line != kMetricsHeader) {
            throw Error(ErrorCode::ParseError, "unexpected metrics header in " + path.string());
        }
        std::vector<FrameMetrics> rows;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            std::replace(line.begin(), line.end(), ',', ' ');
            std::istringstream in(line);
            FrameMetrics m;
            if (!(in >> m.frame >> m.psnr >> m.ssim >> m.train_s >> m.n_gauss_pre >> m.n_gauss_post >>
                  m.n_dynamic_anchors >> m.n_views)) {
                throw Error(ErrorCode::ParseError, "bad metrics row: " + line);
            }
            rows.push_back(m);
        }
        return rows;
    }

} // namespace tiersplat::pipeline
