#pragma once

#include "tiersplat/core/geometry.hpp"
#include "tiersplat/core/image.hpp"
#include "tiersplat/multiscale/levels.hpp"

#include <memory>
#include <span>
#include <vector>

namespace tiersplat::render {

    inline constexpr int kTileSize = 16;

    struct RenderOptions {
        Vec3 background = Vec3::Zero();
        /// Multiply opacities by sigmoid(mask_logit). Off reproduces plain compositing.
        bool apply_mask = true;
        /// Screen-space footprint in standard deviations; <= 0 disables culling.
        double cutoff_sigma = 3.0;
        /// Contributions with effective opacity below this are skipped.
        double min_alpha = 1.0 / 255.0;
        /// Compositing stops once transmittance drops below this.
        double t_min = 1e-4;

        /// Every Gaussian touches every pixel and no contribution is skipped.
        /// The rendered image is then smooth in all parameters.
        static RenderOptions exact() {
            RenderOptions o;
            o.cutoff_sigma = 0.0;
            o.min_alpha = 0.0;
            o.t_min = 0.0;
            return o;
        }
    };

    struct SplatContribution {
        GaussianId gaussian_id = 0;
        Vec2 mean2d = Vec2::Zero();
        Mat2 cov2d_inv = Mat2::Identity();
        double depth = 1.0;
        double alpha = 0.0;
        Vec3 color = Vec3::Zero();
        double mask_sigma = 1.0;

        double effective_alpha(const Vec2& pixel) const;
    };

    /// Front-to-back compositing of one pixel. Throws UnsortedContributions
    /// when depths are not non-decreasing.
    Vec3 composite_pixel(std::span<const SplatContribution> contribs, const Vec2& pixel, const Vec3& background,
                         double t_min = 1e-4);

    struct GaussianGrad {
        Vec3 mu = Vec3::Zero();
        Vec4 q = Vec4::Zero();
        Vec3 s = Vec3::Zero();
        double alpha = 0.0;
        Vec3 color = Vec3::Zero();
        double mask_logit = 0.0;

        /// L2 norm over the geometric and appearance parameters (mask excluded).
        double norm() const;
        GaussianGrad& operator+=(const GaussianGrad& o);
        GaussianGrad operator*(double k) const;
    };

    struct Tape;

    struct RenderOutput {
        Image color;
        Image transmittance;
        Image depth;
        /// Depth of the contribution that takes transmittance to 1/2 (the
        /// mean depth where the pixel never gets that opaque).
        Image median_depth;
        std::shared_ptr<const Tape> tape;
    };

    RenderOutput render(std::span<const Gaussian> gaussians, const CameraView& cam, const RenderOptions& opts = {},
                        bool with_grad = false);

    /// Reverse pass. Gradients are aligned with the Gaussian span given to the
    /// forward pass; rotation gradients are taken through normalize(q).
    std::vector<GaussianGrad> backward(const RenderOutput& out, const Image& dL_dC);

    /// Renders at the level's resolution (camera intrinsics scaled accordingly).
    RenderOutput render_level(std::span<const Gaussian> gaussians, const CameraView& cam,
                              const multiscale::ScaleLevel& level, const RenderOptions& opts = {},
                              bool with_grad = false);

    /// Full-resolution render of all Gaussians whose level is active. Masking
    /// follows opts.apply_mask. Gradients from backward() still align with the
    /// full span (zeros for inactive levels).
    RenderOutput render_fused(std::span<const Gaussian> gaussians, std::span<const multiscale::ScaleLevel> levels,
                              const CameraView& cam, const RenderOptions& opts = {}, bool with_grad = false);

    double sigmoid(double x);

} // namespace tiersplat::render
