#pragma once

#include "tiersplat/core/geometry.hpp"
#include "tiersplat/core/image.hpp"

#include <map>
#include <span>
#include <vector>

namespace tiersplat::optim {

    inline constexpr double kDefaultLambdaSsim = 0.2;
    inline constexpr double kDefaultLambdaSparsity = 0.001;

    /// Mean SSIM over pixels and channels (11x11 Gaussian window, sigma 1.5,
    /// K1 = 0.01, K2 = 0.03, dynamic range 1, zero padding). When `d_a` is
    /// given it receives dSSIM/da.
    double ssim(const Image& a, const Image& b, Image* d_a = nullptr);

    /// Mean absolute difference; `d_a` receives its gradient (sign / N).
    double l1_loss(const Image& a, const Image& b, Image* d_a = nullptr);

    struct LevelLoss {
        int level = 1;
        double l1 = 0.0;
        double ssim_loss = 0.0; // 1 - SSIM
        double total = 0.0;     // l1 + lambda_ssim * ssim_loss
    };

    /// Throws ShapeError on mismatched images. `d_rendered` receives
    /// dtotal/drendered when given.
    LevelLoss level_loss(const Image& rendered, const Image& target, double lambda_ssim = kDefaultLambdaSsim,
                         Image* d_rendered = nullptr, int level = 1);

    struct LossReport {
        std::vector<LevelLoss> levels;
        double sparsity = 0.0; // sum of sigmoid(mask_logit)
        double lambda_r = kDefaultLambdaSparsity;
        double grand_total = 0.0;
        std::map<AnchorId, double> anchor_grad_norms;
    };

    LossReport total_loss(std::span<const LevelLoss> levels, std::span<const double> mask_logits,
                          double lambda_r = kDefaultLambdaSparsity);

    /// d(lambda_r * sigmoid(m))/dm.
    double sparsity_grad(double mask_logit, double lambda_r = kDefaultLambdaSparsity);

} // namespace tiersplat::optim
