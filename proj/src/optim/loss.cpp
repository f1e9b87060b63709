#include "tiersplat/optim/loss.hpp"
#include "tiersplat/core/error.hpp"
#include "tiersplat/render/rasterizer.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace tiersplat::optim {

    namespace {

        constexpr int kRadius = 5;
        constexpr double kSigma = 1.5;
        constexpr double kC1 = 0.01 * 0.01;
        constexpr double kC2 = 0.03 * 0.03;

        const std::array<double, 2 * kRadius + 1>& window() {
            static const auto w = [] {
                std::array<double, 2 * kRadius + 1> k{};
                double sum = 0.0;
                for (int i = -kRadius; i <= kRadius; ++i) {
                    k[static_cast<std::size_t>(i + kRadius)] = std::exp(-0.5 * i * i / (kSigma * kSigma));
                    sum += k[static_cast<std::size_t>(i + kRadius)];
                }
                for (double& v : k) v /= sum;
                return k;
            }();
            return w;
        }

        // Same-size separable Gaussian filter of one channel plane, zero padded.
        // The kernel is symmetric, so this operator is its own adjoint.
        std::vector<double> blur(const std::vector<double>& src, int w, int h) {
            const auto& k = window();
            std::vector<double> tmp(src.size(), 0.0), out(src.size(), 0.0);
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    double acc = 0.0;
                    for (int d = -kRadius; d <= kRadius; ++d) {
                        const int xx = x + d;
                        if (xx < 0 || xx >= w) continue;
                        acc += k[static_cast<std::size_t>(d + kRadius)] * src[static_cast<std::size_t>(y) * w + xx];
                    }
                    tmp[static_cast<std::size_t>(y) * w + x] = acc;
                }
            }
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    double acc = 0.0;
                    for (int d = -kRadius; d <= kRadius; ++d) {
                        const int yy = y + d;
                        if (yy < 0 || yy >= h) continue;
                        acc += k[static_cast<std::size_t>(d + kRadius)] * tmp[static_cast<std::size_t>(yy) * w + x];
                    }
                    out[static_cast<std::size_t>(y) * w + x] = acc;
                }
            }
            return out;
        }

        void check_shapes(const Image& a, const Image& b) {
            if (!a.same_shape(b) || a.data.empty()) {
                throw Error(ErrorCode::ShapeError, "images differ in shape or are empty");
            }
        }

    } // namespace

    double ssim(const Image& a, const Image& b, Image* d_a) {
        check_shapes(a, b);
        const int w = a.width;
        const int h = a.height;
        const std::size_t n = a.pixel_count();
        const double count = static_cast<double>(n) * a.channels;
        if (d_a) *d_a = Image(w, h, a.channels);

        double total = 0.0;
        std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
        for (int c = 0; c < a.channels; ++c) {
            for (std::size_t i = 0; i < n; ++i) {
                x[i] = a.data[i * a.channels + c];
                y[i] = b.data[i * a.channels + c];
                xx[i] = x[i] * x[i];
                yy[i] = y[i] * y[i];
                xy[i] = x[i] * y[i];
            }
            const auto mx = blur(x, w, h);
            const auto my = blur(y, w, h);
            const auto sxx = blur(xx, w, h);
            const auto syy = blur(yy, w, h);
            const auto sxy = blur(xy, w, h);

            std::vector<double> ga, gb, gc;
            if (d_a) {
                ga.resize(n);
                gb.resize(n);
                gc.resize(n);
            }
            for (std::size_t i = 0; i < n; ++i) {
                const double vx = sxx[i] - mx[i] * mx[i];
                const double vy = syy[i] - my[i] * my[i];
                const double cxy = sxy[i] - mx[i] * my[i];
                const double n1 = 2.0 * mx[i] * my[i] + kC1;
                const double n2 = 2.0 * cxy + kC2;
                const double d1 = mx[i] * mx[i] + my[i] * my[i] + kC1;
                const double d2 = vx + vy + kC2;
                const double s = n1 * n2 / (d1 * d2);
                total += s;
                if (d_a) {
                    const double ds_dvar = -s / d2;
                    const double ds_dcov = 2.0 * n1 / (d1 * d2);
                    const double ds_dmx = 2.0 * my[i] * n2 / (d1 * d2) - s * 2.0 * mx[i] / d1;
                    // Chain through var = E[x^2] - mx^2 and cov = E[xy] - mx*my.
                    ga[i] = ds_dmx - 2.0 * mx[i] * ds_dvar - my[i] * ds_dcov;
                    gb[i] = ds_dvar;
                    gc[i] = ds_dcov;
                }
            }
            if (d_a) {
                const auto wa = blur(ga, w, h);
                const auto wb = blur(gb, w, h);
                const auto wc = blur(gc, w, h);
                for (std::size_t i = 0; i < n; ++i) {
                    d_a->data[i * a.channels + c] = (wa[i] + 2.0 * x[i] * wb[i] + y[i] * wc[i]) / count;
                }
            }
        }
        return total / count;
    }

    double l1_loss(const Image& a, const Image& b, Image* d_a) {
        check_shapes(a, b);
        const double count = static_cast<double>(a.data.size());
        if (d_a) *d_a = Image(a.width, a.height, a.channels);
        double sum = 0.0;
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            const double d = a.data[i] - b.data[i];
            sum += std::abs(d);
            if (d_a) d_a->data[i] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / count;
        }
        return sum / count;
    }

    LevelLoss level_loss(const Image& rendered, const Image& target, double lambda_ssim, Image* d_rendered,
                         int level) {
        check_shapes(rendered, target);
        LevelLoss out;
        out.level = level;
        Image g_l1, g_ssim;
        out.l1 = l1_loss(rendered, target, d_rendered ? &g_l1 : nullptr);
        const double s = ssim(rendered, target, d_rendered ? &g_ssim : nullptr);
        out.ssim_loss = std::max(0.0, 1.0 - s);
        out.total = out.l1 + lambda_ssim * out.ssim_loss;
        if (d_rendered) {
            *d_rendered = g_l1;
            for (std::size_t i = 0; i < g_l1.data.size(); ++i) {
                d_rendered->data[i] -= lambda_ssim * g_ssim.data[i];
            }
        }
        return out;
    }

    LossReport total_loss(std::span<const LevelLoss> levels, std::span<const double> mask_logits, double lambda_r) {
        LossReport r;
        r.levels.assign(levels.begin(), levels.end());
        r.lambda_r = lambda_r;
        for (const auto& l : levels) r.grand_total += l.total;
        for (double m : mask_logits) r.sparsity += render::sigmoid(m);
        r.grand_total += lambda_r * r.sparsity;
        return r;
    }

    double sparsity_grad(double mask_logit, double lambda_r) {
        const double s = render::sigmoid(mask_logit);
        return lambda_r * s * (1.0 - s);
    }

} // namespace tiersplat::optim
