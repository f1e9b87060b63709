#include "tiersplat/render/rasterizer.hpp"
#include "tiersplat/core/error.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tiersplat::render {

    double sigmoid(double x) {
        if (x >= 0.0) {
            return 1.0 / (1.0 + std::exp(-x));
        }
        const double e = std::exp(x);
        return e / (1.0 + e);
    }

    double SplatContribution::effective_alpha(const Vec2& pixel) const {
        const Vec2 d = pixel - mean2d;
        const double power = -0.5 * d.dot(cov2d_inv * d);
        return mask_sigma * alpha * std::exp(power);
    }

    Vec3 composite_pixel(std::span<const SplatContribution> contribs, const Vec2& pixel, const Vec3& background,
                         double t_min) {
        for (std::size_t i = 1; i < contribs.size(); ++i) {
            if (contribs[i].depth < contribs[i - 1].depth) {
                throw Error(ErrorCode::UnsortedContributions, "contributions must be sorted near to far");
            }
        }
        Vec3 color = Vec3::Zero();
        double T = 1.0;
        for (const auto& c : contribs) {
            const double a = std::clamp(c.effective_alpha(pixel), 0.0, 1.0);
            color += c.color * a * T;
            T *= 1.0 - a;
            if (T < t_min) break;
        }
        return color + background * T;
    }

    double GaussianGrad::norm() const {
        return std::sqrt(mu.squaredNorm() + q.squaredNorm() + s.squaredNorm() + alpha * alpha + color.squaredNorm());
    }

    GaussianGrad& GaussianGrad::operator+=(const GaussianGrad& o) {
        mu += o.mu;
        q += o.q;
        s += o.s;
        alpha += o.alpha;
        color += o.color;
        mask_logit += o.mask_logit;
        return *this;
    }

    GaussianGrad GaussianGrad::operator*(double k) const {
        GaussianGrad g = *this;
        g.mu *= k;
        g.q *= k;
        g.s *= k;
        g.alpha *= k;
        g.color *= k;
        g.mask_logit *= k;
        return g;
    }

    namespace {

        struct Prepared {
            std::size_t source = 0; // index into the input span
            GaussianId id = 0;
            Vec2 mean = Vec2::Zero();
            double a = 0, b = 0, c = 0; // inverse 2D covariance [a b; b c]
            double depth = 0;
            double mask_sigma = 1;
            double base_alpha = 0; // mask_sigma * alpha
            Vec3 color = Vec3::Zero();
            int tx0 = 0, ty0 = 0, tx1 = -1, ty1 = -1; // inclusive tile range
        };

        // Per-prepared accumulators filled by the pixel pass of backward().
        struct ScreenGrad {
            Vec3 color = Vec3::Zero();
            double base_alpha = 0;
            Vec2 mean = Vec2::Zero();
            double a = 0, b = 0, c = 0; // dL/d(cov_inv) with the off-diagonal counted once per entry
        };

    } // namespace

    struct Tape {
        std::vector<Gaussian> gaussians;
        CameraView cam;
        RenderOptions opts;
        std::vector<Prepared> prepared; // depth-sorted
        std::vector<std::vector<std::uint32_t>> tiles;
        int tiles_x = 0;
        int tiles_y = 0;
    };

    namespace {

        void prepare(std::span<const Gaussian> gaussians, const std::vector<char>* include, const CameraView& cam,
                     const RenderOptions& opts, Tape& tape) {
            tape.tiles_x = (cam.width + kTileSize - 1) / kTileSize;
            tape.tiles_y = (cam.height + kTileSize - 1) / kTileSize;
            tape.prepared.clear();
            tape.prepared.reserve(gaussians.size());
            for (std::size_t i = 0; i < gaussians.size(); ++i) {
                if (include && !(*include)[i]) continue;
                const Gaussian& g = gaussians[i];
                const auto proj = try_project_gaussian(g, cam);
                if (!proj) continue;
                Mat2 cov = proj->cov2d;
                cov(0, 0) += kCovDilation;
                cov(1, 1) += kCovDilation;
                const double det = cov.determinant();
                if (!(det > 0.0) || !std::isfinite(det)) continue;
                Prepared p;
                p.source = i;
                p.id = g.id;
                p.mean = proj->mean2d;
                p.a = cov(1, 1) / det;
                p.b = -cov(0, 1) / det;
                p.c = cov(0, 0) / det;
                p.depth = proj->depth;
                p.mask_sigma = opts.apply_mask ? sigmoid(g.mask_logit) : 1.0;
                p.base_alpha = p.mask_sigma * g.alpha;
                p.color = g.color;
                if (opts.cutoff_sigma > 0.0) {
                    const double mid = 0.5 * (cov(0, 0) + cov(1, 1));
                    const double lambda = mid + std::sqrt(std::max(0.1, mid * mid - det));
                    const double radius = std::ceil(opts.cutoff_sigma * std::sqrt(lambda));
                    const double x0 = p.mean.x() - radius, x1 = p.mean.x() + radius;
                    const double y0 = p.mean.y() - radius, y1 = p.mean.y() + radius;
                    if (x1 < 0 || y1 < 0 || x0 > cam.width - 1 || y0 > cam.height - 1) continue;
                    p.tx0 = std::max(0, static_cast<int>(std::floor(x0)) / kTileSize);
                    p.ty0 = std::max(0, static_cast<int>(std::floor(y0)) / kTileSize);
                    p.tx1 = std::min(tape.tiles_x - 1, static_cast<int>(std::floor(x1)) / kTileSize);
                    p.ty1 = std::min(tape.tiles_y - 1, static_cast<int>(std::floor(y1)) / kTileSize);
                } else {
                    p.tx0 = 0;
                    p.ty0 = 0;
                    p.tx1 = tape.tiles_x - 1;
                    p.ty1 = tape.tiles_y - 1;
                }
                tape.prepared.push_back(p);
            }
            std::stable_sort(tape.prepared.begin(), tape.prepared.end(), [](const Prepared& l, const Prepared& r) {
                if (l.depth != r.depth) return l.depth < r.depth;
                return l.id < r.id;
            });
            tape.tiles.assign(static_cast<std::size_t>(tape.tiles_x) * tape.tiles_y, {});
            for (std::uint32_t k = 0; k < tape.prepared.size(); ++k) {
                const Prepared& p = tape.prepared[k];
                for (int ty = p.ty0; ty <= p.ty1; ++ty) {
                    for (int tx = p.tx0; tx <= p.tx1; ++tx) {
                        tape.tiles[static_cast<std::size_t>(ty) * tape.tiles_x + tx].push_back(k);
                    }
                }
            }
        }

        inline double gauss_at(const Prepared& p, double px, double py, double& dx, double& dy) {
            dx = px - p.mean.x();
            dy = py - p.mean.y();
            return std::exp(-0.5 * (p.a * dx * dx + 2.0 * p.b * dx * dy + p.c * dy * dy));
        }

        RenderOutput render_impl(std::span<const Gaussian> gaussians, const std::vector<char>* include,
                                 const CameraView& cam, const RenderOptions& opts, bool with_grad) {
            auto tape = std::make_shared<Tape>();
            prepare(gaussians, include, cam, opts, *tape);

            RenderOutput out;
            out.color = Image(cam.width, cam.height, 3);
            out.transmittance = Image(cam.width, cam.height, 1);
            out.depth = Image(cam.width, cam.height, 1);
            out.median_depth = Image(cam.width, cam.height, 1);

            const int n_tiles = tape->tiles_x * tape->tiles_y;
#pragma omp parallel for schedule(dynamic)
            for (int t = 0; t < n_tiles; ++t) {
                const int tx = t % tape->tiles_x, ty = t / tape->tiles_x;
                const auto& list = tape->tiles[static_cast<std::size_t>(t)];
                const int x_end = std::min(cam.width, (tx + 1) * kTileSize);
                const int y_end = std::min(cam.height, (ty + 1) * kTileSize);
                for (int y = ty * kTileSize; y < y_end; ++y) {
                    for (int x = tx * kTileSize; x < x_end; ++x) {
                        double T = 1.0;
                        Vec3 C = Vec3::Zero();
                        double z_acc = 0.0;
                        double z_median = -1.0;
                        for (std::uint32_t k : list) {
                            const Prepared& p = tape->prepared[k];
                            double dx, dy;
                            const double alpha = p.base_alpha * gauss_at(p, x, y, dx, dy);
                            if (alpha < opts.min_alpha) continue;
                            const double w = alpha * T;
                            C += p.color * w;
                            z_acc += p.depth * w;
                            T *= 1.0 - alpha;
                            if (z_median < 0.0 && T <= 0.5) z_median = p.depth;
                            if (T < opts.t_min) break;
                        }
                        C += opts.background * T;
                        for (int ch = 0; ch < 3; ++ch) out.color.at(x, y, ch) = C[ch];
                        out.transmittance.at(x, y) = T;
                        out.depth.at(x, y) = (1.0 - T) > 1e-12 ? z_acc / (1.0 - T) : 0.0;
                        out.median_depth.at(x, y) = z_median >= 0.0 ? z_median : out.depth.at(x, y);
                    }
                }
            }

            if (with_grad) {
                tape->gaussians.assign(gaussians.begin(), gaussians.end());
                tape->cam = cam;
                tape->opts = opts;
                out.tape = std::move(tape);
            }
            return out;
        }

    } // namespace

    RenderOutput render(std::span<const Gaussian> gaussians, const CameraView& cam, const RenderOptions& opts,
                        bool with_grad) {
        return render_impl(gaussians, nullptr, cam, opts, with_grad);
    }

    RenderOutput render_level(std::span<const Gaussian> gaussians, const CameraView& cam,
                              const multiscale::ScaleLevel& level, const RenderOptions& opts, bool with_grad) {
        return render_impl(gaussians, nullptr, cam.scaled(level.res_factor), opts, with_grad);
    }

    RenderOutput render_fused(std::span<const Gaussian> gaussians, std::span<const multiscale::ScaleLevel> levels,
                              const CameraView& cam, const RenderOptions& opts, bool with_grad) {
        if (std::none_of(levels.begin(), levels.end(), [](const auto& l) { return l.active; })) {
            throw Error(ErrorCode::BadConfig, "fused rendering needs at least one active level");
        }
        std::vector<char> include(gaussians.size(), 0);
        for (std::size_t i = 0; i < gaussians.size(); ++i) {
            const int l = gaussians[i].level;
            include[i] = l >= 1 && l <= static_cast<int>(levels.size()) && levels[l - 1].active;
        }
        return render_impl(gaussians, &include, cam, opts, with_grad);
    }

    std::vector<GaussianGrad> backward(const RenderOutput& out, const Image& dL_dC) {
        if (!out.tape) {
            throw Error(ErrorCode::NoTape, "backward called without a forward pass recorded with_grad");
        }
        const Tape& tape = *out.tape;
        const CameraView& cam = tape.cam;
        const RenderOptions& opts = tape.opts;
        if (dL_dC.width != cam.width || dL_dC.height != cam.height || dL_dC.channels != 3) {
            throw Error(ErrorCode::ShapeError, "output gradient does not match the rendered image");
        }

        const int n_tiles = tape.tiles_x * tape.tiles_y;
        std::vector<std::vector<ScreenGrad>> tile_grads(static_cast<std::size_t>(n_tiles));

#pragma omp parallel for schedule(dynamic)
        for (int t = 0; t < n_tiles; ++t) {
            const int tx = t % tape.tiles_x, ty = t / tape.tiles_x;
            const auto& list = tape.tiles[static_cast<std::size_t>(t)];
            auto& local = tile_grads[static_cast<std::size_t>(t)];
            local.assign(list.size(), ScreenGrad{});
            if (list.empty()) continue;

            struct Hit {
                std::uint32_t slot;
                double alpha, g, T, dx, dy;
            };
            std::vector<Hit> hits;
            hits.reserve(list.size());

            const int x_end = std::min(cam.width, (tx + 1) * kTileSize);
            const int y_end = std::min(cam.height, (ty + 1) * kTileSize);
            for (int y = ty * kTileSize; y < y_end; ++y) {
                for (int x = tx * kTileSize; x < x_end; ++x) {
                    const Vec3 dC(dL_dC.at(x, y, 0), dL_dC.at(x, y, 1), dL_dC.at(x, y, 2));
                    if (dC.isZero(0.0)) continue;
                    hits.clear();
                    double T = 1.0;
                    for (std::uint32_t slot = 0; slot < list.size(); ++slot) {
                        const Prepared& p = tape.prepared[list[slot]];
                        double dx, dy;
                        const double g = gauss_at(p, x, y, dx, dy);
                        const double alpha = p.base_alpha * g;
                        if (alpha < opts.min_alpha) continue;
                        hits.push_back({slot, alpha, g, T, dx, dy});
                        T *= 1.0 - alpha;
                        if (T < opts.t_min) break;
                    }
                    // Color seen behind the current splat, in the frame just after it.
                    Vec3 behind = opts.background;
                    for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
                        const Prepared& p = tape.prepared[list[it->slot]];
                        ScreenGrad& sg = local[it->slot];
                        const double w = it->alpha * it->T;
                        sg.color += dC * w;
                        const double dL_dalpha = it->T * dC.dot(p.color - behind);
                        behind = p.color * it->alpha + behind * (1.0 - it->alpha);

                        sg.base_alpha += dL_dalpha * it->g;
                        const double dL_dg = dL_dalpha * p.base_alpha;
                        const double gd = dL_dg * it->g;
                        // power = -0.5 (a dx^2 + 2 b dx dy + c dy^2), d = pixel - mean
                        sg.mean.x() += gd * (p.a * it->dx + p.b * it->dy);
                        sg.mean.y() += gd * (p.b * it->dx + p.c * it->dy);
                        sg.a += gd * (-0.5 * it->dx * it->dx);
                        sg.b += gd * (-0.5 * it->dx * it->dy);
                        sg.c += gd * (-0.5 * it->dy * it->dy);
                    }
                }
            }
        }

        // Deterministic merge in tile order.
        std::vector<ScreenGrad> screen(tape.prepared.size());
        for (int t = 0; t < n_tiles; ++t) {
            const auto& list = tape.tiles[static_cast<std::size_t>(t)];
            const auto& local = tile_grads[static_cast<std::size_t>(t)];
            for (std::size_t slot = 0; slot < list.size(); ++slot) {
                ScreenGrad& dst = screen[list[slot]];
                const ScreenGrad& src = local[slot];
                dst.color += src.color;
                dst.base_alpha += src.base_alpha;
                dst.mean += src.mean;
                dst.a += src.a;
                dst.b += src.b;
                dst.c += src.c;
            }
        }

        std::vector<GaussianGrad> grads(tape.gaussians.size());
        const int n_prepared = static_cast<int>(tape.prepared.size());
#pragma omp parallel for schedule(static)
        for (int k = 0; k < n_prepared; ++k) {
            const Prepared& p = tape.prepared[static_cast<std::size_t>(k)];
            const ScreenGrad& sg = screen[static_cast<std::size_t>(k)];
            const Gaussian& g = tape.gaussians[p.source];
            GaussianGrad& out_grad = grads[p.source];
            out_grad.color = sg.color;
            out_grad.alpha = sg.base_alpha * p.mask_sigma;
            if (opts.apply_mask) {
                out_grad.mask_logit = sg.base_alpha * g.alpha * p.mask_sigma * (1.0 - p.mask_sigma);
            }
            Mat2 cinv;
            cinv << p.a, p.b, p.b, p.c;
            Mat2 g_cinv;
            g_cinv << sg.a, sg.b, sg.b, sg.c;
            const Mat2 g_cov = -cinv.transpose() * g_cinv * cinv.transpose();
            const ProjectionGrad pg = project_backward(g, cam, sg.mean, g_cov);
            out_grad.mu = pg.mu;
            out_grad.q = pg.q;
            out_grad.s = pg.s;
        }
        return grads;
    }

} // namespace tiersplat::render
