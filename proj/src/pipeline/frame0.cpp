#include "tiersplat/pipeline/frame0.hpp"
#include "tiersplat/core/error.hpp"
#include "tiersplat/optim/adam.hpp"
#include "tiersplat/optim/loss.hpp"
#include "tiersplat/render/rasterizer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>

namespace tiersplat::pipeline {

    namespace {

        using render::sigmoid;

        // Gaussians whose baked opacity is below this are dropped.
        constexpr double kBakeMinAlpha = 0.005;
        // Number of trailing iterations averaged into the reported phase loss.
        constexpr int kLossTail = 20;

        double logit(double p) {
            p = std::clamp(p, 1e-6, 1.0 - 1e-6);
            return std::log(p / (1.0 - p));
        }

        void require_finite(double loss, const char* phase) {
            if (!std::isfinite(loss)) {
                throw Error(ErrorCode::InitFailed, std::string("non-finite loss during ") + phase);
            }
        }

        struct NeuralParams {
            std::vector<double> features, offsets, scaling;
            optim::AdamState s_features, s_offsets, s_scaling;
            optim::AdamState s_opacity, s_color, s_rotation, s_scale;
        };

        // Decodes every anchor for `cam` into one Gaussian list (anchor order).
        std::vector<Gaussian> decode_all(const std::vector<anchor::Anchor>& anchors,
                                         const anchor::AttributeDecoders& dec, const CameraView& cam,
                                         const anchor::DecodeContext& ctx, std::vector<anchor::DecodeTape>* tapes) {
            const std::size_t n = anchors.size();
            std::vector<std::vector<anchor::DecodedGaussian>> decoded(n);
#pragma omp parallel for schedule(static)
            for (std::size_t i = 0; i < n; ++i) {
                decoded[i] = anchor::decode_attributes(anchors[i], cam, dec, ctx, tapes ? &(*tapes)[i] : nullptr);
            }
            std::vector<Gaussian> out;
            out.reserve(n * static_cast<std::size_t>(dec.k));
            for (std::size_t i = 0; i < n; ++i) {
                auto gs = anchor::materialize(anchors[i], decoded[i], out.size(), 0.0);
                out.insert(out.end(), gs.begin(), gs.end());
            }
            return out;
        }

        double train_neural(std::vector<anchor::Anchor>& anchors, anchor::AttributeDecoders& dec,
                            std::span<const CameraView> cams, std::span<const Image> images,
                            const SequenceManifest& m, const anchor::DecodeContext& ctx) {
            const auto& lr = m.frame0_rates;
            render::RenderOptions opts;
            opts.apply_mask = false;
            NeuralParams p;
            const std::size_t na = anchors.size();
            const int k = dec.k;
            const int fd = dec.feature_dim;
            p.features.resize(na * static_cast<std::size_t>(fd));
            p.offsets.resize(na * static_cast<std::size_t>(3 * k));
            p.scaling.resize(na * 3);
            std::vector<anchor::DecodeTape> tapes(na);
            double tail = 0.0;
            int tail_n = 0;
            for (int it = 0; it < m.frame0.neural; ++it) {
                const std::size_t v = static_cast<std::size_t>(it) % cams.size();
                const auto scene = decode_all(anchors, dec, cams[v], ctx, &tapes);
                const auto out = render::render(scene, cams[v], opts, true);
                Image d;
                const auto ll = optim::level_loss(out.color, images[v], m.hybrid.lambda_ssim, &d);
                require_finite(ll.total, "neural training");
                if (it >= m.frame0.neural - kLossTail) {
                    tail += ll.total;
                    ++tail_n;
                }
                const auto grads = render::backward(out, d);

                anchor::DecoderGrads dg;
                dg.reset(dec);
                std::vector<double> g_feat(p.features.size()), g_off(p.offsets.size()), g_scl(p.scaling.size());
                for (std::size_t i = 0; i < na; ++i) {
                    const auto& a = anchors[i];
                    anchor::AnchorGrads ag;
                    ag.reset(a);
                    anchor::decode_backward(a, dec, tapes[i],
                                            std::span(grads).subspan(i * static_cast<std::size_t>(k),
                                                                     static_cast<std::size_t>(k)),
                                            dg, ag);
                    for (int c = 0; c < fd; ++c) {
                        g_feat[i * fd + c] = ag.feature[c];
                        p.features[i * fd + c] = a.feature[c];
                    }
                    for (int j = 0; j < k; ++j) {
                        for (int c = 0; c < 3; ++c) {
                            g_off[i * 3 * k + 3 * j + c] = ag.offsets(j, c);
                            p.offsets[i * 3 * k + 3 * j + c] = a.offsets(j, c);
                        }
                    }
                    for (int c = 0; c < 3; ++c) {
                        g_scl[i * 3 + c] = ag.scaling[c];
                        p.scaling[i * 3 + c] = a.scaling[c];
                    }
                }
                optim::adam_step(dec.opacity.params(), dg.opacity, p.s_opacity, lr.decoders);
                optim::adam_step(dec.color.params(), dg.color, p.s_color, lr.decoders);
                optim::adam_step(dec.rotation.params(), dg.rotation, p.s_rotation, lr.decoders);
                optim::adam_step(dec.scale.params(), dg.scale, p.s_scale, lr.decoders);
                optim::adam_step(p.features, g_feat, p.s_features, lr.features);
                optim::adam_step(p.offsets, g_off, p.s_offsets, lr.offsets);
                optim::adam_step(p.scaling, g_scl, p.s_scaling, lr.scaling * m.voxel_size);
                for (std::size_t i = 0; i < na; ++i) {
                    auto& a = anchors[i];
                    for (int c = 0; c < fd; ++c) a.feature[c] = p.features[i * fd + c];
                    for (int j = 0; j < k; ++j) {
                        for (int c = 0; c < 3; ++c) a.offsets(j, c) = p.offsets[i * 3 * k + 3 * j + c];
                    }
                    for (int c = 0; c < 3; ++c) a.scaling[c] = std::max(p.scaling[i * 3 + c], 1e-4);
                }
            }
            return tail_n > 0 ? tail / tail_n : 0.0;
        }

        // View-independent Gaussians: per-camera decodes averaged over the rig.
        std::vector<Gaussian> bake(const std::vector<anchor::Anchor>& anchors, const anchor::AttributeDecoders& dec,
                                   std::span<const CameraView> cams, const anchor::DecodeContext& ctx) {
            std::vector<Gaussian> baked;
            std::vector<std::vector<Gaussian>> per_cam;
            for (const auto& cam : cams) per_cam.push_back(decode_all(anchors, dec, cam, ctx, nullptr));
            const double inv = 1.0 / static_cast<double>(cams.size());
            for (std::size_t i = 0; i < per_cam[0].size(); ++i) {
                Gaussian g = per_cam[0][i];
                const Vec4 q0 = g.q.as_vec();
                Vec4 q = Vec4::Zero();
                g.alpha = 0.0;
                g.color.setZero();
                g.s.setZero();
                for (const auto& pc : per_cam) {
                    const Gaussian& h = pc[i];
                    const Vec4 hq = h.q.as_vec();
                    q += hq.dot(q0) < 0.0 ? Vec4(-hq) : hq;
                    g.alpha += inv * h.alpha;
                    g.color += inv * h.color;
                    g.s += inv * h.s;
                }
                if (g.alpha < kBakeMinAlpha) continue;
                g.q = q.norm() > 1e-12 ? Quaternion::from_vec(q).normalized() : Quaternion::identity();
                baked.push_back(g);
            }
            return baked;
        }

        struct ExplicitParams {
            std::vector<double> pos, rot, log_s, alpha_logit, color, mask;
            optim::AdamState s_pos, s_rot, s_scale, s_alpha, s_color, s_mask;
        };

        // Explicit training of every Gaussian. With `levels` the scales are
        // clamped into each Gaussian's level after every step, the fused,
        // masked render is used and the mask logits are trained with the
        // sparsity term.
        double train_explicit(std::vector<Gaussian>& gs, std::span<const CameraView> cams,
                              std::span<const Image> images, const SequenceManifest& m, int iters, double extent,
                              const std::vector<multiscale::ScaleLevel>* levels, const char* phase) {
            const auto& lr = m.frame0_rates;
            render::RenderOptions opts;
            opts.apply_mask = levels != nullptr;
            const std::size_t n = gs.size();
            ExplicitParams p;
            p.pos.resize(3 * n);
            p.rot.resize(4 * n);
            p.log_s.resize(3 * n);
            p.alpha_logit.resize(n);
            p.color.resize(3 * n);
            p.mask.resize(n);
            std::vector<double> g_pos(3 * n), g_rot(4 * n), g_s(3 * n), g_a(n), g_c(3 * n), g_m(n);
            // Position steps scale with the scene, as the rate is given for a unit scene.
            const double pos_lr = lr.position * extent;
            double tail = 0.0;
            int tail_n = 0;
            for (int it = 0; it < iters; ++it) {
                const std::size_t v = static_cast<std::size_t>(it) % cams.size();
                const auto out = levels ? render::render_fused(gs, *levels, cams[v], opts, true)
                                        : render::render(gs, cams[v], opts, true);
                Image d;
                const auto ll = optim::level_loss(out.color, images[v], m.hybrid.lambda_ssim, &d);
                require_finite(ll.total, phase);
                if (it >= iters - kLossTail) {
                    tail += ll.total;
                    ++tail_n;
                }
                const auto grads = render::backward(out, d);
                for (std::size_t i = 0; i < n; ++i) {
                    const Gaussian& g = gs[i];
                    const auto& gr = grads[i];
                    const Vec4 q = g.q.as_vec();
                    for (int c = 0; c < 3; ++c) {
                        p.pos[3 * i + c] = g.mu[c];
                        p.log_s[3 * i + c] = std::log(g.s[c]);
                        p.color[3 * i + c] = g.color[c];
                        g_pos[3 * i + c] = gr.mu[c];
                        g_s[3 * i + c] = gr.s[c] * g.s[c];
                        g_c[3 * i + c] = gr.color[c];
                    }
                    for (int c = 0; c < 4; ++c) {
                        p.rot[4 * i + c] = q[c];
                        g_rot[4 * i + c] = gr.q[c];
                    }
                    p.alpha_logit[i] = logit(g.alpha);
                    g_a[i] = gr.alpha * g.alpha * (1.0 - g.alpha);
                    p.mask[i] = g.mask_logit;
                    g_m[i] = gr.mask_logit + optim::sparsity_grad(g.mask_logit, m.hybrid.lambda_r);
                }
                optim::adam_step(p.pos, g_pos, p.s_pos, pos_lr);
                optim::adam_step(p.rot, g_rot, p.s_rot, lr.rotation);
                optim::adam_step(p.log_s, g_s, p.s_scale, lr.log_scale);
                optim::adam_step(p.alpha_logit, g_a, p.s_alpha, lr.opacity_logit);
                optim::adam_step(p.color, g_c, p.s_color, lr.color);
                if (levels) optim::adam_step(p.mask, g_m, p.s_mask, m.hybrid.rates.mask);
                for (std::size_t i = 0; i < n; ++i) {
                    Gaussian& g = gs[i];
                    g.mu = Vec3(p.pos[3 * i], p.pos[3 * i + 1], p.pos[3 * i + 2]);
                    g.q = Quaternion{p.rot[4 * i], p.rot[4 * i + 1], p.rot[4 * i + 2], p.rot[4 * i + 3]}.normalized();
                    g.s = Vec3(std::exp(p.log_s[3 * i]), std::exp(p.log_s[3 * i + 1]), std::exp(p.log_s[3 * i + 2]))
                              .cwiseMax(kEpsScale * 10.0);
                    if (levels) g.s = multiscale::clamp_scale(g.s, (*levels)[static_cast<std::size_t>(g.level - 1)]);
                    g.alpha = sigmoid(p.alpha_logit[i]);
                    g.color = Vec3(p.color[3 * i], p.color[3 * i + 1], p.color[3 * i + 2]).cwiseMax(0.0).cwiseMin(1.0);
                    if (levels) g.mask_logit = p.mask[i];
                }
            }
            return tail_n > 0 ? tail / tail_n : 0.0;
        }

    } // namespace

    std::pair<Vec3, Vec3> scene_bounds(std::span<const Vec3> points, double voxel_size) {
        if (points.empty()) throw Error(ErrorCode::EmptyInput, "no points");
        Vec3 lo = points[0];
        Vec3 hi = points[0];
        for (const Vec3& p : points) {
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        return {lo - Vec3::Constant(voxel_size), hi + Vec3::Constant(voxel_size)};
    }

    dynamics::FrameState init_frame0(const SequenceManifest& m, std::span<const CameraView> cams,
                                     std::span<const Image> images, std::span<const Vec3> points,
                                     std::mt19937_64& rng, InitReport* report) {
        const auto start = std::chrono::steady_clock::now();
        if (cams.empty() || cams.size() != images.size()) {
            throw Error(ErrorCode::InitFailed, "frame 0 needs one image per training camera");
        }
        if (points.empty()) throw Error(ErrorCode::InitFailed, "frame 0 needs a point cloud");
        for (std::size_t v = 0; v < cams.size(); ++v) {
            if (images[v].width != cams[v].width || images[v].height != cams[v].height) {
                throw Error(ErrorCode::InitFailed, "image size does not match camera " + cams[v].id);
            }
        }

        dynamics::FrameState state;
        state.frame = 0;
        state.voxel_size = m.voxel_size;
        std::tie(state.scene_min, state.scene_max) = scene_bounds(points, m.voxel_size);

        anchor::AnchorInit ai;
        ai.voxel_size = m.voxel_size;
        ai.feature_dim = m.feature_dim;
        ai.k = m.k;
        auto anchors = anchor::voxelize_points(points, ai, rng);
        anchor::AttributeDecoders dec(m.feature_dim, m.k, m.hidden);
        dec.init_random(rng);
        anchor::DecodeContext ctx;
        ctx.scene_extent = std::max(state.scene_edge(), 1e-6);

        InitReport rep;
        rep.anchors = anchors.size();
        rep.loss_neural = train_neural(anchors, dec, cams, images, m, ctx);
        spdlog::info("frame 0: {} anchors, neural loss {:.4f}", anchors.size(), rep.loss_neural);

        auto gs = bake(anchors, dec, cams, ctx);
        if (gs.empty()) throw Error(ErrorCode::InitFailed, "every baked Gaussian is transparent");
        rep.loss_explicit = train_explicit(gs, cams, images, m, m.frame0.explicit_, ctx.scene_extent, nullptr, "explicit training");

        std::vector<double> max_axis;
        max_axis.reserve(gs.size());
        for (const auto& g : gs) max_axis.push_back(g.s.maxCoeff());
        state.stats = multiscale::measure_scales(max_axis);
        state.levels = multiscale::partition_scales(state.stats, max_axis, m.levels, m.tau_base);
        for (auto& g : gs) {
            g.level = multiscale::level_for_scale(state.levels, g.s.maxCoeff());
            g.s = multiscale::clamp_scale(g.s, state.levels[static_cast<std::size_t>(g.level - 1)]);
            g.mask_logit = m.frame0_mask_logit;
        }
        rep.loss_refine = train_explicit(gs, cams, images, m, m.frame0.refine, ctx.scene_extent,
                                         &state.levels, "refinement");

        for (auto& a : anchors) a.gaussian_ids.assign(static_cast<std::size_t>(m.levels), {});
        state.anchors = std::move(anchors);
        state.decoders = std::move(dec);
        for (auto& g : gs) state.add_gaussian(g);
        rep.pruned = dynamics::prune(state, m.hybrid.eps_prune).size();
        if (state.gaussians.empty()) throw Error(ErrorCode::InitFailed, "every Gaussian was pruned");

        const Vec3 pad = Vec3::Constant(0.25 * state.scene_edge());
        for (int l = 0; l < m.levels; ++l) {
            optim::DeformNets nets(m.deform, state.scene_min - pad, state.scene_max + pad);
            nets.init_random(rng);
            state.nets.push_back(std::move(nets));
        }

        rep.gaussians = state.gaussians.size();
        spdlog::info("frame 0: {} Gaussians ({} pruned), explicit loss {:.4f}, refined loss {:.4f}", rep.gaussians,
                     rep.pruned, rep.loss_explicit, rep.loss_refine);
        rep.iterations = m.frame0.total();
        rep.train_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (report) *report = rep;
        return state;
    }

} // namespace tiersplat::pipeline
