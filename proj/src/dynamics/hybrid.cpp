#include "tiersplat/dynamics/hybrid.hpp"
#include "tiersplat/core/error.hpp"
#include "tiersplat/optim/adam.hpp"
#include "tiersplat/optim/loss.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <map>

namespace tiersplat::dynamics {

    namespace {

        struct PassResult {
            double loss = 0.0;
            std::vector<render::GaussianGrad> grads;
        };

        // Mean over views of the level loss of the full scene at the level's
        // resolution, with its gradient per Gaussian.
        PassResult level_pass(std::span<const Gaussian> scene, std::span<const TrainingView> views,
                              const multiscale::ScaleLevel& lv, const HybridConfig& cfg, bool with_grad) {
            PassResult r;
            if (with_grad) r.grads.assign(scene.size(), {});
            const double inv = 1.0 / static_cast<double>(views.size());
            const std::size_t li = static_cast<std::size_t>(lv.l - 1);
            const int factor = lv.downsample_factor();
            const bool filtered = cfg.filtered_level_render && factor > 1;
            for (const auto& view : views) {
                const auto out = filtered ? render::render(scene, view.cam, cfg.render, with_grad)
                                          : render::render_level(scene, view.cam, lv, cfg.render, with_grad);
                const Image rendered = filtered ? box_downsample(out.color, factor) : out.color;
                Image d;
                const auto ll = optim::level_loss(rendered, view.targets[li], cfg.lambda_ssim,
                                                  with_grad ? &d : nullptr, lv.l);
                r.loss += inv * ll.total;
                if (!with_grad) continue;
                for (double& v : d.data) v *= inv;
                if (filtered) d = box_downsample_backward(d, factor);
                const auto g = render::backward(out, d);
                for (std::size_t i = 0; i < g.size(); ++i) r.grads[i] += g[i];
            }
            return r;
        }

        struct Deformed {
            optim::GeometryTape geo;
            optim::AppearanceTape app;
        };

    } // namespace

    std::vector<Gaussian> deformed_scene(const FrameState& state, int level, std::span<const std::size_t> indices) {
        std::vector<Gaussian> scene = state.gaussians;
        const auto& nets = state.nets[static_cast<std::size_t>(level - 1)];
        for (std::size_t i : indices) {
            const Gaussian& prev = state.gaussians[i];
            const auto& own = state.levels[static_cast<std::size_t>(prev.level - 1)];
            const auto geo = optim::deform_geometry(prev.mu, nets);
            const auto app = optim::deform_appearance(prev.color, prev.alpha, nets);
            scene[i] = optim::apply_residual_update(prev, optim::make_update(prev, geo, app), &own);
        }
        return scene;
    }

    double optimize_masks(FrameState& state, std::span<const TrainingView> views, GaussianId first_new_id,
                          const HybridConfig& cfg, const std::set<AnchorId>* scope) {
        if (views.empty() || state.gaussians.empty() || cfg.mask_iters <= 0) return 0.0;
        const std::size_t n = state.gaussians.size();
        std::vector<std::size_t> fresh;
        std::vector<char> trainable(n, 1);
        bool any = false;
        for (std::size_t i = 0; i < n; ++i) {
            const Gaussian& g = state.gaussians[i];
            if (g.id >= first_new_id) fresh.push_back(i);
            if (scope && g.id < first_new_id && !scope->contains(g.anchor_id)) trainable[i] = 0;
            any = any || trainable[i];
        }
        if (!any) return 0.0;
        const std::size_t m = fresh.size();
        optim::AdamState s_mask, s_pos, s_rot, s_scale, s_alpha, s_color;
        std::vector<double> masks(n), g_mask(n);
        std::vector<double> pos(3 * m), rot(4 * m), scl(3 * m), alp(m), col(3 * m);
        std::vector<double> g_pos(3 * m), g_rot(4 * m), g_scl(3 * m), g_alp(m), g_col(3 * m);
        double loss = 0.0;

        for (int it = 0; it < cfg.mask_iters; ++it) {
            std::fill(g_mask.begin(), g_mask.end(), 0.0);
            for (auto* v : {&g_pos, &g_rot, &g_scl, &g_alp, &g_col}) std::fill(v->begin(), v->end(), 0.0);
            loss = 0.0;
            for (const auto& lv : state.levels) {
                if (!lv.active) continue;
                if (cfg.mask_full_resolution_only && lv.l != state.level_count()) continue;
                const auto pass = level_pass(state.gaussians, views, lv, cfg, true);
                loss += pass.loss;
                for (std::size_t i = 0; i < n; ++i) g_mask[i] += pass.grads[i].mask_logit;
                for (std::size_t j = 0; j < m; ++j) {
                    const auto& g = pass.grads[fresh[j]];
                    for (int d = 0; d < 3; ++d) {
                        g_pos[3 * j + d] += g.mu[d];
                        g_scl[3 * j + d] += g.s[d];
                        g_col[3 * j + d] += g.color[d];
                    }
                    for (int d = 0; d < 4; ++d) g_rot[4 * j + d] += g.q[d];
                    g_alp[j] += g.alpha;
                }
            }
            for (std::size_t i = 0; i < n; ++i) {
                const double sg = render::sigmoid(state.gaussians[i].mask_logit);
                loss += cfg.lambda_r * sg;
                g_mask[i] += optim::sparsity_grad(state.gaussians[i].mask_logit, cfg.lambda_r);
                if (!trainable[i]) g_mask[i] = 0.0;
                masks[i] = state.gaussians[i].mask_logit;
            }
            for (std::size_t j = 0; j < m; ++j) {
                const Gaussian& g = state.gaussians[fresh[j]];
                for (int d = 0; d < 3; ++d) {
                    pos[3 * j + d] = g.mu[d];
                    scl[3 * j + d] = g.s[d];
                    col[3 * j + d] = g.color[d];
                }
                const Vec4 q = g.q.as_vec();
                for (int d = 0; d < 4; ++d) rot[4 * j + d] = q[d];
                alp[j] = g.alpha;
            }
            optim::adam_step(masks, g_mask, s_mask, cfg.rates.mask);
            if (m > 0) {
                optim::adam_step(pos, g_pos, s_pos, cfg.rates.position);
                optim::adam_step(rot, g_rot, s_rot, cfg.rates.rotation);
                optim::adam_step(scl, g_scl, s_scale, cfg.rates.scale);
                optim::adam_step(alp, g_alp, s_alpha, cfg.rates.opacity);
                optim::adam_step(col, g_col, s_color, cfg.rates.color);
            }
            for (std::size_t i = 0; i < n; ++i) state.gaussians[i].mask_logit = masks[i];
            for (std::size_t j = 0; j < m; ++j) {
                Gaussian& g = state.gaussians[fresh[j]];
                const auto& lv = state.levels[static_cast<std::size_t>(g.level - 1)];
                g.mu = Vec3(pos[3 * j], pos[3 * j + 1], pos[3 * j + 2]);
                g.q = Quaternion{rot[4 * j], rot[4 * j + 1], rot[4 * j + 2], rot[4 * j + 3]}.normalized();
                g.s = multiscale::clamp_scale(Vec3(scl[3 * j], scl[3 * j + 1], scl[3 * j + 2]), lv);
                g.alpha = std::clamp(alp[j], 1e-3, 1.0);
                g.color = Vec3(col[3 * j], col[3 * j + 1], col[3 * j + 2]).cwiseMax(0.0).cwiseMin(1.0);
            }
        }
        return loss;
    }

    FrameStepReport hybrid_frame_step(FrameState& state, const std::set<AnchorId>& dynamic,
                                      std::span<const TrainingView> selected,
                                      std::span<const TrainingView> training, const HybridConfig& cfg,
                                      std::mt19937_64& rng) {
        FrameStepReport report;
        const int L = state.level_count();
        if (L < 1 || static_cast<int>(state.nets.size()) != L) {
            throw Error(ErrorCode::BadLevelCount, "frame state has no scale hierarchy");
        }
        report.iterations_per_level.assign(static_cast<std::size_t>(L), 0);
        report.deformed_per_level.assign(static_cast<std::size_t>(L), 0);
        const GaussianId first_new_id = state.next_id;
        SpawnConfig spawn_cfg = cfg.spawn;
        spawn_cfg.min_edge = cfg.min_edge_fraction * state.scene_edge();

        std::set<AnchorId> escalated = dynamic;
        for (int l = 1; l <= L && !escalated.empty() && !selected.empty(); ++l) {
            const auto& lv = state.levels[static_cast<std::size_t>(l - 1)];
            if (!lv.active) break;
            auto& nets = state.nets[static_cast<std::size_t>(l - 1)];
            if (cfg.reset_heads) nets.reset_heads();
            nets.reset_optimizer();

            // Level-l nets deform every Gaussian of the escalated anchors from
            // level l down, so coarse levels carry the bulk motion and finer
            // levels add residuals. Spawned Gaussians of this frame stay
            // explicit; the trigger statistic uses level-l Gaussians only.
            std::vector<std::size_t> idx;
            for (std::size_t i = 0; i < state.gaussians.size(); ++i) {
                const Gaussian& g = state.gaussians[i];
                if (g.level >= l && g.id < first_new_id && escalated.contains(g.anchor_id)) idx.push_back(i);
            }
            report.deformed_per_level[static_cast<std::size_t>(l - 1)] = idx.size();

            GradientTracker tracker(cfg.grad_window);
            if (!idx.empty()) {
                std::vector<Deformed> tapes(idx.size());
                std::vector<Gaussian> scene = state.gaussians;
                for (int it = 0; it < cfg.deform_iters; ++it) {
                    for (std::size_t j = 0; j < idx.size(); ++j) {
                        const Gaussian& prev = state.gaussians[idx[j]];
                        const auto geo = optim::deform_geometry(prev.mu, nets, &tapes[j].geo);
                        const auto app = optim::deform_appearance(prev.color, prev.alpha, nets, &tapes[j].app);
                        scene[idx[j]] = optim::apply_residual_update(prev, optim::make_update(prev, geo, app), &lv);
                    }
                    const auto pass = level_pass(scene, selected, lv, cfg, true);
                    optim::DeformGrads dg;
                    dg.reset(nets);
                    for (std::size_t j = 0; j < idx.size(); ++j) {
                        const auto& g = pass.grads[idx[j]];
                        if (state.gaussians[idx[j]].level == l) tracker.record(state.gaussians[idx[j]].id, g.norm());
                        optim::deform_backward(state.gaussians[idx[j]], nets, tapes[j].geo, tapes[j].app, g, dg);
                    }
                    optim::deform_step(nets, dg, cfg.net_lr);
                    ++report.iterations_per_level[static_cast<std::size_t>(l - 1)];
                }
                const auto final_scene = deformed_scene(state, l, idx);
                for (std::size_t i : idx) state.gaussians[i] = final_scene[i];
            }

            // Per-anchor escalation decisions, then a single-threaded apply
            // phase for the spawned Gaussians.
            std::set<AnchorId> next;
            std::vector<Gaussian> pending;
            for (AnchorId id : escalated) {
                const auto& a = state.anchors[id];
                if (a.ids_at(l).empty()) {
                    TriggerRecord r;
                    r.anchor = id;
                    r.level = l;
                    report.triggers.push_back(r);
                    continue;
                }
                const double grad_mean = anchor_gradient(a, l, tracker);
                const TriggerRecord r = decide(id, l, grad_mean, state.levels);
                report.triggers.push_back(r);
                if (!r.fired) continue;
                if (r.action == TriggerAction::SpawnAndActivateNext) next.insert(id);
                const auto level_gaussians = state.owned(a, l);
                const auto sources = state.owned(a);
                auto spawned = octree_spawn(a, lv, level_gaussians, tracker, sources, state.voxel_size, spawn_cfg, rng);
                SpawnRecord sr;
                sr.anchor = id;
                sr.level = l;
                sr.count = static_cast<int>(spawned.gaussians.size());
                sr.nodes = static_cast<int>(spawned.nodes.size());
                sr.min_node_edge = spawned.nodes.front().edge();
                for (const auto& node : spawned.nodes) sr.min_node_edge = std::min(sr.min_node_edge, node.edge());
                report.spawns.push_back(sr);
                for (auto& g : spawned.gaussians) pending.push_back(g);
            }
            for (auto& g : pending) state.add_gaussian(g);
            report.spawned += pending.size();
            escalated = std::move(next);
        }

        report.n_pre = state.gaussians.size();
        report.final_mask_loss =
            optimize_masks(state, training, first_new_id, cfg, cfg.mask_dynamic_only ? &dynamic : nullptr);
        report.pruned = prune(state, cfg.eps_prune);
        report.n_post = state.gaussians.size();
        return report;
    }

} // namespace tiersplat::dynamics
