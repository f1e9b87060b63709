#include "tiersplat/dynamics/spawn.hpp"
#include "tiersplat/core/error.hpp"

#include <algorithm>
#include <limits>

namespace tiersplat::dynamics {

    void GradientTracker::record(GaussianId id, double norm) {
        auto& h = history_[id];
        h.push_back(norm);
        while (static_cast<int>(h.size()) > window_) h.pop_front();
    }

    double GradientTracker::mean(GaussianId id) const {
        const auto it = history_.find(id);
        if (it == history_.end() || it->second.empty()) return 0.0;
        double s = 0.0;
        for (double v : it->second) s += v;
        return s / static_cast<double>(it->second.size());
    }

    double anchor_gradient(const anchor::Anchor& a, int level, const GradientTracker& tracker) {
        const auto ids = a.ids_at(level);
        if (ids.empty()) {
            throw Error(ErrorCode::EmptyAnchorLevel,
                        "anchor " + std::to_string(a.id) + " owns no Gaussians at level " + std::to_string(level));
        }
        double s = 0.0;
        for (GaussianId id : ids) s += tracker.mean(id);
        return s / static_cast<double>(ids.size());
    }

    std::string_view to_string(TriggerAction a) {
        switch (a) {
            case TriggerAction::Stop: return "stop";
            case TriggerAction::SpawnHere: return "spawn_here";
            case TriggerAction::SpawnAndActivateNext: return "spawn_here+activate_next";
        }
        return "unknown";
    }

    TriggerRecord decide(AnchorId anchor, int level, double grad_mean,
                         std::span<const multiscale::ScaleLevel> levels) {
        if (level < 1 || level > static_cast<int>(levels.size())) {
            throw Error(ErrorCode::BadLevelCount, "decide: level out of range");
        }
        TriggerRecord r;
        r.anchor = anchor;
        r.level = level;
        r.grad_mean = grad_mean;
        r.fired = grad_mean > levels[static_cast<std::size_t>(level - 1)].tau_add;
        if (!r.fired) {
            r.action = TriggerAction::Stop;
        } else if (level < static_cast<int>(levels.size())) {
            r.action = TriggerAction::SpawnAndActivateNext;
        } else {
            r.action = TriggerAction::SpawnHere;
        }
        return r;
    }

    namespace {

        Vec3 nearest_color(const Vec3& p, std::span<const Gaussian> sources) {
            double best = std::numeric_limits<double>::infinity();
            Vec3 color = Vec3::Constant(0.5);
            for (const auto& g : sources) {
                const double d = (g.mu - p).squaredNorm();
                if (d < best) {
                    best = d;
                    color = g.color;
                }
            }
            return color;
        }

        bool inside(const Vec3& p, const Vec3& lo, const Vec3& hi, const Vec3& root_hi) {
            // Half-open boxes, closed on the root's upper faces.
            for (int d = 0; d < 3; ++d) {
                if (p[d] < lo[d]) return false;
                if (p[d] > hi[d] || (p[d] == hi[d] && hi[d] != root_hi[d])) return false;
            }
            return true;
        }

    } // namespace

    SpawnResult octree_spawn(const anchor::Anchor& a, const multiscale::ScaleLevel& level,
                             std::span<const Gaussian> level_gaussians, const GradientTracker& tracker,
                             std::span<const Gaussian> color_sources, double voxel_size, const SpawnConfig& cfg,
                             std::mt19937_64& rng) {
        SpawnResult out;
        const Vec3 half = Vec3::Constant(0.5 * voxel_size);
        const Vec3 root_lo = a.position - half;
        const Vec3 root_hi = a.position + half;

        std::vector<std::pair<Vec3, double>> members; // clamped position, gradient
        std::vector<GaussianId> member_ids;
        for (const auto& g : level_gaussians) {
            members.emplace_back(g.mu.cwiseMax(root_lo).cwiseMin(root_hi), tracker.mean(g.id));
            member_ids.push_back(g.id);
        }

        OctreeNode root;
        root.box_min = root_lo;
        root.box_max = root_hi;
        out.nodes.push_back(root);
        std::uniform_real_distribution<double> u(0.0, 1.0);

        // Breadth-first so spawn order (and therefore ids) is deterministic.
        for (std::size_t n = 0; n < out.nodes.size(); ++n) {
            OctreeNode node = out.nodes[n];
            double sum = 0.0;
            for (std::size_t i = 0; i < members.size(); ++i) {
                if (inside(members[i].first, node.box_min, node.box_max, root_hi)) {
                    node.gaussian_ids.push_back(member_ids[i]);
                    sum += members[i].second;
                }
            }
            node.mean_grad = node.gaussian_ids.empty() ? 0.0 : sum / static_cast<double>(node.gaussian_ids.size());
            if (node.mean_grad > level.tau_add) {
                const Vec3 ext = node.box_max - node.box_min;
                for (int s = 0; s < cfg.n_spawn; ++s) {
                    Gaussian g;
                    g.mu = node.box_min + Vec3(u(rng), u(rng), u(rng)).cwiseProduct(ext);
                    g.q = Quaternion::identity();
                    g.s = multiscale::clamp_scale(Vec3::Constant(node.edge() / 4.0), level);
                    g.alpha = cfg.initial_opacity;
                    g.color = nearest_color(g.mu, color_sources);
                    g.level = level.l;
                    g.mask_logit = cfg.initial_mask_logit;
                    g.anchor_id = a.id;
                    out.gaussians.push_back(g);
                }
                node.spawned = cfg.n_spawn;
                const double child_edge = 0.5 * node.edge();
                const bool depth_ok = cfg.max_depth < 0 || node.depth < cfg.max_depth;
                if (child_edge >= cfg.min_edge && depth_ok) {
                    const Vec3 mid = 0.5 * (node.box_min + node.box_max);
                    for (int c = 0; c < 8; ++c) {
                        OctreeNode child;
                        child.depth = node.depth + 1;
                        for (int d = 0; d < 3; ++d) {
                            const bool upper = (c >> d) & 1;
                            child.box_min[d] = upper ? mid[d] : node.box_min[d];
                            child.box_max[d] = upper ? node.box_max[d] : mid[d];
                        }
                        node.children.push_back(static_cast<int>(out.nodes.size()));
                        out.nodes.push_back(child);
                    }
                }
            }
            out.nodes[n] = node;
        }
        return out;
    }

} // namespace tiersplat::dynamics
