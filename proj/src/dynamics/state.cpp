#include "tiersplat/dynamics/state.hpp"
#include "tiersplat/core/error.hpp"
#include "tiersplat/render/rasterizer.hpp"

#include <algorithm>
#include <map>

namespace tiersplat::dynamics {

    std::optional<std::size_t> FrameState::index_of(GaussianId id) const {
        const auto it = std::lower_bound(gaussians.begin(), gaussians.end(), id,
                                         [](const Gaussian& g, GaussianId v) { return g.id < v; });
        if (it == gaussians.end() || it->id != id) return std::nullopt;
        return static_cast<std::size_t>(it - gaussians.begin());
    }

    GaussianId FrameState::add_gaussian(Gaussian g) {
        if (g.anchor_id >= anchors.size()) {
            throw Error(ErrorCode::ShapeError, "Gaussian refers to an unknown anchor");
        }
        g.id = next_id++;
        anchors[g.anchor_id].ids_at(g.level).push_back(g.id);
        gaussians.push_back(g);
        return g.id;
    }

    std::vector<Gaussian> FrameState::owned(const anchor::Anchor& a, int level) const {
        std::vector<Gaussian> out;
        for (int l = 1; l <= static_cast<int>(a.gaussian_ids.size()); ++l) {
            if (level > 0 && l != level) continue;
            for (GaussianId id : a.ids_at(l)) {
                if (const auto i = index_of(id)) out.push_back(gaussians[*i]);
            }
        }
        return out;
    }

    std::vector<double> FrameState::mask_logits() const {
        std::vector<double> out;
        out.reserve(gaussians.size());
        for (const auto& g : gaussians) out.push_back(g.mask_logit);
        return out;
    }

    std::optional<std::string> ownership_violation(const FrameState& state) {
        std::map<GaussianId, int> listed;
        for (const auto& a : state.anchors) {
            for (int l = 1; l <= static_cast<int>(a.gaussian_ids.size()); ++l) {
                for (GaussianId id : a.ids_at(l)) {
                    const auto i = state.index_of(id);
                    if (!i) return "anchor " + std::to_string(a.id) + " lists missing Gaussian " + std::to_string(id);
                    const Gaussian& g = state.gaussians[*i];
                    if (g.anchor_id != a.id || g.level != l) {
                        return "Gaussian " + std::to_string(id) + " does not point back at anchor " +
                               std::to_string(a.id) + " level " + std::to_string(l);
                    }
                    ++listed[id];
                }
            }
        }
        for (std::size_t i = 0; i < state.gaussians.size(); ++i) {
            const Gaussian& g = state.gaussians[i];
            if (i > 0 && state.gaussians[i - 1].id >= g.id) return "Gaussian ids are not strictly increasing";
            const auto it = listed.find(g.id);
            if (it == listed.end() || it->second != 1) {
                return "Gaussian " + std::to_string(g.id) + " is not owned exactly once";
            }
        }
        return std::nullopt;
    }

    std::vector<GaussianId> prune(FrameState& state, double epsilon) {
        std::vector<GaussianId> removed;
        std::vector<Gaussian> kept;
        kept.reserve(state.gaussians.size());
        for (const auto& g : state.gaussians) {
            if (render::sigmoid(g.mask_logit) < epsilon) {
                removed.push_back(g.id);
            } else {
                kept.push_back(g);
            }
        }
        if (removed.empty()) return removed;
        state.gaussians = std::move(kept);
        for (auto& a : state.anchors) {
            for (auto& ids : a.gaussian_ids) {
                std::erase_if(ids, [&](GaussianId id) {
                    return std::binary_search(removed.begin(), removed.end(), id);
                });
            }
        }
        return removed;
    }

    std::pair<Vec3, Vec3> anchor_box(const anchor::Anchor& a, double voxel_size) {
        const Vec3 half = Vec3::Constant(0.5 * voxel_size);
        return {a.position - half, a.position + half};
    }

} // namespace tiersplat::dynamics
