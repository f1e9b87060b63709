#pragma once

#include "tiersplat/anchor/anchor.hpp"
#include "tiersplat/anchor/decoders.hpp"
#include "tiersplat/masking/masking.hpp"
#include "tiersplat/multiscale/levels.hpp"
#include "tiersplat/optim/deform.hpp"

#include <optional>
#include <set>
#include <string>
#include <vector>

namespace tiersplat::dynamics {

    /// Everything that changes from frame to frame.
    struct FrameState {
        int frame = 0;
        double voxel_size = 0.25;
        Vec3 scene_min = Vec3::Zero();
        Vec3 scene_max = Vec3::Ones();
        std::vector<anchor::Anchor> anchors; // index == anchor id
        std::vector<Gaussian> gaussians;     // ascending id
        GaussianId next_id = 0;
        multiscale::ScaleStats stats;
        std::vector<multiscale::ScaleLevel> levels;
        anchor::AttributeDecoders decoders;
        std::vector<optim::DeformNets> nets; // one per level
        masking::DetectionHistory history;
        std::set<AnchorId> dynamic;

        double scene_edge() const { return (scene_max - scene_min).maxCoeff(); }
        int level_count() const { return static_cast<int>(levels.size()); }

        std::optional<std::size_t> index_of(GaussianId id) const;
        /// Assigns the next id, registers ownership and returns the id.
        GaussianId add_gaussian(Gaussian g);
        /// Gaussians owned by `a` (all levels, or one level when level > 0).
        std::vector<Gaussian> owned(const anchor::Anchor& a, int level = 0) const;
        std::vector<double> mask_logits() const;
    };

    /// Describes the first broken ownership link, if any: every listed id must
    /// resolve to a Gaussian of that level pointing back at its anchor, and
    /// every Gaussian must be listed exactly once.
    std::optional<std::string> ownership_violation(const FrameState& state);

    /// Removes every Gaussian with sigmoid(mask_logit) < epsilon and returns
    /// the removed ids in ascending order.
    std::vector<GaussianId> prune(FrameState& state, double epsilon);

    /// Axis-aligned voxel box of an anchor.
    std::pair<Vec3, Vec3> anchor_box(const anchor::Anchor& a, double voxel_size);

} // namespace tiersplat::dynamics
