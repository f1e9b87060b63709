#pragma once

#include "tiersplat/anchor/anchor.hpp"
#include "tiersplat/multiscale/levels.hpp"

#include <deque>
#include <random>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tiersplat::dynamics {

    inline constexpr int kDefaultGradWindow = 20;
    inline constexpr int kDefaultSpawnPerNode = 4;

    /// Per-Gaussian gradient norms over the most recent `window` iterations.
    class GradientTracker {
    public:
        explicit GradientTracker(int window = kDefaultGradWindow) : window_(window) {}

        void record(GaussianId id, double norm);
        /// Mean of the recorded norms; 0 when nothing was recorded.
        double mean(GaussianId id) const;
        bool has(GaussianId id) const { return history_.contains(id); }
        void clear() { history_.clear(); }
        int window() const { return window_; }

    private:
        int window_;
        std::unordered_map<GaussianId, std::deque<double>> history_;
    };

    /// Mean over the anchor's level-l Gaussians of their time-averaged
    /// gradient norm. Throws EmptyAnchorLevel when it owns none there.
    double anchor_gradient(const anchor::Anchor& a, int level, const GradientTracker& tracker);

    enum class TriggerAction { Stop, SpawnHere, SpawnAndActivateNext };

    std::string_view to_string(TriggerAction a);

    struct TriggerRecord {
        AnchorId anchor = 0;
        int level = 1;
        double grad_mean = 0.0;
        bool fired = false;
        TriggerAction action = TriggerAction::Stop;
    };

    /// Fires when grad_mean exceeds the level's threshold; the next level is
    /// activated unless l is the finest level.
    TriggerRecord decide(AnchorId anchor, int level, double grad_mean, std::span<const multiscale::ScaleLevel> levels);

    struct OctreeNode {
        Vec3 box_min = Vec3::Zero();
        Vec3 box_max = Vec3::Zero();
        int depth = 0;
        std::vector<int> children; // indices into the node list; empty or 8
        std::vector<GaussianId> gaussian_ids;
        double mean_grad = 0.0;
        int spawned = 0;

        double edge() const { return (box_max - box_min).maxCoeff(); }
        double volume() const { return (box_max - box_min).prod(); }
    };

    struct SpawnConfig {
        int n_spawn = kDefaultSpawnPerNode;
        /// Nodes are never created with an edge below this.
        double min_edge = 1e-3;
        /// Optional cap on subdivision depth; negative means no cap.
        int max_depth = -1;
        double initial_opacity = 0.1;
        double initial_mask_logit = 3.0;
    };

    struct SpawnResult {
        std::vector<Gaussian> gaussians; // ids unassigned
        std::vector<OctreeNode> nodes;   // nodes[0] is the root
    };

    /// Octree over the anchor's voxel box. Nodes whose mean gradient (empty
    /// nodes count as zero) exceeds the level threshold receive n_spawn new
    /// Gaussians uniformly in their box and are subdivided. Gaussian positions
    /// outside the voxel are clamped onto it for node membership.
    SpawnResult octree_spawn(const anchor::Anchor& a, const multiscale::ScaleLevel& level,
                             std::span<const Gaussian> level_gaussians, const GradientTracker& tracker,
                             std::span<const Gaussian> color_sources, double voxel_size, const SpawnConfig& cfg,
                             std::mt19937_64& rng);

} // namespace tiersplat::dynamics
