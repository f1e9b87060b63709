#pragma once

#include "tiersplat/dynamics/spawn.hpp"
#include "tiersplat/dynamics/state.hpp"
#include "tiersplat/optim/deform.hpp"
#include "tiersplat/render/rasterizer.hpp"

#include <random>
#include <set>
#include <span>
#include <vector>

namespace tiersplat::dynamics {

    /// Explicit-parameter learning rates.
    struct ExplicitRates {
        double position = 1.6e-4;
        double rotation = 1e-3;
        double scale = 5e-3;
        double opacity = 2.5e-2;
        double color = 2.5e-2;
        double mask = 1e-2;
    };

    struct HybridConfig {
        int deform_iters = 30;
        int mask_iters = 20;
        int grad_window = kDefaultGradWindow;
        optim::DeformLearningRates net_lr;
        ExplicitRates rates;
        double lambda_ssim = 0.2;
        double lambda_r = 0.001;
        double eps_prune = 0.01;
        SpawnConfig spawn;
        /// Domain edge fraction for the octree stop rule.
        double min_edge_fraction = 1e-3;
        /// Zero the deformation heads at the start of every frame.
        bool reset_heads = true;
        /// Mask phase objective: false sums the level-resolution losses over
        /// the active levels; true uses only the full-resolution fused render.
        bool mask_full_resolution_only = false;
        /// Mask phase trains only Gaussians of this frame's dynamic anchors
        /// (and the freshly spawned ones); false trains every mask.
        bool mask_dynamic_only = true;
        /// Level losses compare the box-downsampled full-resolution render with
        /// the level target (the same filter on both sides). false rasterizes
        /// directly at the level resolution.
        bool filtered_level_render = true;
        render::RenderOptions render;
    };

    /// One camera with its target image box-filtered to every level.
    struct TrainingView {
        CameraView cam;
        std::vector<Image> targets; // index l - 1
    };

    struct SpawnRecord {
        AnchorId anchor = 0;
        int level = 1;
        int count = 0;
        int nodes = 0;
        double min_node_edge = 0.0;
    };

    struct FrameStepReport {
        std::vector<TriggerRecord> triggers;
        std::vector<SpawnRecord> spawns;
        std::vector<int> iterations_per_level;
        std::vector<std::size_t> deformed_per_level;
        std::size_t spawned = 0;
        std::size_t n_pre = 0;  // after spawning, before pruning
        std::size_t n_post = 0; // after pruning
        std::vector<GaussianId> pruned;
        double final_mask_loss = 0.0;
    };

    /// Gaussians of `state` after applying the current deformation nets of
    /// `level` to `indices` (all other Gaussians untouched).
    std::vector<Gaussian> deformed_scene(const FrameState& state, int level, std::span<const std::size_t> indices);

    /// One frame of the multi-scale update: per-level deformation of the
    /// escalated anchors, gradient-triggered octree spawning, mask
    /// optimisation with the sparsity term, and pruning.
    FrameStepReport hybrid_frame_step(FrameState& state, const std::set<AnchorId>& dynamic,
                                      std::span<const TrainingView> selected,
                                      std::span<const TrainingView> training, const HybridConfig& cfg,
                                      std::mt19937_64& rng);

    /// Mask logits (and the explicit parameters of Gaussians with id >=
    /// `first_new_id`) trained on the sum over levels of the level-resolution
    /// losses plus the sparsity term. With `scope`, only masks of Gaussians
    /// owned by those anchors (or spawned this frame) are trained. Returns the
    /// final loss.
    double optimize_masks(FrameState& state, std::span<const TrainingView> views, GaussianId first_new_id,
                          const HybridConfig& cfg, const std::set<AnchorId>* scope = nullptr);

} // namespace tiersplat::dynamics
