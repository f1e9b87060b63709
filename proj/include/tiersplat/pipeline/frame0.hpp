#pragma once

#include "tiersplat/dynamics/state.hpp"
#include "tiersplat/pipeline/manifest.hpp"

#include <random>
#include <span>
#include <vector>

namespace tiersplat::pipeline {

    struct InitReport {
        std::size_t anchors = 0;
        std::size_t gaussians = 0;
        std::size_t pruned = 0;
        int iterations = 0;
        double loss_neural = 0.0;   // mean loss over the last views of each phase
        double loss_explicit = 0.0;
        double loss_refine = 0.0;
        double train_s = 0.0;
    };

    /// Frame-0 model: anchors from the points, neural training of features,
    /// offsets and decoders, baking into explicit Gaussians, explicit
    /// fine-tuning, scale-level assignment and a clamped refinement.
    /// Throws InitFailed when there is nothing to train or training diverges.
    dynamics::FrameState init_frame0(const SequenceManifest& m, std::span<const CameraView> cams,
                                     std::span<const Image> images, std::span<const Vec3> points,
                                     std::mt19937_64& rng, InitReport* report = nullptr);

    /// Padded axis-aligned bounds of the points (one voxel on every side).
    std::pair<Vec3, Vec3> scene_bounds(std::span<const Vec3> points, double voxel_size);

} // namespace tiersplat::pipeline
