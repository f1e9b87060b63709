#pragma once

#include "tiersplat/dynamics/hybrid.hpp"
#include "tiersplat/masking/masking.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace tiersplat::pipeline {

    /// Frame-0 training budgets (iterations per phase).
    struct Frame0Budget {
        int neural = 4000;   // anchor features, offsets and attribute decoders
        int explicit_ = 0;   // baked Gaussians, unconstrained scales
        int refine = 1000;   // after level assignment, scales clamped every step
        int total() const { return neural + explicit_ + refine; }
    };

    struct Frame0Rates {
        double decoders = 2e-3;
        double features = 5e-3;
        double offsets = 1e-2;
        double scaling = 7e-3;
        double position = 1.6e-4;
        double rotation = 1e-3;
        double log_scale = 5e-3;
        double opacity_logit = 5e-2;
        double color = 2.5e-2;
    };

    /// Every run parameter; defaults apply to anything a manifest file omits.
    struct SequenceManifest {
        std::filesystem::path data_root;
        std::filesystem::path out_dir;
        std::string held_out = "cam03";
        int frames = 0; // 0: every frame directory found

        int levels = 3;
        double tau_base = 0.01;
        int k = 10;
        int feature_dim = 32;
        int hidden = 64;
        double voxel_size = 0.25;
        double frame0_mask_logit = 3.0;
        Frame0Budget frame0;
        Frame0Rates frame0_rates;

        dynamics::HybridConfig hybrid;
        masking::MaskingConfig masking;
        optim::DeformConfig deform;
        /// Views trained per frame; 0 selects max(4, half the training rig).
        int views = 0;

        std::uint64_t seed = 0;
        /// Wall-clock training time in the metrics CSV. Disable for
        /// byte-comparable reruns (the value is then written as 0).
        bool csv_timing = true;
    };

    void save_manifest(const std::filesystem::path& path, const SequenceManifest& m);
    /// Missing keys keep their defaults; unknown keys are rejected (BadConfig).
    SequenceManifest load_manifest(const std::filesystem::path& path);

    std::string manifest_to_json(const SequenceManifest& m);
    SequenceManifest manifest_from_json(const std::string& text);

} // namespace tiersplat::pipeline
