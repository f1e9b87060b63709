#pragma once

#include "tiersplat/dynamics/hybrid.hpp"
#include "tiersplat/masking/masking.hpp"
#include "tiersplat/pipeline/frame0.hpp"
#include "tiersplat/pipeline/manifest.hpp"
#include "tiersplat/pipeline/metrics.hpp"

#include <filesystem>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace tiersplat::pipeline {

    /// Cameras of a run split into the training rig and the held-out view.
    struct Rig {
        std::vector<CameraView> all;
        std::vector<CameraView> training;
        CameraView held_out;
        std::size_t held_out_index = 0;
    };

    /// Throws BadConfig when the held-out id is not in the rig.
    Rig split_rig(std::vector<CameraView> cams, const std::string& held_out);

    struct FrameResult {
        FrameMetrics metrics;
        std::set<AnchorId> dynamic;
        std::vector<masking::ViewScore> scores;
        std::vector<std::string> selected;
        dynamics::FrameStepReport step;
    };

    /// Advances `state` by one frame. `frame_t` and `frame_prev` hold one
    /// image per camera of `rig.all`. The state is only replaced when the
    /// whole update succeeded.
    FrameResult stream_frame(dynamics::FrameState& state, const SequenceManifest& m, const Rig& rig, int t,
                             std::span<const Image> frame_t, std::span<const Image> frame_prev);

    /// Per-frame generator derived from the run seed, so a resumed run draws
    /// the same numbers as an uninterrupted one.
    std::mt19937_64 frame_rng(std::uint64_t seed, int frame);

    /// JSON-lines records of one frame (detections, views, triggers, spawns,
    /// pruning and the commit marker).
    std::string frame_events(const FrameResult& r, const std::filesystem::path& snapshot);

    /// Output files of a run directory.
    struct RunPaths {
        std::filesystem::path dir;
        std::filesystem::path metrics() const { return dir / "metrics.csv"; }
        std::filesystem::path events() const { return dir / "events.jsonl"; }
        std::filesystem::path manifest() const { return dir / "manifest.json"; }
    };

    /// Trains frame 0, commits its snapshot and writes the first metrics row.
    FrameMetrics run_init(const SequenceManifest& m);

    /// Streams from the last committed snapshot in the output directory up
    /// to the last frame (or `last_frame` when >= 0). Returns the new rows.
    std::vector<FrameMetrics> run_stream(const SequenceManifest& m, int last_frame = -1);

    /// Latest frame with a snapshot in `dir`, or -1.
    int last_committed_frame(const std::filesystem::path& dir);

} // namespace tiersplat::pipeline
