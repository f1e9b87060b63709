#pragma once

#include "tiersplat/anchor/anchor.hpp"
#include "tiersplat/core/geometry.hpp"
#include "tiersplat/core/image.hpp"

#include <deque>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace tiersplat::masking {

    struct MaskingConfig {
        double tau_diff = 0.05;
        int tau_hits = 25;
        int w_window = 3;
        int w_consist = 2;
        /// Pixels whose rendered transmittance exceeds this show no surface.
        double skip_transmittance = 0.99;
        /// Back-project through the median depth (where transmittance reaches
        /// 1/2) instead of the opacity-weighted mean depth. The mean lands
        /// between surfaces at semi-transparent silhouettes.
        bool median_depth = true;
        double tau_view = 1e-4;
        /// false: plain rectangle IoU; true: intersection / projected-box area.
        bool coverage_ratio = false;
    };

    /// Single-channel 0/1 mask: max-channel |a - b| > tau, then a 3x3 opening.
    Image change_mask(const Image& a, const Image& b, double tau_diff);

    /// 3x3 erosion followed by 3x3 dilation (pixels outside the image count as 0).
    Image morphological_open(const Image& mask);

    /// Per-view evidence of one frame transition.
    struct MotionEvidence {
        std::vector<Image> masks;
        std::map<AnchorId, int> hits;
    };

    /// Back-projects changed pixels through the previous frame's rendered depth
    /// and counts hits per anchor voxel. Images are aligned with `cams`.
    /// Throws MissingFrame when any view lacks an image.
    MotionEvidence collect_motion_evidence(std::span<const Image> frames_t, std::span<const Image> frames_prev,
                                           std::span<const CameraView> cams, std::span<const Image> depth_prev,
                                           std::span<const Image> transmittance_prev,
                                           const anchor::AnchorGrid& grid, const MaskingConfig& cfg);

    /// Sliding window of per-frame hit counts.
    class DetectionHistory {
    public:
        void push(std::map<AnchorId, int> hits, int window);
        /// Anchors whose hits exceed tau_hits in at least min(w_consist, frames
        /// seen) of the last w_window frames.
        std::set<AnchorId> dynamic_anchors(const MaskingConfig& cfg) const;
        const std::deque<std::map<AnchorId, int>>& frames() const { return frames_; }
        int frames_seen() const { return seen_; }
        /// Rebuilds a history from stored frames (oldest first).
        static DetectionHistory restore(std::vector<std::map<AnchorId, int>> frames, int seen);

        friend bool operator==(const DetectionHistory&, const DetectionHistory&) = default;

    private:
        std::deque<std::map<AnchorId, int>> frames_;
        int seen_ = 0;
    };

    std::set<AnchorId> detect_dynamic_anchors(std::span<const Image> frames_t, std::span<const Image> frames_prev,
                                              std::span<const CameraView> cams, std::span<const Image> depth_prev,
                                              std::span<const Image> transmittance_prev,
                                              const anchor::AnchorGrid& grid, DetectionHistory& history,
                                              const MaskingConfig& cfg, MotionEvidence* evidence = nullptr);

    /// Overlap of the anchor voxel's projected bounding box with the image.
    double anchor_view_iou(const Vec3& box_min, const Vec3& box_max, const CameraView& cam,
                           bool coverage_ratio = false);

    /// Shortest axis of each Gaussian, sign-aligned to the first and averaged.
    std::optional<Vec3> anchor_normal(std::span<const Gaussian> owned);

    struct DynamicAnchorInfo {
        AnchorId id = 0;
        Vec3 box_min = Vec3::Zero();
        Vec3 box_max = Vec3::Zero();
        std::optional<Vec3> normal;
    };

    struct AnchorTerm {
        AnchorId anchor = 0;
        double iou = 0.0;
        double weight = 0.0;
        bool counted = false;
    };

    struct ViewScore {
        std::string camera_id;
        double score = 0.0;
        std::vector<AnchorTerm> terms;

        /// Sum of weights of the counted terms.
        double recompute() const;
    };

    ViewScore view_relevance(const CameraView& cam, std::span<const DynamicAnchorInfo> anchors,
                             const MaskingConfig& cfg = {});

    /// max(4, rig / 2), never more than the rig.
    int default_view_count(int rig_size);

    /// Top-K camera ids by score (ties: id ascending). K larger than the rig is
    /// clamped with a warning.
    std::vector<std::string> select_views(std::span<const ViewScore> scores, int K);

} // namespace tiersplat::masking
