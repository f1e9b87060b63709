#include "tiersplat/masking/masking.hpp"
#include "tiersplat/core/error.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace tiersplat::masking {

    namespace {

        Image morph(const Image& mask, bool erode) {
            Image out(mask.width, mask.height, 1);
            for (int y = 0; y < mask.height; ++y) {
                for (int x = 0; x < mask.width; ++x) {
                    bool acc = erode;
                    for (int dy = -1; dy <= 1; ++dy) {
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int xx = x + dx;
                            const int yy = y + dy;
                            const bool inside = xx >= 0 && yy >= 0 && xx < mask.width && yy < mask.height;
                            const bool v = inside && mask.at(xx, yy) > 0.5;
                            acc = erode ? (acc && v) : (acc || v);
                        }
                    }
                    out.at(x, y) = acc ? 1.0 : 0.0;
                }
            }
            return out;
        }

        void require_frames(std::span<const Image> images, std::span<const CameraView> cams, const char* what) {
            if (images.size() != cams.size()) {
                throw Error(ErrorCode::MissingFrame, std::string(what) + ": expected one image per camera");
            }
            for (std::size_t i = 0; i < cams.size(); ++i) {
                if (images[i].data.empty()) {
                    throw Error(ErrorCode::MissingFrame, std::string(what) + ": no image for camera " + cams[i].id);
                }
            }
        }

    } // namespace

    Image morphological_open(const Image& mask) {
        return morph(morph(mask, true), false);
    }

    Image change_mask(const Image& a, const Image& b, double tau_diff) {
        if (!a.same_shape(b)) {
            throw Error(ErrorCode::ShapeError, "change mask inputs differ in shape");
        }
        Image raw(a.width, a.height, 1);
        for (int y = 0; y < a.height; ++y) {
            for (int x = 0; x < a.width; ++x) {
                double m = 0.0;
                for (int c = 0; c < a.channels; ++c) m = std::max(m, std::abs(a.at(x, y, c) - b.at(x, y, c)));
                raw.at(x, y) = m > tau_diff ? 1.0 : 0.0;
            }
        }
        return morphological_open(raw);
    }

    MotionEvidence collect_motion_evidence(std::span<const Image> frames_t, std::span<const Image> frames_prev,
                                           std::span<const CameraView> cams, std::span<const Image> depth_prev,
                                           std::span<const Image> transmittance_prev,
                                           const anchor::AnchorGrid& grid, const MaskingConfig& cfg) {
        require_frames(frames_t, cams, "current frame");
        require_frames(frames_prev, cams, "previous frame");
        require_frames(depth_prev, cams, "previous depth");
        require_frames(transmittance_prev, cams, "previous transmittance");
        MotionEvidence ev;
        ev.masks.resize(cams.size());
        // Views are independent; counts are merged in camera order.
        std::vector<std::map<AnchorId, int>> partial(cams.size());
#pragma omp parallel for schedule(dynamic)
        for (std::size_t v = 0; v < cams.size(); ++v) {
            const CameraView& cam = cams[v];
            ev.masks[v] = change_mask(frames_t[v], frames_prev[v], cfg.tau_diff);
            const Mat3 Rt = cam.R_wc.transpose();
            for (int y = 0; y < cam.height; ++y) {
                for (int x = 0; x < cam.width; ++x) {
                    if (ev.masks[v].at(x, y) < 0.5) continue;
                    if (transmittance_prev[v].at(x, y) > cfg.skip_transmittance) continue;
                    const double d = depth_prev[v].at(x, y);
                    if (!(d > 0.0)) continue;
                    const Vec3 pc((x - cam.cx) / cam.fx * d, (y - cam.cy) / cam.fy * d, d);
                    const Vec3 pw = Rt * (pc - cam.t_wc);
                    if (const auto id = grid.find(pw)) ++partial[v][*id];
                }
            }
        }
        for (const auto& p : partial)
            for (const auto& [id, n] : p) ev.hits[id] += n;
        return ev;
    }

    DetectionHistory DetectionHistory::restore(std::vector<std::map<AnchorId, int>> frames, int seen) {
        DetectionHistory h;
        for (auto& f : frames) h.frames_.push_back(std::move(f));
        h.seen_ = seen;
        return h;
    }

    void DetectionHistory::push(std::map<AnchorId, int> hits, int window) {
        frames_.push_back(std::move(hits));
        while (static_cast<int>(frames_.size()) > std::max(window, 1)) frames_.pop_front();
        ++seen_;
    }

    std::set<AnchorId> DetectionHistory::dynamic_anchors(const MaskingConfig& cfg) const {
        const int needed = std::max(1, std::min(cfg.w_consist, seen_));
        std::map<AnchorId, int> strong;
        for (const auto& f : frames_) {
            for (const auto& [id, n] : f) {
                if (n > cfg.tau_hits) ++strong[id];
            }
        }
        std::set<AnchorId> out;
        for (const auto& [id, n] : strong) {
            if (n >= needed) out.insert(id);
        }
        return out;
    }

    std::set<AnchorId> detect_dynamic_anchors(std::span<const Image> frames_t, std::span<const Image> frames_prev,
                                              std::span<const CameraView> cams, std::span<const Image> depth_prev,
                                              std::span<const Image> transmittance_prev,
                                              const anchor::AnchorGrid& grid, DetectionHistory& history,
                                              const MaskingConfig& cfg, MotionEvidence* evidence) {
        MotionEvidence ev =
            collect_motion_evidence(frames_t, frames_prev, cams, depth_prev, transmittance_prev, grid, cfg);
        history.push(ev.hits, cfg.w_window);
        if (evidence) *evidence = std::move(ev);
        return history.dynamic_anchors(cfg);
    }

    double anchor_view_iou(const Vec3& box_min, const Vec3& box_max, const CameraView& cam, bool coverage_ratio) {
        double x0 = std::numeric_limits<double>::infinity(), y0 = x0;
        double x1 = -x0, y1 = -x0;
        bool any = false;
        for (int c = 0; c < 8; ++c) {
            const Vec3 p((c & 1) ? box_max.x() : box_min.x(), (c & 2) ? box_max.y() : box_min.y(),
                         (c & 4) ? box_max.z() : box_min.z());
            const Vec3 pc = cam.to_camera(p);
            if (pc.z() <= kZNear) continue;
            any = true;
            const double u = cam.fx * pc.x() / pc.z() + cam.cx;
            const double v = cam.fy * pc.y() / pc.z() + cam.cy;
            x0 = std::min(x0, u);
            x1 = std::max(x1, u);
            y0 = std::min(y0, v);
            y1 = std::max(y1, v);
        }
        if (!any) return 0.0;
        const double ix0 = -0.5, iy0 = -0.5, ix1 = cam.width - 0.5, iy1 = cam.height - 0.5;
        const double iw = std::max(0.0, std::min(x1, ix1) - std::max(x0, ix0));
        const double ih = std::max(0.0, std::min(y1, iy1) - std::max(y0, iy0));
        const double inter = iw * ih;
        if (inter <= 0.0) return 0.0;
        const double box = (x1 - x0) * (y1 - y0);
        if (coverage_ratio) return std::min(1.0, inter / box);
        const double image = (ix1 - ix0) * (iy1 - iy0);
        return inter / (box + image - inter);
    }

    std::optional<Vec3> anchor_normal(std::span<const Gaussian> owned) {
        Vec3 sum = Vec3::Zero();
        std::optional<Vec3> first;
        for (const Gaussian& g : owned) {
            const Mat3 R = g.q.normalized().to_rotation();
            int axis = 0;
            g.s.minCoeff(&axis);
            Vec3 n = R.col(axis);
            if (!first) first = n;
            if (n.dot(*first) < 0.0) n = -n;
            sum += n;
        }
        if (!first) return std::nullopt;
        const double len = sum.norm();
        return len > 1e-12 ? Vec3(sum / len) : *first;
    }

    double ViewScore::recompute() const {
        double s = 0.0;
        for (const auto& t : terms) {
            if (t.counted) s += t.weight;
        }
        return s;
    }

    ViewScore view_relevance(const CameraView& cam, std::span<const DynamicAnchorInfo> anchors,
                             const MaskingConfig& cfg) {
        ViewScore out;
        out.camera_id = cam.id;
        const Vec3 d = cam.forward();
        for (const auto& a : anchors) {
            AnchorTerm t;
            t.anchor = a.id;
            t.iou = anchor_view_iou(a.box_min, a.box_max, cam, cfg.coverage_ratio);
            if (a.normal) {
                t.weight = std::abs(a.normal->dot(d));
            } else {
                spdlog::debug("anchor {} owns no Gaussians; relevance term is zero", a.id);
            }
            t.counted = t.iou > cfg.tau_view;
            out.terms.push_back(t);
        }
        out.score = out.recompute();
        return out;
    }

    int default_view_count(int rig_size) {
        return std::min(rig_size, std::max(4, rig_size / 2));
    }

    std::vector<std::string> select_views(std::span<const ViewScore> scores, int K) {
        if (K > static_cast<int>(scores.size())) {
            spdlog::warn("ClampedK: requested {} views but only {} cameras exist", K, scores.size());
            K = static_cast<int>(scores.size());
        }
        std::vector<const ViewScore*> order;
        for (const auto& s : scores) order.push_back(&s);
        std::stable_sort(order.begin(), order.end(), [](const ViewScore* a, const ViewScore* b) {
            if (a->score != b->score) return a->score > b->score;
            return a->camera_id < b->camera_id;
        });
        std::vector<std::string> out;
        for (int i = 0; i < std::max(K, 0); ++i) out.push_back(order[static_cast<std::size_t>(i)]->camera_id);
        return out;
    }

} // namespace tiersplat::masking
