#include "tiersplat/pipeline/stream.hpp"
#include "tiersplat/core/error.hpp"
#include "tiersplat/pipeline/dataset.hpp"
#include "tiersplat/pipeline/snapshot.hpp"
#include "tiersplat/render/rasterizer.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <fstream>

namespace tiersplat::pipeline {

    namespace {

        using Clock = std::chrono::steady_clock;

        std::vector<dynamics::TrainingView> make_views(std::span<const CameraView> cams, std::span<const Image> images,
                                                       const std::vector<multiscale::ScaleLevel>& levels) {
            std::vector<dynamics::TrainingView> views;
            for (std::size_t v = 0; v < cams.size(); ++v) {
                views.push_back({cams[v], multiscale::downsample_pyramid(images[v], levels)});
            }
            return views;
        }

        std::vector<Image> training_images(const Rig& rig, std::span<const Image> frame) {
            std::vector<Image> out;
            for (std::size_t v = 0; v < rig.all.size(); ++v) {
                if (v != rig.held_out_index) out.push_back(frame[v]);
            }
            return out;
        }

        void append_text(const std::filesystem::path& path, const std::string& text) {
            std::ofstream f(path, std::ios::app | std::ios::binary);
            if (!f) throw Error(ErrorCode::IoError, "cannot append to " + path.string());
            f.write(text.data(), static_cast<std::streamsize>(text.size()));
            f.flush();
            if (!f) throw Error(ErrorCode::IoError, "write failed: " + path.string());
        }

        ImageMetrics held_out_metrics(const dynamics::FrameState& s, const Rig& rig, const Image& reference) {
            const auto out = render::render_fused(s.gaussians, s.levels, rig.held_out);
            return compute_metrics(out.color, reference);
        }

    } // namespace

    Rig split_rig(std::vector<CameraView> cams, const std::string& held_out) {
        Rig rig;
        bool found = false;
        for (std::size_t i = 0; i < cams.size(); ++i) {
            if (cams[i].id == held_out) {
                rig.held_out = cams[i];
                rig.held_out_index = i;
                found = true;
            } else {
                rig.training.push_back(cams[i]);
            }
        }
        if (!found) throw Error(ErrorCode::BadConfig, "held-out camera '" + held_out + "' is not in the rig");
        if (rig.training.empty()) throw Error(ErrorCode::BadConfig, "no training cameras");
        rig.all = std::move(cams);
        return rig;
    }

    std::mt19937_64 frame_rng(std::uint64_t seed, int frame) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(frame)};
        return std::mt19937_64(seq);
    }

    FrameResult stream_frame(dynamics::FrameState& state, const SequenceManifest& m, const Rig& rig, int t,
                             std::span<const Image> frame_t, std::span<const Image> frame_prev) {
        if (frame_t.size() != rig.all.size() || frame_prev.size() != rig.all.size()) {
            throw Error(ErrorCode::MissingFrame, "frame " + std::to_string(t) + " lacks images for some cameras");
        }
        const auto start = Clock::now();
        dynamics::FrameState work = state;
        work.frame = t;
        // Thresholds follow the manifest, not the value baked in at frame 0.
        for (auto& level : work.levels) level.tau_add = multiscale::threshold_for_level(level.l, m.tau_base);
        auto rng = frame_rng(m.seed, t);

        const auto img_t = training_images(rig, frame_t);
        const auto img_prev = training_images(rig, frame_prev);

        // Geometry of the previous model, seen from every training camera.
        std::vector<Image> depth, trans;
        for (const auto& cam : rig.training) {
            auto out = render::render_fused(work.gaussians, work.levels, cam);
            depth.push_back(std::move(m.masking.median_depth ? out.median_depth : out.depth));
            trans.push_back(std::move(out.transmittance));
        }
        const anchor::AnchorGrid grid(work.anchors, work.voxel_size);
        FrameResult r;
        r.dynamic = masking::detect_dynamic_anchors(img_t, img_prev, rig.training, depth, trans, grid, work.history,
                                                    m.masking);
        for (auto& a : work.anchors) a.dynamic = r.dynamic.contains(a.id);
        work.dynamic = r.dynamic;

        std::vector<masking::DynamicAnchorInfo> infos;
        for (AnchorId id : r.dynamic) {
            const auto& a = work.anchors[id];
            masking::DynamicAnchorInfo info;
            info.id = id;
            std::tie(info.box_min, info.box_max) = dynamics::anchor_box(a, work.voxel_size);
            info.normal = masking::anchor_normal(work.owned(a));
            infos.push_back(info);
        }
        for (const auto& cam : rig.training) r.scores.push_back(masking::view_relevance(cam, infos, m.masking));
        const int K = m.views > 0 ? m.views : masking::default_view_count(static_cast<int>(rig.training.size()));
        r.selected = masking::select_views(r.scores, K);

        const auto all_views = make_views(rig.training, img_t, work.levels);
        std::vector<dynamics::TrainingView> selected;
        for (const auto& id : r.selected) {
            for (const auto& v : all_views) {
                if (v.cam.id == id) selected.push_back(v);
            }
        }
        r.step = dynamics::hybrid_frame_step(work, r.dynamic, selected, all_views, m.hybrid, rng);
        const double train_s = std::chrono::duration<double>(Clock::now() - start).count();

        const auto q = held_out_metrics(work, rig, frame_t[rig.held_out_index]);
        r.metrics.frame = t;
        r.metrics.psnr = q.psnr;
        r.metrics.ssim = q.ssim;
        r.metrics.train_s = train_s;
        r.metrics.n_gauss_pre = r.step.n_pre;
        r.metrics.n_gauss_post = r.step.n_post;
        r.metrics.n_dynamic_anchors = r.dynamic.size();
        r.metrics.n_views = r.selected.size();
        state = std::move(work);
        return r;
    }

    std::string frame_events(const FrameResult& r, const std::filesystem::path& snapshot) {
        using nlohmann::json;
        const int t = r.metrics.frame;
        std::string out;
        auto emit = [&](json j) {
            j["frame"] = t;
            out += j.dump() + "\n";
        };
        emit({{"event", "detect"}, {"dynamic", std::vector<AnchorId>(r.dynamic.begin(), r.dynamic.end())}});
        json scores = json::object();
        for (const auto& s : r.scores) scores[s.camera_id] = s.score;
        emit({{"event", "views"}, {"selected", r.selected}, {"scores", scores}});
        for (const auto& tr : r.step.triggers) {
            emit({{"event", "trigger"},
                  {"anchor", tr.anchor},
                  {"level", tr.level},
                  {"grad_mean", tr.grad_mean},
                  {"fired", tr.fired},
                  {"action", std::string(dynamics::to_string(tr.action))}});
        }
        for (const auto& sp : r.step.spawns) {
            emit({{"event", "spawn"},
                  {"anchor", sp.anchor},
                  {"level", sp.level},
                  {"count", sp.count},
                  {"nodes", sp.nodes},
                  {"min_node_edge", sp.min_node_edge}});
        }
        emit({{"event", "prune"}, {"count", r.step.pruned.size()}});
        emit({{"event", "commit"},
              {"snapshot", snapshot.filename().string()},
              {"n_gaussians", r.metrics.n_gauss_post},
              {"psnr", r.metrics.psnr}});
        return out;
    }

    int last_committed_frame(const std::filesystem::path& dir) {
        int last = -1;
        while (std::filesystem::exists(snapshot_path(dir, last + 1))) ++last;
        return last;
    }

    FrameMetrics run_init(const SequenceManifest& m) {
        const RunPaths paths{m.out_dir};
        std::filesystem::create_directories(paths.dir);
        Rig rig = split_rig(read_cameras(m.data_root / "cameras.json"), m.held_out);
        const auto frame0 = load_frame(m.data_root, 0, rig.all);
        const auto points = read_points(points_path(m.data_root));
        auto rng = frame_rng(m.seed, 0);
        InitReport rep;
        Snapshot snap;
        snap.state = init_frame0(m, rig.training, training_images(rig, frame0), points, rng, &rep);
        snap.cameras = rig.all;
        snap.held_out = m.held_out;

        const auto q = held_out_metrics(snap.state, rig, frame0[rig.held_out_index]);
        FrameMetrics fm;
        fm.frame = 0;
        fm.psnr = q.psnr;
        fm.ssim = q.ssim;
        fm.train_s = rep.train_s;
        fm.n_gauss_pre = fm.n_gauss_post = snap.state.gaussians.size();
        fm.n_views = rig.training.size();

        // A fresh run starts from empty logs.
        std::filesystem::remove(paths.metrics());
        std::filesystem::remove(paths.events());
        for (int t = 1; std::filesystem::exists(snapshot_path(paths.dir, t)); ++t) {
            std::filesystem::remove(snapshot_path(paths.dir, t));
        }
        save_manifest(paths.manifest(), m);
        const auto snap_path = snapshot_path(paths.dir, 0);
        write_snapshot(snap_path, snap);
        nlohmann::json ev{{"frame", 0},
                          {"event", "commit"},
                          {"snapshot", snap_path.filename().string()},
                          {"anchors", rep.anchors},
                          {"n_gaussians", rep.gaussians},
                          {"psnr", fm.psnr}};
        append_text(paths.events(), ev.dump() + "\n");
        append_metrics(paths.metrics(), fm, m.csv_timing);
        spdlog::info("frame 0 committed: {} Gaussians, held-out PSNR {:.2f} dB", fm.n_gauss_post, fm.psnr);
        return fm;
    }

    std::vector<FrameMetrics> run_stream(const SequenceManifest& m, int last_frame) {
        const RunPaths paths{m.out_dir};
        const int committed = last_committed_frame(paths.dir);
        if (committed < 0) {
            throw Error(ErrorCode::IoError, "no frame-0 snapshot in " + paths.dir.string() + " (run init first)");
        }
        Snapshot snap = read_snapshot(snapshot_path(paths.dir, committed));
        const Rig rig = split_rig(snap.cameras, snap.held_out);
        int frames = count_frames(m.data_root);
        if (m.frames > 0) frames = std::min(frames, m.frames);
        if (last_frame >= 0) frames = std::min(frames, last_frame + 1);

        std::vector<FrameMetrics> rows;
        if (committed + 1 >= frames) return rows;
        std::vector<Image> prev = load_frame(m.data_root, committed, rig.all);
        for (int t = committed + 1; t < frames; ++t) {
            const auto cur = load_frame(m.data_root, t, rig.all);
            const auto result = stream_frame(snap.state, m, rig, t, cur, prev);
            const auto path = snapshot_path(paths.dir, t);
            write_snapshot(path, snap);
            append_text(paths.events(), frame_events(result, path));
            append_metrics(paths.metrics(), result.metrics, m.csv_timing);
            spdlog::info("frame {}: PSNR {:.2f} dB, {} dynamic anchors, {} -> {} Gaussians, {:.1f}s", t,
                         result.metrics.psnr, result.dynamic.size(), result.metrics.n_gauss_pre,
                         result.metrics.n_gauss_post, result.metrics.train_s);
            rows.push_back(result.metrics);
            prev = cur;
        }
        return rows;
    }

} // namespace tiersplat::pipeline
