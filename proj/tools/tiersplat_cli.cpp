#include "tiersplat/core/error.hpp"
#include "tiersplat/pipeline/dataset.hpp"
#include "tiersplat/pipeline/manifest.hpp"
#include "tiersplat/pipeline/metrics.hpp"
#include "tiersplat/pipeline/snapshot.hpp"
#include "tiersplat/pipeline/stream.hpp"
#include "tiersplat/pipeline/synthetic.hpp"
#include "tiersplat/render/rasterizer.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace tiersplat;

namespace {

    // Manifest flags shared by `init` and `stream`. Unset flags keep the
    // manifest (or default) value.
    struct ManifestFlags {
        std::string data, out, manifest, held_out;
        std::optional<int> frames, levels, k, feature_dim, views;
        std::optional<double> tau_base, voxel_size, lambda_ssim, lambda_r, eps_prune;
        std::optional<int> neural_iters, explicit_iters, refine_iters, deform_iters, mask_iters, n_spawn,
            spawn_max_depth, tau_hits;
        std::optional<double> tau_diff, lr_mask;
        bool no_timing = false;

        void attach(CLI::App* app) {
            app->add_option("--data", data, "Dataset root (cameras.json, points.xyz, frames/)");
            app->add_option("--out", out, "Run directory (default <data>/run)");
            app->add_option("--manifest", manifest, "Run manifest JSON");
            app->add_option("--held-out", held_out, "Camera excluded from training");
            app->add_option("--frames", frames, "Number of frames to process");
            app->add_option("--levels", levels, "Number of scale levels");
            app->add_option("--tau-base", tau_base, "Level-1 gradient threshold");
            app->add_option("--k", k, "Gaussians per anchor");
            app->add_option("--feature-dim", feature_dim, "Anchor feature size");
            app->add_option("--voxel-size", voxel_size, "Anchor voxel edge");
            app->add_option("--views", views, "Views trained per frame (0: automatic)");
            app->add_option("--lambda-ssim", lambda_ssim, "SSIM weight");
            app->add_option("--lambda-r", lambda_r, "Mask sparsity weight");
            app->add_option("--eps-prune", eps_prune, "Mask pruning threshold");
            app->add_option("--frame0-neural", neural_iters, "Frame-0 neural iterations");
            app->add_option("--frame0-explicit", explicit_iters, "Frame-0 explicit iterations");
            app->add_option("--frame0-refine", refine_iters, "Frame-0 refinement iterations");
            app->add_option("--deform-iters", deform_iters, "Deformation iterations per level");
            app->add_option("--mask-iters", mask_iters, "Mask iterations per frame");
            app->add_option("--n-spawn", n_spawn, "Gaussians spawned per octree node");
            app->add_option("--spawn-max-depth", spawn_max_depth, "Octree depth cap (-1: none)");
            app->add_option("--tau-diff", tau_diff, "Change-mask threshold");
            app->add_option("--tau-hits", tau_hits, "Hits for a dynamic anchor");
            app->add_option("--lr-mask", lr_mask, "Mask learning rate");
            app->add_flag("--no-timing", no_timing, "Write train_s as 0 (byte-comparable reruns)");
        }

        pipeline::SequenceManifest resolve(std::uint64_t seed, bool seed_set, bool prefer_run_manifest) const {
            pipeline::SequenceManifest m;
            if (!manifest.empty()) {
                m = pipeline::load_manifest(manifest);
            } else if (prefer_run_manifest) {
                const fs::path run = !out.empty() ? fs::path(out) : fs::path(data) / "run";
                if (!data.empty() && fs::exists(run / "manifest.json")) m = pipeline::load_manifest(run / "manifest.json");
            }
            if (!data.empty()) m.data_root = data;
            if (m.data_root.empty()) throw Error(ErrorCode::BadConfig, "--data is required");
            if (!out.empty()) m.out_dir = out;
            if (m.out_dir.empty()) m.out_dir = m.data_root / "run";
            if (!held_out.empty()) m.held_out = held_out;
            if (frames) m.frames = *frames;
            if (levels) m.levels = *levels;
            if (tau_base) m.tau_base = *tau_base;
            if (k) m.k = *k;
            if (feature_dim) m.feature_dim = *feature_dim;
            if (voxel_size) m.voxel_size = *voxel_size;
            if (views) m.views = *views;
            if (lambda_ssim) m.hybrid.lambda_ssim = *lambda_ssim;
            if (lambda_r) m.hybrid.lambda_r = *lambda_r;
            if (eps_prune) m.hybrid.eps_prune = *eps_prune;
            if (neural_iters) m.frame0.neural = *neural_iters;
            if (explicit_iters) m.frame0.explicit_ = *explicit_iters;
            if (refine_iters) m.frame0.refine = *refine_iters;
            if (deform_iters) m.hybrid.deform_iters = *deform_iters;
            if (mask_iters) m.hybrid.mask_iters = *mask_iters;
            if (n_spawn) m.hybrid.spawn.n_spawn = *n_spawn;
            if (spawn_max_depth) m.hybrid.spawn.max_depth = *spawn_max_depth;
            if (tau_diff) m.masking.tau_diff = *tau_diff;
            if (tau_hits) m.masking.tau_hits = *tau_hits;
            if (lr_mask) m.hybrid.rates.mask = *lr_mask;
            if (no_timing) m.csv_timing = false;
            if (seed_set) m.seed = seed;
            if (!fs::exists(m.data_root / "cameras.json")) {
                throw Error(ErrorCode::IoError, "missing " + (m.data_root / "cameras.json").string());
            }
            return m;
        }
    };

    void print_error(const std::string& code, const std::string& message) {
        // One machine-readable line on stderr.
        std::string escaped;
        for (char c : message) {
            if (c == '"' || c == '\\') escaped += '\\';
            escaped += c == '\n' ? ' ' : c;
        }
        std::fprintf(stderr, "error code=%s message=\"%s\"\n", code.c_str(), escaped.c_str());
    }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"tiersplat: streaming multi-scale Gaussian splatting"};
    app.require_subcommand(1);
    std::uint64_t seed = 0;
    auto* seed_opt = app.add_option("--seed", seed, "Seed for all randomness");
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Only log warnings");

    pipeline::SyntheticParams sp;
    std::string synth_out;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    synth->add_option("--spec", sp.spec, "static-spheres | moving-sphere | appearing-cube | two-object")->required();
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--cameras", sp.cameras, "Rig size");
    synth->add_option("--width", sp.width, "Image width");
    synth->add_option("--height", sp.height, "Image height");
    synth->add_option("--frames", sp.frames, "Frame count");
    synth->add_option("--points", sp.points, "Sparse points sampled at frame 0");
    synth->add_option("--amplitude", sp.amplitude, "Orbit radius of moving objects");
    synth->add_option("--period", sp.period, "Orbit period in frames");
    synth->add_option("--t-appear", sp.t_appear, "First frame showing the appearing cube");
    synth->add_option("--supersample", sp.supersample, "Rays per pixel side");

    ManifestFlags init_flags, stream_flags;
    auto* init = app.add_subcommand("init", "Train the frame-0 model");
    init_flags.attach(init);
    auto* stream = app.add_subcommand("stream", "Stream the remaining frames");
    stream_flags.attach(stream);
    int last_frame = -1;
    stream->add_option("--last-frame", last_frame, "Stop after this frame");

    std::string snap_file, camera_id, render_out;
    int render_level = 0;
    auto* render_cmd = app.add_subcommand("render", "Render a camera from a snapshot");
    render_cmd->add_option("--snapshot", snap_file, "Snapshot file")->required();
    render_cmd->add_option("--camera", camera_id, "Camera id from the snapshot rig")->required();
    render_cmd->add_option("--out", render_out, "Output image (.ppm or .png)")->required();
    render_cmd->add_option("--level", render_level, "Render one level at its resolution (0: fused)");

    std::string eval_data, eval_run, eval_out;
    auto* eval = app.add_subcommand("eval", "Held-out metrics of every snapshot in a run");
    eval->add_option("--data", eval_data, "Dataset root")->required();
    eval->add_option("--run", eval_run, "Run directory (default <data>/run)");
    eval->add_option("--out", eval_out, "CSV output (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return 2;
    }
    spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);
    const bool seed_set = seed_opt->count() > 0;

    try {
        if (*synth) {
            if (seed_set) sp.seed = seed;
            pipeline::generate_synthetic(sp, synth_out);
            spdlog::info("wrote {} frames of '{}' to {}", sp.frames, sp.spec, synth_out);
        } else if (*init) {
            const auto m = init_flags.resolve(seed, seed_set, false);
            pipeline::run_init(m);
        } else if (*stream) {
            const auto m = stream_flags.resolve(seed, seed_set, true);
            pipeline::run_stream(m, last_frame);
        } else if (*render_cmd) {
            const auto snap = pipeline::read_snapshot(snap_file);
            const CameraView* cam = nullptr;
            for (const auto& c : snap.cameras) {
                if (c.id == camera_id) cam = &c;
            }
            if (!cam) throw Error(ErrorCode::BadConfig, "camera '" + camera_id + "' is not in the snapshot rig");
            const auto& s = snap.state;
            render::RenderOutput out;
            if (render_level > 0) {
                if (render_level > s.level_count()) throw Error(ErrorCode::BadLevelCount, "no such level");
                std::vector<Gaussian> subset;
                for (const auto& g : s.gaussians) {
                    if (g.level == render_level) subset.push_back(g);
                }
                out = render::render_level(subset, *cam, s.levels[static_cast<std::size_t>(render_level - 1)]);
            } else {
                out = render::render_fused(s.gaussians, s.levels, *cam);
            }
            write_image(render_out, out.color);
        } else if (*eval) {
            const fs::path run = eval_run.empty() ? fs::path(eval_data) / "run" : fs::path(eval_run);
            std::ostringstream csv;
            csv << "frame,psnr,ssim,n_gaussians\n";
            const int last = pipeline::last_committed_frame(run);
            if (last < 0) throw Error(ErrorCode::IoError, "no snapshots in " + run.string());
            for (int t = 0; t <= last; ++t) {
                const auto snap = pipeline::read_snapshot(pipeline::snapshot_path(run, t));
                const auto rig = pipeline::split_rig(snap.cameras, snap.held_out);
                const auto images = pipeline::load_frame(eval_data, t, std::span(&rig.held_out, 1));
                const auto out = render::render_fused(snap.state.gaussians, snap.state.levels, rig.held_out);
                const auto q = pipeline::compute_metrics(out.color, images[0]);
                char row[128];
                std::snprintf(row, sizeof(row), "%d,%.6f,%.6f,%zu\n", t, q.psnr, q.ssim,
                              snap.state.gaussians.size());
                csv << row;
            }
            if (eval_out.empty()) {
                std::cout << csv.str();
            } else {
                std::ofstream f(eval_out);
                if (!f) throw Error(ErrorCode::IoError, "cannot write " + eval_out);
                f << csv.str();
            }
        }
    } catch (const Error& e) {
        print_error(std::string(to_string(e.code())), e.what());
        return 1;
    } catch (const std::exception& e) {
        print_error("Internal", e.what());
        return 1;
    }
    return 0;
}
