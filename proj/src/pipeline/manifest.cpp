#include "tiersplat/pipeline/manifest.hpp"
#include "tiersplat/core/error.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <set>

namespace tiersplat::pipeline {

    namespace {

        using nlohmann::json;

        // Reads `key` into `value` when present and records that it was used.
        template <typename T>
        void read(const json& j, const char* key, T& value, std::set<std::string>& used) {
            used.insert(key);
            if (j.contains(key)) value = j.at(key).get<T>();
        }

        void reject_unknown(const json& j, const std::set<std::string>& used, const std::string& where) {
            for (const auto& [k, v] : j.items()) {
                if (!used.contains(k)) throw Error(ErrorCode::BadConfig, "unknown manifest key '" + where + k + "'");
            }
        }

    } // namespace

    std::string manifest_to_json(const SequenceManifest& m) {
        const auto& h = m.hybrid;
        json j;
        j["data_root"] = m.data_root.string();
        j["out_dir"] = m.out_dir.string();
        j["held_out"] = m.held_out;
        j["frames"] = m.frames;
        j["levels"] = m.levels;
        j["tau_base"] = m.tau_base;
        j["k"] = m.k;
        j["feature_dim"] = m.feature_dim;
        j["hidden"] = m.hidden;
        j["voxel_size"] = m.voxel_size;
        j["frame0_mask_logit"] = m.frame0_mask_logit;
        j["frame0"] = {{"neural", m.frame0.neural}, {"explicit", m.frame0.explicit_}, {"refine", m.frame0.refine}};
        const auto& r0 = m.frame0_rates;
        j["frame0_rates"] = {{"decoders", r0.decoders},     {"features", r0.features},   {"offsets", r0.offsets},
                             {"scaling", r0.scaling},       {"position", r0.position},   {"rotation", r0.rotation},
                             {"log_scale", r0.log_scale},   {"opacity_logit", r0.opacity_logit},
                             {"color", r0.color}};
        j["hybrid"] = {{"deform_iters", h.deform_iters},
                       {"mask_iters", h.mask_iters},
                       {"grad_window", h.grad_window},
                       {"net_lr", h.net_lr.mlp},
                       {"table_lr", h.net_lr.table},
                       {"lr_position", h.rates.position},
                       {"lr_rotation", h.rates.rotation},
                       {"lr_scale", h.rates.scale},
                       {"lr_opacity", h.rates.opacity},
                       {"lr_color", h.rates.color},
                       {"lr_mask", h.rates.mask},
                       {"lambda_ssim", h.lambda_ssim},
                       {"lambda_r", h.lambda_r},
                       {"eps_prune", h.eps_prune},
                       {"n_spawn", h.spawn.n_spawn},
                       {"spawn_max_depth", h.spawn.max_depth},
                       {"spawn_opacity", h.spawn.initial_opacity},
                       {"spawn_mask_logit", h.spawn.initial_mask_logit},
                       {"min_edge_fraction", h.min_edge_fraction},
                       {"reset_heads", h.reset_heads},
                       {"mask_full_resolution_only", h.mask_full_resolution_only},
                       {"mask_dynamic_only", h.mask_dynamic_only},
                       {"filtered_level_render", h.filtered_level_render}};
        const auto& mk = m.masking;
        j["masking"] = {{"tau_diff", mk.tau_diff},   {"tau_hits", mk.tau_hits},
                        {"w_window", mk.w_window},   {"w_consist", mk.w_consist},
                        {"skip_transmittance", mk.skip_transmittance},
                        {"tau_view", mk.tau_view},   {"coverage_ratio", mk.coverage_ratio},
                        {"median_depth", mk.median_depth}};
        const auto& hc = m.deform.hash;
        j["deform"] = {{"num_grids", hc.num_grids},
                       {"base_resolution", hc.base_resolution},
                       {"growth", hc.growth},
                       {"log2_table_size", hc.log2_table_size},
                       {"features_per_grid", hc.features_per_grid},
                       {"hidden", m.deform.hidden},
                       {"appearance_residual", m.deform.appearance_residual}};
        j["views"] = m.views;
        j["seed"] = m.seed;
        j["csv_timing"] = m.csv_timing;
        return j.dump(2);
    }

    SequenceManifest manifest_from_json(const std::string& text) {
        SequenceManifest m;
        json j;
        try {
            j = json::parse(text);
        } catch (const json::exception& e) {
            throw Error(ErrorCode::ParseError, std::string("manifest: ") + e.what());
        }
        try {
            std::set<std::string> used;
            std::string s;
            s = m.data_root.string();
            read(j, "data_root", s, used);
            m.data_root = s;
            s = m.out_dir.string();
            read(j, "out_dir", s, used);
            m.out_dir = s;
            read(j, "held_out", m.held_out, used);
            read(j, "frames", m.frames, used);
            read(j, "levels", m.levels, used);
            read(j, "tau_base", m.tau_base, used);
            read(j, "k", m.k, used);
            read(j, "feature_dim", m.feature_dim, used);
            read(j, "hidden", m.hidden, used);
            read(j, "voxel_size", m.voxel_size, used);
            read(j, "frame0_mask_logit", m.frame0_mask_logit, used);
            read(j, "views", m.views, used);
            read(j, "seed", m.seed, used);
            read(j, "csv_timing", m.csv_timing, used);
            for (const char* sub : {"frame0", "frame0_rates", "hybrid", "masking", "deform"}) used.insert(sub);
            reject_unknown(j, used, "");

            if (j.contains("frame0")) {
                const auto& f = j.at("frame0");
                std::set<std::string> u;
                read(f, "neural", m.frame0.neural, u);
                read(f, "explicit", m.frame0.explicit_, u);
                read(f, "refine", m.frame0.refine, u);
                reject_unknown(f, u, "frame0.");
            }
            if (j.contains("frame0_rates")) {
                const auto& f = j.at("frame0_rates");
                auto& r = m.frame0_rates;
                std::set<std::string> u;
                read(f, "decoders", r.decoders, u);
                read(f, "features", r.features, u);
                read(f, "offsets", r.offsets, u);
                read(f, "scaling", r.scaling, u);
                read(f, "position", r.position, u);
                read(f, "rotation", r.rotation, u);
                read(f, "log_scale", r.log_scale, u);
                read(f, "opacity_logit", r.opacity_logit, u);
                read(f, "color", r.color, u);
                reject_unknown(f, u, "frame0_rates.");
            }
            if (j.contains("hybrid")) {
                const auto& f = j.at("hybrid");
                auto& h = m.hybrid;
                std::set<std::string> u;
                read(f, "deform_iters", h.deform_iters, u);
                read(f, "mask_iters", h.mask_iters, u);
                read(f, "grad_window", h.grad_window, u);
                read(f, "net_lr", h.net_lr.mlp, u);
                read(f, "table_lr", h.net_lr.table, u);
                read(f, "lr_position", h.rates.position, u);
                read(f, "lr_rotation", h.rates.rotation, u);
                read(f, "lr_scale", h.rates.scale, u);
                read(f, "lr_opacity", h.rates.opacity, u);
                read(f, "lr_color", h.rates.color, u);
                read(f, "lr_mask", h.rates.mask, u);
                read(f, "lambda_ssim", h.lambda_ssim, u);
                read(f, "lambda_r", h.lambda_r, u);
                read(f, "eps_prune", h.eps_prune, u);
                read(f, "n_spawn", h.spawn.n_spawn, u);
                read(f, "spawn_max_depth", h.spawn.max_depth, u);
                read(f, "spawn_opacity", h.spawn.initial_opacity, u);
                read(f, "spawn_mask_logit", h.spawn.initial_mask_logit, u);
                read(f, "min_edge_fraction", h.min_edge_fraction, u);
                read(f, "reset_heads", h.reset_heads, u);
                read(f, "mask_full_resolution_only", h.mask_full_resolution_only, u);
                read(f, "mask_dynamic_only", h.mask_dynamic_only, u);
                read(f, "filtered_level_render", h.filtered_level_render, u);
                reject_unknown(f, u, "hybrid.");
            }
            if (j.contains("masking")) {
                const auto& f = j.at("masking");
                auto& mk = m.masking;
                std::set<std::string> u;
                read(f, "tau_diff", mk.tau_diff, u);
                read(f, "tau_hits", mk.tau_hits, u);
                read(f, "w_window", mk.w_window, u);
                read(f, "w_consist", mk.w_consist, u);
                read(f, "skip_transmittance", mk.skip_transmittance, u);
                read(f, "tau_view", mk.tau_view, u);
                read(f, "coverage_ratio", mk.coverage_ratio, u);
                read(f, "median_depth", mk.median_depth, u);
                reject_unknown(f, u, "masking.");
            }
            if (j.contains("deform")) {
                const auto& f = j.at("deform");
                auto& hc = m.deform.hash;
                std::set<std::string> u;
                read(f, "num_grids", hc.num_grids, u);
                read(f, "base_resolution", hc.base_resolution, u);
                read(f, "growth", hc.growth, u);
                read(f, "log2_table_size", hc.log2_table_size, u);
                read(f, "features_per_grid", hc.features_per_grid, u);
                read(f, "hidden", m.deform.hidden, u);
                read(f, "appearance_residual", m.deform.appearance_residual, u);
                reject_unknown(f, u, "deform.");
            }
        } catch (const json::exception& e) {
            throw Error(ErrorCode::BadConfig, std::string("manifest: ") + e.what());
        }
        if (m.levels < 1) throw Error(ErrorCode::BadLevelCount, "manifest: levels must be >= 1");
        if (!(m.voxel_size > 0.0) || m.k < 1 || m.feature_dim < 1) {
            throw Error(ErrorCode::BadConfig, "manifest: voxel_size, k and feature_dim must be positive");
        }
        return m;
    }

    void save_manifest(const std::filesystem::path& path, const SequenceManifest& m) {
        std::ofstream f(path);
        if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
        f << manifest_to_json(m) << "\n";
    }

    SequenceManifest load_manifest(const std::filesystem::path& path) {
        std::ifstream f(path);
        if (!f) throw Error(ErrorCode::IoError, "cannot read " + path.string());
        const std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        SequenceManifest m = manifest_from_json(text);
        if (!m.data_root.empty()) {
            for (const char* name : {"cameras.json"}) {
                if (!std::filesystem::exists(m.data_root / name)) {
                    throw Error(ErrorCode::IoError, "manifest references missing " + (m.data_root / name).string());
                }
            }
        }
        return m;
    }

} // namespace tiersplat::pipeline
