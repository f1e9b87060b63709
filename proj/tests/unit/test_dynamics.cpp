#include "doctest.h"

#include "tiersplat/dynamics/hybrid.hpp"
#include "tiersplat/dynamics/spawn.hpp"
#include "tiersplat/dynamics/state.hpp"
#include "tiersplat/render/rasterizer.hpp"

#include "../support/fd.hpp"

#include <algorithm>
#include <cmath>
#include <set>

using namespace tiersplat;
using namespace tiersplat::dynamics;
using tiersplat::testing::code_of;

namespace {

    std::vector<multiscale::ScaleLevel> three_levels() {
        std::vector<multiscale::ScaleLevel> lv(3);
        const double bounds[4] = {1.0, 0.5, 0.25, 0.0};
        for (int l = 1; l <= 3; ++l) {
            auto& s = lv[static_cast<std::size_t>(l - 1)];
            s.l = l;
            s.s_max = bounds[l - 1];
            s.s_min = bounds[l];
            s.res_factor = std::ldexp(1.0, -(3 - l));
            s.tau_add = multiscale::threshold_for_level(l, 0.01);
        }
        return lv;
    }

    // Small state: one anchor per voxel of a 2x1x1 block in front of the
    // test camera, k Gaussians per anchor spread over the three levels.
    FrameState toy_state(std::mt19937_64& rng, int per_anchor = 6) {
        FrameState s;
        s.voxel_size = 0.5;
        s.scene_min = Vec3(-0.5, -0.5, 2.0);
        s.scene_max = Vec3(0.5, 0.5, 3.0);
        std::vector<Vec3> pts{Vec3(-0.25, 0.0, 2.25), Vec3(0.25, 0.0, 2.25)};
        anchor::AnchorInit ai;
        ai.voxel_size = s.voxel_size;
        ai.feature_dim = 4;
        ai.k = 2;
        s.anchors = anchor::voxelize_points(pts, ai, rng);
        s.levels = multiscale::partition_scales({0.02, 0.2, 0.08}, std::vector<double>{0.02, 0.05, 0.1, 0.2}, 3);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (const auto& a : s.anchors) {
            for (int j = 0; j < per_anchor; ++j) {
                Gaussian g;
                g.mu = a.position + Vec3(u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5) * s.voxel_size;
                g.q = testing::random_unit_quaternion(rng);
                g.level = 1 + j % 3;
                const auto& lv = s.levels[static_cast<std::size_t>(g.level - 1)];
                g.s = Vec3::Constant(0.5 * (lv.s_min + lv.s_max));
                g.alpha = 0.3 + 0.5 * u(rng);
                g.color = Vec3(u(rng), u(rng), u(rng));
                g.mask_logit = 4.0 * u(rng) - 2.0;
                g.anchor_id = a.id;
                s.add_gaussian(g);
            }
        }
        optim::DeformConfig dc;
        dc.hash.num_grids = 2;
        dc.hash.log2_table_size = 6;
        dc.hidden = 8;
        for (int l = 0; l < 3; ++l) {
            optim::DeformNets n(dc, s.scene_min, s.scene_max);
            n.init_random(rng);
            s.nets.push_back(n);
        }
        return s;
    }

    // Independent depth-first octree: returns the boxes that spawn.
    void oracle_octree(const Vec3& lo, const Vec3& hi, int depth, const std::vector<std::pair<Vec3, double>>& pts,
                       const Vec3& root_hi, double tau, double min_edge, int max_depth,
                       std::vector<std::pair<Vec3, Vec3>>& spawning) {
        double sum = 0.0;
        int n = 0;
        for (const auto& [p, g] : pts) {
            bool in = true;
            for (int d = 0; d < 3; ++d) {
                const bool upper_ok = p[d] < hi[d] || (p[d] == hi[d] && hi[d] == root_hi[d]);
                in = in && p[d] >= lo[d] && upper_ok;
            }
            if (in) {
                sum += g;
                ++n;
            }
        }
        const double mean = n > 0 ? sum / n : 0.0;
        if (!(mean > tau)) return;
        spawning.emplace_back(lo, hi);
        const double child = 0.5 * (hi - lo).maxCoeff();
        if (child < min_edge || (max_depth >= 0 && depth >= max_depth)) return;
        const Vec3 mid = 0.5 * (lo + hi);
        for (int c = 0; c < 8; ++c) {
            Vec3 clo, chi;
            for (int d = 0; d < 3; ++d) {
                const bool upper = (c >> d) & 1;
                clo[d] = upper ? mid[d] : lo[d];
                chi[d] = upper ? hi[d] : mid[d];
            }
            oracle_octree(clo, chi, depth + 1, pts, root_hi, tau, min_edge, max_depth, spawning);
        }
    }

    bool box_less(const std::pair<Vec3, Vec3>& a, const std::pair<Vec3, Vec3>& b) {
        for (int d = 0; d < 3; ++d) {
            if (a.first[d] != b.first[d]) return a.first[d] < b.first[d];
        }
        for (int d = 0; d < 3; ++d) {
            if (a.second[d] != b.second[d]) return a.second[d] < b.second[d];
        }
        return false;
    }

} // namespace

TEST_CASE("decide follows the level thresholds") {
    const auto lv = three_levels();
    auto r = decide(7, 1, 0.02, lv);
    CHECK(r.fired);
    CHECK(r.action == TriggerAction::SpawnAndActivateNext);
    CHECK(r.anchor == 7);
    r = decide(7, 1, 0.005, lv);
    CHECK_FALSE(r.fired);
    CHECK(r.action == TriggerAction::Stop);
    // Strictly greater than the threshold.
    CHECK_FALSE(decide(1, 2, 0.0025, lv).fired);
    CHECK(decide(1, 2, 0.0026, lv).action == TriggerAction::SpawnAndActivateNext);
    // The finest level spawns without activating anything further.
    r = decide(1, 3, 0.001, lv);
    CHECK(r.fired);
    CHECK(r.action == TriggerAction::SpawnHere);
    CHECK(code_of([&] { decide(1, 4, 1.0, lv); }) == ErrorCode::BadLevelCount);
    CHECK(code_of([&] { decide(1, 0, 1.0, lv); }) == ErrorCode::BadLevelCount);
}

TEST_CASE("gradient tracker keeps a sliding window") {
    GradientTracker t(20);
    for (int i = 1; i <= 25; ++i) t.record(3, static_cast<double>(i));
    // Mean of 6..25.
    CHECK(t.mean(3) == doctest::Approx(15.5).epsilon(1e-15));
    CHECK(t.mean(99) == 0.0);
    CHECK_FALSE(t.has(99));

    anchor::Anchor a;
    a.ids_at(1) = {3, 4};
    t.record(4, 0.5);
    CHECK(anchor_gradient(a, 1, t) == doctest::Approx(0.5 * (15.5 + 0.5)));
    CHECK(code_of([&] { anchor_gradient(a, 2, t); }) == ErrorCode::EmptyAnchorLevel);
}

TEST_CASE("octree spawning matches a depth-first oracle") {
    const auto lv = three_levels();
    for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        anchor::Anchor a;
        a.id = 0;
        a.position = Vec3(0.125, -0.125, 0.375);
        const double voxel = 0.25;
        const int level = 1 + seed % 3;
        std::vector<Gaussian> gs;
        GradientTracker tracker;
        for (int i = 0; i < 12; ++i) {
            Gaussian g;
            g.id = static_cast<GaussianId>(i);
            // Some positions fall outside the voxel and must be clamped in.
            g.mu = a.position + Vec3(u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5) * voxel * 1.2;
            g.level = level;
            g.color = Vec3(u(rng), u(rng), u(rng));
            gs.push_back(g);
            const double grad = u(rng) < 0.3 ? 0.05 * u(rng) : 1e-4 * u(rng);
            for (int k = 0; k < 3; ++k) tracker.record(g.id, grad);
        }
        SpawnConfig cfg;
        cfg.min_edge = 0.003;
        cfg.max_depth = seed % 4 == 0 ? 2 : -1;
        const auto& L = lv[static_cast<std::size_t>(level - 1)];
        const auto res = octree_spawn(a, L, gs, tracker, gs, voxel, cfg, rng);

        const Vec3 lo = a.position - Vec3::Constant(0.5 * voxel);
        const Vec3 hi = a.position + Vec3::Constant(0.5 * voxel);
        std::vector<std::pair<Vec3, double>> pts;
        for (const auto& g : gs) pts.emplace_back(g.mu.cwiseMax(lo).cwiseMin(hi), tracker.mean(g.id));
        std::vector<std::pair<Vec3, Vec3>> expected;
        oracle_octree(lo, hi, 0, pts, hi, L.tau_add, cfg.min_edge, cfg.max_depth, expected);

        std::vector<std::pair<Vec3, Vec3>> got;
        for (const auto& n : res.nodes) {
            if (n.spawned > 0) got.emplace_back(n.box_min, n.box_max);
            CHECK(n.edge() >= cfg.min_edge);
        }
        std::sort(expected.begin(), expected.end(), box_less);
        std::sort(got.begin(), got.end(), box_less);
        REQUIRE(got.size() == expected.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].first == expected[i].first);
            CHECK(got[i].second == expected[i].second);
        }
        CHECK(res.gaussians.size() == expected.size() * static_cast<std::size_t>(cfg.n_spawn));
        for (const auto& g : res.gaussians) {
            CHECK(g.level == level);
            CHECK(g.alpha == cfg.initial_opacity);
            CHECK(g.mask_logit == cfg.initial_mask_logit);
            CHECK(g.q == Quaternion::identity());
            CHECK(g.s.maxCoeff() <= L.s_max);
            CHECK(g.s.minCoeff() >= L.s_min);
            CHECK((g.mu.array() >= lo.array()).all());
            CHECK((g.mu.array() <= hi.array()).all());
        }
    }
}

TEST_CASE("octree stops at one-thousandth of the domain edge") {
    const auto lv = three_levels();
    anchor::Anchor a;
    a.position = Vec3::Constant(0.5);
    std::vector<Gaussian> gs(1);
    gs[0].id = 1;
    gs[0].mu = Vec3(0.37, 0.61, 0.52);
    GradientTracker tracker;
    tracker.record(1, 10.0);
    const double scene_edge = 4.0;
    SpawnConfig cfg;
    cfg.min_edge = scene_edge / 1000.0;
    std::mt19937_64 rng(3);
    const auto res = octree_spawn(a, lv[0], gs, tracker, gs, 1.0, cfg, rng);
    double smallest = 1e9;
    int spawning = 0;
    for (const auto& n : res.nodes) {
        smallest = std::min(smallest, n.edge());
        spawning += n.spawned > 0;
    }
    CHECK(smallest >= cfg.min_edge);
    // A single chain of firing nodes with edges 1, 1/2, 1/4, ... down to min_edge.
    int expected = 0;
    for (double e = 1.0; e >= cfg.min_edge; e *= 0.5) ++expected;
    CHECK(spawning == expected);
    CHECK(0.5 * smallest < cfg.min_edge);
}

TEST_CASE("empty anchor nodes never spawn") {
    const auto lv = three_levels();
    anchor::Anchor a;
    GradientTracker tracker;
    std::mt19937_64 rng(0);
    SpawnConfig cfg;
    const auto res = octree_spawn(a, lv[0], {}, tracker, {}, 1.0, cfg, rng);
    CHECK(res.gaussians.empty());
    CHECK(res.nodes.size() == 1);
}

TEST_CASE("prune removes exactly the faded masks") {
    std::mt19937_64 rng(5);
    auto s = toy_state(rng, 30);
    std::uniform_real_distribution<double> u(-8.0, 4.0);
    for (auto& g : s.gaussians) g.mask_logit = u(rng);
    std::vector<GaussianId> expected;
    for (const auto& g : s.gaussians) {
        if (1.0 / (1.0 + std::exp(-g.mask_logit)) < 0.01) expected.push_back(g.id);
    }
    const std::size_t before = s.gaussians.size();
    const auto removed = prune(s, 0.01);
    CHECK(removed == expected);
    CHECK(s.gaussians.size() == before - expected.size());
    CHECK_FALSE(ownership_violation(s).has_value());
    for (const auto& g : s.gaussians) CHECK(render::sigmoid(g.mask_logit) >= 0.01);
}

TEST_CASE("ownership is consistent after adding Gaussians") {
    std::mt19937_64 rng(6);
    auto s = toy_state(rng);
    CHECK_FALSE(ownership_violation(s).has_value());
    const auto n = s.gaussians.size();
    Gaussian g;
    g.anchor_id = 1;
    g.level = 2;
    const GaussianId id = s.add_gaussian(g);
    CHECK(s.gaussians.size() == n + 1);
    CHECK(s.index_of(id).has_value());
    CHECK_FALSE(ownership_violation(s).has_value());
    s.anchors[1].ids_at(2).pop_back();
    CHECK(ownership_violation(s).has_value());
    g.anchor_id = 99;
    CHECK(code_of([&] { s.add_gaussian(g); }) == ErrorCode::ShapeError);
}

TEST_CASE("zero deformation heads reproduce the previous frame") {
    for (int seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
        const auto s = toy_state(rng);
        const auto cam = testing::test_camera();
        const auto before = render::render_fused(s.gaussians, s.levels, cam);
        for (int l = 1; l <= 3; ++l) {
            std::vector<std::size_t> all(s.gaussians.size());
            for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
            const auto scene = deformed_scene(s, l, all);
            const auto after = render::render_fused(scene, s.levels, cam);
            double worst = 0.0;
            for (std::size_t i = 0; i < after.color.data.size(); ++i) {
                worst = std::max(worst, std::abs(after.color.data[i] - before.color.data[i]));
            }
            CHECK(worst < 1e-6);
        }
    }
}

TEST_CASE("frame step without dynamic anchors leaves the state alone") {
    std::mt19937_64 rng(8);
    auto s = toy_state(rng);
    const auto cam = testing::test_camera();
    const auto img = render::render_fused(s.gaussians, s.levels, cam).color;
    std::vector<TrainingView> views{{cam, multiscale::downsample_pyramid(img, s.levels)}};
    HybridConfig cfg;
    cfg.deform_iters = 3;
    cfg.mask_iters = 3;
    const auto before = s.gaussians;
    const auto rep = hybrid_frame_step(s, {}, views, views, cfg, rng);
    CHECK(rep.triggers.empty());
    CHECK(rep.spawned == 0);
    CHECK(s.gaussians.size() == before.size());
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(s.gaussians[i].mask_logit == before[i].mask_logit);
}

TEST_CASE("mask phase trains only the scoped anchors") {
    std::mt19937_64 rng(9);
    auto s = toy_state(rng);
    const auto cam = testing::test_camera();
    Image target(cam.width, cam.height, 3, 0.5);
    std::vector<TrainingView> views{{cam, multiscale::downsample_pyramid(target, s.levels)}};
    HybridConfig cfg;
    cfg.mask_iters = 2;
    const auto before = s.gaussians;
    const std::set<AnchorId> scope{0};
    optimize_masks(s, views, s.next_id, cfg, &scope);
    int changed = 0;
    for (std::size_t i = 0; i < before.size(); ++i) {
        if (before[i].anchor_id == 0) {
            changed += s.gaussians[i].mask_logit != before[i].mask_logit;
        } else {
            CHECK(s.gaussians[i].mask_logit == before[i].mask_logit);
        }
    }
    CHECK(changed > 0);
}

TEST_CASE("dynamic anchors escalate and spawn") {
    std::mt19937_64 rng(10);
    auto s = toy_state(rng);
    const auto cam = testing::test_camera();
    // A target the current model cannot match drives large gradients.
    Image target(cam.width, cam.height, 3, 1.0);
    std::vector<TrainingView> views{{cam, multiscale::downsample_pyramid(target, s.levels)}};
    HybridConfig cfg;
    cfg.deform_iters = 2;
    cfg.mask_iters = 1;
    cfg.min_edge_fraction = 0.05;
    const auto rep = hybrid_frame_step(s, {0, 1}, views, views, cfg, rng);
    CHECK(rep.spawned > 0);
    CHECK(rep.iterations_per_level[0] == 2);
    bool activated = false;
    for (const auto& t : rep.triggers) activated = activated || t.action == TriggerAction::SpawnAndActivateNext;
    CHECK(activated);
    CHECK_FALSE(ownership_violation(s).has_value());
    for (const auto& sp : rep.spawns) CHECK(sp.min_node_edge >= cfg.min_edge_fraction * s.scene_edge());
}
