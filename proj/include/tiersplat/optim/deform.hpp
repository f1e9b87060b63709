#pragma once

#include "tiersplat/core/geometry.hpp"
#include "tiersplat/multiscale/levels.hpp"
#include "tiersplat/nn/mlp.hpp"
#include "tiersplat/optim/adam.hpp"
#include "tiersplat/optim/hash_encoding.hpp"
#include "tiersplat/render/rasterizer.hpp"

#include <random>

namespace tiersplat::optim {

    struct DeformConfig {
        HashEncodingConfig hash;
        int hidden = 64;
        /// Appearance head predicts logit-space deltas (zero weights keep the
        /// previous appearance). When false it predicts absolute logits.
        bool appearance_residual = true;
    };

    /// Geometry and appearance deformation networks for one scale level.
    struct DeformNets {
        HashEncoding encoding;
        nn::Mlp mlp_g; // hash features -> (dmu[3], dq[4])
        nn::Mlp mlp_a; // (color[3], alpha) -> (color[3], alpha)
        bool appearance_residual = true;

        AdamState adam_g, adam_a, adam_table;

        DeformNets() = default;
        DeformNets(const DeformConfig& cfg, const Vec3& box_min, const Vec3& box_max);

        void init_random(std::mt19937_64& rng);
        /// Zeroes both output heads: deformation becomes the identity.
        void reset_heads();
        void reset_optimizer();

        friend bool operator==(const DeformNets& a, const DeformNets& b) {
            return a.encoding == b.encoding && a.mlp_g == b.mlp_g && a.mlp_a == b.mlp_a &&
                   a.appearance_residual == b.appearance_residual;
        }
    };

    struct GeometryDeformation {
        Vec3 delta_mu = Vec3::Zero();
        Quaternion delta_q;
        Vec4 raw_q = Vec4::Zero(); // head output before the identity offset
    };

    struct AppearanceDeformation {
        Vec3 color = Vec3::Zero();
        double alpha = 0.0;
    };

    struct GeometryTape {
        HashEncoding::Lookup lookup;
        nn::Mlp::Tape mlp;
        nn::VecX raw;
    };

    struct AppearanceTape {
        nn::Mlp::Tape mlp;
        nn::VecX raw;
    };

    GeometryDeformation deform_geometry(const Vec3& mu_prev, const DeformNets& nets, GeometryTape* tape = nullptr);

    AppearanceDeformation deform_appearance(const Vec3& color_prev, double alpha_prev, const DeformNets& nets,
                                            AppearanceTape* tape = nullptr);

    struct ResidualUpdate {
        Vec3 d_mu = Vec3::Zero();
        Quaternion d_q;
        Vec3 d_s = Vec3::Zero();
        double d_alpha = 0.0;
        Vec3 d_color = Vec3::Zero();
    };

    ResidualUpdate make_update(const Gaussian& prev, const GeometryDeformation& geo, const AppearanceDeformation& app);

    /// theta_t = theta_{t-1} + delta for mu, s, alpha, color; q_t = norm(q) * norm(dq).
    /// Scales are re-clamped into `level` when given; the level tag is kept.
    Gaussian apply_residual_update(const Gaussian& prev, const ResidualUpdate& update,
                                   const multiscale::ScaleLevel* level = nullptr);

    struct DeformGrads {
        std::vector<double> mlp_g, mlp_a, table;
        void reset(const DeformNets& nets);
    };

    /// Backpropagates the render gradient of one deformed Gaussian into the nets.
    void deform_backward(const Gaussian& prev, const DeformNets& nets, const GeometryTape& gtape,
                         const AppearanceTape& atape, const render::GaussianGrad& grad, DeformGrads& out);

    struct DeformLearningRates {
        double mlp = 1e-3;
        double table = 1e-3;
    };

    void deform_step(DeformNets& nets, const DeformGrads& grads, const DeformLearningRates& lr);

} // namespace tiersplat::optim
