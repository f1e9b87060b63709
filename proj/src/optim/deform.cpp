#include "tiersplat/optim/deform.hpp"
#include "tiersplat/core/error.hpp"

#include <algorithm>
#include <cmath>

namespace tiersplat::optim {

    namespace {

        using render::sigmoid;

        constexpr double kLogitEps = 1e-9;

        double logit(double p) {
            p = std::clamp(p, kLogitEps, 1.0 - kLogitEps);
            return std::log(p / (1.0 - p));
        }

        // Matrix of the map b -> a * b (Hamilton product), columns ordered (w, x, y, z).
        Eigen::Matrix4d left_product(const Quaternion& a) {
            Eigen::Matrix4d m;
            m << a.w, -a.x, -a.y, -a.z,
                a.x, a.w, -a.z, a.y,
                a.y, a.z, a.w, -a.x,
                a.z, -a.y, a.x, a.w;
            return m;
        }

    } // namespace

    DeformNets::DeformNets(const DeformConfig& cfg, const Vec3& box_min, const Vec3& box_max)
        : encoding(cfg.hash, box_min, box_max),
          mlp_g({cfg.hash.num_grids * cfg.hash.features_per_grid, cfg.hidden, 7}),
          mlp_a({4, cfg.hidden, 4}),
          appearance_residual(cfg.appearance_residual) {}

    void DeformNets::init_random(std::mt19937_64& rng) {
        encoding.init_random(rng);
        mlp_g.init_random(rng);
        mlp_a.init_random(rng);
        reset_heads();
    }

    void DeformNets::reset_heads() {
        mlp_g.zero_output_layer();
        mlp_a.zero_output_layer();
        reset_optimizer();
    }

    void DeformNets::reset_optimizer() {
        adam_g = {};
        adam_a = {};
        adam_table = {};
    }

    GeometryDeformation deform_geometry(const Vec3& mu_prev, const DeformNets& nets, GeometryTape* tape) {
        const nn::VecX feat = nets.encoding.encode(mu_prev, tape ? &tape->lookup : nullptr);
        const nn::VecX raw = nets.mlp_g.forward(feat, tape ? &tape->mlp : nullptr);
        if (tape) tape->raw = raw;
        GeometryDeformation out;
        out.delta_mu = raw.head<3>();
        out.raw_q = raw.segment<4>(3);
        out.delta_q = Quaternion{out.raw_q[0] + 1.0, out.raw_q[1], out.raw_q[2], out.raw_q[3]}.normalized();
        return out;
    }

    AppearanceDeformation deform_appearance(const Vec3& color_prev, double alpha_prev, const DeformNets& nets,
                                            AppearanceTape* tape) {
        nn::VecX input(4);
        input << color_prev, alpha_prev;
        AppearanceTape local;
        AppearanceTape& t = tape ? *tape : local;
        t.raw = nets.mlp_a.forward(input, &t.mlp);
        AppearanceDeformation out;
        for (int c = 0; c < 3; ++c) {
            const double base = nets.appearance_residual ? logit(color_prev[c]) : 0.0;
            out.color[c] = sigmoid(base + t.raw[c]);
        }
        const double base = nets.appearance_residual ? logit(alpha_prev) : 0.0;
        out.alpha = sigmoid(base + t.raw[3]);
        if (nets.appearance_residual && t.raw.isZero(0.0)) {
            // Exact identity when the head is silent.
            out.color = color_prev;
            out.alpha = alpha_prev;
        }
        return out;
    }

    ResidualUpdate make_update(const Gaussian& prev, const GeometryDeformation& geo, const AppearanceDeformation& app) {
        ResidualUpdate u;
        u.d_mu = geo.delta_mu;
        u.d_q = geo.delta_q;
        u.d_alpha = app.alpha - prev.alpha;
        u.d_color = app.color - prev.color;
        return u;
    }

    Gaussian apply_residual_update(const Gaussian& prev, const ResidualUpdate& update,
                                   const multiscale::ScaleLevel* level) {
        Gaussian g = prev;
        g.mu = prev.mu + update.d_mu;
        g.q = prev.q.normalized() * update.d_q.normalized();
        g.s = (prev.s + update.d_s).cwiseMax(kEpsScale * 10.0);
        if (level) {
            g.s = multiscale::clamp_scale(g.s, *level);
        }
        g.alpha = std::clamp(prev.alpha + update.d_alpha, 0.0, 1.0);
        g.color = (prev.color + update.d_color).cwiseMax(0.0).cwiseMin(1.0);
        return g;
    }

    void DeformGrads::reset(const DeformNets& nets) {
        mlp_g.assign(nets.mlp_g.param_count(), 0.0);
        mlp_a.assign(nets.mlp_a.param_count(), 0.0);
        table.assign(nets.encoding.params().size(), 0.0);
    }

    void deform_backward(const Gaussian& prev, const DeformNets& nets, const GeometryTape& gtape,
                         const AppearanceTape& atape, const render::GaussianGrad& grad, DeformGrads& out) {
        // Geometry: mu_t = mu_prev + raw[0:3]; q_t = qhat_prev * normalize(raw[3:7] + e).
        nn::VecX d_raw_g(7);
        d_raw_g.head<3>() = grad.mu;
        if (gtape.raw.size() != 7 || atape.raw.size() != 4) {
            throw Error(ErrorCode::NoTape, "deformation tapes are empty");
        }
        const Quaternion q_prev = prev.q.normalized();
        const nn::VecX& raw = gtape.raw;
        const Vec4 shifted(raw[3] + 1.0, raw[4], raw[5], raw[6]);
        const double n = shifted.norm();
        const Vec4 unit = shifted / n;
        const Vec4 d_unit = left_product(q_prev).transpose() * grad.q;
        d_raw_g.segment<4>(3) = (d_unit - unit * unit.dot(d_unit)) / n;
        const nn::VecX d_feat = nets.mlp_g.backward(gtape.mlp, d_raw_g, out.mlp_g);
        nets.encoding.backward(gtape.lookup, d_feat, out.table);

        // Appearance: value = sigmoid(base + raw).
        nn::VecX d_raw_a(4);
        for (int c = 0; c < 3; ++c) {
            const double base = nets.appearance_residual ? logit(prev.color[c]) : 0.0;
            const double v = sigmoid(base + atape.raw[c]);
            d_raw_a[c] = grad.color[c] * v * (1.0 - v);
        }
        const double base = nets.appearance_residual ? logit(prev.alpha) : 0.0;
        const double v = sigmoid(base + atape.raw[3]);
        d_raw_a[3] = grad.alpha * v * (1.0 - v);
        nets.mlp_a.backward(atape.mlp, d_raw_a, out.mlp_a);
    }

    void deform_step(DeformNets& nets, const DeformGrads& grads, const DeformLearningRates& lr) {
        adam_step(nets.mlp_g.params(), grads.mlp_g, nets.adam_g, lr.mlp);
        adam_step(nets.mlp_a.params(), grads.mlp_a, nets.adam_a, lr.mlp);
        adam_step(nets.encoding.params(), grads.table, nets.adam_table, lr.table);
    }

} // namespace tiersplat::optim
