#include "tiersplat/anchor/decoders.hpp"
#include "tiersplat/core/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tiersplat::anchor {

    namespace {

        double softplus(double x) {
            return x > 30.0 ? x : std::log1p(std::exp(x));
        }

        using render::sigmoid;

        // softplus(b) = 0.25
        const double kScaleBiasInit = std::log(std::exp(0.25) - 1.0);

    } // namespace

    AttributeDecoders::AttributeDecoders(int feature_dim_, int k_, int hidden)
        : opacity({feature_dim_ + 4, hidden, k_}),
          color({feature_dim_ + 4, hidden, 3 * k_}),
          rotation({feature_dim_ + 4, hidden, 4 * k_}),
          scale({feature_dim_ + 4, hidden, 3 * k_}),
          feature_dim(feature_dim_),
          k(k_) {}

    void AttributeDecoders::init_random(std::mt19937_64& rng) {
        opacity.init_random(rng);
        color.init_random(rng);
        rotation.init_random(rng);
        scale.init_random(rng);
        scale.set_output_bias(nn::VecX::Constant(3 * k, kScaleBiasInit));
    }

    std::vector<DecodedGaussian> decode_attributes(const Anchor& a, const CameraView& cam,
                                                   const AttributeDecoders& dec, const DecodeContext& ctx,
                                                   DecodeTape* tape) {
        if (a.feature.size() != dec.feature_dim || a.k() != dec.k) {
            throw Error(ErrorCode::ShapeError, "anchor does not match decoder dimensions");
        }
        const Vec3 to_cam = cam.center() - a.position;
        const double dist = to_cam.norm();
        const Vec3 dir = dist > 0.0 ? Vec3(to_cam / dist) : Vec3(0.0, 0.0, 1.0);

        nn::VecX input(dec.input_dim());
        input.head(dec.feature_dim) = a.feature;
        input[dec.feature_dim] = dist / ctx.scene_extent;
        input.tail(3) = dir;

        DecodeTape local;
        DecodeTape& t = tape ? *tape : local;
        t.input = input;
        t.raw_opacity = dec.opacity.forward(input, &t.opacity);
        t.raw_color = dec.color.forward(input, &t.color);
        t.raw_rotation = dec.rotation.forward(input, &t.rotation);
        t.raw_scale = dec.scale.forward(input, &t.scale);
        t.scale_free.assign(static_cast<std::size_t>(3 * dec.k), 1);

        std::vector<DecodedGaussian> out(static_cast<std::size_t>(dec.k));
        for (int j = 0; j < dec.k; ++j) {
            DecodedGaussian& d = out[static_cast<std::size_t>(j)];
            d.alpha = sigmoid(t.raw_opacity[j]);
            for (int c = 0; c < 3; ++c) d.color[c] = sigmoid(t.raw_color[3 * j + c]);
            const Quaternion raw_q{t.raw_rotation[4 * j] + 1.0, t.raw_rotation[4 * j + 1], t.raw_rotation[4 * j + 2],
                                   t.raw_rotation[4 * j + 3]};
            d.q = raw_q.normalized();
            for (int c = 0; c < 3; ++c) {
                double s = a.scaling[c] * softplus(t.raw_scale[3 * j + c]);
                double lo = kEpsScale * 10.0;
                double hi = std::numeric_limits<double>::infinity();
                if (ctx.level) {
                    lo = ctx.level->s_min;
                    hi = ctx.level->s_max;
                }
                if (s < lo || s > hi) {
                    s = std::clamp(s, lo, hi);
                    t.scale_free[static_cast<std::size_t>(3 * j + c)] = 0;
                }
                d.s[c] = s;
            }
        }
        return out;
    }

    std::vector<Gaussian> materialize(const Anchor& a, std::span<const DecodedGaussian> decoded, GaussianId first_id,
                                      double mask_logit) {
        const auto positions = gaussian_positions(a);
        std::vector<Gaussian> out;
        out.reserve(decoded.size());
        for (std::size_t j = 0; j < decoded.size(); ++j) {
            Gaussian g;
            g.id = first_id + j;
            g.mu = positions[j];
            g.q = decoded[j].q;
            g.s = decoded[j].s;
            g.alpha = decoded[j].alpha;
            g.color = decoded[j].color;
            g.level = 1;
            g.mask_logit = mask_logit;
            g.anchor_id = a.id;
            out.push_back(g);
        }
        return out;
    }

    void DecoderGrads::reset(const AttributeDecoders& dec) {
        opacity.assign(dec.opacity.param_count(), 0.0);
        color.assign(dec.color.param_count(), 0.0);
        rotation.assign(dec.rotation.param_count(), 0.0);
        scale.assign(dec.scale.param_count(), 0.0);
    }

    void AnchorGrads::reset(const Anchor& a) {
        feature = Eigen::VectorXd::Zero(a.feature.size());
        offsets = Offsets::Zero(a.k(), 3);
        scaling = Vec3::Zero();
    }

    void decode_backward(const Anchor& a, const AttributeDecoders& dec, const DecodeTape& tape,
                         std::span<const render::GaussianGrad> grads, DecoderGrads& dec_grads,
                         AnchorGrads& anchor_grads) {
        if (grads.size() != static_cast<std::size_t>(dec.k)) {
            throw Error(ErrorCode::ShapeError, "expected one gradient per decoded Gaussian");
        }
        if (tape.input.size() != dec.input_dim()) {
            throw Error(ErrorCode::NoTape, "decode tape is empty");
        }
        const int k = dec.k;
        nn::VecX d_opacity(k), d_color(3 * k), d_rotation(4 * k), d_scale(3 * k);
        for (int j = 0; j < k; ++j) {
            const auto& g = grads[static_cast<std::size_t>(j)];
            const double alpha = sigmoid(tape.raw_opacity[j]);
            d_opacity[j] = g.alpha * alpha * (1.0 - alpha);
            for (int c = 0; c < 3; ++c) {
                const double col = sigmoid(tape.raw_color[3 * j + c]);
                d_color[3 * j + c] = g.color[c] * col * (1.0 - col);
            }
            const Vec4 raw(tape.raw_rotation[4 * j] + 1.0, tape.raw_rotation[4 * j + 1], tape.raw_rotation[4 * j + 2],
                           tape.raw_rotation[4 * j + 3]);
            const double n = raw.norm();
            const Vec4 qh = raw / n;
            const Vec4 dq = (g.q - qh * qh.dot(g.q)) / n;
            d_rotation.segment<4>(4 * j) = dq;
            for (int c = 0; c < 3; ++c) {
                const double r = tape.raw_scale[3 * j + c];
                if (tape.scale_free[static_cast<std::size_t>(3 * j + c)]) {
                    d_scale[3 * j + c] = g.s[c] * a.scaling[c] * sigmoid(r);
                    anchor_grads.scaling[c] += g.s[c] * softplus(r);
                } else {
                    d_scale[3 * j + c] = 0.0;
                }
            }
            const Vec3 o = a.offsets.row(j).transpose();
            anchor_grads.offsets.row(j) += g.mu.cwiseProduct(a.scaling).transpose();
            anchor_grads.scaling += g.mu.cwiseProduct(o);
        }
        nn::VecX d_input = dec.opacity.backward(tape.opacity, d_opacity, dec_grads.opacity);
        d_input += dec.color.backward(tape.color, d_color, dec_grads.color);
        d_input += dec.rotation.backward(tape.rotation, d_rotation, dec_grads.rotation);
        d_input += dec.scale.backward(tape.scale, d_scale, dec_grads.scale);
        anchor_grads.feature += d_input.head(dec.feature_dim);
    }

} // namespace tiersplat::anchor
