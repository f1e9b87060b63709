#pragma once

#include "tiersplat/anchor/anchor.hpp"
#include "tiersplat/multiscale/levels.hpp"
#include "tiersplat/nn/mlp.hpp"
#include "tiersplat/render/rasterizer.hpp"

#include <random>
#include <span>
#include <vector>

namespace tiersplat::anchor {

    /// The four attribute heads shared by all anchors. Each maps
    /// (feature, normalized view distance, view direction) to k values of its
    /// attribute.
    struct AttributeDecoders {
        nn::Mlp opacity;
        nn::Mlp color;
        nn::Mlp rotation;
        nn::Mlp scale;
        int feature_dim = kDefaultFeatureDim;
        int k = kDefaultGaussiansPerAnchor;

        AttributeDecoders() = default;
        AttributeDecoders(int feature_dim, int k, int hidden = 64);

        int input_dim() const { return feature_dim + 4; }
        /// Random hidden layers; the scale head's bias starts at softplus^-1(0.25)
        /// so fresh Gaussians are a quarter of their anchor's scaling factor.
        void init_random(std::mt19937_64& rng);

        friend bool operator==(const AttributeDecoders&, const AttributeDecoders&) = default;
    };

    struct DecodedGaussian {
        double alpha = 0.0;
        Vec3 color = Vec3::Zero();
        Quaternion q;
        Vec3 s = Vec3::Ones();
    };

    struct DecodeContext {
        /// Divides the anchor-to-camera distance so inputs stay O(1).
        double scene_extent = 1.0;
        /// When set, scales are clamped into this level's range.
        const multiscale::ScaleLevel* level = nullptr;
    };

    struct DecodeTape {
        nn::VecX input;
        nn::Mlp::Tape opacity, color, rotation, scale;
        nn::VecX raw_opacity, raw_color, raw_rotation, raw_scale;
        std::vector<char> scale_free; // 1 where the clamp was inactive
    };

    std::vector<DecodedGaussian> decode_attributes(const Anchor& a, const CameraView& cam,
                                                   const AttributeDecoders& dec, const DecodeContext& ctx = {},
                                                   DecodeTape* tape = nullptr);

    /// Builds renderable Gaussians (positions from offsets) for one anchor.
    std::vector<Gaussian> materialize(const Anchor& a, std::span<const DecodedGaussian> decoded,
                                      GaussianId first_id, double mask_logit);

    struct DecoderGrads {
        std::vector<double> opacity, color, rotation, scale;
        void reset(const AttributeDecoders& dec);
    };

    struct AnchorGrads {
        Eigen::VectorXd feature;
        Offsets offsets;
        Vec3 scaling = Vec3::Zero();
        void reset(const Anchor& a);
    };

    /// Reverse pass of decode_attributes + materialize for one anchor, given
    /// per-Gaussian render gradients (k entries, in offset order).
    void decode_backward(const Anchor& a, const AttributeDecoders& dec, const DecodeTape& tape,
                         std::span<const render::GaussianGrad> grads, DecoderGrads& dec_grads,
                         AnchorGrads& anchor_grads);

} // namespace tiersplat::anchor
