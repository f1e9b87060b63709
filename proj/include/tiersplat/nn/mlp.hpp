#pragma once

#include <Eigen/Core>

#include <random>
#include <span>
#include <vector>

namespace tiersplat::nn {

    using VecX = Eigen::VectorXd;

    /// Fully connected network with ReLU between layers and a linear output.
    /// All weights live in one flat buffer so optimizers can treat it as a
    /// single parameter group.
    class Mlp {
    public:
        Mlp() = default;
        explicit Mlp(std::vector<int> layer_sizes);

        struct Tape {
            // Input of every layer (post-activation of the previous one).
            std::vector<VecX> inputs;
            // Pre-activation of every hidden layer, used for the ReLU mask.
            std::vector<VecX> pre;
        };

        void init_random(std::mt19937_64& rng);
        void zero_output_layer();
        /// Sets the output bias (weights untouched).
        void set_output_bias(const VecX& bias);

        int in_dim() const { return sizes_.front(); }
        int out_dim() const { return sizes_.back(); }
        int layer_count() const { return static_cast<int>(sizes_.size()) - 1; }
        const std::vector<int>& sizes() const { return sizes_; }

        std::span<double> params() { return params_; }
        std::span<const double> params() const { return params_; }
        std::size_t param_count() const { return params_.size(); }

        VecX forward(const VecX& x, Tape* tape = nullptr) const;

        /// Accumulates dL/dparams into `grad` (same layout as params()) and
        /// returns dL/dx.
        VecX backward(const Tape& tape, const VecX& dL_dy, std::span<double> grad) const;

        friend bool operator==(const Mlp&, const Mlp&) = default;

    private:
        std::size_t weight_offset(int layer) const { return offsets_[layer]; }
        std::size_t bias_offset(int layer) const {
            return offsets_[layer] + static_cast<std::size_t>(sizes_[layer]) * sizes_[layer + 1];
        }

        std::vector<int> sizes_;
        std::vector<std::size_t> offsets_;
        std::vector<double> params_;
    };

} // namespace tiersplat::nn
