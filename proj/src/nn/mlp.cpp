#include "tiersplat/nn/mlp.hpp"
#include "tiersplat/core/error.hpp"

#include <cmath>

namespace tiersplat::nn {

    namespace {
        using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    }

    Mlp::Mlp(std::vector<int> layer_sizes)
        : sizes_(std::move(layer_sizes)) {
        if (sizes_.size() < 2) {
            throw Error(ErrorCode::BadConfig, "an MLP needs at least an input and an output size");
        }
        std::size_t total = 0;
        for (int l = 0; l + 1 < static_cast<int>(sizes_.size()); ++l) {
            offsets_.push_back(total);
            total += static_cast<std::size_t>(sizes_[l]) * sizes_[l + 1] + sizes_[l + 1];
        }
        params_.assign(total, 0.0);
    }

    void Mlp::init_random(std::mt19937_64& rng) {
        for (int l = 0; l < layer_count(); ++l) {
            const double bound = std::sqrt(6.0 / sizes_[l]) * (l + 1 == layer_count() ? 0.5 : 1.0);
            std::uniform_real_distribution<double> dist(-bound, bound);
            const std::size_t n = static_cast<std::size_t>(sizes_[l]) * sizes_[l + 1];
            for (std::size_t i = 0; i < n; ++i) {
                params_[weight_offset(l) + i] = dist(rng);
            }
            for (int i = 0; i < sizes_[l + 1]; ++i) {
                params_[bias_offset(l) + i] = 0.0;
            }
        }
    }

    void Mlp::zero_output_layer() {
        const int l = layer_count() - 1;
        const std::size_t begin = weight_offset(l);
        const std::size_t end = bias_offset(l) + sizes_[l + 1];
        std::fill(params_.begin() + static_cast<std::ptrdiff_t>(begin),
                  params_.begin() + static_cast<std::ptrdiff_t>(end), 0.0);
    }

    void Mlp::set_output_bias(const VecX& bias) {
        const int l = layer_count() - 1;
        if (bias.size() != sizes_[l + 1]) {
            throw Error(ErrorCode::ShapeError, "output bias size mismatch");
        }
        for (int i = 0; i < bias.size(); ++i) {
            params_[bias_offset(l) + i] = bias[i];
        }
    }

    VecX Mlp::forward(const VecX& x, Tape* tape) const {
        if (x.size() != in_dim()) {
            throw Error(ErrorCode::ShapeError, "MLP input size mismatch");
        }
        if (tape) {
            tape->inputs.clear();
            tape->pre.clear();
        }
        VecX h = x;
        for (int l = 0; l < layer_count(); ++l) {
            const Eigen::Map<const RowMat> W(params_.data() + weight_offset(l), sizes_[l + 1], sizes_[l]);
            const Eigen::Map<const VecX> b(params_.data() + bias_offset(l), sizes_[l + 1]);
            if (tape) tape->inputs.push_back(h);
            VecX z = W * h + b;
            if (l + 1 < layer_count()) {
                if (tape) tape->pre.push_back(z);
                h = z.cwiseMax(0.0);
            } else {
                h = std::move(z);
            }
        }
        return h;
    }

    VecX Mlp::backward(const Tape& tape, const VecX& dL_dy, std::span<double> grad) const {
        if (tape.inputs.size() != static_cast<std::size_t>(layer_count())) {
            throw Error(ErrorCode::NoTape, "MLP backward without a matching forward tape");
        }
        if (grad.size() != params_.size()) {
            throw Error(ErrorCode::ShapeError, "MLP gradient buffer size mismatch");
        }
        VecX delta = dL_dy;
        for (int l = layer_count() - 1; l >= 0; --l) {
            const Eigen::Map<const RowMat> W(params_.data() + weight_offset(l), sizes_[l + 1], sizes_[l]);
            Eigen::Map<RowMat> gW(grad.data() + weight_offset(l), sizes_[l + 1], sizes_[l]);
            Eigen::Map<VecX> gb(grad.data() + bias_offset(l), sizes_[l + 1]);
            gW.noalias() += delta * tape.inputs[l].transpose();
            gb += delta;
            VecX dx = W.transpose() * delta;
            if (l > 0) {
                const VecX& pre = tape.pre[l - 1];
                for (int i = 0; i < dx.size(); ++i) {
                    if (pre[i] <= 0.0) dx[i] = 0.0;
                }
            }
            delta = std::move(dx);
        }
        return delta;
    }

} // namespace tiersplat::nn
