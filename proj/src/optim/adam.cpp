#include "tiersplat/optim/adam.hpp"
#include "tiersplat/core/error.hpp"

#include <cmath>
#include <string>

namespace tiersplat::optim {

    void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
                   const AdamConfig& cfg) {
        if (params.size() != grads.size()) {
            throw Error(ErrorCode::ShapeError, "parameter and gradient sizes differ");
        }
        for (std::size_t i = 0; i < grads.size(); ++i) {
            if (!std::isfinite(grads[i])) {
                throw Error(ErrorCode::NaNGradient, "non-finite gradient at index " + std::to_string(i));
            }
        }
        if (state.m.size() != params.size()) {
            state.reset(params.size());
        }
        ++state.step;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = grads[i];
            state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
            state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
            const double m_hat = state.m[i] / bc1;
            const double v_hat = state.v[i] / bc2;
            params[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        }
    }

} // namespace tiersplat::optim
