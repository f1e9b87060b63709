#pragma once

#include <span>
#include <vector>

namespace tiersplat::optim {

    struct AdamConfig {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-15;
    };

    struct AdamState {
        std::vector<double> m;
        std::vector<double> v;
        long step = 0;

        void reset(std::size_t n) {
            m.assign(n, 0.0);
            v.assign(n, 0.0);
            step = 0;
        }
    };

    /// One bias-corrected Adam update. Throws NaNGradient (params untouched)
    /// when any gradient is non-finite. The state is (re)sized on first use.
    void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
                   const AdamConfig& cfg = {});

} // namespace tiersplat::optim
