#pragma once

#include "tiersplat/core/error.hpp"
#include "tiersplat/core/geometry.hpp"
#include "tiersplat/core/image.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <vector>

namespace tiersplat::testing {

    /// Code of the Error thrown by f; std::nullopt when nothing is thrown.
    inline std::optional<ErrorCode> code_of(const std::function<void()>& f) {
        try {
            f();
        } catch (const Error& e) {
            return e.code();
        }
        return std::nullopt;
    }

    /// Central difference (f(x+h) - f(x-h)) / 2h of a scalar function of one
    /// parameter, restoring the parameter afterwards.
    inline double central_difference(double& param, double h, const std::function<double()>& f) {
        const double saved = param;
        param = saved + h;
        const double fp = f();
        param = saved - h;
        const double fm = f();
        param = saved;
        return (fp - fm) / (2.0 * h);
    }

    /// Relative error with an absolute floor for near-zero gradients.
    inline bool grad_close(double analytic, double numeric, double rel_tol, double abs_tol) {
        const double diff = std::abs(analytic - numeric);
        if (diff < abs_tol) return true;
        return diff / std::max(std::abs(analytic), std::abs(numeric)) < rel_tol;
    }

    /// Fixed random weights so that dot(image, weights) is a generic scalar loss.
    inline Image random_weights(int w, int h, std::mt19937_64& rng) {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        Image img(w, h);
        for (double& v : img.data) v = u(rng);
        return img;
    }

    inline double dot(const Image& a, const Image& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
        return s;
    }

    inline Quaternion random_unit_quaternion(std::mt19937_64& rng) {
        std::normal_distribution<double> n(0.0, 1.0);
        return Quaternion{n(rng), n(rng), n(rng), n(rng)}.normalized();
    }

    /// Small random scene in front of a camera at the origin looking down +z.
    inline std::vector<Gaussian> random_scene(int count, std::mt19937_64& rng, bool random_masks = true) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::vector<Gaussian> out;
        for (int i = 0; i < count; ++i) {
            Gaussian g;
            g.id = static_cast<GaussianId>(i);
            g.mu = Vec3(u(rng) - 0.5, u(rng) - 0.5, 2.0 + u(rng));
            g.q = random_unit_quaternion(rng);
            g.s = Vec3(0.08 + 0.15 * u(rng), 0.08 + 0.15 * u(rng), 0.08 + 0.15 * u(rng));
            g.alpha = 0.2 + 0.7 * u(rng);
            g.color = Vec3(u(rng), u(rng), u(rng));
            g.mask_logit = random_masks ? 4.0 * u(rng) - 2.0 : 0.0;
            out.push_back(g);
        }
        return out;
    }

    inline CameraView test_camera(int w = 32, int h = 32) {
        CameraView cam;
        cam.id = "test";
        cam.width = w;
        cam.height = h;
        cam.fx = cam.fy = 1.2 * w;
        cam.cx = 0.5 * (w - 1);
        cam.cy = 0.5 * (h - 1);
        return cam;
    }

} // namespace tiersplat::testing
