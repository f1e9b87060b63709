#include "tiersplat/core/geometry.hpp"
#include "tiersplat/core/error.hpp"

#include <Eigen/Geometry>

#include <cmath>

namespace tiersplat {

    Quaternion Quaternion::from_axis_angle(const Vec3& axis, double radians) {
        const Vec3 a = axis.normalized();
        const double h = 0.5 * radians;
        const double sh = std::sin(h);
        return {std::cos(h), a.x() * sh, a.y() * sh, a.z() * sh};
    }

    double Quaternion::norm() const {
        return std::sqrt(w * w + x * x + y * y + z * z);
    }

    bool Quaternion::is_unit(double tol) const {
        return std::abs(norm() - 1.0) <= tol;
    }

    Quaternion Quaternion::normalized() const {
        const double n = norm();
        if (!(n > 1e-12)) {
            throw Error(ErrorCode::ZeroQuaternion, "cannot normalize a zero quaternion");
        }
        return {w / n, x / n, y / n, z / n};
    }

    Mat3 Quaternion::to_rotation() const {
        if (!is_unit(1e-6)) {
            throw Error(ErrorCode::NotNormalized, "rotation requires a unit quaternion");
        }
        Mat3 R;
        R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
        return R;
    }

    Quaternion operator*(const Quaternion& a, const Quaternion& b) {
        return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
                a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
                a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
                a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
    }

    CameraView CameraView::scaled(double factor) const {
        CameraView out = *this;
        out.fx = fx * factor;
        out.fy = fy * factor;
        out.cx = (cx + 0.5) * factor - 0.5;
        out.cy = (cy + 0.5) * factor - 0.5;
        out.width = static_cast<int>(std::lround(width * factor));
        out.height = static_cast<int>(std::lround(height * factor));
        return out;
    }

    CameraView CameraView::look_at(std::string id, const Vec3& eye, const Vec3& target, const Vec3& up,
                                   int width, int height, double focal_px) {
        const Vec3 z = (target - eye).normalized();
        const Vec3 y = -(up - up.dot(z) * z).normalized();
        const Vec3 x = y.cross(z);
        CameraView cam;
        cam.id = std::move(id);
        cam.R_wc.row(0) = x.transpose();
        cam.R_wc.row(1) = y.transpose();
        cam.R_wc.row(2) = z.transpose();
        cam.t_wc = -cam.R_wc * eye;
        cam.width = width;
        cam.height = height;
        cam.fx = focal_px;
        cam.fy = focal_px;
        cam.cx = 0.5 * width - 0.5;
        cam.cy = 0.5 * height - 0.5;
        return cam;
    }

    bool CameraView::valid(double tol) const {
        const Mat3 should_be_identity = R_wc * R_wc.transpose();
        return (should_be_identity - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
               std::abs(R_wc.determinant() - 1.0) <= tol && width > 0 && height > 0 && fx > 0 && fy > 0;
    }

    Mat3 compose_covariance(const Quaternion& q, const Vec3& s) {
        const Mat3 R = q.to_rotation();
        const Vec3 s2 = s.cwiseProduct(s);
        return R * s2.asDiagonal() * R.transpose();
    }

    double evaluate_gaussian(const Vec3& x, const Gaussian& g) {
        if ((g.s.array() <= kEpsScale).any()) {
            throw Error(ErrorCode::DegenerateCovariance, "gaussian scale at or below eps_scale");
        }
        const Mat3 R = g.q.normalized().to_rotation();
        const Vec3 local = R.transpose() * (x - g.mu);
        const Vec3 whitened = local.cwiseQuotient(g.s);
        return std::exp(-0.5 * whitened.squaredNorm());
    }

    namespace {

        struct ProjectionTerms {
            Vec3 p;
            Mat3 R;
            Mat3 sigma_cam;
            Eigen::Matrix<double, 2, 3> J;
        };

        ProjectionTerms projection_terms(const Gaussian& g, const CameraView& cam) {
            ProjectionTerms t;
            t.p = cam.to_camera(g.mu);
            t.R = g.q.normalized().to_rotation();
            const Vec3 s2 = g.s.cwiseProduct(g.s);
            const Mat3 sigma = t.R * s2.asDiagonal() * t.R.transpose();
            t.sigma_cam = cam.R_wc * sigma * cam.R_wc.transpose();
            const double iz = 1.0 / t.p.z();
            t.J << cam.fx * iz, 0.0, -cam.fx * t.p.x() * iz * iz,
                0.0, cam.fy * iz, -cam.fy * t.p.y() * iz * iz;
            return t;
        }

    } // namespace

    std::optional<Projection> try_project_gaussian(const Gaussian& g, const CameraView& cam) {
        const Vec3 p = cam.to_camera(g.mu);
        if (!(p.z() > kZNear)) {
            return std::nullopt;
        }
        const ProjectionTerms t = projection_terms(g, cam);
        Projection out;
        out.mean2d = {cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy};
        out.cov2d = t.J * t.sigma_cam * t.J.transpose();
        out.depth = p.z();
        return out;
    }

    Projection project_gaussian(const Gaussian& g, const CameraView& cam) {
        auto proj = try_project_gaussian(g, cam);
        if (!proj) {
            throw Error(ErrorCode::BehindCamera, "gaussian center is behind the near plane");
        }
        return *proj;
    }

    Vec4 rotation_backward(const Quaternion& q_raw, const Mat3& G) {
        const double n = q_raw.norm();
        const Quaternion q = q_raw.normalized();
        const double w = q.w, x = q.x, y = q.y, z = q.z;
        Vec4 d;
        d[0] = 2 * (-z * G(0, 1) + y * G(0, 2) + z * G(1, 0) - x * G(1, 2) - y * G(2, 0) + x * G(2, 1));
        d[1] = 2 * (y * G(0, 1) + z * G(0, 2) + y * G(1, 0) - 2 * x * G(1, 1) - w * G(1, 2) + z * G(2, 0) +
                    w * G(2, 1) - 2 * x * G(2, 2));
        d[2] = 2 * (-2 * y * G(0, 0) + x * G(0, 1) + w * G(0, 2) + x * G(1, 0) + z * G(1, 2) - w * G(2, 0) +
                    z * G(2, 1) - 2 * y * G(2, 2));
        d[3] = 2 * (-2 * z * G(0, 0) - w * G(0, 1) + x * G(0, 2) + w * G(1, 0) - 2 * z * G(1, 1) + y * G(1, 2) +
                    x * G(2, 0) + y * G(2, 1));
        const Vec4 qh = q.as_vec();
        return (d - qh * qh.dot(d)) / n;
    }

    ProjectionGrad project_backward(const Gaussian& g, const CameraView& cam, const Vec2& dL_dmean2d,
                                    const Mat2& dL_dcov2d) {
        const ProjectionTerms t = projection_terms(g, cam);
        const double px = t.p.x(), py = t.p.y(), iz = 1.0 / t.p.z();
        const double iz2 = iz * iz, iz3 = iz2 * iz;

        const Mat2 Gc = 0.5 * (dL_dcov2d + dL_dcov2d.transpose());
        const Eigen::Matrix<double, 2, 3> GJ = 2.0 * Gc * t.J * t.sigma_cam;
        const Mat3 G_sigma_cam = t.J.transpose() * Gc * t.J;

        Vec3 dp = Vec3::Zero();
        // mean2d = (fx px/pz + cx, fy py/pz + cy)
        dp.x() += dL_dmean2d.x() * cam.fx * iz;
        dp.y() += dL_dmean2d.y() * cam.fy * iz;
        dp.z() += -dL_dmean2d.x() * cam.fx * px * iz2 - dL_dmean2d.y() * cam.fy * py * iz2;
        // Jacobian entries depend on p.
        dp.z() += GJ(0, 0) * (-cam.fx * iz2) + GJ(1, 1) * (-cam.fy * iz2);
        dp.x() += GJ(0, 2) * (-cam.fx * iz2);
        dp.z() += GJ(0, 2) * (2.0 * cam.fx * px * iz3);
        dp.y() += GJ(1, 2) * (-cam.fy * iz2);
        dp.z() += GJ(1, 2) * (2.0 * cam.fy * py * iz3);

        ProjectionGrad out;
        out.mu = cam.R_wc.transpose() * dp;

        const Mat3 G_sigma = cam.R_wc.transpose() * G_sigma_cam * cam.R_wc;
        const Mat3 Gs = 0.5 * (G_sigma + G_sigma.transpose());
        const Vec3 s2 = g.s.cwiseProduct(g.s);
        const Mat3 dR = 2.0 * Gs * t.R * s2.asDiagonal();
        const Mat3 local = t.R.transpose() * Gs * t.R;
        for (int i = 0; i < 3; ++i) {
            out.s[i] = 2.0 * g.s[i] * local(i, i);
        }
        out.q = rotation_backward(g.q, dR);
        return out;
    }

} // namespace tiersplat
