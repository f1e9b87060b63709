#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>

namespace tiersplat {

    using Vec2 = Eigen::Vector2d;
    using Vec3 = Eigen::Vector3d;
    using Vec4 = Eigen::Vector4d;
    using Mat2 = Eigen::Matrix2d;
    using Mat3 = Eigen::Matrix3d;

    using GaussianId = std::uint64_t;
    using AnchorId = std::uint32_t;

    inline constexpr double kEpsScale = 1e-6;
    inline constexpr double kZNear = 0.01;
    inline constexpr double kCovDilation = 0.3;

    /// Rotation quaternion stored as (w, x, y, z). Not implicitly normalized.
    struct Quaternion {
        double w = 1.0;
        double x = 0.0;
        double y = 0.0;
        double z = 0.0;

        static Quaternion identity() { return {}; }
        static Quaternion from_axis_angle(const Vec3& axis, double radians);
        static Quaternion from_vec(const Vec4& v) { return {v[0], v[1], v[2], v[3]}; }

        Vec4 as_vec() const { return {w, x, y, z}; }
        double norm() const;
        bool is_unit(double tol = 1e-9) const;

        /// Throws ZeroQuaternion when |q| is (numerically) zero.
        Quaternion normalized() const;

        /// Requires a unit quaternion (NotNormalized otherwise).
        Mat3 to_rotation() const;

        friend Quaternion operator*(const Quaternion& a, const Quaternion& b);
        friend bool operator==(const Quaternion&, const Quaternion&) = default;
    };

    struct Gaussian {
        GaussianId id = 0;
        Vec3 mu = Vec3::Zero();
        Quaternion q;
        Vec3 s = Vec3::Ones();
        double alpha = 1.0;
        Vec3 color = Vec3::Zero();
        int level = 1;
        double mask_logit = 0.0;
        AnchorId anchor_id = 0;
    };

    /// Pinhole camera. Pixel (i, j) is sampled at image-plane coordinate (i, j).
    struct CameraView {
        std::string id;
        double fx = 1.0;
        double fy = 1.0;
        double cx = 0.0;
        double cy = 0.0;
        Mat3 R_wc = Mat3::Identity();
        Vec3 t_wc = Vec3::Zero();
        int width = 0;
        int height = 0;

        Vec3 to_camera(const Vec3& world) const { return R_wc * world + t_wc; }
        Vec3 center() const { return -R_wc.transpose() * t_wc; }
        /// Camera forward (+z) axis expressed in the world frame.
        Vec3 forward() const { return R_wc.row(2).transpose(); }

        /// Camera matching an image box-downsampled by `factor` (e.g. 0.25).
        CameraView scaled(double factor) const;

        /// Camera at `eye` looking at `target`; +y of the image points along -up.
        static CameraView look_at(std::string id, const Vec3& eye, const Vec3& target, const Vec3& up,
                                  int width, int height, double focal_px);

        bool valid(double tol = 1e-6) const;
    };

    struct Projection {
        Vec2 mean2d;
        Mat2 cov2d;
        double depth = 0.0;
    };

    Mat3 compose_covariance(const Quaternion& q, const Vec3& s);

    double evaluate_gaussian(const Vec3& x, const Gaussian& g);

    /// Throws BehindCamera when the center has camera-space z <= kZNear.
    Projection project_gaussian(const Gaussian& g, const CameraView& cam);
    std::optional<Projection> try_project_gaussian(const Gaussian& g, const CameraView& cam);

    /// dL/dq for a rotation built from normalize(q), given dL/dR.
    Vec4 rotation_backward(const Quaternion& q, const Mat3& dL_dR);

    struct ProjectionGrad {
        Vec3 mu = Vec3::Zero();
        Vec4 q = Vec4::Zero();
        Vec3 s = Vec3::Zero();
    };

    /// Reverse pass of project_gaussian. The rotation is treated as normalize(q).
    ProjectionGrad project_backward(const Gaussian& g, const CameraView& cam, const Vec2& dL_dmean2d,
                                    const Mat2& dL_dcov2d);

} // namespace tiersplat
