#pragma once

#include "tiersplat/core/geometry.hpp"
#include "tiersplat/core/image.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tiersplat::pipeline {

    /// Analytic primitive of a synthetic scene.
    struct SceneObject {
        enum class Kind { Sphere, Box };
        std::string name;
        Kind kind = Kind::Sphere;
        Vec3 center = Vec3::Zero();
        double radius = 0.5;         // spheres
        Vec3 half = Vec3::Constant(0.5); // boxes
        Vec3 color = Vec3::Constant(0.7);
        /// Period of the object-space sinusoidal texture; 0 disables it.
        double texture_period = 0.0;
        bool dynamic = false;
    };

    struct SyntheticParams {
        std::string spec = "static-spheres";
        int cameras = 8;
        int width = 64;
        int height = 64;
        int frames = 10;
        int points = 4000;
        std::uint64_t seed = 0;
        /// Orbit radius of moving objects.
        double amplitude = 0.2;
        /// Orbit period in frames.
        int period = 20;
        /// First frame in which the cube of "appearing-cube" is visible.
        int t_appear = 5;
        /// Supersampling grid per pixel side.
        int supersample = 3;
    };

    /// Names accepted by scene_at / generate_synthetic.
    const std::vector<std::string>& synthetic_specs();

    /// Objects of the named scene at frame t. Throws UnknownSpec.
    std::vector<SceneObject> scene_at(const SyntheticParams& params, int t);

    /// Camera rig of the named scene (ring around the origin).
    std::vector<CameraView> synthetic_rig(const SyntheticParams& params);

    /// Reference ray tracer (Lambertian, directional light, black background).
    Image ray_trace(const std::vector<SceneObject>& objects, const CameraView& cam, int supersample = 3);

    /// Depth of the first hit along the ray through pixel (x, y); nullopt on a miss.
    std::optional<double> ray_depth(const std::vector<SceneObject>& objects, const CameraView& cam, double x, double y);

    /// Points sampled on the frame-0 surfaces (sparse-reconstruction stand-in).
    std::vector<Vec3> sample_surface_points(const std::vector<SceneObject>& objects, int count, std::uint64_t seed);

    /// Writes cameras.json, points.xyz, labels.json and frames/NNNN/<cam>.ppm.
    void generate_synthetic(const SyntheticParams& params, const std::filesystem::path& out_dir);

    /// Solid sphere or box test.
    bool object_contains(const SceneObject& o, const Vec3& p);

    /// Whether the axis-aligned box intersects the volume swept by `o`
    /// moving linearly from `from` to `to` (centres).
    bool box_intersects_swept(const SceneObject& from, const SceneObject& to, const Vec3& box_min,
                              const Vec3& box_max);

} // namespace tiersplat::pipeline
