#pragma once

#include "tiersplat/core/geometry.hpp"
#include "tiersplat/core/image.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace tiersplat::pipeline {

    /// JSON array of {id, width, height, fx, fy, cx, cy, R (row-major 9), t (3)}.
    void write_cameras(const std::filesystem::path& path, std::span<const CameraView> cams);
    std::vector<CameraView> read_cameras(const std::filesystem::path& path);

    /// ".xyz": one "x y z" triple per line; anything else: raw little-endian
    /// float32 triples.
    void write_points(const std::filesystem::path& path, std::span<const Vec3> points);
    std::vector<Vec3> read_points(const std::filesystem::path& path);

    std::filesystem::path frame_dir(const std::filesystem::path& root, int frame);

    /// Number of consecutive frame directories starting at 0.
    int count_frames(const std::filesystem::path& root);

    /// One image per camera (<cam>.ppm or <cam>.png). Throws MissingFrame.
    std::vector<Image> load_frame(const std::filesystem::path& root, int frame, std::span<const CameraView> cams);

    /// Points file found in a dataset root (points.xyz, then points.bin).
    std::filesystem::path points_path(const std::filesystem::path& root);

} // namespace tiersplat::pipeline
