#pragma once

#include "tiersplat/core/geometry.hpp"

#include <Eigen/Core>

#include <array>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace tiersplat::anchor {

    using VoxelIndex = std::array<std::int64_t, 3>;
    using Offsets = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

    inline constexpr int kDefaultFeatureDim = 32;
    inline constexpr int kDefaultGaussiansPerAnchor = 10;

    /// Voxel-aligned container that owns Gaussians, per scale level.
    struct Anchor {
        AnchorId id = 0;
        VoxelIndex voxel{};
        Vec3 position = Vec3::Zero();        // voxel center
        Eigen::VectorXd feature;             // context feature
        Vec3 scaling = Vec3::Ones();         // per-axis scaling factor c_v
        Offsets offsets;                     // k x 3, unitless
        bool dynamic = false;
        std::vector<std::vector<GaussianId>> gaussian_ids; // index l - 1

        int k() const { return static_cast<int>(offsets.rows()); }
        std::vector<GaussianId>& ids_at(int level);
        std::span<const GaussianId> ids_at(int level) const;
        std::size_t gaussian_count() const;

        friend bool operator==(const Anchor&, const Anchor&) = default;
    };

    struct AnchorInit {
        double voxel_size = 0.25;
        int feature_dim = kDefaultFeatureDim;
        int k = kDefaultGaussiansPerAnchor;
        double feature_std = 0.01;
    };

    VoxelIndex voxel_of(const Vec3& p, double voxel_size);
    Vec3 voxel_center(const VoxelIndex& v, double voxel_size);

    /// One anchor per occupied voxel, ordered by voxel index so the result
    /// does not depend on point order.
    std::vector<Anchor> voxelize_points(std::span<const Vec3> points, const AnchorInit& init, std::mt19937_64& rng);

    /// x_v + O_j * c_v for every offset row.
    std::vector<Vec3> gaussian_positions(const Anchor& a);

    /// Voxel lookup for the anchor lattice.
    class AnchorGrid {
    public:
        AnchorGrid() = default;
        AnchorGrid(std::span<const Anchor> anchors, double voxel_size);

        std::optional<AnchorId> find(const Vec3& p) const;
        std::optional<AnchorId> find(const VoxelIndex& v) const;
        double voxel_size() const { return voxel_size_; }

    private:
        double voxel_size_ = 1.0;
        std::map<VoxelIndex, AnchorId> cells_;
    };

} // namespace tiersplat::anchor
