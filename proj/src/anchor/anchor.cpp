#include "tiersplat/anchor/anchor.hpp"
#include "tiersplat/core/error.hpp"

#include <cmath>
#include <set>

namespace tiersplat::anchor {

    std::vector<GaussianId>& Anchor::ids_at(int level) {
        if (level < 1) {
            throw Error(ErrorCode::BadLevelCount, "levels start at 1");
        }
        if (gaussian_ids.size() < static_cast<std::size_t>(level)) {
            gaussian_ids.resize(static_cast<std::size_t>(level));
        }
        return gaussian_ids[static_cast<std::size_t>(level - 1)];
    }

    std::span<const GaussianId> Anchor::ids_at(int level) const {
        if (level < 1 || static_cast<std::size_t>(level) > gaussian_ids.size()) {
            return {};
        }
        return gaussian_ids[static_cast<std::size_t>(level - 1)];
    }

    std::size_t Anchor::gaussian_count() const {
        std::size_t n = 0;
        for (const auto& ids : gaussian_ids) n += ids.size();
        return n;
    }

    VoxelIndex voxel_of(const Vec3& p, double voxel_size) {
        return {static_cast<std::int64_t>(std::floor(p.x() / voxel_size)),
                static_cast<std::int64_t>(std::floor(p.y() / voxel_size)),
                static_cast<std::int64_t>(std::floor(p.z() / voxel_size))};
    }

    Vec3 voxel_center(const VoxelIndex& v, double voxel_size) {
        return {(static_cast<double>(v[0]) + 0.5) * voxel_size, (static_cast<double>(v[1]) + 0.5) * voxel_size,
                (static_cast<double>(v[2]) + 0.5) * voxel_size};
    }

    std::vector<Anchor> voxelize_points(std::span<const Vec3> points, const AnchorInit& init, std::mt19937_64& rng) {
        if (points.empty()) {
            throw Error(ErrorCode::EmptyInput, "no points to voxelize");
        }
        if (!(init.voxel_size > 0.0) || init.k < 1 || init.feature_dim < 1) {
            throw Error(ErrorCode::BadConfig, "voxel_size, k and feature_dim must be positive");
        }
        std::set<VoxelIndex> occupied;
        for (const Vec3& p : points) {
            occupied.insert(voxel_of(p, init.voxel_size));
        }
        std::normal_distribution<double> feature_dist(0.0, init.feature_std);
        std::uniform_real_distribution<double> offset_dist(-0.5, 0.5);
        std::vector<Anchor> anchors;
        anchors.reserve(occupied.size());
        for (const VoxelIndex& v : occupied) {
            Anchor a;
            a.id = static_cast<AnchorId>(anchors.size());
            a.voxel = v;
            a.position = voxel_center(v, init.voxel_size);
            a.feature.resize(init.feature_dim);
            for (int i = 0; i < init.feature_dim; ++i) a.feature[i] = feature_dist(rng);
            a.scaling = Vec3::Constant(init.voxel_size);
            a.offsets.resize(init.k, 3);
            for (int j = 0; j < init.k; ++j) {
                for (int d = 0; d < 3; ++d) a.offsets(j, d) = offset_dist(rng);
            }
            anchors.push_back(std::move(a));
        }
        return anchors;
    }

    std::vector<Vec3> gaussian_positions(const Anchor& a) {
        std::vector<Vec3> out;
        out.reserve(static_cast<std::size_t>(a.k()));
        for (int j = 0; j < a.k(); ++j) {
            const Vec3 o = a.offsets.row(j).transpose();
            out.push_back(a.position + o.cwiseProduct(a.scaling));
        }
        return out;
    }

    AnchorGrid::AnchorGrid(std::span<const Anchor> anchors, double voxel_size)
        : voxel_size_(voxel_size) {
        for (const Anchor& a : anchors) {
            cells_[a.voxel] = a.id;
        }
    }

    std::optional<AnchorId> AnchorGrid::find(const Vec3& p) const {
        return find(voxel_of(p, voxel_size_));
    }

    std::optional<AnchorId> AnchorGrid::find(const VoxelIndex& v) const {
        const auto it = cells_.find(v);
        if (it == cells_.end()) return std::nullopt;
        return it->second;
    }

} // namespace tiersplat::anchor
