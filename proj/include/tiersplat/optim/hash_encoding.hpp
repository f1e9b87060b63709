#pragma once

#include "tiersplat/core/geometry.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace tiersplat::optim {

    struct HashEncodingConfig {
        int num_grids = 8;
        int base_resolution = 16;
        double growth = 1.5;
        int log2_table_size = 14;
        int features_per_grid = 2;
    };

    /// Multi-resolution hashed feature grid over an axis-aligned box.
    class HashEncoding {
    public:
        HashEncoding() = default;
        HashEncoding(const HashEncodingConfig& cfg, const Vec3& box_min, const Vec3& box_max);

        /// Corner features and weights of one lookup, reused by backward().
        struct Lookup {
            // num_grids x 8 table rows and trilinear weights.
            std::vector<std::uint32_t> rows;
            std::vector<double> weights;
        };

        void init_random(std::mt19937_64& rng, double magnitude = 1e-4);

        int output_dim() const { return cfg_.num_grids * cfg_.features_per_grid; }
        const std::vector<int>& resolutions() const { return resolutions_; }
        std::size_t table_size() const { return table_size_; }
        const HashEncodingConfig& config() const { return cfg_; }
        const Vec3& box_min() const { return box_min_; }
        const Vec3& box_max() const { return box_max_; }

        /// Out-of-box inputs are clamped to the box and counted.
        Eigen::VectorXd encode(const Vec3& mu, Lookup* lookup = nullptr) const;
        /// Scatters dL/dfeatures into `grad` (layout of params()).
        void backward(const Lookup& lookup, const Eigen::VectorXd& dL_dfeat, std::span<double> grad) const;

        std::size_t clamped_count() const { return clamped_; }

        std::span<double> params() { return table_; }
        std::span<const double> params() const { return table_; }

        /// Table row for integer grid coordinates at grid `level`.
        std::uint32_t row_index(int level, std::int64_t ix, std::int64_t iy, std::int64_t iz) const;

        friend bool operator==(const HashEncoding& a, const HashEncoding& b) {
            return a.cfg_.num_grids == b.cfg_.num_grids && a.cfg_.base_resolution == b.cfg_.base_resolution &&
                   a.cfg_.growth == b.cfg_.growth && a.cfg_.log2_table_size == b.cfg_.log2_table_size &&
                   a.cfg_.features_per_grid == b.cfg_.features_per_grid && a.box_min_ == b.box_min_ &&
                   a.box_max_ == b.box_max_ && a.table_ == b.table_;
        }

    private:
        HashEncodingConfig cfg_;
        Vec3 box_min_ = Vec3::Zero();
        Vec3 box_max_ = Vec3::Ones();
        std::vector<int> resolutions_;
        std::size_t table_size_ = 0;
        // [grid][row][feature]
        std::vector<double> table_;
        mutable std::size_t clamped_ = 0;
    };

} // namespace tiersplat::optim
