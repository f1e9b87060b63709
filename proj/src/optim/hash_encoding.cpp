#include "tiersplat/optim/hash_encoding.hpp"
#include "tiersplat/core/error.hpp"

#include <algorithm>
#include <cmath>

namespace tiersplat::optim {

    namespace {
        constexpr std::uint64_t kPrimeY = 2654435761ULL;
        constexpr std::uint64_t kPrimeZ = 805459861ULL;
    }

    HashEncoding::HashEncoding(const HashEncodingConfig& cfg, const Vec3& box_min, const Vec3& box_max)
        : cfg_(cfg),
          box_min_(box_min),
          box_max_(box_max) {
        if (cfg.num_grids < 1 || cfg.base_resolution < 1 || cfg.growth <= 1.0 || cfg.features_per_grid < 1 ||
            cfg.log2_table_size < 1 || cfg.log2_table_size > 24) {
            throw Error(ErrorCode::BadConfig, "invalid hash encoding configuration");
        }
        if (!((box_max - box_min).array() > 0.0).all()) {
            throw Error(ErrorCode::BadConfig, "hash encoding box must have positive extent");
        }
        table_size_ = std::size_t{1} << cfg.log2_table_size;
        int prev = 0;
        for (int i = 0; i < cfg.num_grids; ++i) {
            int res = static_cast<int>(std::floor(cfg.base_resolution * std::pow(cfg.growth, i)));
            res = std::max(res, prev + 1);
            resolutions_.push_back(res);
            prev = res;
        }
        table_.assign(table_size_ * cfg.num_grids * cfg.features_per_grid, 0.0);
    }

    void HashEncoding::init_random(std::mt19937_64& rng, double magnitude) {
        std::uniform_real_distribution<double> dist(-magnitude, magnitude);
        for (double& v : table_) v = dist(rng);
    }

    std::uint32_t HashEncoding::row_index(int level, std::int64_t ix, std::int64_t iy, std::int64_t iz) const {
        const std::uint64_t side = static_cast<std::uint64_t>(resolutions_[level]) + 1;
        if (side * side * side <= table_size_) {
            // Coordinates outside the grid wrap so the row is always in range.
            const auto wrap = [side](std::int64_t v) {
                const auto n = static_cast<std::int64_t>(side);
                return static_cast<std::uint64_t>(((v % n) + n) % n);
            };
            return static_cast<std::uint32_t>(wrap(ix) + side * (wrap(iy) + side * wrap(iz)));
        }
        const std::uint64_t h = static_cast<std::uint64_t>(ix) ^ (static_cast<std::uint64_t>(iy) * kPrimeY) ^
                                (static_cast<std::uint64_t>(iz) * kPrimeZ);
        return static_cast<std::uint32_t>(h & (table_size_ - 1));
    }

    Eigen::VectorXd HashEncoding::encode(const Vec3& mu, Lookup* lookup) const {
        const Vec3 extent = box_max_ - box_min_;
        Vec3 u = (mu - box_min_).cwiseQuotient(extent);
        if ((u.array() < 0.0).any() || (u.array() > 1.0).any() || !u.allFinite()) {
            ++clamped_;
            u = u.cwiseMax(0.0).cwiseMin(1.0);
            if (!u.allFinite()) u = Vec3::Constant(0.5);
        }
        const int F = cfg_.features_per_grid;
        Eigen::VectorXd out = Eigen::VectorXd::Zero(output_dim());
        if (lookup) {
            lookup->rows.resize(static_cast<std::size_t>(cfg_.num_grids) * 8);
            lookup->weights.resize(static_cast<std::size_t>(cfg_.num_grids) * 8);
        }
        for (int level = 0; level < cfg_.num_grids; ++level) {
            const int res = resolutions_[level];
            std::array<std::int64_t, 3> i0{};
            std::array<double, 3> frac{};
            for (int d = 0; d < 3; ++d) {
                const double pos = u[d] * res;
                const auto base = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(pos)), res - 1);
                i0[d] = base;
                frac[d] = pos - static_cast<double>(base);
            }
            const double* grid = table_.data() + static_cast<std::size_t>(level) * table_size_ * F;
            for (int corner = 0; corner < 8; ++corner) {
                const int bx = corner & 1, by = (corner >> 1) & 1, bz = (corner >> 2) & 1;
                const double w = (bx ? frac[0] : 1.0 - frac[0]) * (by ? frac[1] : 1.0 - frac[1]) *
                                 (bz ? frac[2] : 1.0 - frac[2]);
                const std::uint32_t row = row_index(level, i0[0] + bx, i0[1] + by, i0[2] + bz);
                for (int f = 0; f < F; ++f) {
                    out[level * F + f] += w * grid[static_cast<std::size_t>(row) * F + f];
                }
                if (lookup) {
                    lookup->rows[static_cast<std::size_t>(level) * 8 + corner] = row;
                    lookup->weights[static_cast<std::size_t>(level) * 8 + corner] = w;
                }
            }
        }
        return out;
    }

    void HashEncoding::backward(const Lookup& lookup, const Eigen::VectorXd& dL_dfeat, std::span<double> grad) const {
        if (grad.size() != table_.size() || dL_dfeat.size() != output_dim()) {
            throw Error(ErrorCode::ShapeError, "hash encoding gradient size mismatch");
        }
        const int F = cfg_.features_per_grid;
        for (int level = 0; level < cfg_.num_grids; ++level) {
            double* grid = grad.data() + static_cast<std::size_t>(level) * table_size_ * F;
            for (int corner = 0; corner < 8; ++corner) {
                const std::size_t k = static_cast<std::size_t>(level) * 8 + corner;
                for (int f = 0; f < F; ++f) {
                    grid[static_cast<std::size_t>(lookup.rows[k]) * F + f] += lookup.weights[k] * dL_dfeat[level * F + f];
                }
            }
        }
    }

} // namespace tiersplat::optim
