#pragma once

#include <filesystem>
#include <vector>

namespace tiersplat {

    /// Row-major interleaved image of doubles, nominally in [0, 1].
    struct Image {
        int width = 0;
        int height = 0;
        int channels = 3;
        std::vector<double> data;

        Image() = default;
        Image(int w, int h, int c = 3, double fill = 0.0)
            : width(w),
              height(h),
              channels(c),
              data(static_cast<std::size_t>(w) * h * c, fill) {}

        double& at(int x, int y, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
        double at(int x, int y, int c = 0) const {
            return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
        }
        std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
        bool same_shape(const Image& o) const {
            return width == o.width && height == o.height && channels == o.channels;
        }

        friend bool operator==(const Image&, const Image&) = default;
    };

    /// Average over factor x factor blocks. Width and height must be divisible by factor.
    Image box_downsample(const Image& img, int factor);
    /// Adjoint of box_downsample: spreads each coarse gradient evenly over its block.
    Image box_downsample_backward(const Image& grad_coarse, int factor);

    /// Binary P6, maxval 255, no comments. Values are clamped to [0,1] and rounded.
    void write_ppm(const std::filesystem::path& path, const Image& img);
    Image read_ppm(const std::filesystem::path& path);
    void write_png(const std::filesystem::path& path, const Image& img);
    Image read_png(const std::filesystem::path& path);
    /// Little-endian float32 samples, interleaved, no header.
    void write_float_raw(const std::filesystem::path& path, const Image& img);

    /// Dispatches on extension (.ppm / .png).
    Image read_image(const std::filesystem::path& path);
    void write_image(const std::filesystem::path& path, const Image& img);

    /// Quantizes to 8 bits and back, matching what a PPM round trip produces.
    Image quantize_8bit(const Image& img);

} // namespace tiersplat
