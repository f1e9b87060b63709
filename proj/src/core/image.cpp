#include "tiersplat/core/image.hpp"
#include "tiersplat/core/error.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

namespace tiersplat {

    namespace {

        std::uint8_t to_byte(double v) {
            return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        }

        struct FileCloser {
            void operator()(std::FILE* f) const {
                if (f) std::fclose(f);
            }
        };
        using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

    } // namespace

    Image box_downsample(const Image& img, int factor) {
        if (factor == 1) {
            return img;
        }
        if (factor < 1 || img.width % factor != 0 || img.height % factor != 0) {
            throw Error(ErrorCode::ShapeError, "image size not divisible by downsampling factor");
        }
        Image out(img.width / factor, img.height / factor, img.channels);
        const double inv = 1.0 / (factor * factor);
        for (int y = 0; y < out.height; ++y) {
            for (int x = 0; x < out.width; ++x) {
                for (int c = 0; c < img.channels; ++c) {
                    double sum = 0.0;
                    for (int dy = 0; dy < factor; ++dy) {
                        for (int dx = 0; dx < factor; ++dx) {
                            sum += img.at(x * factor + dx, y * factor + dy, c);
                        }
                    }
                    out.at(x, y, c) = sum * inv;
                }
            }
        }
        return out;
    }

    Image box_downsample_backward(const Image& grad_coarse, int factor) {
        if (factor == 1) {
            return grad_coarse;
        }
        Image out(grad_coarse.width * factor, grad_coarse.height * factor, grad_coarse.channels);
        const double inv = 1.0 / (factor * factor);
        for (int y = 0; y < out.height; ++y) {
            for (int x = 0; x < out.width; ++x) {
                for (int c = 0; c < out.channels; ++c) {
                    out.at(x, y, c) = grad_coarse.at(x / factor, y / factor, c) * inv;
                }
            }
        }
        return out;
    }

    void write_ppm(const std::filesystem::path& path, const Image& img) {
        if (img.channels != 3) {
            throw Error(ErrorCode::ShapeError, "PPM output requires 3 channels");
        }
        std::ofstream out(path, std::ios::binary);
        if (!out) {
            throw Error(ErrorCode::IoError, "cannot open " + path.string());
        }
        out << "P6\n" << img.width << " " << img.height << "\n255\n";
        std::vector<std::uint8_t> bytes(img.data.size());
        std::transform(img.data.begin(), img.data.end(), bytes.begin(), to_byte);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw Error(ErrorCode::IoError, "short write to " + path.string());
        }
    }

    Image read_ppm(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw Error(ErrorCode::IoError, "cannot open " + path.string());
        }
        auto next_token = [&in]() {
            std::string tok;
            while (in) {
                const int c = in.peek();
                if (c == '#') {
                    std::string skip;
                    std::getline(in, skip);
                } else if (std::isspace(c)) {
                    in.get();
                } else {
                    break;
                }
            }
            in >> tok;
            return tok;
        };
        if (next_token() != "P6") {
            throw Error(ErrorCode::ParseError, "not a binary PPM: " + path.string());
        }
        const int w = std::stoi(next_token());
        const int h = std::stoi(next_token());
        const int maxval = std::stoi(next_token());
        if (w <= 0 || h <= 0 || maxval != 255) {
            throw Error(ErrorCode::ParseError, "unsupported PPM header in " + path.string());
        }
        in.get();
        std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h * 3);
        in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
            throw Error(ErrorCode::ParseError, "truncated PPM " + path.string());
        }
        Image img(w, h, 3);
        for (std::size_t i = 0; i < bytes.size(); ++i) {
            img.data[i] = bytes[i] / 255.0;
        }
        return img;
    }

    void write_png(const std::filesystem::path& path, const Image& img) {
        if (img.channels != 3) {
            throw Error(ErrorCode::ShapeError, "PNG output requires 3 channels");
        }
        FilePtr fp(std::fopen(path.c_str(), "wb"));
        if (!fp) {
            throw Error(ErrorCode::IoError, "cannot open " + path.string());
        }
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        png_infop info = png_create_info_struct(png);
        if (setjmp(png_jmpbuf(png))) {
            png_destroy_write_struct(&png, &info);
            throw Error(ErrorCode::IoError, "libpng failed writing " + path.string());
        }
        png_init_io(png, fp.get());
        png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * 3);
        for (int y = 0; y < img.height; ++y) {
            for (int i = 0; i < img.width * 3; ++i) {
                row[i] = to_byte(img.data[static_cast<std::size_t>(y) * img.width * 3 + i]);
            }
            png_write_row(png, row.data());
        }
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    }

    Image read_png(const std::filesystem::path& path) {
        FilePtr fp(std::fopen(path.c_str(), "rb"));
        if (!fp) {
            throw Error(ErrorCode::IoError, "cannot open " + path.string());
        }
        png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        png_infop info = png_create_info_struct(png);
        if (setjmp(png_jmpbuf(png))) {
            png_destroy_read_struct(&png, &info, nullptr);
            throw Error(ErrorCode::ParseError, "libpng failed reading " + path.string());
        }
        png_init_io(png, fp.get());
        png_read_info(png, info);
        png_set_strip_16(png);
        png_set_palette_to_rgb(png);
        png_set_gray_to_rgb(png);
        png_set_strip_alpha(png);
        png_set_expand_gray_1_2_4_to_8(png);
        png_read_update_info(png, info);
        const int w = static_cast<int>(png_get_image_width(png, info));
        const int h = static_cast<int>(png_get_image_height(png, info));
        std::vector<std::uint8_t> row(png_get_rowbytes(png, info));
        Image img(w, h, 3);
        for (int y = 0; y < h; ++y) {
            png_read_row(png, row.data(), nullptr);
            for (int i = 0; i < w * 3; ++i) {
                img.data[static_cast<std::size_t>(y) * w * 3 + i] = row[i] / 255.0;
            }
        }
        png_destroy_read_struct(&png, &info, nullptr);
        return img;
    }

    void write_float_raw(const std::filesystem::path& path, const Image& img) {
        std::ofstream out(path, std::ios::binary);
        if (!out) {
            throw Error(ErrorCode::IoError, "cannot open " + path.string());
        }
        for (double v : img.data) {
            const float f = static_cast<float>(v);
            std::uint32_t bits;
            std::memcpy(&bits, &f, sizeof bits);
            const char le[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                                static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
            out.write(le, 4);
        }
    }

    Image read_image(const std::filesystem::path& path) {
        const auto ext = path.extension().string();
        if (ext == ".ppm") return read_ppm(path);
        if (ext == ".png") return read_png(path);
        throw Error(ErrorCode::ParseError, "unsupported image extension: " + path.string());
    }

    void write_image(const std::filesystem::path& path, const Image& img) {
        const auto ext = path.extension().string();
        if (ext == ".ppm") return write_ppm(path, img);
        if (ext == ".png") return write_png(path, img);
        if (ext == ".raw" || ext == ".f32") return write_float_raw(path, img);
        throw Error(ErrorCode::ParseError, "unsupported image extension: " + path.string());
    }

    Image quantize_8bit(const Image& img) {
        Image out = img;
        for (double& v : out.data) {
            v = to_byte(v) / 255.0;
        }
        return out;
    }

} // namespace tiersplat
