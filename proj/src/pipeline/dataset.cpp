#include "tiersplat/pipeline/dataset.hpp"
#include "tiersplat/core/error.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tiersplat::pipeline {

    namespace {

        static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

    } // namespace

    void write_cameras(const std::filesystem::path& path, std::span<const CameraView> cams) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& c : cams) {
            nlohmann::json j;
            j["id"] = c.id;
            j["width"] = c.width;
            j["height"] = c.height;
            j["fx"] = c.fx;
            j["fy"] = c.fy;
            j["cx"] = c.cx;
            j["cy"] = c.cy;
            std::vector<double> R;
            for (int r = 0; r < 3; ++r)
                for (int k = 0; k < 3; ++k) R.push_back(c.R_wc(r, k));
            j["R"] = R;
            j["t"] = {c.t_wc.x(), c.t_wc.y(), c.t_wc.z()};
            arr.push_back(j);
        }
        std::ofstream f(path);
        if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
        f << arr.dump(1) << "\n";
    }

    std::vector<CameraView> read_cameras(const std::filesystem::path& path) {
        std::ifstream f(path);
        if (!f) throw Error(ErrorCode::IoError, "cannot read " + path.string());
        nlohmann::json arr;
        try {
            f >> arr;
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
        }
        std::vector<CameraView> cams;
        try {
            for (const auto& j : arr) {
                CameraView c;
                c.id = j.at("id").get<std::string>();
                c.width = j.at("width").get<int>();
                c.height = j.at("height").get<int>();
                c.fx = j.at("fx").get<double>();
                c.fy = j.at("fy").get<double>();
                c.cx = j.at("cx").get<double>();
                c.cy = j.at("cy").get<double>();
                const auto R = j.at("R").get<std::vector<double>>();
                const auto t = j.at("t").get<std::vector<double>>();
                if (R.size() != 9 || t.size() != 3) throw Error(ErrorCode::ParseError, "camera R/t size");
                for (int r = 0; r < 3; ++r)
                    for (int k = 0; k < 3; ++k) c.R_wc(r, k) = R[static_cast<std::size_t>(3 * r + k)];
                c.t_wc = Vec3(t[0], t[1], t[2]);
                if (!c.valid()) throw Error(ErrorCode::ParseError, "camera " + c.id + " has an invalid rotation");
                cams.push_back(c);
            }
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
        }
        return cams;
    }

    void write_points(const std::filesystem::path& path, std::span<const Vec3> points) {
        if (path.extension() == ".xyz") {
            std::ofstream f(path);
            if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
            char buf[96];
            for (const auto& p : points) {
                std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g\n", p.x(), p.y(), p.z());
                f << buf;
            }
            return;
        }
        std::ofstream f(path, std::ios::binary);
        if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
        for (const auto& p : points) {
            const float v[3] = {static_cast<float>(p.x()), static_cast<float>(p.y()), static_cast<float>(p.z())};
            f.write(reinterpret_cast<const char*>(v), sizeof(v));
        }
    }

    std::vector<Vec3> read_points(const std::filesystem::path& path) {
        std::vector<Vec3> out;
        if (path.extension() == ".xyz") {
            std::ifstream f(path);
            if (!f) throw Error(ErrorCode::IoError, "cannot read " + path.string());
            std::string line;
            while (std::getline(f, line)) {
                if (line.empty() || line[0] == '#') continue;
                std::istringstream ss(line);
                double x, y, z;
                if (!(ss >> x >> y >> z)) throw Error(ErrorCode::ParseError, "bad point line: " + line);
                out.emplace_back(x, y, z);
            }
            return out;
        }
        std::ifstream f(path, std::ios::binary);
        if (!f) throw Error(ErrorCode::IoError, "cannot read " + path.string());
        const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        if (bytes.size() % 12 != 0) throw Error(ErrorCode::ParseError, "binary point file size not a multiple of 12");
        for (std::size_t i = 0; i < bytes.size(); i += 12) {
            float v[3];
            std::memcpy(v, bytes.data() + i, sizeof(v));
            out.emplace_back(v[0], v[1], v[2]);
        }
        return out;
    }

    std::filesystem::path frame_dir(const std::filesystem::path& root, int frame) {
        char name[16];
        std::snprintf(name, sizeof(name), "%04d", frame);
        return root / "frames" / name;
    }

    int count_frames(const std::filesystem::path& root) {
        int n = 0;
        while (std::filesystem::is_directory(frame_dir(root, n))) ++n;
        return n;
    }

    std::vector<Image> load_frame(const std::filesystem::path& root, int frame, std::span<const CameraView> cams) {
        const auto dir = frame_dir(root, frame);
        std::vector<Image> out;
        for (const auto& c : cams) {
            std::filesystem::path p = dir / (c.id + ".ppm");
            if (!std::filesystem::exists(p)) p = dir / (c.id + ".png");
            if (!std::filesystem::exists(p)) {
                throw Error(ErrorCode::MissingFrame,
                            "frame " + std::to_string(frame) + " has no image for camera " + c.id);
            }
            Image img = read_image(p);
            if (img.width != c.width || img.height != c.height) {
                throw Error(ErrorCode::ShapeError, p.string() + " does not match its camera size");
            }
            out.push_back(std::move(img));
        }
        return out;
    }

    std::filesystem::path points_path(const std::filesystem::path& root) {
        for (const char* name : {"points.xyz", "points.bin"}) {
            if (std::filesystem::exists(root / name)) return root / name;
        }
        throw Error(ErrorCode::IoError, "no points.xyz or points.bin in " + root.string());
    }

} // namespace tiersplat::pipeline
