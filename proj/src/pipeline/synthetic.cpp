#include "tiersplat/pipeline/synthetic.hpp"
#include "tiersplat/core/error.hpp"
#include "tiersplat/pipeline/dataset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

namespace tiersplat::pipeline {

    namespace {

        const Vec3 kLightDir = Vec3(0.3, 1.0, 0.5).normalized();
        constexpr double kAmbient = 0.35;

        struct Hit {
            double t = std::numeric_limits<double>::infinity();
            Vec3 normal = Vec3::UnitY();
            const SceneObject* object = nullptr;
        };

        bool intersect_sphere(const SceneObject& o, const Vec3& orig, const Vec3& dir, Hit& hit) {
            const Vec3 oc = orig - o.center;
            const double b = oc.dot(dir);
            const double c = oc.squaredNorm() - o.radius * o.radius;
            const double disc = b * b - c;
            if (disc < 0.0) return false;
            const double sq = std::sqrt(disc);
            double t = -b - sq;
            if (t <= 1e-9) t = -b + sq;
            if (t <= 1e-9 || t >= hit.t) return false;
            hit.t = t;
            hit.normal = (orig + t * dir - o.center).normalized();
            hit.object = &o;
            return true;
        }

        bool intersect_box(const SceneObject& o, const Vec3& orig, const Vec3& dir, Hit& hit) {
            const Vec3 lo = o.center - o.half;
            const Vec3 hi = o.center + o.half;
            double t0 = -std::numeric_limits<double>::infinity();
            double t1 = std::numeric_limits<double>::infinity();
            int axis0 = 0;
            for (int d = 0; d < 3; ++d) {
                if (std::abs(dir[d]) < 1e-15) {
                    if (orig[d] < lo[d] || orig[d] > hi[d]) return false;
                    continue;
                }
                double a = (lo[d] - orig[d]) / dir[d];
                double b = (hi[d] - orig[d]) / dir[d];
                if (a > b) std::swap(a, b);
                if (a > t0) {
                    t0 = a;
                    axis0 = d;
                }
                t1 = std::min(t1, b);
                if (t0 > t1) return false;
            }
            if (t0 <= 1e-9 || t0 >= hit.t) return false;
            hit.t = t0;
            Vec3 n = Vec3::Zero();
            n[axis0] = dir[axis0] > 0.0 ? -1.0 : 1.0;
            hit.normal = n;
            hit.object = &o;
            return true;
        }

        Hit trace(const std::vector<SceneObject>& objects, const Vec3& orig, const Vec3& dir) {
            Hit hit;
            for (const auto& o : objects) {
                if (o.kind == SceneObject::Kind::Sphere) {
                    intersect_sphere(o, orig, dir, hit);
                } else {
                    intersect_box(o, orig, dir, hit);
                }
            }
            return hit;
        }

        Vec3 shade(const Hit& hit, const Vec3& p) {
            const SceneObject& o = *hit.object;
            double tex = 1.0;
            if (o.texture_period > 0.0) {
                const double k = 2.0 * M_PI / o.texture_period;
                const Vec3 q = p - o.center;
                tex = 0.55 + 0.45 * std::sin(k * q.x()) * std::sin(k * q.y()) * std::sin(k * q.z() + 0.7);
            }
            const double lambert = kAmbient + (1.0 - kAmbient) * std::max(0.0, hit.normal.dot(kLightDir));
            return (o.color * tex * lambert).cwiseMin(1.0);
        }

        Vec3 ray_direction(const CameraView& cam, double x, double y) {
            const Vec3 dc((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0);
            return (cam.R_wc.transpose() * dc).normalized();
        }

        SceneObject sphere(std::string name, const Vec3& c, double r, const Vec3& color, double period = 0.0,
                           bool dynamic = false) {
            SceneObject o;
            o.name = std::move(name);
            o.kind = SceneObject::Kind::Sphere;
            o.center = c;
            o.radius = r;
            o.color = color;
            o.texture_period = period;
            o.dynamic = dynamic;
            return o;
        }

        SceneObject box(std::string name, const Vec3& c, const Vec3& half, const Vec3& color, double period = 0.0,
                        bool dynamic = false) {
            SceneObject o;
            o.name = std::move(name);
            o.kind = SceneObject::Kind::Box;
            o.center = c;
            o.half = half;
            o.color = color;
            o.texture_period = period;
            o.dynamic = dynamic;
            return o;
        }

        // Displacement from the frame-0 position along a circle in the plane
        // spanned by `u` and `v`.
        Vec3 orbit(const SyntheticParams& p, int t, double phase = 0.0, const Vec3& u = Vec3::UnitX(),
                   const Vec3& v = Vec3::UnitZ()) {
            const double a = 2.0 * M_PI * t / std::max(p.period, 1) + phase;
            return p.amplitude * ((std::cos(a) - std::cos(phase)) * u + (std::sin(a) - std::sin(phase)) * v);
        }

        constexpr double kGroundTop = -0.45;

    } // namespace

    const std::vector<std::string>& synthetic_specs() {
        static const std::vector<std::string> specs{"static-spheres", "moving-sphere", "appearing-cube",
                                                    "two-object"};
        return specs;
    }

    std::vector<SceneObject> scene_at(const SyntheticParams& p, int t) {
        std::vector<SceneObject> out;
        if (p.spec == "static-spheres") {
            out.push_back(sphere("red", Vec3(-0.45, 0.0, 0.1), 0.4, Vec3(0.85, 0.3, 0.25), 0.5));
            out.push_back(sphere("green", Vec3(0.45, -0.05, -0.2), 0.35, Vec3(0.3, 0.8, 0.35)));
            out.push_back(sphere("blue", Vec3(0.1, 0.3, 0.5), 0.25, Vec3(0.3, 0.4, 0.9)));
        } else if (p.spec == "moving-sphere") {
            // Circles in the x-y plane above the other objects, so that from
            // most views nothing but background lies behind it.
            out.push_back(sphere("mover", Vec3(-0.7, 0.6, -0.05) + orbit(p, t, M_PI, Vec3::UnitX(), Vec3::UnitY()),
                                 0.3, Vec3(0.95, 0.75, 0.3), 0.45, true));
            out.push_back(sphere("big", Vec3(0.55, 0.0, 0.35), 0.45, Vec3(0.35, 0.55, 0.9)));
            out.push_back(sphere("small", Vec3(0.4, 0.1, -0.6), 0.3, Vec3(0.4, 0.85, 0.4)));
            out.push_back(box("block", Vec3(-0.1, -0.25, 0.75), Vec3(0.3, 0.2, 0.2), Vec3(0.8, 0.4, 0.7)));
        } else if (p.spec == "appearing-cube") {
            out.push_back(box("ground", Vec3(0.0, kGroundTop - 0.1, 0.0), Vec3(1.1, 0.1, 1.1),
                              Vec3(0.6, 0.6, 0.55), 0.6));
            out.push_back(sphere("ball", Vec3(-0.4, kGroundTop + 0.35, -0.3), 0.35, Vec3(0.85, 0.35, 0.3)));
            if (t >= p.t_appear) {
                // The cube rises out of the ground over three frames, then rests.
                const double edge = 0.36;
                const double grow = std::min(1.0, (t - p.t_appear + 1) / 3.0);
                const double h = edge * grow;
                out.push_back(box("cube", Vec3(0.4, kGroundTop + 0.5 * h, 0.35),
                                  Vec3(0.5 * edge, 0.5 * h, 0.5 * edge), Vec3(0.25, 0.45, 0.9), 0.0, true));
            }
        } else if (p.spec == "two-object") {
            out.push_back(sphere("orbiter", Vec3(-0.5, 0.0, 0.0) + orbit(p, t), 0.3, Vec3(0.95, 0.7, 0.3), 0.45,
                                 true));
            const double bob = p.amplitude * std::sin(2.0 * M_PI * t / std::max(p.period, 1));
            out.push_back(box("bobber", Vec3(0.5, bob, 0.1), Vec3::Constant(0.25), Vec3(0.3, 0.6, 0.9), 0.45,
                              true));
        } else {
            throw Error(ErrorCode::UnknownSpec, "unknown synthetic scene '" + p.spec + "'");
        }
        return out;
    }

    std::vector<CameraView> synthetic_rig(const SyntheticParams& p) {
        if (std::find(synthetic_specs().begin(), synthetic_specs().end(), p.spec) == synthetic_specs().end()) {
            throw Error(ErrorCode::UnknownSpec, "unknown synthetic scene '" + p.spec + "'");
        }
        const bool ground = p.spec == "appearing-cube";
        std::vector<CameraView> cams;
        const double radius = 3.2;
        const double focal = 1.25 * p.width;
        for (int i = 0; i < p.cameras; ++i) {
            const double a = 2.0 * M_PI * i / p.cameras;
            const double h = ground ? (i % 2 == 0 ? 1.6 : 0.9) : (i % 2 == 0 ? 1.4 : -0.7);
            const Vec3 eye(radius * std::cos(a), h, radius * std::sin(a));
            char id[16];
            std::snprintf(id, sizeof(id), "cam%02d", i);
            cams.push_back(CameraView::look_at(id, eye, Vec3(0.0, ground ? -0.2 : 0.0, 0.0), Vec3::UnitY(),
                                               p.width, p.height, focal));
        }
        return cams;
    }

    Image ray_trace(const std::vector<SceneObject>& objects, const CameraView& cam, int supersample) {
        Image img(cam.width, cam.height);
        const int n = std::max(1, supersample);
        const Vec3 orig = cam.center();
#pragma omp parallel for schedule(static)
        for (int y = 0; y < cam.height; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                Vec3 acc = Vec3::Zero();
                for (int sy = 0; sy < n; ++sy) {
                    for (int sx = 0; sx < n; ++sx) {
                        const double px = x - 0.5 + (sx + 0.5) / n;
                        const double py = y - 0.5 + (sy + 0.5) / n;
                        const Vec3 dir = ray_direction(cam, px, py);
                        const Hit hit = trace(objects, orig, dir);
                        if (hit.object) acc += shade(hit, orig + hit.t * dir);
                    }
                }
                acc /= static_cast<double>(n * n);
                for (int c = 0; c < 3; ++c) img.at(x, y, c) = acc[c];
            }
        }
        return img;
    }

    std::optional<double> ray_depth(const std::vector<SceneObject>& objects, const CameraView& cam, double x,
                                    double y) {
        const Vec3 dir = ray_direction(cam, x, y);
        const Hit hit = trace(objects, cam.center(), dir);
        if (!hit.object) return std::nullopt;
        return cam.to_camera(cam.center() + hit.t * dir).z();
    }

    std::vector<Vec3> sample_surface_points(const std::vector<SceneObject>& objects, int count,
                                            std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> n(0.0, 1.0);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        std::vector<double> areas;
        for (const auto& o : objects) {
            if (o.kind == SceneObject::Kind::Sphere) {
                areas.push_back(4.0 * M_PI * o.radius * o.radius);
            } else {
                const Vec3 e = 2.0 * o.half;
                areas.push_back(2.0 * (e.x() * e.y() + e.y() * e.z() + e.x() * e.z()));
            }
        }
        const double total = std::accumulate(areas.begin(), areas.end(), 0.0);
        std::vector<Vec3> pts;
        for (std::size_t i = 0; i < objects.size(); ++i) {
            const auto& o = objects[i];
            const int k = static_cast<int>(std::lround(count * areas[i] / total));
            for (int j = 0; j < k; ++j) {
                if (o.kind == SceneObject::Kind::Sphere) {
                    const Vec3 d = Vec3(n(rng), n(rng), n(rng)).normalized();
                    pts.push_back(o.center + o.radius * d);
                } else {
                    // Area-weighted face choice.
                    const Vec3 e = 2.0 * o.half;
                    const double fa[3] = {e.y() * e.z(), e.x() * e.z(), e.x() * e.y()};
                    std::uniform_real_distribution<double> pick(0.0, fa[0] + fa[1] + fa[2]);
                    const double r = pick(rng);
                    const int axis = r < fa[0] ? 0 : (r < fa[0] + fa[1] ? 1 : 2);
                    Vec3 q(u(rng), u(rng), u(rng));
                    q[axis] = u(rng) < 0.0 ? -1.0 : 1.0;
                    pts.push_back(o.center + q.cwiseProduct(o.half));
                }
            }
        }
        return pts;
    }

    bool object_contains(const SceneObject& o, const Vec3& p) {
        if (o.kind == SceneObject::Kind::Sphere) return (p - o.center).norm() <= o.radius;
        return ((p - o.center).cwiseAbs() - o.half).maxCoeff() <= 0.0;
    }

    bool box_intersects_swept(const SceneObject& from, const SceneObject& to, const Vec3& box_min,
                              const Vec3& box_max) {
        // Sample the linear path densely; each sample is an exact box test.
        const int steps = 32;
        for (int i = 0; i <= steps; ++i) {
            const double s = static_cast<double>(i) / steps;
            SceneObject o = from;
            o.center = (1.0 - s) * from.center + s * to.center;
            o.half = (1.0 - s) * from.half + s * to.half;
            const Vec3 closest = o.center.cwiseMax(box_min).cwiseMin(box_max);
            if (o.kind == SceneObject::Kind::Sphere) {
                if ((closest - o.center).norm() <= o.radius) return true;
            } else {
                const Vec3 lo = o.center - o.half;
                const Vec3 hi = o.center + o.half;
                if ((lo.array() <= box_max.array()).all() && (hi.array() >= box_min.array()).all()) return true;
            }
        }
        return false;
    }

    void generate_synthetic(const SyntheticParams& params, const std::filesystem::path& out_dir) {
        const auto cams = synthetic_rig(params);
        const auto frame0 = scene_at(params, 0);
        std::filesystem::create_directories(out_dir);
        write_cameras(out_dir / "cameras.json", cams);
        write_points(out_dir / "points.xyz", sample_surface_points(frame0, params.points, params.seed));

        nlohmann::json labels;
        labels["spec"] = params.spec;
        labels["frames"] = nlohmann::json::array();
        for (int t = 0; t < params.frames; ++t) {
            const auto objects = scene_at(params, t);
            nlohmann::json objs = nlohmann::json::array();
            for (const auto& o : objects) {
                objs.push_back({{"name", o.name},
                                {"kind", o.kind == SceneObject::Kind::Sphere ? "sphere" : "box"},
                                {"center", {o.center.x(), o.center.y(), o.center.z()}},
                                {"radius", o.radius},
                                {"half", {o.half.x(), o.half.y(), o.half.z()}},
                                {"dynamic", o.dynamic}});
            }
            labels["frames"].push_back({{"frame", t}, {"objects", objs}});
            const auto dir = frame_dir(out_dir, t);
            std::filesystem::create_directories(dir);
            for (const auto& cam : cams) {
                write_ppm(dir / (cam.id + ".ppm"), ray_trace(objects, cam, params.supersample));
            }
        }
        std::ofstream(out_dir / "labels.json") << labels.dump(1) << "\n";
    }

} // namespace tiersplat::pipeline
