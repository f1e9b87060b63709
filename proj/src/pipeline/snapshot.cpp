#include "tiersplat/pipeline/snapshot.hpp"
#include "tiersplat/core/error.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

namespace tiersplat::pipeline {

    static_assert(std::endian::native == std::endian::little, "snapshot I/O assumes a little-endian host");

    namespace {

        constexpr char kMagic[4] = {'G', 'S', 'N', 'P'};

        class Writer {
        public:
            std::vector<std::uint8_t> bytes;

            template <typename T>
            void pod(T v) {
                const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
                bytes.insert(bytes.end(), p, p + sizeof(T));
            }
            void u8(std::uint8_t v) { pod(v); }
            void u32(std::uint32_t v) { pod(v); }
            void i32(std::int32_t v) { pod(v); }
            void u64(std::uint64_t v) { pod(v); }
            void i64(std::int64_t v) { pod(v); }
            void f64(double v) { pod(v); }
            void str(const std::string& s) {
                u32(static_cast<std::uint32_t>(s.size()));
                bytes.insert(bytes.end(), s.begin(), s.end());
            }
            void vec3(const Vec3& v) {
                for (int i = 0; i < 3; ++i) f64(v[i]);
            }
            void doubles(std::span<const double> v) {
                u64(v.size());
                for (double x : v) f64(x);
            }
        };

        class Reader {
        public:
            explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

            template <typename T>
            T pod() {
                if (pos_ + sizeof(T) > bytes_.size()) throw Error(ErrorCode::ParseError, "snapshot truncated");
                T v;
                std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
                pos_ += sizeof(T);
                return v;
            }
            std::uint8_t u8() { return pod<std::uint8_t>(); }
            std::uint32_t u32() { return pod<std::uint32_t>(); }
            std::int32_t i32() { return pod<std::int32_t>(); }
            std::uint64_t u64() { return pod<std::uint64_t>(); }
            std::int64_t i64() { return pod<std::int64_t>(); }
            double f64() { return pod<double>(); }
            std::size_t count(std::size_t elem_size) {
                const std::uint64_t n = u64();
                if (n > (bytes_.size() - pos_) / std::max<std::size_t>(elem_size, 1)) {
                    throw Error(ErrorCode::ParseError, "snapshot count exceeds payload");
                }
                return static_cast<std::size_t>(n);
            }
            std::string str() {
                const std::uint32_t n = u32();
                if (pos_ + n > bytes_.size()) throw Error(ErrorCode::ParseError, "snapshot truncated");
                std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                              bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
                pos_ += n;
                return s;
            }
            Vec3 vec3() {
                Vec3 v;
                for (int i = 0; i < 3; ++i) v[i] = f64();
                return v;
            }
            std::vector<double> doubles() {
                std::vector<double> v(count(sizeof(double)));
                for (double& x : v) x = f64();
                return v;
            }
            bool done() const { return pos_ == bytes_.size(); }

        private:
            const std::vector<std::uint8_t>& bytes_;
            std::size_t pos_ = 0;
        };

        void copy_params(std::span<double> dst, const std::vector<double>& src, const char* what) {
            if (dst.size() != src.size()) {
                throw Error(ErrorCode::ParseError, std::string("snapshot: parameter count mismatch in ") + what);
            }
            std::copy(src.begin(), src.end(), dst.begin());
        }

        void put_mlp(Writer& w, const nn::Mlp& m) {
            w.u32(static_cast<std::uint32_t>(m.sizes().size()));
            for (int s : m.sizes()) w.i32(s);
            w.doubles(m.params());
        }

        nn::Mlp get_mlp(Reader& r) {
            const std::uint32_t n = r.u32();
            if (n > 64) throw Error(ErrorCode::ParseError, "snapshot: implausible layer count");
            std::vector<int> sizes(n);
            for (int& s : sizes) {
                s = r.i32();
                if (s < 1) throw Error(ErrorCode::ParseError, "snapshot: bad layer size");
            }
            nn::Mlp m;
            if (n > 0) m = nn::Mlp(sizes);
            copy_params(m.params(), r.doubles(), "mlp");
            return m;
        }

        void put_camera(Writer& w, const CameraView& c) {
            w.str(c.id);
            w.i32(c.width);
            w.i32(c.height);
            w.f64(c.fx);
            w.f64(c.fy);
            w.f64(c.cx);
            w.f64(c.cy);
            for (int i = 0; i < 3; ++i) {
                for (int j = 0; j < 3; ++j) w.f64(c.R_wc(i, j));
            }
            w.vec3(c.t_wc);
        }

        CameraView get_camera(Reader& r) {
            CameraView c;
            c.id = r.str();
            c.width = r.i32();
            c.height = r.i32();
            c.fx = r.f64();
            c.fy = r.f64();
            c.cx = r.f64();
            c.cy = r.f64();
            for (int i = 0; i < 3; ++i) {
                for (int j = 0; j < 3; ++j) c.R_wc(i, j) = r.f64();
            }
            c.t_wc = r.vec3();
            return c;
        }

    } // namespace

    std::vector<std::uint8_t> encode_snapshot(const Snapshot& snap) {
        const auto& s = snap.state;
        Writer w;
        for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
        w.u32(kSnapshotVersion);
        w.i32(s.frame);
        w.f64(s.voxel_size);
        w.vec3(s.scene_min);
        w.vec3(s.scene_max);
        w.u64(s.next_id);

        w.f64(s.stats.s_min0);
        w.f64(s.stats.s_max0);
        w.f64(s.stats.s_mean0);
        w.u32(static_cast<std::uint32_t>(s.levels.size()));
        for (const auto& lv : s.levels) {
            w.i32(lv.l);
            w.f64(lv.s_min);
            w.f64(lv.s_max);
            w.f64(lv.res_factor);
            w.f64(lv.tau_add);
            w.u8(lv.active ? 1 : 0);
        }

        w.u32(static_cast<std::uint32_t>(snap.cameras.size()));
        for (const auto& c : snap.cameras) put_camera(w, c);
        w.str(snap.held_out);

        w.u64(s.anchors.size());
        for (const auto& a : s.anchors) {
            w.u32(a.id);
            for (int i = 0; i < 3; ++i) w.i64(a.voxel[static_cast<std::size_t>(i)]);
            w.vec3(a.position);
            w.doubles(std::span<const double>(a.feature.data(), static_cast<std::size_t>(a.feature.size())));
            w.vec3(a.scaling);
            w.doubles(std::span<const double>(a.offsets.data(), static_cast<std::size_t>(a.offsets.size())));
            w.u8(a.dynamic ? 1 : 0);
            w.u32(static_cast<std::uint32_t>(a.gaussian_ids.size()));
            for (const auto& ids : a.gaussian_ids) {
                w.u64(ids.size());
                for (GaussianId id : ids) w.u64(id);
            }
        }

        w.u64(s.gaussians.size());
        for (const auto& g : s.gaussians) {
            w.u64(g.id);
            w.vec3(g.mu);
            w.f64(g.q.w);
            w.f64(g.q.x);
            w.f64(g.q.y);
            w.f64(g.q.z);
            w.vec3(g.s);
            w.f64(g.alpha);
            w.vec3(g.color);
            w.i32(g.level);
            w.f64(g.mask_logit);
            w.u32(g.anchor_id);
        }

        w.i32(s.decoders.feature_dim);
        w.i32(s.decoders.k);
        for (const nn::Mlp* m : {&s.decoders.opacity, &s.decoders.color, &s.decoders.rotation, &s.decoders.scale}) {
            put_mlp(w, *m);
        }

        w.u32(static_cast<std::uint32_t>(s.nets.size()));
        for (const auto& n : s.nets) {
            const auto& hc = n.encoding.config();
            w.i32(hc.num_grids);
            w.i32(hc.base_resolution);
            w.f64(hc.growth);
            w.i32(hc.log2_table_size);
            w.i32(hc.features_per_grid);
            w.vec3(n.encoding.box_min());
            w.vec3(n.encoding.box_max());
            w.doubles(n.encoding.params());
            put_mlp(w, n.mlp_g);
            put_mlp(w, n.mlp_a);
            w.u8(n.appearance_residual ? 1 : 0);
        }

        w.i32(s.history.frames_seen());
        w.u32(static_cast<std::uint32_t>(s.history.frames().size()));
        for (const auto& hits : s.history.frames()) {
            w.u64(hits.size());
            for (const auto& [id, n] : hits) {
                w.u32(id);
                w.i32(n);
            }
        }
        w.u64(s.dynamic.size());
        for (AnchorId id : s.dynamic) w.u32(id);
        return std::move(w.bytes);
    }

    Snapshot decode_snapshot(const std::vector<std::uint8_t>& bytes) {
        Reader r(bytes);
        for (char c : kMagic) {
            if (r.u8() != static_cast<std::uint8_t>(c)) throw Error(ErrorCode::ParseError, "not a snapshot file");
        }
        const std::uint32_t version = r.u32();
        if (version != kSnapshotVersion) {
            throw Error(ErrorCode::ParseError, "unsupported snapshot version " + std::to_string(version));
        }
        Snapshot snap;
        auto& s = snap.state;
        s.frame = r.i32();
        s.voxel_size = r.f64();
        s.scene_min = r.vec3();
        s.scene_max = r.vec3();
        s.next_id = r.u64();

        s.stats.s_min0 = r.f64();
        s.stats.s_max0 = r.f64();
        s.stats.s_mean0 = r.f64();
        const std::uint32_t nl = r.u32();
        if (nl > 64) throw Error(ErrorCode::ParseError, "snapshot: implausible level count");
        for (std::uint32_t i = 0; i < nl; ++i) {
            multiscale::ScaleLevel lv;
            lv.l = r.i32();
            lv.s_min = r.f64();
            lv.s_max = r.f64();
            lv.res_factor = r.f64();
            lv.tau_add = r.f64();
            lv.active = r.u8() != 0;
            s.levels.push_back(lv);
        }

        const std::uint32_t nc = r.u32();
        for (std::uint32_t i = 0; i < nc; ++i) snap.cameras.push_back(get_camera(r));
        snap.held_out = r.str();

        const std::size_t na = r.count(4);
        s.anchors.resize(na);
        for (auto& a : s.anchors) {
            a.id = r.u32();
            for (int i = 0; i < 3; ++i) a.voxel[static_cast<std::size_t>(i)] = r.i64();
            a.position = r.vec3();
            const auto feat = r.doubles();
            a.feature = Eigen::Map<const Eigen::VectorXd>(feat.data(), static_cast<Eigen::Index>(feat.size()));
            a.scaling = r.vec3();
            const auto off = r.doubles();
            if (off.size() % 3 != 0) throw Error(ErrorCode::ParseError, "snapshot: bad offset block");
            a.offsets.resize(static_cast<Eigen::Index>(off.size() / 3), 3);
            std::copy(off.begin(), off.end(), a.offsets.data());
            a.dynamic = r.u8() != 0;
            const std::uint32_t levels = r.u32();
            if (levels > 64) throw Error(ErrorCode::ParseError, "snapshot: implausible level count");
            a.gaussian_ids.resize(levels);
            for (auto& ids : a.gaussian_ids) {
                ids.resize(r.count(8));
                for (GaussianId& id : ids) id = r.u64();
            }
        }

        const std::size_t ng = r.count(8);
        s.gaussians.resize(ng);
        for (auto& g : s.gaussians) {
            g.id = r.u64();
            g.mu = r.vec3();
            g.q.w = r.f64();
            g.q.x = r.f64();
            g.q.y = r.f64();
            g.q.z = r.f64();
            g.s = r.vec3();
            g.alpha = r.f64();
            g.color = r.vec3();
            g.level = r.i32();
            g.mask_logit = r.f64();
            g.anchor_id = r.u32();
        }

        s.decoders.feature_dim = r.i32();
        s.decoders.k = r.i32();
        s.decoders.opacity = get_mlp(r);
        s.decoders.color = get_mlp(r);
        s.decoders.rotation = get_mlp(r);
        s.decoders.scale = get_mlp(r);

        const std::uint32_t nn_count = r.u32();
        if (nn_count > 64) throw Error(ErrorCode::ParseError, "snapshot: implausible net count");
        for (std::uint32_t i = 0; i < nn_count; ++i) {
            optim::HashEncodingConfig hc;
            hc.num_grids = r.i32();
            hc.base_resolution = r.i32();
            hc.growth = r.f64();
            hc.log2_table_size = r.i32();
            hc.features_per_grid = r.i32();
            if (hc.num_grids < 1 || hc.num_grids > 64 || hc.log2_table_size < 1 || hc.log2_table_size > 30 ||
                hc.features_per_grid < 1 || hc.base_resolution < 1) {
                throw Error(ErrorCode::ParseError, "snapshot: bad hash encoding config");
            }
            const Vec3 lo = r.vec3();
            const Vec3 hi = r.vec3();
            optim::DeformNets n;
            n.encoding = optim::HashEncoding(hc, lo, hi);
            copy_params(n.encoding.params(), r.doubles(), "hash table");
            n.mlp_g = get_mlp(r);
            n.mlp_a = get_mlp(r);
            n.appearance_residual = r.u8() != 0;
            s.nets.push_back(std::move(n));
        }

        const int seen = r.i32();
        const std::uint32_t nh = r.u32();
        std::vector<std::map<AnchorId, int>> frames(nh);
        for (auto& hits : frames) {
            const std::size_t n = r.count(8);
            for (std::size_t i = 0; i < n; ++i) {
                const AnchorId id = r.u32();
                hits[id] = r.i32();
            }
        }
        s.history = masking::DetectionHistory::restore(std::move(frames), seen);
        const std::size_t nd = r.count(4);
        for (std::size_t i = 0; i < nd; ++i) s.dynamic.insert(r.u32());
        if (!r.done()) throw Error(ErrorCode::ParseError, "snapshot has trailing bytes");
        return snap;
    }

    void write_snapshot(const std::filesystem::path& path, const Snapshot& snap) {
        const auto bytes = encode_snapshot(snap);
        auto tmp = path;
        tmp += ".tmp";
        {
            std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
            if (!f) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
            f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
            f.flush();
            if (!f) throw Error(ErrorCode::IoError, "write failed: " + tmp.string());
        }
        std::error_code ec;
        std::filesystem::rename(tmp, path, ec);
        if (ec) throw Error(ErrorCode::IoError, "cannot commit " + path.string() + ": " + ec.message());
    }

    Snapshot read_snapshot(const std::filesystem::path& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw Error(ErrorCode::IoError, "cannot read " + path.string());
        const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        return decode_snapshot(bytes);
    }

    std::filesystem::path snapshot_path(const std::filesystem::path& dir, int frame) {
        char name[32];
        std::snprintf(name, sizeof(name), "f%04d.gsnap", frame);
        return dir / name;
    }

} // namespace tiersplat::pipeline
