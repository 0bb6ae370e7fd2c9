#include "monoflow/synthscene.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "monoflow/array_io.hpp"

namespace fs = std::filesystem;

namespace monoflow::synth {

// ---------------------------------------------------------------------------
// procedural texture

namespace {

double lattice(std::uint64_t seed, std::int64_t ix, std::int64_t iy) {
    const std::uint64_t h = Rng::splitmix(
        seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(ix) +
        0xC2B2AE3D27D4EB4Full * static_cast<std::uint64_t>(iy));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

double vnoise(std::uint64_t seed, double u, double v) {
    const double fu = std::floor(u), fv = std::floor(v);
    const auto ix = static_cast<std::int64_t>(fu), iy = static_cast<std::int64_t>(fv);
    const double tu = smoothstep(u - fu), tv = smoothstep(v - fv);
    const double a = lattice(seed, ix, iy), b = lattice(seed, ix + 1, iy);
    const double c = lattice(seed, ix, iy + 1), d = lattice(seed, ix + 1, iy + 1);
    return (a * (1 - tu) + b * tu) * (1 - tv) + (c * (1 - tu) + d * tu) * tv;
}

struct Palette {
    double r, g, b;
    double contrast;
    double period;
};

Palette palette_of(SurfaceClass cls) {
    switch (cls) {
        case SurfaceClass::Ground:   return {0.36, 0.33, 0.30, 0.65, 1.40};
        case SurfaceClass::Backdrop: return {0.55, 0.60, 0.68, 0.70, 5.00};
        case SurfaceClass::CarWarm:  return {0.62, 0.28, 0.22, 0.85, 0.55};
        case SurfaceClass::CarCool:  return {0.25, 0.42, 0.50, 0.85, 0.55};
        case SurfaceClass::Building: return {0.45, 0.45, 0.48, 0.70, 1.80};
    }
    return {0.5, 0.5, 0.5, 0.5, 1.0};
}

void shade(SurfaceClass cls, std::uint64_t seed, double u, double v, double richness,
           double dist, double* rgb) {
    const Palette p = palette_of(cls);
    const double n = 0.65 * vnoise(seed, u / p.period, v / p.period) +
                     0.35 * vnoise(seed ^ 0x5555AAAA5555AAAAull, u / (0.31 * p.period),
                                   v / (0.31 * p.period));
    // fade with distance so far texture stays band-limited on the image grid
    const double amp = 0.5 * p.contrast * richness * std::exp(-dist / 60.0);
    const double jr = 0.12 * (lattice(seed, 7, 7) - 0.5);
    const double jg = 0.12 * (lattice(seed, 13, 5) - 0.5);
    const double jb = 0.12 * (lattice(seed, 3, 17) - 0.5);
    const double lum = (2.0 * n - 1.0) * amp;
    rgb[0] = std::clamp(p.r + jr + lum, 0.02, 0.98);
    rgb[1] = std::clamp(p.g + jg + lum, 0.02, 0.98);
    rgb[2] = std::clamp(p.b + jb + lum, 0.02, 0.98);
}

// slab test; returns entry distance (> 0) or nullopt
std::optional<double> ray_box(const geom::Vec3& origin, const geom::Vec3& dir,
                              const geom::Vec3& lo, const geom::Vec3& hi) {
    double tmin = 1e-9, tmax = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (std::abs(dir[a]) < 1e-12) {
            if (origin[a] < lo[a] || origin[a] > hi[a]) return std::nullopt;
            continue;
        }
        double t0 = (lo[a] - origin[a]) / dir[a];
        double t1 = (hi[a] - origin[a]) / dir[a];
        if (t0 > t1) std::swap(t0, t1);
        tmin = std::max(tmin, t0);
        tmax = std::min(tmax, t1);
        if (tmin > tmax) return std::nullopt;
    }
    return tmin;
}

double jnum(const nlohmann::json& j, const std::string& path, const char* key,
            std::optional<double> fallback = std::nullopt) {
    if (!j.contains(key)) {
        if (fallback) return *fallback;
        throw ConfigError(path.empty() ? std::string(key) + ": missing required field"
                                       : path + "." + key + ": missing required field");
    }
    if (!j.at(key).is_number())
        throw ConfigError((path.empty() ? std::string(key) : path + "." + key) +
                          ": expected a number");
    return j.at(key).get<double>();
}

std::pair<double, double> jrange(const nlohmann::json& g, const char* key, double lo, double hi) {
    if (!g.contains(key)) return {lo, hi};
    const auto& v = g.at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
        throw ConfigError(std::string("generator.") + key + ": expected [lo, hi]");
    return {v[0].get<double>(), v[1].get<double>()};
}

}  // namespace

// ---------------------------------------------------------------------------
// spec parsing / expansion

SceneSpec SceneSpec::from_json(const nlohmann::json& j) {
    SceneSpec s;
    if (j.contains("preset")) {
        if (!j.at("preset").is_string()) throw ConfigError("preset: expected a string");
        s.preset = j.at("preset").get<std::string>();
    }
    if (s.preset != "ambiguous" && s.preset != "static")
        throw ConfigError("preset: must be 'ambiguous' or 'static'");
    s.width = static_cast<int>(jnum(j, "", "width", 192));
    s.height = static_cast<int>(jnum(j, "", "height", 64));
    if (s.width % 16 || s.height % 16)
        throw ConfigError("width: image sides must be multiples of 16");
    if (!j.contains("intrinsics")) throw ConfigError("intrinsics: missing required field");
    const auto& ij = j.at("intrinsics");
    s.intrinsics.fx = jnum(ij, "intrinsics", "fx");
    s.intrinsics.fy = jnum(ij, "intrinsics", "fy");
    s.intrinsics.cx = jnum(ij, "intrinsics", "cx");
    s.intrinsics.cy = jnum(ij, "intrinsics", "cy");
    s.intrinsics.width = s.width;
    s.intrinsics.height = s.height;
    s.intrinsics.validate();
    s.frame_count = static_cast<int>(jnum(j, "", "frame_count", 60));
    if (s.frame_count < 3) throw ConfigError("frame_count: need at least 3 frames");
    s.sequence_count = static_cast<int>(jnum(j, "", "sequence_count", 35));
    if (s.sequence_count < 1) throw ConfigError("sequence_count: must be >= 1");
    s.ground_height = jnum(j, "", "ground_height", 1.4);
    if (!(s.ground_height > 0)) throw ConfigError("ground_height: camera must sit above ground");
    s.camera_speed = jnum(j, "", "camera_speed", 0.5);
    if (!(s.camera_speed > 0)) throw ConfigError("camera_speed: must be > 0");
    s.texture_richness = jnum(j, "", "texture_richness", 0.8);
    if (s.texture_richness < 0 || s.texture_richness > 1)
        throw ConfigError("texture_richness: must lie in [0,1]");
    s.seed = static_cast<std::uint64_t>(jnum(j, "", "seed", 0));
    s.generator = j.contains("generator") ? j.at("generator") : nlohmann::json::object();
    return s;
}

nlohmann::json SceneSpec::to_json() const {
    nlohmann::json j;
    j["preset"] = preset;
    j["width"] = width;
    j["height"] = height;
    j["intrinsics"] = {{"fx", intrinsics.fx}, {"fy", intrinsics.fy},
                       {"cx", intrinsics.cx}, {"cy", intrinsics.cy}};
    j["frame_count"] = frame_count;
    j["sequence_count"] = sequence_count;
    j["ground_height"] = ground_height;
    j["camera_speed"] = camera_speed;
    j["texture_richness"] = texture_richness;
    j["seed"] = seed;
    j["generator"] = generator;

    auto seqs = nlohmann::json::array();
    for (const auto& seq : sequences) {
        auto objs = nlohmann::json::array();
        for (const auto& o : seq.objects)
            objs.push_back({{"id", o.id},
                            {"extent", {o.extent.x(), o.extent.y(), o.extent.z()}},
                            {"center0", {o.center0.x(), o.center0.y(), o.center0.z()}},
                            {"velocity", {o.velocity.x(), o.velocity.y(), o.velocity.z()}},
                            {"texture_seed", o.texture_seed},
                            {"class", static_cast<int>(o.cls)},
                            {"movable_class", o.movable_class}});
        seqs.push_back({{"backdrop_z", seq.backdrop_z}, {"objects", objs}});
    }
    j["sequences"] = seqs;
    return j;
}

void SceneSpec::expand() {
    const auto& g = generator;
    const auto leaders = jrange(g, "leaders", 2, 4);
    const auto leader_speed = jrange(g, "leader_speed", 0.33, 0.45);
    const auto oncoming = jrange(g, "oncoming", 2, 4);
    const auto oncoming_speed = jrange(g, "oncoming_speed", 0.45, 0.75);
    const auto parked = jrange(g, "parked", 3, 6);
    const auto buildings = jrange(g, "buildings", 2, 4);
    const double warm_moving =
        g.contains("warm_moving_prob") ? g.at("warm_moving_prob").get<double>() : 0.8;
    const double warm_parked =
        g.contains("warm_parked_prob") ? g.at("warm_parked_prob").get<double>() : 0.2;
    const bool freeze_all = preset == "static";

    sequences.clear();
    Rng root(seed);
    for (int s = 0; s < sequence_count; ++s) {
        Rng rng = root.fork(1000 + static_cast<std::uint64_t>(s));
        SequenceSpec seq;
        seq.backdrop_z = 70.0;
        for (int f = 0; f < frame_count; ++f) {
            geom::PoseSE3 cam;
            cam.translation = geom::Vec3(0, 0, camera_speed * f);
            seq.camera.push_back(cam);
        }

        int next_id = 2;
        auto count_in = [&](std::pair<double, double> r) {
            return static_cast<int>(r.first + 0.5 + rng.uniform() * (r.second - r.first));
        };
        auto car_extent = [&]() {
            return geom::Vec3(rng.uniform(1.6, 2.0), rng.uniform(1.2, 1.5), rng.uniform(3.2, 4.2));
        };
        auto rest_y = [&](double h) { return ground_height - h / 2.0; };

        // leaders: same direction as the camera, slightly slower (collinear movers)
        {
            const int n = count_in(leaders);
            double cursor = 7.0;
            for (int i = 0; i < n; ++i) {
                BoxObject o;
                o.id = next_id++;
                o.extent = car_extent();
                const double v = rng.uniform(leader_speed.first, leader_speed.second);
                const double closing = camera_speed - v;
                o.velocity = freeze_all ? geom::Vec3::Zero() : geom::Vec3(0, 0, v);
                const double z0 =
                    cursor + std::max(0.0, closing) * frame_count + rng.uniform(0.0, 6.0);
                o.center0 = geom::Vec3(rng.uniform(-0.9, 0.9), rest_y(o.extent.y()),
                                       z0 + o.extent.z() / 2.0);
                cursor = z0 + o.extent.z() + 3.0;
                o.texture_seed = rng.next_u64();
                o.cls = rng.uniform() < warm_moving ? SurfaceClass::CarWarm : SurfaceClass::CarCool;
                o.movable_class = true;
                seq.objects.push_back(o);
            }
        }
        // oncoming traffic in the left lane
        {
            const int n = count_in(oncoming);
            for (int i = 0; i < n; ++i) {
                BoxObject o;
                o.id = next_id++;
                o.extent = car_extent();
                const double v = rng.uniform(oncoming_speed.first, oncoming_speed.second);
                o.velocity = freeze_all ? geom::Vec3::Zero() : geom::Vec3(0, 0, -v);
                const double z0 = 12.0 + (75.0 / std::max(1, n)) * i + rng.uniform(0.0, 8.0);
                o.center0 = geom::Vec3(rng.uniform(-4.6, -2.8), rest_y(o.extent.y()), z0);
                o.texture_seed = rng.next_u64();
                o.cls = rng.uniform() < warm_moving ? SurfaceClass::CarWarm : SurfaceClass::CarCool;
                o.movable_class = true;
                seq.objects.push_back(o);
            }
        }
        // parked cars at both roadsides
        {
            const int n = count_in(parked);
            for (int i = 0; i < n; ++i) {
                BoxObject o;
                o.id = next_id++;
                o.extent = car_extent();
                o.velocity = geom::Vec3::Zero();
                const bool right = rng.uniform() < 0.6;
                const double x = right ? rng.uniform(2.4, 6.2) : rng.uniform(-7.6, -5.0);
                const double z0 = 6.0 + (62.0 / std::max(1, n)) * i + rng.uniform(0.0, 7.0);
                o.center0 = geom::Vec3(x, rest_y(o.extent.y()), z0);
                o.texture_seed = rng.next_u64();
                o.cls = rng.uniform() < warm_parked ? SurfaceClass::CarWarm : SurfaceClass::CarCool;
                o.movable_class = true;
                seq.objects.push_back(o);
            }
        }
        // buildings set back from the road
        {
            const int n = count_in(buildings);
            for (int i = 0; i < n; ++i) {
                BoxObject o;
                o.id = next_id++;
                o.extent = geom::Vec3(rng.uniform(4, 8), rng.uniform(3, 6), rng.uniform(6, 14));
                o.velocity = geom::Vec3::Zero();
                const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
                o.center0 = geom::Vec3(side * rng.uniform(8.5, 16.0), rest_y(o.extent.y()),
                                       8.0 + (70.0 / std::max(1, n)) * i + rng.uniform(0.0, 10.0));
                o.texture_seed = rng.next_u64();
                o.cls = SurfaceClass::Building;
                o.movable_class = false;
                seq.objects.push_back(o);
            }
        }
        sequences.push_back(std::move(seq));
    }
    validate();
}

void SceneSpec::validate() const {
    intrinsics.validate();
    if (sequences.empty()) throw ConfigError("scene: no sequences (call expand())");
    for (const auto& seq : sequences) {
        if (static_cast<int>(seq.camera.size()) != frame_count)
            throw ConfigError("scene: camera trajectory length mismatch");
        int moving_frames = 0;
        for (size_t f = 0; f + 1 < seq.camera.size(); ++f)
            if ((seq.camera[f + 1].translation - seq.camera[f].translation).norm() > 1e-9)
                ++moving_frames;
        if (moving_frames < static_cast<int>(0.9 * (frame_count - 1)))
            throw ConfigError("scene: camera must be moving for >= 90% of frames");
        if (preset == "ambiguous") {
            if (seq.objects.empty())
                throw ConfigError("scene: ambiguous preset requires at least one object");
            bool collinear_mover = false;
            for (const auto& o : seq.objects)
                if (o.moving() && std::abs(o.velocity.x()) < 1e-9 &&
                    std::abs(o.velocity.y()) < 1e-9 && std::abs(o.velocity.z()) > 1e-9)
                    collinear_mover = true;
            if (!collinear_mover)
                throw ConfigError("scene: ambiguous preset requires a collinear mover per sequence");
        }
        if (preset == "static")
            for (const auto& o : seq.objects)
                if (o.moving()) throw ConfigError("scene: static preset must have zero velocities");
    }
}

// ---------------------------------------------------------------------------
// rendering

RenderOut render_frame(const SequenceSpec& seq, const SceneSpec& spec, int frame) {
    const auto& K = spec.intrinsics;
    const int W = spec.width, H = spec.height;
    const geom::PoseSE3& cam = seq.camera.at(static_cast<size_t>(frame));

    RenderOut out;
    out.image = io::Image8(W, H);
    out.depth = Eigen::ArrayXXd::Zero(H, W);
    out.instance = Eigen::ArrayXXi::Zero(H, W);
    out.world.assign(3, Eigen::ArrayXXd::Zero(H, W));

    struct BoxState {
        geom::Vec3 lo, hi, center;
        const BoxObject* obj;
    };
    std::vector<BoxState> boxes;
    boxes.reserve(seq.objects.size());
    for (const auto& o : seq.objects) {
        const geom::Vec3 c = o.center_at(frame);
        boxes.push_back({c - o.extent / 2.0, c + o.extent / 2.0, c, &o});
    }

    const std::uint64_t ground_seed = Rng(spec.seed).fork(17).next_u64();
    const std::uint64_t backdrop_seed = Rng(spec.seed).fork(18).next_u64();

    struct Hit {
        double t = 0;
        int id = 1;
        geom::Vec3 point = geom::Vec3::Zero();
        const BoxState* box = nullptr;
    };
    auto cast_ray = [&](double xf, double yf) {
        const geom::Vec3 dir_cam((xf - K.cx) / K.fx, (yf - K.cy) / K.fy, 1.0);
        const geom::Vec3 dir = cam.rotation * dir_cam;
        const geom::Vec3& origin = cam.translation;

        Hit h;
        h.t = std::numeric_limits<double>::infinity();
        h.id = -1;
        if (dir.y() > 1e-12) {  // ground below
            const double t = (spec.ground_height - origin.y()) / dir.y();
            if (t > 1e-9 && t < h.t) {
                h.t = t;
                h.id = 0;
            }
        }
        if (dir.z() > 1e-12) {  // far backdrop
            const double t = (seq.backdrop_z - origin.z()) / dir.z();
            if (t > 1e-9 && t < h.t) {
                h.t = t;
                h.id = 1;
                h.box = nullptr;
            }
        }
        for (const auto& b : boxes) {
            if (auto t = ray_box(origin, dir, b.lo, b.hi)) {
                if (*t < h.t) {
                    h.t = *t;
                    h.id = b.obj->id;
                    h.box = &b;
                }
            }
        }
        if (h.id < 0) {  // pathological ray (never happens with a forward camera)
            h.t = 1e6;
            h.id = 1;
        }
        h.point = origin + h.t * dir;
        return h;
    };
    auto shade_hit = [&](const Hit& h, double* rgb) {
        if (h.id == 0) {
            shade(SurfaceClass::Ground, ground_seed, h.point.x(), h.point.z(),
                  spec.texture_richness, h.t, rgb);
        } else if (h.id == 1) {
            shade(SurfaceClass::Backdrop, backdrop_seed, h.point.x(), h.point.y(),
                  spec.texture_richness, h.t, rgb);
        } else {
            // texture rides with the box: uv in object-local coordinates
            const geom::Vec3 l = h.point - h.box->center;
            const geom::Vec3 he = h.box->obj->extent / 2.0;
            double u, v;
            if (std::abs(std::abs(l.x()) - he.x()) < 1e-6) {
                u = l.y(); v = l.z();
            } else if (std::abs(std::abs(l.y()) - he.y()) < 1e-6) {
                u = l.x(); v = l.z();
            } else {
                u = l.x(); v = l.y();
            }
            shade(h.box->obj->cls, h.box->obj->texture_seed, u, v, spec.texture_richness, h.t,
                  rgb);
        }
    };

    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            // geometry ground truth at the exact pixel center
            const Hit center = cast_ray(x, y);
            out.depth(y, x) = center.t;  // dir_cam.z == 1, so t equals camera depth
            out.instance(y, x) = center.id;
            for (int a = 0; a < 3; ++a) out.world[static_cast<size_t>(a)](y, x) = center.point[a];

            // color 2x2-supersampled to keep textures warp-consistent
            double rgb[3] = {0, 0, 0};
            for (double dy : {-0.25, 0.25})
                for (double dx : {-0.25, 0.25}) {
                    double s[3];
                    shade_hit(cast_ray(x + dx, y + dy), s);
                    for (int c = 0; c < 3; ++c) rgb[c] += 0.25 * s[c];
                }
            for (int c = 0; c < 3; ++c)
                out.image.at(x, y)[c] =
                    static_cast<std::uint8_t>(std::lround(std::clamp(rgb[c], 0.0, 1.0) * 255.0));
        }
    }
    return out;
}

SceneFlowOut true_scene_flow(const SequenceSpec& seq, const SceneSpec& spec, int frame,
                             const RenderOut& state_t, const RenderOut& state_next) {
    const auto& K = spec.intrinsics;
    const int W = spec.width, H = spec.height;
    const geom::PoseSE3 world_to_t = seq.camera.at(static_cast<size_t>(frame)).inverse();
    const geom::PoseSE3 world_to_s = seq.camera.at(static_cast<size_t>(frame + 1)).inverse();

    int max_id = 1;
    for (const auto& o : seq.objects) max_id = std::max(max_id, o.id);
    std::vector<geom::Vec3> vel_by_id(static_cast<size_t>(max_id) + 1, geom::Vec3::Zero());
    for (const auto& o : seq.objects) vel_by_id.at(static_cast<size_t>(o.id)) = o.velocity;

    SceneFlowOut out{geom::FlowField3(W, H), Eigen::ArrayXXd::Zero(H, W)};
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const int id = state_t.instance(y, x);
            const geom::Vec3 w(state_t.world[0](y, x), state_t.world[1](y, x),
                               state_t.world[2](y, x));
            const geom::Vec3 w_next = w + vel_by_id.at(static_cast<size_t>(id));
            const geom::Vec3 pt = world_to_t.apply(w);
            const geom::Vec3 ps = world_to_s.apply(w_next);
            out.flow.set(x, y, ps - pt);

            if (ps.z() > 1e-6) {
                const geom::Vec2 p = geom::project(ps, K);
                const int xr = static_cast<int>(std::lround(p.x()));
                const int yr = static_cast<int>(std::lround(p.y()));
                if (xr >= 0 && xr < W && yr >= 0 && yr < H) {
                    const bool same_surface = state_next.instance(yr, xr) == id;
                    const bool not_occluded = ps.z() <= state_next.depth(yr, xr) * 1.04 + 0.08;
                    if (same_surface || not_occluded) out.valid(y, x) = 1.0;
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// dataset writer

namespace {

io::ArrayF to_array(const Eigen::ArrayXXd& a) {
    io::ArrayF arr;
    arr.shape = {static_cast<int>(a.rows()), static_cast<int>(a.cols())};
    arr.data.resize(static_cast<size_t>(a.size()));
    for (int y = 0; y < a.rows(); ++y)
        for (int x = 0; x < a.cols(); ++x)
            arr.data[static_cast<size_t>(y) * static_cast<size_t>(a.cols()) +
                     static_cast<size_t>(x)] = static_cast<float>(a(y, x));
    return arr;
}

io::ArrayF flow_to_array(const geom::FlowField3& f) {
    io::ArrayF arr;
    arr.shape = {f.height, f.width, 3};
    arr.data.resize(static_cast<size_t>(f.height) * f.width * 3);
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x)
            for (int c = 0; c < 3; ++c)
                arr.data[(static_cast<size_t>(y) * f.width + x) * 3 + c] =
                    static_cast<float>(f.ch[static_cast<size_t>(c)](y, x));
    return arr;
}

std::string zpad(int v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06d", v);
    return buf;
}

}  // namespace

void generate(const SceneSpec& spec_in, const std::string& out_dir) {
    SceneSpec spec = spec_in;
    if (spec.sequences.empty()) spec.expand();
    spec.validate();

    fs::create_directories(fs::path(out_dir) / "frames");
    fs::create_directories(fs::path(out_dir) / "gt");

    nlohmann::json poses = nlohmann::json::array();
    nlohmann::json frames = nlohmann::json::array();
    nlohmann::json seq_index = nlohmann::json::array();

    int global = 0;
    for (int s = 0; s < spec.sequence_count; ++s) {
        const auto& seq = spec.sequences[static_cast<size_t>(s)];
        seq_index.push_back({{"first", global}, {"count", spec.frame_count}});

        RenderOut prev;
        for (int f = 0; f < spec.frame_count; ++f, ++global) {
            RenderOut cur = render_frame(seq, spec, f);
            const std::string tag = zpad(global);
            io::write_png(out_dir + "/frames/" + tag + ".png", cur.image);
            io::write_array(out_dir + "/gt/depth_" + tag + ".f32", to_array(cur.depth));
            io::write_array(out_dir + "/gt/instance_" + tag + ".f32",
                            to_array(cur.instance.cast<double>()));

            Eigen::ArrayXXd motion = Eigen::ArrayXXd::Zero(spec.height, spec.width);
            for (const auto& o : seq.objects)
                if (o.moving()) motion = (cur.instance == o.id).select(1.0, motion);
            io::write_array(out_dir + "/gt/motion_" + tag + ".f32", to_array(motion));

            if (f > 0) {
                auto sf = true_scene_flow(seq, spec, f - 1, prev, cur);
                const std::string ptag = zpad(global - 1);
                io::write_array(out_dir + "/gt/flow_" + ptag + ".f32", flow_to_array(sf.flow));
                io::write_array(out_dir + "/gt/flow_valid_" + ptag + ".f32", to_array(sf.valid));
            }

            const auto& cam = seq.camera[static_cast<size_t>(f)];
            nlohmann::json pj;
            pj["frame"] = global;
            auto rot = nlohmann::json::array();
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) rot.push_back(cam.rotation(i, j));
            pj["rotation"] = rot;
            pj["translation"] = {cam.translation.x(), cam.translation.y(), cam.translation.z()};
            poses.push_back(pj);

            frames.push_back(
                {{"index", global}, {"sequence", s}, {"png", "frames/" + tag + ".png"}});
            prev = std::move(cur);
        }
    }

    nlohmann::json manifest;
    manifest["width"] = spec.width;
    manifest["height"] = spec.height;
    manifest["intrinsics"] = {{"fx", spec.intrinsics.fx}, {"fy", spec.intrinsics.fy},
                              {"cx", spec.intrinsics.cx}, {"cy", spec.intrinsics.cy}};
    manifest["spec"] = spec.to_json();
    manifest["sequences"] = seq_index;
    manifest["frames"] = frames;
    {
        std::ofstream mf(out_dir + "/manifest.json");
        mf << manifest.dump(1) << "\n";
    }
    {
        std::ofstream pf(out_dir + "/gt/poses.json");
        pf << poses.dump(1) << "\n";
    }
}

}  // namespace monoflow::synth
