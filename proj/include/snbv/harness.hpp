#pragma once

// Synthetic ground truth: analytic primitive scenes, a ray-traced oracle
// renderer, candidate/test view sampling and evaluation metrics.

#include "snbv/geometry.hpp"
#include "snbv/image.hpp"
#include "snbv/losses.hpp"
#include "snbv/renderer.hpp"
#include "snbv/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

namespace snbv {

enum class Shape { Sphere, Box };

struct Primitive {
    Shape shape = Shape::Sphere;
    Vec3 center = Vec3::Zero();
    double radius = 0.0;                // spheres
    Vec3 half_extents = Vec3::Zero();   // axis-aligned boxes
    Vec3 albedo = Vec3::Constant(0.5);
    int object_id = 1;

    [[nodiscard]] Vec3 half_size() const { return shape == Shape::Sphere ? Vec3::Constant(radius) : half_extents; }
    [[nodiscard]] Vec3 lo() const { return center - half_size(); }
    [[nodiscard]] Vec3 hi() const { return center + half_size(); }
};

struct PrimitiveScene {
    std::vector<Primitive> primitives;
    int n_objects = 0;
    bool ground_plane = true; // z = 0, object id 0
    Vec3 ground_albedo = Vec3::Constant(0.5);
    Vec3 background_color = Vec3::Zero();
    Vec3 light_dir = Vec3(0.4, 0.3, 1.0).normalized(); // direction towards the light
    double ambient = 0.35;

    /// Axis-aligned bounds of all primitives.
    [[nodiscard]] Box3 bounds() const {
        Box3 b{Vec3::Constant(std::numeric_limits<double>::infinity()),
               Vec3::Constant(-std::numeric_limits<double>::infinity())};
        for (const auto& p : primitives) {
            b.lo = b.lo.cwiseMin(p.lo());
            b.hi = b.hi.cwiseMax(p.hi());
        }
        if (primitives.empty()) {
            return Box3{};
        }
        return b;
    }

    void validate() const {
        std::vector<bool> seen(n_objects + 1, false);
        for (const auto& p : primitives) {
            if (p.object_id < 1 || p.object_id > n_objects) {
                throw std::invalid_argument("scene: object_id outside 1..n");
            }
            seen[p.object_id] = true;
            if (p.shape == Shape::Sphere ? !(p.radius > 0.0) : (p.half_extents.array() <= 0.0).any()) {
                throw std::invalid_argument("scene: primitive size must be positive");
            }
        }
        for (int k = 1; k <= n_objects; ++k) {
            if (!seen[k]) {
                throw std::invalid_argument("scene: object ids are not contiguous 1..n");
            }
        }
    }
};

/// Horizontal half-size of the generated layouts.
inline constexpr double kSceneHalfSize = 1.0;
inline constexpr double kCornerOffset = 0.75;

namespace detail {

inline Vec3 hue_color(double hue) {
    const double s = 0.7, v = 0.9;
    const double h = std::fmod(hue, 1.0) * 6.0;
    const double c = v * s;
    const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
    Vec3 rgb;
    switch (static_cast<int>(h)) {
    case 0: rgb = Vec3(c, x, 0); break;
    case 1: rgb = Vec3(x, c, 0); break;
    case 2: rgb = Vec3(0, c, x); break;
    case 3: rgb = Vec3(0, x, c); break;
    case 4: rgb = Vec3(x, 0, c); break;
    default: rgb = Vec3(c, 0, x); break;
    }
    return rgb + Vec3::Constant(v - c);
}

inline double footprint_radius(const Primitive& p) {
    return p.shape == Shape::Sphere ? p.radius : p.half_extents.head<2>().norm();
}

inline bool overlaps(const Primitive& a, const Primitive& b, double margin) {
    return (a.lo().array() < b.hi().array() + margin).all() && (b.lo().array() < a.hi().array() + margin).all();
}

} // namespace detail

/// Seeded scene of spheres and boxes resting on (or stacked above) the ground.
/// difficulty in [0, 1] scales stacking/overlap probability and size variance;
/// difficulty 0 never produces overlapping primitives. With corner_layout the
/// first four objects sit near the horizontal corners and the rest cluster in
/// the center.
inline PrimitiveScene generate_scene(std::uint64_t seed, int n_objects, double difficulty, bool corner_layout = false) {
    if (n_objects < 2 || n_objects > 12) {
        throw std::invalid_argument("generate_scene: n_objects must lie in [2, 12]");
    }
    if (corner_layout && n_objects < 4) {
        throw std::invalid_argument("generate_scene: corner layout needs at least 4 objects");
    }
    difficulty = std::clamp(difficulty, 0.0, 1.0);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    PrimitiveScene scene;
    scene.n_objects = n_objects;
    const double hue0 = u(rng);

    auto make_primitive = [&](int id) {
        Primitive p;
        p.object_id = id;
        p.albedo = detail::hue_color(hue0 + static_cast<double>(id - 1) / n_objects);
        const double size = std::min(0.22, 0.6 / std::sqrt(n_objects)) * (1.0 + difficulty * (u(rng) - 0.5)) * (0.8 + 0.4 * u(rng));
        if (u(rng) < 0.5) {
            p.shape = Shape::Sphere;
            p.radius = size;
        } else {
            p.shape = Shape::Box;
            p.half_extents = Vec3(size * (0.7 + 0.5 * u(rng)), size * (0.7 + 0.5 * u(rng)), size * (0.6 + 0.6 * u(rng)));
        }
        return p;
    };
    auto rest_height = [](const Primitive& p) { return p.shape == Shape::Sphere ? p.radius : p.half_extents.z(); };
    auto top_of = [](const Primitive& p) { return p.hi().z(); };

    for (int id = 1; id <= n_objects; ++id) {
        Primitive p = make_primitive(id);
        bool placed = false;
        const bool corner = corner_layout && id <= 4;
        const bool try_stack = !corner && !scene.primitives.empty() && u(rng) < 0.5 * difficulty;
        if (try_stack) {
            std::vector<std::size_t> bases;
            for (std::size_t b = 0; b < scene.primitives.size(); ++b) {
                if (!(corner_layout && scene.primitives[b].object_id <= 4)) {
                    bases.push_back(b);
                }
            }
            if (!bases.empty()) {
                const Primitive& base = scene.primitives[bases[static_cast<std::size_t>(u(rng) * bases.size())]];
                const double lean = 0.5 * detail::footprint_radius(base);
                p.center = Vec3(base.center.x() + lean * (u(rng) - 0.5), base.center.y() + lean * (u(rng) - 0.5),
                                top_of(base) + rest_height(p) * (1.0 - 0.3 * difficulty * u(rng)));
                placed = true;
            }
        }
        for (int attempt = 0; !placed && attempt < 2000; ++attempt) {
            if (attempt > 0 && attempt % 200 == 0) {
                // crowded: shrink in place and keep trying
                p.radius *= 0.9;
                p.half_extents *= 0.9;
            }
            Vec2 xy;
            if (corner) {
                const double sx = (id == 1 || id == 3) ? -1.0 : 1.0; // 1 NW, 2 NE, 3 SW, 4 SE
                const double sy = (id <= 2) ? 1.0 : -1.0;
                xy = Vec2(sx * kCornerOffset + 0.1 * (u(rng) - 0.5), sy * kCornerOffset + 0.1 * (u(rng) - 0.5));
            } else if (corner_layout) {
                xy = Vec2(0.7 * (u(rng) - 0.5), 0.7 * (u(rng) - 0.5));
            } else {
                const double r = kSceneHalfSize - detail::footprint_radius(p);
                xy = Vec2(r * (2.0 * u(rng) - 1.0), r * (2.0 * u(rng) - 1.0));
            }
            p.center = Vec3(xy.x(), xy.y(), rest_height(p));
            bool clear = true;
            for (const auto& q : scene.primitives) {
                if (detail::overlaps(p, q, 0.02)) {
                    clear = false;
                    break;
                }
            }
            placed = clear || u(rng) < 0.3 * difficulty || (corner && attempt >= 199);
        }
        if (!placed) {
            throw std::runtime_error("generate_scene: could not place all objects without overlap");
        }
        scene.primitives.push_back(p);
    }
    scene.validate();
    return scene;
}

namespace detail {

struct RayHit {
    double t = std::numeric_limits<double>::infinity();
    Vec3 normal = Vec3::Zero();
    int object_id = -1; // -1 miss, 0 ground
    Vec3 albedo = Vec3::Zero();
};

inline std::optional<std::pair<double, Vec3>> intersect(const Primitive& p, const Vec3& o, const Vec3& d) {
    constexpr double eps = 1e-12;
    if (p.shape == Shape::Sphere) {
        const Vec3 oc = o - p.center;
        const double a = d.squaredNorm();
        const double b = oc.dot(d);
        const double c = oc.squaredNorm() - p.radius * p.radius;
        const double disc = b * b - a * c;
        if (disc < 0.0) {
            return std::nullopt;
        }
        const double sq = std::sqrt(disc);
        double t = (-b - sq) / a;
        if (t <= eps) {
            t = (-b + sq) / a;
        }
        if (t <= eps) {
            return std::nullopt;
        }
        return std::make_pair(t, ((o + t * d) - p.center).normalized());
    }
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    int axis = 0;
    double sign = 1.0;
    for (int k = 0; k < 3; ++k) {
        const double lo = p.center[k] - p.half_extents[k];
        const double hi = p.center[k] + p.half_extents[k];
        if (std::abs(d[k]) < 1e-300) {
            if (o[k] < lo || o[k] > hi) {
                return std::nullopt;
            }
            continue;
        }
        double t0 = (lo - o[k]) / d[k];
        double t1 = (hi - o[k]) / d[k];
        double s = -1.0;
        if (t0 > t1) {
            std::swap(t0, t1);
            s = 1.0;
        }
        if (t0 > t_near) {
            t_near = t0;
            axis = k;
            sign = s;
        }
        t_far = std::min(t_far, t1);
    }
    if (t_near > t_far || t_far <= eps || t_near <= eps) {
        return std::nullopt;
    }
    Vec3 n = Vec3::Zero();
    n[axis] = sign;
    return std::make_pair(t_near, n);
}

inline RayHit trace(const PrimitiveScene& scene, const Vec3& o, const Vec3& d) {
    RayHit best;
    for (const auto& p : scene.primitives) {
        if (auto h = intersect(p, o, d); h && h->first < best.t) {
            best.t = h->first;
            best.normal = h->second;
            best.object_id = p.object_id;
            best.albedo = p.albedo;
        }
    }
    if (scene.ground_plane && d.z() < 0.0) {
        const double t = -o.z() / d.z();
        if (t > 1e-12 && t < best.t) {
            best.t = t;
            best.normal = Vec3::UnitZ();
            best.object_id = 0;
            best.albedo = scene.ground_albedo;
        }
    }
    return best;
}

} // namespace detail

/// Ground-truth images for one camera.
struct OracleImage {
    Image rgb;             // background pixels (ground or miss) set to the background color
    Image depth;           // camera-z depth, 0 on misses
    std::vector<int> mask; // object id per pixel, 0 = background

    [[nodiscard]] int width() const { return rgb.width; }
    [[nodiscard]] int height() const { return rgb.height; }
};

/// One primary ray per pixel center; Lambertian shading with one directional light.
inline OracleImage oracle_render(const PrimitiveScene& scene, const Camera& cam) {
    const int w = cam.width(), h = cam.height();
    OracleImage out{Image(w, h, 3), Image(w, h, 1), std::vector<int>(static_cast<std::size_t>(w) * h, 0)};
    const Vec3 origin = cam.center();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            // camera-z component of d is 1, so the hit parameter equals the depth
            const Vec3 d = cam.ray_direction(x + 0.5, y + 0.5);
            const detail::RayHit hit = detail::trace(scene, origin, d);
            const std::size_t p = static_cast<std::size_t>(y) * w + x;
            if (hit.object_id < 0) {
                for (int c = 0; c < 3; ++c) {
                    out.rgb.at(x, y, c) = scene.background_color[c];
                }
                continue;
            }
            out.depth.at(x, y) = hit.t;
            out.mask[p] = hit.object_id;
            if (hit.object_id == 0) {
                for (int c = 0; c < 3; ++c) {
                    out.rgb.at(x, y, c) = scene.background_color[c];
                }
                continue;
            }
            const double shade = scene.ambient + std::max(0.0, hit.normal.dot(scene.light_dir));
            for (int c = 0; c < 3; ++c) {
                out.rgb.at(x, y, c) = std::min(1.0, hit.albedo[c] * shade);
            }
        }
    }
    return out;
}

struct Intrinsics {
    int width = 64;
    int height = 64;
    double fov_deg = 50.0; // horizontal field of view

    [[nodiscard]] double fx() const { return 0.5 * width / std::tan(0.5 * fov_deg * std::numbers::pi / 180.0); }
};

enum class ViewRole { Training, Candidate, Test };

struct ViewEntry {
    int id = 0;
    Camera camera;
};

struct ViewSet {
    std::vector<ViewEntry> views;
    ViewRole role = ViewRole::Candidate;

    [[nodiscard]] const ViewEntry* find(int id) const {
        for (const auto& v : views) {
            if (v.id == id) {
                return &v;
            }
        }
        return nullptr;
    }
};

inline Camera orbit_camera(const Vec3& centroid, double radius, double azimuth, double elevation,
                           const Intrinsics& intr) {
    const Vec3 dir(std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth),
                   std::sin(elevation));
    const double f = intr.fx();
    return look_at(centroid + radius * dir, centroid, Vec3::UnitZ(), intr.width, intr.height, f, f,
                   intr.width / 2.0, intr.height / 2.0);
}

inline constexpr double kSpiralElevationDeg = 35.0;
inline constexpr double kRandomElevationLoDeg = 15.0;
inline constexpr double kRandomElevationHiDeg = 75.0;

/// n_spiral views evenly spaced in longitude at 35 degrees elevation (ids
/// 0..n_spiral-1) plus n_random views uniform over the 15..75 degree cap.
inline ViewSet sample_candidate_views(const Vec3& centroid, double radius, int n_spiral, int n_random,
                                      std::uint64_t seed, const Intrinsics& intr = {}) {
    constexpr double deg = std::numbers::pi / 180.0;
    ViewSet set;
    set.role = ViewRole::Candidate;
    for (int k = 0; k < n_spiral; ++k) {
        const double az = 2.0 * std::numbers::pi * k / n_spiral;
        set.views.push_back({k, orbit_camera(centroid, radius, az, kSpiralElevationDeg * deg, intr)});
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double s_lo = std::sin(kRandomElevationLoDeg * deg);
    const double s_hi = std::sin(kRandomElevationHiDeg * deg);
    for (int k = 0; k < n_random; ++k) {
        const double az = 2.0 * std::numbers::pi * u(rng);
        const double el = std::asin(s_lo + (s_hi - s_lo) * u(rng));
        set.views.push_back({n_spiral + k, orbit_camera(centroid, radius, az, el, intr)});
    }
    return set;
}

/// Held-out evaluation views over the same cap, disjoint id range.
inline ViewSet sample_test_views(const Vec3& centroid, double radius, int count, std::uint64_t seed,
                                 const Intrinsics& intr = {}) {
    ViewSet set = sample_candidate_views(centroid, radius, 0, count, seed ^ 0x5bd1e995ULL, intr);
    set.role = ViewRole::Test;
    for (auto& v : set.views) {
        v.id += 10000;
    }
    return set;
}

/// Order in which the spiral baseline visits ring views: evenly strided so
/// that `total` selections cover the full circle.
inline std::vector<int> spiral_sequence(int n_spiral, int total) {
    std::vector<int> seq;
    if (n_spiral <= 0 || total <= 0) {
        return seq;
    }
    std::vector<bool> used(n_spiral, false);
    for (int j = 0; j < total && static_cast<int>(seq.size()) < n_spiral; ++j) {
        int id = static_cast<int>(std::floor(static_cast<double>(j) * n_spiral / total + 0.5)) % n_spiral;
        while (used[id]) {
            id = (id + 1) % n_spiral;
        }
        used[id] = true;
        seq.push_back(id);
    }
    for (int id = 0; id < n_spiral; ++id) {
        if (!used[id]) {
            seq.push_back(id);
        }
    }
    return seq;
}

/// Observation used for training: oracle RGB and one-hot mask.
inline Observation make_observation(const OracleImage& gt, int n_objects) {
    return Observation{gt.rgb, one_hot(gt.mask, gt.width(), gt.height(), n_objects)};
}

struct Metrics {
    double psnr = 0.0;
    double ssim = 0.0;
    double depth_mae = 0.0;
};

inline constexpr double kPsnrCap = 99.0;

inline double psnr(const Image& pred, const Image& gt) {
    require_same_shape(pred, gt, "psnr");
    double mse = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double d = pred.data[i] - gt.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(pred.data.size());
    if (mse <= 0.0) {
        return kPsnrCap;
    }
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

/// Mean |depth error| over pixels whose mask satisfies `select`; nullopt if none.
template <class Select>
std::optional<double> masked_depth_mae(const Image& pred_depth, const OracleImage& gt, Select select) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t p = 0; p < gt.mask.size(); ++p) {
        if (select(gt.mask[p])) {
            sum += std::abs(pred_depth.data[p] - gt.depth.data[p]);
            ++count;
        }
    }
    if (count == 0) {
        return std::nullopt;
    }
    return sum / static_cast<double>(count);
}

/// PSNR and SSIM over RGB; depth MAE restricted to object pixels.
inline Metrics metrics(const RenderOutput& pred, const OracleImage& gt) {
    require_same_shape(pred.rgb, gt.rgb, "metrics rgb");
    require_same_shape(pred.depth, gt.depth, "metrics depth");
    const auto mae = masked_depth_mae(pred.depth, gt, [](int id) { return id != 0; });
    if (!mae) {
        throw NoObjectPixels();
    }
    return Metrics{psnr(pred.rgb, gt.rgb), ssim::mean_ssim(pred.rgb, gt.rgb, nullptr), *mae};
}

} // namespace snbv
