#pragma once

#include "snbv/errors.hpp"
#include "snbv/gaussian_map.hpp"
#include "snbv/harness.hpp"
#include "snbv/image.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace snbv {

inline constexpr char kCheckpointMagic[5] = {'S', 'N', 'B', 'V', '1'};

namespace detail {

template <class T>
void put_le(std::ostream& os, T value) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(b, b + sizeof(T));
    }
    os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
    unsigned char b[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) {
        throw FormatError("truncated checkpoint");
    }
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(b, b + sizeof(T));
    }
    T value;
    std::memcpy(&value, b, sizeof(T));
    return value;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw Error("cannot open " + path + " for writing");
    }
    return os;
}

} // namespace detail

// Layout: magic, u32 n_objects, u32 N, u32 sh_degree, N records of f64
// parameters in flatten() order, then the background color as 3 f64.
inline void save_map(std::ostream& os, const GaussianMap& map) {
    map.validate();
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(map.n_objects));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(map.size()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(map.sh_degree));
    for (std::size_t i = 0; i < map.size(); ++i) {
        const VecX p = map.flatten(i);
        for (double v : p) {
            detail::put_le<double>(os, v);
        }
    }
    for (int c = 0; c < 3; ++c) {
        detail::put_le<double>(os, map.background_color[c]);
    }
}

inline GaussianMap load_map(std::istream& is) {
    char magic[sizeof(kCheckpointMagic)];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw FormatError("bad checkpoint magic");
    }
    GaussianMap map;
    const auto n = detail::get_le<std::uint32_t>(is);
    const auto count = detail::get_le<std::uint32_t>(is);
    const auto degree = detail::get_le<std::uint32_t>(is);
    if (n < 1 || n > 1024 || degree > static_cast<std::uint32_t>(kMaxShDegree)) {
        throw FormatError("checkpoint header out of range");
    }
    map.n_objects = static_cast<int>(n);
    map.sh_degree = static_cast<int>(degree);
    const int dim = map.param_count();
    map.gaussians.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        map.gaussians[i].color.resize(map.color_size());
        map.gaussians[i].obj_logits.resize(map.n_objects + 1);
        VecX p(dim);
        for (int k = 0; k < dim; ++k) {
            p[k] = detail::get_le<double>(is);
        }
        map.unflatten(i, p);
    }
    for (int c = 0; c < 3; ++c) {
        map.background_color[c] = detail::get_le<double>(is);
    }
    if (is.peek() != std::char_traits<char>::eof()) {
        throw FormatError("trailing bytes after checkpoint");
    }
    return map;
}

inline void save_map(const std::string& path, const GaussianMap& map) {
    auto os = detail::open_out(path);
    save_map(os, map);
}

inline GaussianMap load_map(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw FormatError("cannot open checkpoint " + path);
    }
    return load_map(is);
}

/// 8-bit binary PPM of a 3-channel image in [0, 1].
inline void write_ppm(std::ostream& os, const Image& img) {
    if (img.channels != 3) {
        throw ShapeMismatch("ppm needs 3 channels");
    }
    os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    for (double v : img.data) {
        const auto q = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        os.put(static_cast<char>(q));
    }
}

/// Single-channel little-endian PFM; rows stored bottom to top.
inline void write_pfm(std::ostream& os, const Image& img) {
    if (img.channels != 1) {
        throw ShapeMismatch("pfm needs 1 channel");
    }
    os << "Pf\n" << img.width << ' ' << img.height << "\n-1.0\n";
    for (int y = img.height - 1; y >= 0; --y) {
        for (int x = 0; x < img.width; ++x) {
            detail::put_le<float>(os, static_cast<float>(img.at(x, y)));
        }
    }
}

inline Image read_pfm(std::istream& is) {
    std::string tag;
    int w = 0;
    int h = 0;
    double scale = 0.0;
    if (!(is >> tag >> w >> h >> scale) || tag != "Pf" || w <= 0 || h <= 0 || scale >= 0.0) {
        throw FormatError("unsupported pfm header");
    }
    is.get();
    Image img(w, h, 1);
    for (int y = h - 1; y >= 0; --y) {
        for (int x = 0; x < w; ++x) {
            img.at(x, y) = detail::get_le<float>(is);
        }
    }
    return img;
}

/// PGM (P5) of per-pixel argmax class indices.
inline void write_label_pgm(std::ostream& os, const Image& prob) {
    if (prob.channels < 1 || prob.channels > 256) {
        throw ShapeMismatch("pgm label image needs 1..256 classes");
    }
    os << "P5\n" << prob.width << ' ' << prob.height << "\n255\n";
    for (std::size_t p = 0; p < prob.pixel_count(); ++p) {
        const double* v = prob.data.data() + p * prob.channels;
        const auto k = std::max_element(v, v + prob.channels) - v;
        os.put(static_cast<char>(static_cast<unsigned char>(k)));
    }
}

template <class F>
void write_file(const std::string& path, const Image& img, F writer) {
    auto os = detail::open_out(path);
    writer(os, img);
}

// ---- scene / view JSON ----

namespace detail {

inline nlohmann::json vec_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

inline Vec3 json_vec(const nlohmann::json& j, const char* key) {
    const auto& a = j.at(key);
    if (!a.is_array() || a.size() != 3) {
        throw FormatError(std::string(key) + " must be a 3-vector");
    }
    return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

} // namespace detail

inline nlohmann::json scene_to_json(const PrimitiveScene& scene) {
    nlohmann::json prims = nlohmann::json::array();
    for (const auto& p : scene.primitives) {
        nlohmann::json j;
        j["shape"] = p.shape == Shape::Sphere ? "sphere" : "box";
        j["center"] = detail::vec_json(p.center);
        if (p.shape == Shape::Sphere) {
            j["radius"] = p.radius;
        } else {
            j["half_extents"] = detail::vec_json(p.half_extents);
        }
        j["albedo"] = detail::vec_json(p.albedo);
        j["object_id"] = p.object_id;
        prims.push_back(j);
    }
    return {{"n_objects", scene.n_objects},
            {"background_color", detail::vec_json(scene.background_color)},
            {"primitives", prims},
            {"light_dir", detail::vec_json(scene.light_dir)},
            {"ambient", scene.ambient},
            {"ground_plane", scene.ground_plane},
            {"ground_albedo", detail::vec_json(scene.ground_albedo)}};
}

inline PrimitiveScene scene_from_json(const nlohmann::json& j) {
    try {
        PrimitiveScene s;
        s.n_objects = j.at("n_objects").get<int>();
        s.background_color = detail::json_vec(j, "background_color");
        s.light_dir = detail::json_vec(j, "light_dir");
        if (std::abs(s.light_dir.norm() - 1.0) > 1e-12) {
            s.light_dir.normalize();
        }
        if (j.contains("ambient")) {
            s.ambient = j["ambient"].get<double>();
        }
        if (j.contains("ground_plane")) {
            s.ground_plane = j["ground_plane"].get<bool>();
        }
        if (j.contains("ground_albedo")) {
            s.ground_albedo = detail::json_vec(j, "ground_albedo");
        }
        for (const auto& pj : j.at("primitives")) {
            Primitive p;
            const auto shape = pj.at("shape").get<std::string>();
            if (shape == "sphere") {
                p.shape = Shape::Sphere;
                p.radius = pj.at("radius").get<double>();
            } else if (shape == "box") {
                p.shape = Shape::Box;
                p.half_extents = detail::json_vec(pj, "half_extents");
            } else {
                throw FormatError("unknown shape '" + shape + "'");
            }
            p.center = detail::json_vec(pj, "center");
            p.albedo = detail::json_vec(pj, "albedo");
            p.object_id = pj.at("object_id").get<int>();
            s.primitives.push_back(p);
        }
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("scene json: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("scene json: ") + e.what());
    }
}

inline PrimitiveScene load_scene(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw FormatError("cannot open scene file " + path);
    }
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("scene json: ") + e.what());
    }
    return scene_from_json(j);
}

inline nlohmann::json views_to_json(const ViewSet& set) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& v : set.views) {
        const Camera& c = v.camera;
        const Mat4& pose = c.pose();
        const Vec3 position = pose.block<3, 1>(0, 3);
        const Vec3 forward = pose.block<3, 1>(0, 2);
        const Vec3 up = -pose.block<3, 1>(0, 1);
        out.push_back({{"id", v.id},
                       {"position", detail::vec_json(position)},
                       {"look_at", detail::vec_json(position + forward)},
                       {"up", detail::vec_json(up)},
                       {"fx", c.fx()},
                       {"fy", c.fy()},
                       {"cx", c.cx()},
                       {"cy", c.cy()},
                       {"width", c.width()},
                       {"height", c.height()}});
    }
    return out;
}

inline ViewSet views_from_json(const nlohmann::json& j, ViewRole role) {
    try {
        ViewSet set;
        set.role = role;
        for (const auto& v : j) {
            set.views.push_back({v.at("id").get<int>(),
                                 look_at(detail::json_vec(v, "position"), detail::json_vec(v, "look_at"),
                                         detail::json_vec(v, "up"), v.at("width").get<int>(),
                                         v.at("height").get<int>(), v.at("fx").get<double>(),
                                         v.at("fy").get<double>(), v.at("cx").get<double>(),
                                         v.at("cy").get<double>())});
        }
        return set;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("view json: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("view json: ") + e.what());
    }
}

} // namespace snbv
