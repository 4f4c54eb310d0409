#pragma once

#include "snbv/gaussian_map.hpp"
#include "snbv/image.hpp"
#include "snbv/splat.hpp"

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

namespace snbv {

struct RenderOutput {
    Image rgb;      // H x W x 3
    Image depth;    // H x W x 1, expected depth sum z_i alpha_i T_i
    Image alpha;    // H x W x 1, 1 - T_final
    Image obj_prob; // H x W x (n+1), background-residual completed
    std::vector<double> contrib; // per Gaussian, max over pixels of alpha_i T_i
};

namespace detail {

/// Everything a per-pixel traversal needs for one (map, camera) pair.
struct RasterPlan {
    int width = 0;
    int height = 0;
    int feature_dim = 0;            // 3 (rgb) + 1 (depth) + n+1 (object)
    std::vector<Splat> splats;      // front-to-back
    std::vector<double> features;   // splats.size() x feature_dim
    std::vector<double> background; // feature_dim
    std::vector<int> offsets;       // CSR over pixels, size W*H + 1
    std::vector<int> entries;       // splat ids, front-to-back per pixel

    [[nodiscard]] const double* feature(int splat) const {
        return features.data() + static_cast<std::size_t>(splat) * feature_dim;
    }
};

inline RasterPlan plan_view(const GaussianMap& map, const Camera& cam) {
    RasterPlan plan;
    plan.width = cam.width();
    plan.height = cam.height();
    const int n1 = map.n_objects + 1;
    plan.feature_dim = 4 + n1;

    std::vector<Splat> visible;
    visible.reserve(map.size());
    for (std::size_t i = 0; i < map.size(); ++i) {
        if (auto s = make_splat(map.gaussians[i], static_cast<int>(i), map.sh_degree, cam)) {
            visible.push_back(std::move(*s));
        }
    }
    std::stable_sort(visible.begin(), visible.end(),
                     [](const Splat& a, const Splat& b) { return a.depth < b.depth; });
    plan.splats = std::move(visible);

    const std::size_t ns = plan.splats.size();
    plan.features.resize(ns * plan.feature_dim);
    for (std::size_t k = 0; k < ns; ++k) {
        const Splat& s = plan.splats[k];
        double* f = plan.features.data() + k * plan.feature_dim;
        f[0] = s.color[0];
        f[1] = s.color[1];
        f[2] = s.color[2];
        f[3] = s.depth;
        for (int c = 0; c < n1; ++c) {
            f[4 + c] = s.obj_prob[c];
        }
    }
    plan.background.assign(plan.feature_dim, 0.0);
    plan.background[0] = map.background_color[0];
    plan.background[1] = map.background_color[1];
    plan.background[2] = map.background_color[2];
    plan.background[4] = 1.0; // residual goes to the background class

    const std::size_t npx = static_cast<std::size_t>(plan.width) * plan.height;
    plan.offsets.assign(npx + 1, 0);
    for (const Splat& s : plan.splats) {
        for (int y = s.y0; y <= s.y1; ++y) {
            for (int x = s.x0; x <= s.x1; ++x) {
                ++plan.offsets[static_cast<std::size_t>(y) * plan.width + x + 1];
            }
        }
    }
    std::partial_sum(plan.offsets.begin(), plan.offsets.end(), plan.offsets.begin());
    plan.entries.resize(plan.offsets.back());
    std::vector<int> cursor(plan.offsets.begin(), plan.offsets.end() - 1);
    for (std::size_t k = 0; k < ns; ++k) {
        const Splat& s = plan.splats[k];
        for (int y = s.y0; y <= s.y1; ++y) {
            for (int x = s.x0; x <= s.x1; ++x) {
                plan.entries[cursor[static_cast<std::size_t>(y) * plan.width + x]++] = static_cast<int>(k);
            }
        }
    }
    return plan;
}

struct Hit {
    int splat;
    double alpha;
    double transmittance; // T before this splat
    double dx;            // pixel center minus splat mean
    double dy;
    bool clamped;
};

/// Front-to-back traversal of one pixel; fills `hits` and returns T_final.
inline double traverse(const RasterPlan& plan, int px, int py, std::vector<Hit>& hits) {
    hits.clear();
    const std::size_t pix = static_cast<std::size_t>(py) * plan.width + px;
    const double u = px + 0.5;
    const double v = py + 0.5;
    double t = 1.0;
    for (int e = plan.offsets[pix]; e < plan.offsets[pix + 1]; ++e) {
        const int k = plan.entries[e];
        const Splat& s = plan.splats[k];
        const double dx = u - s.mean.x();
        const double dy = v - s.mean.y();
        const double power = 0.5 * (s.conic_a * dx * dx + 2.0 * s.conic_b * dx * dy + s.conic_c * dy * dy);
        if (power < 0.0) {
            continue;
        }
        const double raw = s.opacity * std::exp(-power);
        const bool clamped = raw > kMaxAlpha;
        const double alpha = clamped ? kMaxAlpha : raw;
        if (alpha < kMinAlpha) {
            continue;
        }
        hits.push_back(Hit{k, alpha, t, dx, dy, clamped});
        t *= 1.0 - alpha;
        if (t < kMinTransmittance) {
            break;
        }
    }
    return t;
}

inline RenderOutput render_plan(const RasterPlan& plan, const GaussianMap& map) {
    const int w = plan.width;
    const int h = plan.height;
    const int n1 = map.n_objects + 1;
    const int fd = plan.feature_dim;

    RenderOutput out;
    out.rgb = Image(w, h, 3);
    out.depth = Image(w, h, 1);
    out.alpha = Image(w, h, 1);
    out.obj_prob = Image(w, h, n1);
    out.contrib.assign(map.size(), 0.0);

    std::vector<Hit> hits;
    std::vector<double> acc(fd);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double t_final = traverse(plan, x, y, hits);
            std::fill(acc.begin(), acc.end(), 0.0);
            for (const auto& hit : hits) {
                const double wgt = hit.alpha * hit.transmittance;
                const double* f = plan.feature(hit.splat);
                for (int c = 0; c < fd; ++c) {
                    acc[c] += f[c] * wgt;
                }
                double& peak = out.contrib[plan.splats[hit.splat].index];
                peak = std::max(peak, wgt);
            }
            for (int c = 0; c < fd; ++c) {
                acc[c] += plan.background[c] * t_final;
            }
            for (int c = 0; c < 3; ++c) {
                out.rgb.at(x, y, c) = acc[c];
            }
            out.depth.at(x, y) = acc[3];
            out.alpha.at(x, y) = 1.0 - t_final;
            for (int c = 0; c < n1; ++c) {
                out.obj_prob.at(x, y, c) = acc[4 + c];
            }
        }
    }
    return out;
}

} // namespace detail

/// Forward rasterization of a map into RGB, depth, alpha and object probabilities.
inline RenderOutput rasterize(const GaussianMap& map, const Camera& cam) {
    return detail::render_plan(detail::plan_view(map, cam), map);
}

struct ObjectSample {
    VecX logits;
    double alpha;
};

/// Alpha-blends softmax(logits) front to back and assigns the uncovered
/// remainder to the background channel, so the result sums to one.
inline VecX blend_object_vector(std::span<const ObjectSample> samples, int n_objects) {
    VecX blended = VecX::Zero(n_objects + 1);
    double t = 1.0;
    for (const auto& s : samples) {
        blended += softmax(s.logits) * (s.alpha * t);
        t *= 1.0 - s.alpha;
    }
    blended[0] += 1.0 - blended.sum();
    return blended;
}

/// Upstream gradients for each rendered image; an empty image means zero.
struct OutputCotangent {
    Image rgb;
    Image depth;
    Image obj_prob;
};

struct MapGradients {
    std::vector<VecX> params;        // flat parameter layout, aligned with the map
    std::vector<double> mean2d_norm; // |dL/d mean2d| (screen space), 0 if not visible
};

namespace detail {

inline MapGradients backward_plan(const RasterPlan& plan, const GaussianMap& map, const Camera& cam,
                                  const OutputCotangent& cot) {
    const int w = cam.width();
    const int h = cam.height();
    const int n1 = map.n_objects + 1;
    const int fd = plan.feature_dim;
    const bool has_rgb = !cot.rgb.data.empty();
    const bool has_depth = !cot.depth.data.empty();
    const bool has_obj = !cot.obj_prob.data.empty();
    if (has_rgb && (cot.rgb.width != w || cot.rgb.height != h || cot.rgb.channels != 3)) {
        throw ShapeMismatch("rgb cotangent");
    }
    if (has_depth && (cot.depth.width != w || cot.depth.height != h || cot.depth.channels != 1)) {
        throw ShapeMismatch("depth cotangent");
    }
    if (has_obj && (cot.obj_prob.width != w || cot.obj_prob.height != h || cot.obj_prob.channels != n1)) {
        throw ShapeMismatch("object cotangent");
    }

    const std::size_t ns = plan.splats.size();
    std::vector<SplatCotangent> scot(ns);
    std::vector<double> g_feat(ns * fd, 0.0);

    std::vector<Hit> hits;
    std::vector<double> g(fd, 0.0);
    std::vector<double> tail(fd, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            std::fill(g.begin(), g.end(), 0.0);
            if (has_rgb) {
                for (int c = 0; c < 3; ++c) {
                    g[c] = cot.rgb.at(x, y, c);
                }
            }
            if (has_depth) {
                g[3] = cot.depth.at(x, y);
            }
            if (has_obj) {
                for (int c = 0; c < n1; ++c) {
                    g[4 + c] = cot.obj_prob.at(x, y, c);
                }
            }
            const double t_final = traverse(plan, x, y, hits);
            double g_tail = 0.0; // g . (sum_{j>i} f_j w_j + f_bg T_final)
            for (int c = 0; c < fd; ++c) {
                g_tail += g[c] * plan.background[c] * t_final;
            }
            for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
                const auto& hit = *it;
                const double wgt = hit.alpha * hit.transmittance;
                const double* f = plan.feature(hit.splat);
                double* gf = g_feat.data() + static_cast<std::size_t>(hit.splat) * fd;
                double g_dot_f = 0.0;
                for (int c = 0; c < fd; ++c) {
                    gf[c] += g[c] * wgt;
                    g_dot_f += g[c] * f[c];
                }
                const double d_alpha = hit.transmittance * g_dot_f - g_tail / (1.0 - hit.alpha);
                g_tail += g_dot_f * wgt;
                if (hit.clamped) {
                    continue;
                }
                const Splat& s = plan.splats[hit.splat];
                SplatCotangent& sc = scot[hit.splat];
                const double ga = d_alpha * hit.alpha;
                sc.mean.x() += ga * (s.conic_a * hit.dx + s.conic_b * hit.dy);
                sc.mean.y() += ga * (s.conic_b * hit.dx + s.conic_c * hit.dy);
                sc.conic_a += -0.5 * ga * hit.dx * hit.dx;
                sc.conic_b += -ga * hit.dx * hit.dy;
                sc.conic_c += -0.5 * ga * hit.dy * hit.dy;
                sc.opacity_logit += ga * (1.0 - s.opacity);
            }
        }
    }

    MapGradients grads;
    grads.params.assign(map.size(), VecX::Zero(map.param_count()));
    grads.mean2d_norm.assign(map.size(), 0.0);
    for (std::size_t k = 0; k < ns; ++k) {
        SplatCotangent& sc = scot[k];
        const double* gf = g_feat.data() + k * fd;
        sc.color = Vec3(gf[0], gf[1], gf[2]);
        sc.depth = gf[3];
        sc.obj_prob = Eigen::Map<const VecX>(gf + 4, n1);
        const int gi = plan.splats[k].index;
        splat_vjp(map.gaussians[gi], map.sh_degree, cam, sc, grads.params[gi]);
        grads.mean2d_norm[gi] = sc.mean.norm();
    }
    return grads;
}

} // namespace detail

/// Reverse pass: gradients of a scalar loss w.r.t. every Gaussian parameter
/// given the loss gradient w.r.t. each rendered output.
inline MapGradients backward(const GaussianMap& map, const Camera& cam, const OutputCotangent& cot) {
    return detail::backward_plan(detail::plan_view(map, cam), map, cam, cot);
}

} // namespace snbv
