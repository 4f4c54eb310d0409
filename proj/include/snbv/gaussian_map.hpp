#pragma once

#include "snbv/geometry.hpp"
#include "snbv/sh.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace snbv {

/// Offsets of the flat per-Gaussian parameter record:
/// mu(3) | log_scale(3) | rot(4) | opacity_logit(1) | color(3K) | obj_logits(n+1).
namespace param {
inline constexpr int kMu = 0;
inline constexpr int kLogScale = 3;
inline constexpr int kRot = 6;
inline constexpr int kOpacity = 10;
inline constexpr int kColor = 11;
inline constexpr int kGeometric = 11;
} // namespace param

struct GaussianMap {
    std::vector<Gaussian> gaussians;
    int n_objects = 1;
    int sh_degree = 0;
    Vec3 background_color = Vec3::Zero();

    [[nodiscard]] int color_size() const { return 3 * sh_coeff_count(sh_degree); }
    [[nodiscard]] int obj_offset() const { return param::kColor + color_size(); }
    [[nodiscard]] int param_count() const { return obj_offset() + n_objects + 1; }
    [[nodiscard]] std::size_t size() const { return gaussians.size(); }
    [[nodiscard]] bool empty() const { return gaussians.empty(); }

    void validate() const {
        if (n_objects < 1) {
            throw std::invalid_argument("map: n_objects must be >= 1");
        }
        if (sh_degree < 0 || sh_degree > kMaxShDegree) {
            throw std::invalid_argument("map: sh_degree outside [0, 3]");
        }
        for (const auto& g : gaussians) {
            if (g.obj_logits.size() != n_objects + 1) {
                throw std::invalid_argument("map: obj_logits length != n_objects + 1");
            }
            if (g.color.size() != color_size()) {
                throw std::invalid_argument("map: color length inconsistent with sh_degree");
            }
        }
    }

    [[nodiscard]] VecX flatten(std::size_t i) const {
        const Gaussian& g = gaussians[i];
        VecX p(param_count());
        p.segment<3>(param::kMu) = g.mu;
        p.segment<3>(param::kLogScale) = g.log_scale;
        p.segment<4>(param::kRot) = g.rot;
        p[param::kOpacity] = g.opacity_logit;
        p.segment(param::kColor, color_size()) = g.color;
        p.segment(obj_offset(), n_objects + 1) = g.obj_logits;
        return p;
    }

    void unflatten(std::size_t i, const VecX& p) {
        Gaussian& g = gaussians[i];
        g.mu = p.segment<3>(param::kMu);
        g.log_scale = p.segment<3>(param::kLogScale);
        g.rot = p.segment<4>(param::kRot);
        g.opacity_logit = p[param::kOpacity];
        g.color = p.segment(param::kColor, color_size());
        g.obj_logits = p.segment(obj_offset(), n_objects + 1);
    }

    /// Changes the SH degree, keeping lower-order coefficients and zeroing new ones.
    void set_sh_degree(int degree) {
        if (degree < 0 || degree > kMaxShDegree) {
            throw std::invalid_argument("sh degree outside [0, 3]");
        }
        const int new_size = 3 * sh_coeff_count(degree);
        for (auto& g : gaussians) {
            VecX c = VecX::Zero(new_size);
            const int keep = std::min<int>(new_size, static_cast<int>(g.color.size()));
            c.head(keep) = g.color.head(keep);
            g.color = c;
        }
        sh_degree = degree;
    }
};

/// A Gaussian with the given center, isotropic scale, opacity and constant color.
inline Gaussian make_gaussian(const Vec3& mu, double scale, double opacity, const Vec3& rgb, int n_objects,
                              int sh_degree = 0) {
    Gaussian g;
    g.mu = mu;
    g.log_scale = Vec3::Constant(std::log(scale));
    g.opacity_logit = logit(opacity);
    g.color = VecX::Zero(3 * sh_coeff_count(sh_degree));
    for (int c = 0; c < 3; ++c) {
        g.color[c] = logit(std::clamp(rgb[c], 1e-6, 1.0 - 1e-6));
    }
    g.obj_logits = VecX::Zero(n_objects + 1);
    return g;
}

} // namespace snbv
