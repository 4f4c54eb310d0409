#pragma once

// Per-view projection of a single Gaussian ("splat") and its reverse-mode
// derivative with respect to the Gaussian's unconstrained parameters.

#include "snbv/gaussian_map.hpp"
#include "snbv/sh.hpp"

#include <cmath>
#include <optional>

namespace snbv {

/// Smallest blending weight a splat may contribute to a pixel.
inline constexpr double kMinAlpha = 1.0 / 255.0;
inline constexpr double kMaxAlpha = 0.99;
/// Traversal stops once transmittance falls below this value.
inline constexpr double kMinTransmittance = 1e-4;

struct Splat {
    int index = 0; // position in the map
    Vec2 mean;
    double conic_a = 0.0; // inverse 2D covariance [[a, b], [b, c]]
    double conic_b = 0.0;
    double conic_c = 0.0;
    double opacity = 0.0;
    double depth = 0.0;
    Vec3 color;
    VecX obj_prob;
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1; // inclusive pixel bounds
};

/// Color of a Gaussian seen from `cam_center`.
inline Vec3 gaussian_color(const Gaussian& g, int sh_degree, const Vec3& cam_center) {
    const int k_count = sh_coeff_count(sh_degree);
    Vec3 raw = Vec3::Zero();
    if (sh_degree == 0) {
        raw = g.color.head<3>();
    } else {
        const Vec3 dir = (g.mu - cam_center).normalized();
        const ShBasis basis = sh_basis(sh_degree, dir);
        for (int k = 0; k < k_count; ++k) {
            raw += basis.value[k] * g.color.segment<3>(3 * k);
        }
    }
    return Vec3(sigmoid(raw[0]), sigmoid(raw[1]), sigmoid(raw[2]));
}

/// Projects a Gaussian; nullopt when culled (behind the near plane, too
/// transparent to ever reach the skip threshold, or entirely off-image).
inline std::optional<Splat> make_splat(const Gaussian& g, int index, int sh_degree, const Camera& cam) {
    const double opacity = sigmoid(g.opacity_logit);
    if (opacity < kMinAlpha) {
        return std::nullopt;
    }
    const Mat3 sigma = covariance3d(g.log_scale.array().exp().matrix(), g.rot);
    const auto proj = try_project(cam, g.mu, sigma);
    if (!proj) {
        return std::nullopt;
    }
    const Mat2& cov = proj->cov2d;
    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(0, 1);
    if (!(det > 0.0)) {
        return std::nullopt;
    }
    Splat s;
    s.index = index;
    s.mean = proj->mean2d;
    s.conic_a = cov(1, 1) / det;
    s.conic_b = -cov(0, 1) / det;
    s.conic_c = cov(0, 0) / det;
    s.opacity = opacity;
    s.depth = proj->depth_cam;

    // alpha >= kMinAlpha  <=>  d^T A d <= 2 ln(opacity / kMinAlpha)
    const double level = 2.0 * std::log(opacity / kMinAlpha);
    const double ex = std::sqrt(level * cov(0, 0)) + 1e-6;
    const double ey = std::sqrt(level * cov(1, 1)) + 1e-6;
    const double lo_x = std::ceil(s.mean.x() - ex - 0.5);
    const double hi_x = std::floor(s.mean.x() + ex - 0.5);
    const double lo_y = std::ceil(s.mean.y() - ey - 0.5);
    const double hi_y = std::floor(s.mean.y() + ey - 0.5);
    if (hi_x < 0.0 || hi_y < 0.0 || lo_x > cam.width() - 1 || lo_y > cam.height() - 1) {
        return std::nullopt;
    }
    s.x0 = static_cast<int>(std::max(0.0, lo_x));
    s.x1 = static_cast<int>(std::min<double>(cam.width() - 1, hi_x));
    s.y0 = static_cast<int>(std::max(0.0, lo_y));
    s.y1 = static_cast<int>(std::min<double>(cam.height() - 1, hi_y));
    s.color = gaussian_color(g, sh_degree, cam.center());
    s.obj_prob = softmax(g.obj_logits);
    return s;
}

/// Cotangent of the splat outputs.
struct SplatCotangent {
    Vec2 mean = Vec2::Zero();
    double conic_a = 0.0;
    double conic_b = 0.0; // gradient w.r.t. the shared off-diagonal value b
    double conic_c = 0.0;
    double opacity_logit = 0.0;
    double depth = 0.0;
    Vec3 color = Vec3::Zero();
    VecX obj_prob; // may be empty
};

/// Reverse-mode derivative of make_splat: accumulates d(outputs)/d(params)^T * cot
/// into `out`, laid out as a flat GaussianMap parameter record.
inline void splat_vjp(const Gaussian& g, int sh_degree, const Camera& cam, const SplatCotangent& cot,
                      Eigen::Ref<VecX> out) {
    using Mat23 = Eigen::Matrix<double, 2, 3>;
    const double qn = g.rot.norm();
    const Vec4 q = g.rot / qn;
    const Mat3 rot = quat_to_rotmat(q);
    const Vec3 s = g.log_scale.array().exp().matrix();
    const Mat3 m = rot * s.asDiagonal();
    const Mat3 sigma = m * m.transpose();

    const Mat3& w = cam.world_to_cam();
    const Vec3 t = cam.to_camera(g.mu);
    const double fx = cam.fx(), fy = cam.fy();
    const double iz = 1.0 / t.z();
    const double iz2 = iz * iz;
    const double iz3 = iz2 * iz;
    const Mat23 jac = projection_jacobian(cam, t);
    const Mat23 tm = jac * w;
    Mat2 cov = tm * sigma * tm.transpose() + kCovBlur * Mat2::Identity();
    cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
    const Mat2 conic = cov.inverse();

    Mat2 g_conic;
    g_conic << cot.conic_a, 0.5 * cot.conic_b, 0.5 * cot.conic_b, cot.conic_c;
    const Mat2 g_cov = -conic * g_conic * conic;
    const Mat3 g_sigma = tm.transpose() * g_cov * tm;
    const Mat23 g_tm = 2.0 * g_cov * tm * sigma;
    const Mat23 g_j = g_tm * w.transpose();

    Vec3 g_t = Vec3::Zero();
    g_t.x() += g_j(0, 2) * (-fx * iz2);
    g_t.y() += g_j(1, 2) * (-fy * iz2);
    g_t.z() += g_j(0, 0) * (-fx * iz2) + g_j(0, 2) * (2.0 * fx * t.x() * iz3) + g_j(1, 1) * (-fy * iz2) +
               g_j(1, 2) * (2.0 * fy * t.y() * iz3);
    g_t.x() += cot.mean.x() * fx * iz;
    g_t.z() += cot.mean.x() * (-fx * t.x() * iz2);
    g_t.y() += cot.mean.y() * fy * iz;
    g_t.z() += cot.mean.y() * (-fy * t.y() * iz2);
    g_t.z() += cot.depth;

    Vec3 g_mu = w.transpose() * g_t;

    const Mat3 g_m = 2.0 * g_sigma * m;
    Mat3 g_rot;
    Vec3 g_log_scale;
    for (int j = 0; j < 3; ++j) {
        g_rot.col(j) = g_m.col(j) * s[j];
        g_log_scale[j] = s[j] * g_m.col(j).dot(rot.col(j));
    }

    const double qw = q[0], qx = q[1], qy = q[2], qz = q[3];
    const Mat3& G = g_rot;
    Vec4 g_q;
    g_q[0] = 2.0 * (-qz * G(0, 1) + qy * G(0, 2) + qz * G(1, 0) - qx * G(1, 2) - qy * G(2, 0) + qx * G(2, 1));
    g_q[1] = 2.0 * (qy * G(0, 1) + qz * G(0, 2) + qy * G(1, 0) - 2.0 * qx * G(1, 1) - qw * G(1, 2) +
                    qz * G(2, 0) + qw * G(2, 1) - 2.0 * qx * G(2, 2));
    g_q[2] = 2.0 * (-2.0 * qy * G(0, 0) + qx * G(0, 1) + qw * G(0, 2) + qx * G(1, 0) + qz * G(1, 2) -
                    qw * G(2, 0) + qz * G(2, 1) - 2.0 * qy * G(2, 2));
    g_q[3] = 2.0 * (-2.0 * qz * G(0, 0) - qw * G(0, 1) + qx * G(0, 2) + qw * G(1, 0) - 2.0 * qz * G(1, 1) +
                    qy * G(1, 2) + qx * G(2, 0) + qy * G(2, 1));
    const Vec4 g_qraw = (g_q - q * q.dot(g_q)) / qn;

    // view-dependent color
    const int k_count = sh_coeff_count(sh_degree);
    if (cot.color.squaredNorm() > 0.0) {
        Vec3 raw = Vec3::Zero();
        Vec3 dir = Vec3::UnitZ();
        Vec3 v = g.mu - cam.center();
        ShBasis basis;
        if (sh_degree == 0) {
            raw = g.color.head<3>();
            basis.value[0] = 1.0;
        } else {
            dir = v.normalized();
            basis = sh_basis(sh_degree, dir);
            for (int k = 0; k < k_count; ++k) {
                raw += basis.value[k] * g.color.segment<3>(3 * k);
            }
        }
        Vec3 g_raw;
        for (int c = 0; c < 3; ++c) {
            const double col = sigmoid(raw[c]);
            g_raw[c] = cot.color[c] * col * (1.0 - col);
        }
        for (int k = 0; k < k_count; ++k) {
            out.segment<3>(param::kColor + 3 * k) += basis.value[k] * g_raw;
        }
        if (sh_degree > 0) {
            Vec3 g_dir = Vec3::Zero();
            for (int k = 1; k < k_count; ++k) {
                g_dir += basis.grad[k] * g_raw.dot(g.color.segment<3>(3 * k));
            }
            g_mu += (g_dir - dir * dir.dot(g_dir)) / v.norm();
        }
    }

    out.segment<3>(param::kMu) += g_mu;
    out.segment<3>(param::kLogScale) += g_log_scale;
    out.segment<4>(param::kRot) += g_qraw;
    out[param::kOpacity] += cot.opacity_logit;

    if (cot.obj_prob.size() > 0) {
        const VecX p = softmax(g.obj_logits);
        const double dot = p.dot(cot.obj_prob);
        const int off = param::kColor + 3 * k_count;
        out.segment(off, p.size()) += (p.array() * (cot.obj_prob.array() - dot)).matrix();
    }
}

} // namespace snbv
