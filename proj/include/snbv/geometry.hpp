#pragma once

#include "snbv/errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <stdexcept>

namespace snbv {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

inline constexpr double kNearPlane = 0.01;
/// Isotropic screen-space blur added to every projected covariance (px^2).
inline constexpr double kCovBlur = 0.3;

/// Pinhole camera. Pose is camera-to-world, +z forward, +y down, pixel
/// centers at integer + 0.5.
class Camera {
public:
    Camera(int width, int height, double fx, double fy, double cx, double cy, const Mat4& pose)
        : width_(width), height_(height), fx_(fx), fy_(fy), cx_(cx), cy_(cy), pose_(pose) {
        if (width <= 0 || height <= 0) {
            throw std::invalid_argument("camera: image size must be positive");
        }
        if (!(fx > 0.0) || !(fy > 0.0)) {
            throw std::invalid_argument("camera: focal lengths must be positive");
        }
        if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height) {
            throw std::invalid_argument("camera: principal point outside the image");
        }
        const Mat3 r = pose.topLeftCorner<3, 3>();
        if ((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9 ||
            std::abs(r.determinant() - 1.0) > 1e-9) {
            throw std::invalid_argument("camera: pose rotation is not a proper rotation");
        }
        world_to_cam_ = r.transpose();
        center_ = pose.block<3, 1>(0, 3);
    }

    [[nodiscard]] int width() const noexcept { return width_; }
    [[nodiscard]] int height() const noexcept { return height_; }
    [[nodiscard]] double fx() const noexcept { return fx_; }
    [[nodiscard]] double fy() const noexcept { return fy_; }
    [[nodiscard]] double cx() const noexcept { return cx_; }
    [[nodiscard]] double cy() const noexcept { return cy_; }
    [[nodiscard]] const Mat4& pose() const noexcept { return pose_; }
    [[nodiscard]] const Vec3& center() const noexcept { return center_; }
    [[nodiscard]] const Mat3& world_to_cam() const noexcept { return world_to_cam_; }

    [[nodiscard]] Vec3 to_camera(const Vec3& p) const { return world_to_cam_ * (p - center_); }

    /// World-space direction (unnormalized, camera z component 1) of the ray
    /// through pixel coordinates (u, v).
    [[nodiscard]] Vec3 ray_direction(double u, double v) const {
        const Vec3 d_cam((u - cx_) / fx_, (v - cy_) / fy_, 1.0);
        return world_to_cam_.transpose() * d_cam;
    }

private:
    int width_;
    int height_;
    double fx_;
    double fy_;
    double cx_;
    double cy_;
    Mat4 pose_;
    Mat3 world_to_cam_;
    Vec3 center_;
};

/// Camera at `position` looking at `target`. Falls back to an alternate up
/// vector when the viewing direction is parallel to `up`.
inline Camera look_at(const Vec3& position, const Vec3& target, const Vec3& up, int width, int height,
                      double fx, double fy, double cx, double cy) {
    const Vec3 forward = (target - position).normalized();
    Vec3 right = forward.cross(up);
    if (right.norm() < 1e-9) {
        right = forward.cross(Vec3::UnitY());
    }
    right.normalize();
    const Vec3 down = forward.cross(right);
    Mat4 pose = Mat4::Identity();
    pose.block<3, 1>(0, 0) = right;
    pose.block<3, 1>(0, 1) = down;
    pose.block<3, 1>(0, 2) = forward;
    pose.block<3, 1>(0, 3) = position;
    return Camera(width, height, fx, fy, cx, cy, pose);
}

/// One splatting primitive in unconstrained parameterization.
struct Gaussian {
    Vec3 mu = Vec3::Zero();
    Vec3 log_scale = Vec3::Zero();
    Vec4 rot = Vec4(1.0, 0.0, 0.0, 0.0); // (w, x, y, z)
    double opacity_logit = 0.0;
    VecX color;      // 3 * (d+1)^2 SH coefficients, coefficient-major
    VecX obj_logits; // n+1, channel 0 = background
};

inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline VecX softmax(const VecX& logits) {
    const double m = logits.maxCoeff();
    VecX e = (logits.array() - m).exp().matrix();
    return e / e.sum();
}

inline Vec4 normalized_quat(const Vec4& q) {
    const double n = q.norm();
    if (!(n > 0.0)) {
        throw std::invalid_argument("zero quaternion");
    }
    return q / n;
}

inline Mat3 quat_to_rotmat(const Vec4& q_in) {
    const Vec4 q = normalized_quat(q_in);
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

/// Sigma = R S S^T R^T with S = diag(scale).
inline Mat3 covariance3d(const Vec3& scale, const Vec4& rot) {
    if ((scale.array() <= 0.0).any()) {
        throw std::invalid_argument("covariance3d: scales must be positive");
    }
    const Mat3 m = quat_to_rotmat(rot) * scale.asDiagonal();
    return m * m.transpose();
}

struct Projection {
    Vec2 mean2d;
    Mat2 cov2d;
    double depth_cam;
};

/// 2x3 Jacobian of the pinhole map at camera-space point t.
inline Eigen::Matrix<double, 2, 3> projection_jacobian(const Camera& cam, const Vec3& t) {
    const double iz = 1.0 / t.z();
    const double iz2 = iz * iz;
    Eigen::Matrix<double, 2, 3> j;
    j << cam.fx() * iz, 0.0, -cam.fx() * t.x() * iz2, 0.0, cam.fy() * iz, -cam.fy() * t.y() * iz2;
    return j;
}

inline std::optional<Projection> try_project(const Camera& cam, const Vec3& mu, const Mat3& cov3d) {
    const Vec3 t = cam.to_camera(mu);
    if (!(t.z() > kNearPlane)) {
        return std::nullopt;
    }
    const Eigen::Matrix<double, 2, 3> tm = projection_jacobian(cam, t) * cam.world_to_cam();
    Projection p;
    p.mean2d = Vec2(cam.fx() * t.x() / t.z() + cam.cx(), cam.fy() * t.y() / t.z() + cam.cy());
    p.cov2d = tm * cov3d * tm.transpose() + kCovBlur * Mat2::Identity();
    p.cov2d(0, 1) = p.cov2d(1, 0) = 0.5 * (p.cov2d(0, 1) + p.cov2d(1, 0));
    p.depth_cam = t.z();
    return p;
}

/// First-order (local affine) perspective projection of a Gaussian.
/// Throws BehindCamera when the center is not in front of the near plane.
inline Projection project_gaussian(const Camera& cam, const Gaussian& g) {
    auto p = try_project(cam, g.mu, covariance3d(g.log_scale.array().exp().matrix(), g.rot));
    if (!p) {
        throw BehindCamera();
    }
    return *p;
}

} // namespace snbv
