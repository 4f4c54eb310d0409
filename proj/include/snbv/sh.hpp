#pragma once

#include "snbv/geometry.hpp"

#include <array>

namespace snbv {

inline constexpr int kMaxShDegree = 3;

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

// Real SH basis as used by common splatting implementations. The constant
// band is taken as 1 so that a degree-0 color is sigmoid(c0).
struct ShBasis {
    std::array<double, 16> value{};
    std::array<Vec3, 16> grad{}; // d value / d dir (polynomial gradient, dir not renormalized)
};

inline ShBasis sh_basis(int degree, const Vec3& dir) {
    constexpr double c1 = 0.4886025119029199;
    constexpr double c2_0 = 1.0925484305920792;
    constexpr double c2_1 = -1.0925484305920792;
    constexpr double c2_2 = 0.31539156525252005;
    constexpr double c2_3 = -1.0925484305920792;
    constexpr double c2_4 = 0.5462742152960396;
    constexpr double c3_0 = -0.5900435899266435;
    constexpr double c3_1 = 2.890611442640554;
    constexpr double c3_2 = -0.4570457994644658;
    constexpr double c3_3 = 0.3731763325901154;
    constexpr double c3_4 = -0.4570457994644658;
    constexpr double c3_5 = 1.445305721320277;
    constexpr double c3_6 = -0.5900435899266435;

    ShBasis b;
    for (auto& g : b.grad) {
        g.setZero();
    }
    b.value[0] = 1.0;
    if (degree < 1) {
        return b;
    }
    const double x = dir.x(), y = dir.y(), z = dir.z();
    b.value[1] = -c1 * y;
    b.grad[1] = Vec3(0.0, -c1, 0.0);
    b.value[2] = c1 * z;
    b.grad[2] = Vec3(0.0, 0.0, c1);
    b.value[3] = -c1 * x;
    b.grad[3] = Vec3(-c1, 0.0, 0.0);
    if (degree < 2) {
        return b;
    }
    const double xx = x * x, yy = y * y, zz = z * z;
    b.value[4] = c2_0 * x * y;
    b.grad[4] = Vec3(c2_0 * y, c2_0 * x, 0.0);
    b.value[5] = c2_1 * y * z;
    b.grad[5] = Vec3(0.0, c2_1 * z, c2_1 * y);
    b.value[6] = c2_2 * (2.0 * zz - xx - yy);
    b.grad[6] = Vec3(-2.0 * c2_2 * x, -2.0 * c2_2 * y, 4.0 * c2_2 * z);
    b.value[7] = c2_3 * x * z;
    b.grad[7] = Vec3(c2_3 * z, 0.0, c2_3 * x);
    b.value[8] = c2_4 * (xx - yy);
    b.grad[8] = Vec3(2.0 * c2_4 * x, -2.0 * c2_4 * y, 0.0);
    if (degree < 3) {
        return b;
    }
    b.value[9] = c3_0 * y * (3.0 * xx - yy);
    b.grad[9] = Vec3(c3_0 * 6.0 * x * y, c3_0 * (3.0 * xx - 3.0 * yy), 0.0);
    b.value[10] = c3_1 * x * y * z;
    b.grad[10] = Vec3(c3_1 * y * z, c3_1 * x * z, c3_1 * x * y);
    b.value[11] = c3_2 * y * (4.0 * zz - xx - yy);
    b.grad[11] = Vec3(-2.0 * c3_2 * x * y, c3_2 * (4.0 * zz - xx - 3.0 * yy), 8.0 * c3_2 * y * z);
    b.value[12] = c3_3 * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    b.grad[12] = Vec3(-6.0 * c3_3 * x * z, -6.0 * c3_3 * y * z, c3_3 * (6.0 * zz - 3.0 * xx - 3.0 * yy));
    b.value[13] = c3_4 * x * (4.0 * zz - xx - yy);
    b.grad[13] = Vec3(c3_4 * (4.0 * zz - 3.0 * xx - yy), -2.0 * c3_4 * x * y, 8.0 * c3_4 * x * z);
    b.value[14] = c3_5 * z * (xx - yy);
    b.grad[14] = Vec3(2.0 * c3_5 * x * z, -2.0 * c3_5 * y * z, c3_5 * (xx - yy));
    b.value[15] = c3_6 * x * (xx - 3.0 * yy);
    b.grad[15] = Vec3(c3_6 * (3.0 * xx - 3.0 * yy), -6.0 * c3_6 * x * y, 0.0);
    return b;
}

} // namespace snbv
