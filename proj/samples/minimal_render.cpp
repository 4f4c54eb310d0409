// Renders a three-Gaussian map and prints the center pixel.
#include "snbv/renderer.hpp"

#include <iostream>

int main() {
    using namespace snbv;
    GaussianMap map;
    map.n_objects = 2;
    map.gaussians.push_back(make_gaussian(Vec3(0.0, 0.0, 3.0), 0.3, 0.8, Vec3(0.9, 0.2, 0.2), 2));
    map.gaussians.push_back(make_gaussian(Vec3(0.3, 0.1, 4.0), 0.4, 0.7, Vec3(0.2, 0.8, 0.2), 2));
    map.gaussians.push_back(make_gaussian(Vec3(-0.4, -0.2, 5.0), 0.5, 0.9, Vec3(0.2, 0.2, 0.9), 2));
    map.gaussians[0].obj_logits << -2.0, 3.0, -2.0;
    map.gaussians[1].obj_logits << -2.0, -2.0, 3.0;

    const Camera cam(32, 32, 40.0, 40.0, 16.0, 16.0, Mat4::Identity());
    const RenderOutput out = rasterize(map, cam);
    std::cout << "rgb   " << out.rgb.at(16, 16, 0) << ' ' << out.rgb.at(16, 16, 1) << ' ' << out.rgb.at(16, 16, 2)
              << "\ndepth " << out.depth.at(16, 16) << "\nalpha " << out.alpha.at(16, 16) << "\nobject";
    for (int k = 0; k < out.obj_prob.channels; ++k) {
        std::cout << ' ' << out.obj_prob.at(16, 16, k);
    }
    std::cout << '\n';
}
