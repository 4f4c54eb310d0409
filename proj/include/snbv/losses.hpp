#pragma once

#include "snbv/image.hpp"
#include "snbv/renderer.hpp"

#include <array>
#include <cmath>
#include <vector>

namespace snbv {

/// Scalar loss together with its gradient with respect to the prediction.
struct LossWithGrad {
    double value = 0.0;
    Image grad;
};

inline double loss_l1(const Image& pred, const Image& gt) {
    require_same_shape(pred, gt, "loss_l1");
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        sum += std::abs(pred.data[i] - gt.data[i]);
    }
    return pred.data.empty() ? 0.0 : sum / static_cast<double>(pred.data.size());
}

inline LossWithGrad loss_l1_grad(const Image& pred, const Image& gt) {
    require_same_shape(pred, gt, "loss_l1");
    LossWithGrad out{loss_l1(pred, gt), Image(pred.width, pred.height, pred.channels)};
    const double inv = 1.0 / static_cast<double>(pred.data.size());
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double r = pred.data[i] - gt.data[i];
        out.grad.data[i] = r > 0.0 ? inv : (r < 0.0 ? -inv : 0.0);
    }
    return out;
}

namespace ssim {

inline constexpr int kWindow = 11;
inline constexpr double kSigma = 1.5;
inline constexpr double kC1 = 0.01 * 0.01;
inline constexpr double kC2 = 0.03 * 0.03;

inline const std::array<double, kWindow>& kernel() {
    static const std::array<double, kWindow> k = [] {
        std::array<double, kWindow> w{};
        double sum = 0.0;
        for (int i = 0; i < kWindow; ++i) {
            const double d = i - kWindow / 2;
            w[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
            sum += w[i];
        }
        for (auto& v : w) {
            v /= sum;
        }
        return w;
    }();
    return k;
}

/// Plane of doubles used by the windowed statistics.
struct Plane {
    int width = 0;
    int height = 0;
    std::vector<double> v;
    Plane(int w, int h) : width(w), height(h), v(static_cast<std::size_t>(w) * h, 0.0) {}
    double& at(int x, int y) { return v[static_cast<std::size_t>(y) * width + x]; }
    [[nodiscard]] double at(int x, int y) const { return v[static_cast<std::size_t>(y) * width + x]; }
};

/// Valid-mode separable Gaussian filtering (output shrinks by kWindow - 1).
inline Plane filter_valid(const Plane& in) {
    const auto& k = kernel();
    const int ow = in.width - kWindow + 1;
    const int oh = in.height - kWindow + 1;
    Plane tmp(ow, in.height);
    for (int y = 0; y < in.height; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < kWindow; ++i) {
                s += k[i] * in.at(x + i, y);
            }
            tmp.at(x, y) = s;
        }
    }
    Plane out(ow, oh);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < kWindow; ++i) {
                s += k[i] * tmp.at(x, y + i);
            }
            out.at(x, y) = s;
        }
    }
    return out;
}

/// Adjoint of filter_valid.
inline Plane filter_valid_adjoint(const Plane& out, int width, int height) {
    const auto& k = kernel();
    Plane tmp(out.width, height);
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            for (int i = 0; i < kWindow; ++i) {
                tmp.at(x, y + i) += k[i] * out.at(x, y);
            }
        }
    }
    Plane in(width, height);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            for (int i = 0; i < kWindow; ++i) {
                in.at(x + i, y) += k[i] * tmp.at(x, y);
            }
        }
    }
    return in;
}

inline Plane channel(const Image& img, int c) {
    Plane p(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            p.at(x, y) = img.at(x, y, c);
        }
    }
    return p;
}

inline Plane product(const Plane& a, const Plane& b) {
    Plane p(a.width, a.height);
    for (std::size_t i = 0; i < p.v.size(); ++i) {
        p.v[i] = a.v[i] * b.v[i];
    }
    return p;
}

/// Mean SSIM over all valid window positions and channels; optionally the
/// gradient of that mean with respect to `pred`.
inline double mean_ssim(const Image& pred, const Image& gt, Image* grad) {
    require_same_shape(pred, gt, "ssim");
    if (pred.width < kWindow || pred.height < kWindow) {
        throw TooSmall(std::to_string(pred.width) + "x" + std::to_string(pred.height) + " < 11x11");
    }
    const int ow = pred.width - kWindow + 1;
    const int oh = pred.height - kWindow + 1;
    const double norm = 1.0 / (static_cast<double>(ow) * oh * pred.channels);
    if (grad) {
        *grad = Image(pred.width, pred.height, pred.channels);
    }
    double total = 0.0;
    for (int c = 0; c < pred.channels; ++c) {
        const Plane x = channel(pred, c);
        const Plane y = channel(gt, c);
        const Plane mx = filter_valid(x);
        const Plane my = filter_valid(y);
        const Plane mxx = filter_valid(product(x, x));
        const Plane myy = filter_valid(product(y, y));
        const Plane mxy = filter_valid(product(x, y));
        Plane d_mx(ow, oh), d_mxx(ow, oh), d_mxy(ow, oh);
        for (std::size_t i = 0; i < mx.v.size(); ++i) {
            const double ux = mx.v[i], uy = my.v[i];
            const double vx = mxx.v[i] - ux * ux;
            const double vy = myy.v[i] - uy * uy;
            const double cxy = mxy.v[i] - ux * uy;
            const double a1 = 2.0 * ux * uy + kC1;
            const double a2 = 2.0 * cxy + kC2;
            const double b1 = ux * ux + uy * uy + kC1;
            const double b2 = vx + vy + kC2;
            const double den = b1 * b2;
            const double s = a1 * a2 / den;
            total += s;
            if (grad) {
                // derivatives w.r.t. the raw moments E[x], E[x^2], E[xy]
                const double da1 = 2.0 * uy, da2 = -2.0 * uy, db1 = 2.0 * ux, db2 = -2.0 * ux;
                d_mx.v[i] = ((da1 * a2 + a1 * da2) - s * (db1 * b2 + b1 * db2)) / den;
                d_mxx.v[i] = -s / b2;
                d_mxy.v[i] = 2.0 * a1 / den;
            }
        }
        if (grad) {
            const Plane gx = filter_valid_adjoint(d_mx, pred.width, pred.height);
            const Plane gxx = filter_valid_adjoint(d_mxx, pred.width, pred.height);
            const Plane gxy = filter_valid_adjoint(d_mxy, pred.width, pred.height);
            for (int yy = 0; yy < pred.height; ++yy) {
                for (int xx = 0; xx < pred.width; ++xx) {
                    grad->at(xx, yy, c) =
                        norm * (gx.at(xx, yy) + 2.0 * x.at(xx, yy) * gxx.at(xx, yy) + y.at(xx, yy) * gxy.at(xx, yy));
                }
            }
        }
    }
    return total * norm;
}

} // namespace ssim

/// 1 - mean SSIM (11x11 Gaussian window, sigma 1.5, valid positions only).
inline double loss_ssim(const Image& pred, const Image& gt) { return 1.0 - ssim::mean_ssim(pred, gt, nullptr); }

inline LossWithGrad loss_ssim_grad(const Image& pred, const Image& gt) {
    LossWithGrad out;
    out.value = 1.0 - ssim::mean_ssim(pred, gt, &out.grad);
    for (auto& v : out.grad.data) {
        v = -v;
    }
    return out;
}

inline constexpr double kDiceEps = 1e-6;

/// Soft multi-class Dice loss averaged over classes.
inline LossWithGrad loss_dice_grad(const Image& pred, const Image& gt, bool want_grad = true) {
    require_same_shape(pred, gt, "loss_dice");
    const int k_count = pred.channels;
    std::vector<double> inter(k_count, 0.0), pp(k_count, 0.0), gg(k_count, 0.0);
    const std::size_t npx = pred.pixel_count();
    for (std::size_t p = 0; p < npx; ++p) {
        for (int k = 0; k < k_count; ++k) {
            const double a = pred.data[p * k_count + k];
            const double b = gt.data[p * k_count + k];
            inter[k] += a * b;
            pp[k] += a * a;
            gg[k] += b * b;
        }
    }
    LossWithGrad out;
    double score = 0.0;
    for (int k = 0; k < k_count; ++k) {
        score += (2.0 * inter[k] + kDiceEps) / (pp[k] + gg[k] + kDiceEps);
    }
    out.value = 1.0 - score / k_count;
    if (want_grad) {
        out.grad = Image(pred.width, pred.height, pred.channels);
        for (std::size_t p = 0; p < npx; ++p) {
            for (int k = 0; k < k_count; ++k) {
                const double den = pp[k] + gg[k] + kDiceEps;
                const double num = 2.0 * inter[k] + kDiceEps;
                const double a = pred.data[p * k_count + k];
                const double b = gt.data[p * k_count + k];
                out.grad.data[p * k_count + k] = -(2.0 * b * den - num * 2.0 * a) / (den * den) / k_count;
            }
        }
    }
    return out;
}

inline double loss_dice(const Image& pred, const Image& gt) { return loss_dice_grad(pred, gt, false).value; }

struct LossWeights {
    double lambda_ssim = 0.2;
    double lambda_obj = 0.1;
    double lambda_dice = 0.5;
};

/// Supervision for one view: RGB with background pixels already replaced by
/// the background color, and the one-hot instance mask.
struct Observation {
    Image rgb;
    Image onehot;
};

struct OverallLoss {
    double value = 0.0;
    double l1 = 0.0;
    double ssim = 0.0;
    double obj = 0.0;
    OutputCotangent cotangent;
};

/// (1 - lambda) L1 + lambda L_SSIM + lambda_obj ((1 - lambda_dice) L1_obj + lambda_dice Dice).
inline OverallLoss loss_overall(const RenderOutput& render, const Observation& obs, const LossWeights& w) {
    require_same_shape(render.rgb, obs.rgb, "rgb observation");
    require_same_shape(render.obj_prob, obs.onehot, "mask observation");
    OverallLoss out;
    const LossWithGrad l1 = loss_l1_grad(render.rgb, obs.rgb);
    out.l1 = l1.value;
    Image g_rgb = l1.grad;
    for (auto& v : g_rgb.data) {
        v *= 1.0 - w.lambda_ssim;
    }
    if (w.lambda_ssim > 0.0) {
        const LossWithGrad ls = loss_ssim_grad(render.rgb, obs.rgb);
        out.ssim = ls.value;
        for (std::size_t i = 0; i < g_rgb.data.size(); ++i) {
            g_rgb.data[i] += w.lambda_ssim * ls.grad.data[i];
        }
    }
    out.value = (1.0 - w.lambda_ssim) * out.l1 + w.lambda_ssim * out.ssim;
    out.cotangent.rgb = std::move(g_rgb);
    if (w.lambda_obj > 0.0) {
        const LossWithGrad lo = loss_l1_grad(render.obj_prob, obs.onehot);
        const LossWithGrad ld = loss_dice_grad(render.obj_prob, obs.onehot);
        out.obj = (1.0 - w.lambda_dice) * lo.value + w.lambda_dice * ld.value;
        out.value += w.lambda_obj * out.obj;
        Image g_obj(render.obj_prob.width, render.obj_prob.height, render.obj_prob.channels);
        for (std::size_t i = 0; i < g_obj.data.size(); ++i) {
            g_obj.data[i] = w.lambda_obj * ((1.0 - w.lambda_dice) * lo.grad.data[i] + w.lambda_dice * ld.grad.data[i]);
        }
        out.cotangent.obj_prob = std::move(g_obj);
    }
    return out;
}

struct RenderGradients {
    double loss = 0.0;
    MapGradients grads;
};

/// Loss of one view and its exact gradient w.r.t. every Gaussian parameter.
inline RenderGradients render_gradients(const GaussianMap& map, const Camera& cam, const Observation& obs,
                                        const LossWeights& w) {
    if (obs.rgb.width != cam.width() || obs.rgb.height != cam.height()) {
        throw ShapeMismatch("observation does not match camera");
    }
    const detail::RasterPlan plan = detail::plan_view(map, cam);
    const RenderOutput render = detail::render_plan(plan, map);
    OverallLoss loss = loss_overall(render, obs, w);
    RenderGradients out;
    out.loss = loss.value;
    out.grads = detail::backward_plan(plan, map, cam, loss.cotangent);
    return out;
}

} // namespace snbv
