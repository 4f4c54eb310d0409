#pragma once

// Per-Gaussian Gauss-Newton information blocks, confidence weighting and the
// block-diagonal log-determinant.

#include "snbv/errors.hpp"
#include "snbv/gaussian_map.hpp"
#include "snbv/renderer.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

namespace snbv {

enum class OutputKind { Rgb = 0, Depth = 1, Object = 2 };

inline constexpr std::array<OutputKind, 3> kOutputKinds{OutputKind::Rgb, OutputKind::Depth, OutputKind::Object};

inline const char* kind_name(OutputKind k) {
    switch (k) {
    case OutputKind::Rgb: return "rgb";
    case OutputKind::Depth: return "depth";
    case OutputKind::Object: return "object";
    }
    return "?";
}

/// Flat-parameter indices that enter the blocks of one output kind: the
/// geometric record always, plus color (rgb) or object logits (object).
inline std::vector<int> block_layout(OutputKind kind, const GaussianMap& map) {
    std::vector<int> idx;
    for (int i = 0; i < param::kGeometric; ++i) {
        idx.push_back(i);
    }
    if (kind == OutputKind::Rgb) {
        for (int i = 0; i < map.color_size(); ++i) {
            idx.push_back(param::kColor + i);
        }
    } else if (kind == OutputKind::Object) {
        for (int i = 0; i <= map.n_objects; ++i) {
            idx.push_back(map.obj_offset() + i);
        }
    }
    return idx;
}

inline int block_size(OutputKind kind, const GaussianMap& map) {
    return static_cast<int>(block_layout(kind, map).size());
}

struct HessianBlocks {
    OutputKind kind = OutputKind::Rgb;
    int l = 0;
    std::vector<MatX> blocks;
    std::optional<int> view_id;

    static HessianBlocks zeros(OutputKind kind, int l, std::size_t count) {
        HessianBlocks h;
        h.kind = kind;
        h.l = l;
        h.blocks.assign(count, MatX::Zero(l, l));
        return h;
    }

    [[nodiscard]] std::size_t size() const { return blocks.size(); }
};

/// Blocks of all three output kinds for one view.
struct ViewHessians {
    HessianBlocks rgb;
    HessianBlocks depth;
    HessianBlocks object;

    [[nodiscard]] const HessianBlocks& get(OutputKind k) const {
        return k == OutputKind::Rgb ? rgb : (k == OutputKind::Depth ? depth : object);
    }
    HessianBlocks& get(OutputKind k) { return k == OutputKind::Rgb ? rgb : (k == OutputKind::Depth ? depth : object); }
};

namespace detail {

inline constexpr int kGeo = 6; // mean2d (2), conic a b c, opacity logit

// Per-splat sufficient statistics of sum_px J^T J in the intermediate space
// u = [geo(6), feature channels].
struct SplatMoments {
    Eigen::Matrix<double, 6, 6> gg_rgb = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 6> gg_depth = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 6> gg_obj = Eigen::Matrix<double, 6, 6>::Zero();
    MatX gf; // 6 x feature_dim
    double ff = 0.0;
};

// Rows d u / d theta over the full flat parameter record.
inline MatX intermediate_jacobian(const Gaussian& g, const GaussianMap& map, const Camera& cam, int feature_dim) {
    const int n1 = map.n_objects + 1;
    MatX du = MatX::Zero(kGeo + feature_dim, map.param_count());
    auto row = [&](int r, const SplatCotangent& cot) {
        VecX out = VecX::Zero(map.param_count());
        splat_vjp(g, map.sh_degree, cam, cot, out);
        du.row(r) = out.transpose();
    };
    SplatCotangent c;
    c.mean = Vec2(1, 0);
    row(0, c);
    c = {};
    c.mean = Vec2(0, 1);
    row(1, c);
    c = {};
    c.conic_a = 1;
    row(2, c);
    c = {};
    c.conic_b = 1;
    row(3, c);
    c = {};
    c.conic_c = 1;
    row(4, c);
    c = {};
    c.opacity_logit = 1;
    row(5, c);
    for (int ch = 0; ch < 3; ++ch) {
        c = {};
        c.color[ch] = 1;
        row(kGeo + ch, c);
    }
    c = {};
    c.depth = 1;
    row(kGeo + 3, c);
    for (int k = 0; k < n1; ++k) {
        c = {};
        c.obj_prob = VecX::Zero(n1);
        c.obj_prob[k] = 1;
        row(kGeo + 4 + k, c);
    }
    return du;
}

inline MatX select_columns(const MatX& m, const std::vector<int>& cols) {
    MatX out(m.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) {
        out.col(static_cast<Eigen::Index>(j)) = m.col(cols[j]);
    }
    return out;
}

} // namespace detail

/// Sum over pixels and channels of J^T J per Gaussian for all three output
/// kinds, from one traversal. Culled Gaussians get zero blocks.
inline ViewHessians jacobian_blocks_all(const GaussianMap& map, const Camera& cam,
                                        std::optional<int> view_id = std::nullopt) {
    using Vec6 = Eigen::Matrix<double, 6, 1>;
    const detail::RasterPlan plan = detail::plan_view(map, cam);
    const int fd = plan.feature_dim;
    const int n1 = map.n_objects + 1;
    const std::size_t ns = plan.splats.size();
    std::vector<detail::SplatMoments> mom(ns);
    for (auto& m : mom) {
        m.gf = MatX::Zero(detail::kGeo, fd);
    }

    std::vector<detail::Hit> hits;
    std::vector<double> tail(fd), a(fd);
    for (int y = 0; y < plan.height; ++y) {
        for (int x = 0; x < plan.width; ++x) {
            const double t_final = detail::traverse(plan, x, y, hits);
            for (int c = 0; c < fd; ++c) {
                tail[c] = plan.background[c] * t_final;
            }
            for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
                const detail::Hit& hit = *it;
                const double wgt = hit.alpha * hit.transmittance;
                const double* f = plan.feature(hit.splat);
                for (int c = 0; c < fd; ++c) {
                    a[c] = hit.transmittance * f[c] - tail[c] / (1.0 - hit.alpha);
                    tail[c] += f[c] * wgt;
                }
                detail::SplatMoments& m = mom[hit.splat];
                m.ff += wgt * wgt;
                if (hit.clamped) {
                    continue;
                }
                const Splat& s = plan.splats[hit.splat];
                const double al = hit.alpha;
                Vec6 v;
                v << al * (s.conic_a * hit.dx + s.conic_b * hit.dy), al * (s.conic_b * hit.dx + s.conic_c * hit.dy),
                    -0.5 * al * hit.dx * hit.dx, -al * hit.dx * hit.dy, -0.5 * al * hit.dy * hit.dy,
                    al * (1.0 - s.opacity);
                const Eigen::Matrix<double, 6, 6> vv = v * v.transpose();
                const double a_rgb = a[0] * a[0] + a[1] * a[1] + a[2] * a[2];
                double a_obj = 0.0;
                for (int k = 0; k < n1; ++k) {
                    a_obj += a[4 + k] * a[4 + k];
                }
                m.gg_rgb += a_rgb * vv;
                m.gg_depth += (a[3] * a[3]) * vv;
                m.gg_obj += a_obj * vv;
                for (int c = 0; c < fd; ++c) {
                    m.gf.col(c) += (wgt * a[c]) * v;
                }
            }
        }
    }

    ViewHessians out;
    for (OutputKind kind : kOutputKinds) {
        out.get(kind) = HessianBlocks::zeros(kind, block_size(kind, map), map.size());
        out.get(kind).view_id = view_id;
    }
    const std::vector<int> lay_rgb = block_layout(OutputKind::Rgb, map);
    const std::vector<int> lay_depth = block_layout(OutputKind::Depth, map);
    const std::vector<int> lay_obj = block_layout(OutputKind::Object, map);

    for (std::size_t k = 0; k < ns; ++k) {
        const detail::SplatMoments& m = mom[k];
        if (m.ff == 0.0) {
            continue;
        }
        const int gi = plan.splats[k].index;
        const MatX du = detail::intermediate_jacobian(map.gaussians[gi], map, cam, fd);
        auto assemble = [&](const std::vector<int>& layout, const Eigen::Matrix<double, 6, 6>& gg, int f0, int fc) {
            const MatX d = detail::select_columns(du, layout);
            const MatX dg = d.topRows(detail::kGeo);
            const MatX df = d.middleRows(detail::kGeo + f0, fc);
            const MatX cross = dg.transpose() * m.gf.middleCols(f0, fc) * df;
            MatX h = dg.transpose() * gg * dg + cross + cross.transpose() + m.ff * (df.transpose() * df);
            return MatX(0.5 * (h + h.transpose()));
        };
        out.rgb.blocks[gi] = assemble(lay_rgb, m.gg_rgb, 0, 3);
        out.depth.blocks[gi] = assemble(lay_depth, m.gg_depth, 3, 1);
        out.object.blocks[gi] = assemble(lay_obj, m.gg_obj, 4, n1);
    }
    return out;
}

inline HessianBlocks jacobian_blocks(const GaussianMap& map, const Camera& cam, OutputKind kind) {
    return jacobian_blocks_all(map, cam).get(kind);
}

struct ConfidenceConfig {
    double alpha_obj = 0.3;
    double alpha_opa = 0.3;
    std::optional<int> target; // object id for object-centric weighting
};

struct ConfidenceWeights {
    std::vector<double> weights;
    double alpha_obj = 0.0;
    double alpha_opa = 0.0;
    std::optional<int> target;
};

inline constexpr double kConfidenceFloor = 1e-4;

/// c_g = max_k(p)^-alpha_obj * opacity^-alpha_opa, or in object mode the
/// target probability in place of the max and zero for other Gaussians.
inline ConfidenceWeights confidence_weights(const GaussianMap& map, const ConfidenceConfig& cfg) {
    if (cfg.target && (*cfg.target < 0 || *cfg.target > map.n_objects)) {
        throw UnknownTarget(*cfg.target);
    }
    ConfidenceWeights out{{}, cfg.alpha_obj, cfg.alpha_opa, cfg.target};
    out.weights.reserve(map.size());
    for (const auto& g : map.gaussians) {
        const VecX p = softmax(g.obj_logits);
        Eigen::Index arg = 0;
        const double pmax = p.maxCoeff(&arg);
        double prob = pmax;
        if (cfg.target) {
            if (arg != *cfg.target) {
                out.weights.push_back(0.0);
                continue;
            }
            prob = p[*cfg.target];
        }
        const double sigma = std::max(sigmoid(g.opacity_logit), kConfidenceFloor);
        prob = std::max(prob, kConfidenceFloor);
        out.weights.push_back(std::pow(prob, -cfg.alpha_obj) * std::pow(sigma, -cfg.alpha_opa));
    }
    return out;
}

/// c_g times the sum of the per-view blocks.
inline HessianBlocks weighted_accumulate(std::span<const HessianBlocks> views, const ConfidenceWeights& conf) {
    if (views.empty()) {
        throw LengthMismatch();
    }
    const HessianBlocks& first = views.front();
    for (const auto& v : views) {
        if (v.kind != first.kind || v.l != first.l) {
            throw KindMismatch();
        }
        if (v.size() != first.size()) {
            throw LengthMismatch();
        }
    }
    if (conf.weights.size() != first.size()) {
        throw LengthMismatch();
    }
    HessianBlocks out = HessianBlocks::zeros(first.kind, first.l, first.size());
    for (std::size_t g = 0; g < first.size(); ++g) {
        for (const auto& v : views) {
            out.blocks[g] += v.blocks[g];
        }
        out.blocks[g] *= conf.weights[g];
    }
    return out;
}

inline double block_logdet(const MatX& block, double ridge) {
    MatX m = block;
    m.diagonal().array() += ridge;
    Eigen::LLT<MatX> llt(m);
    if (llt.info() == Eigen::Success) {
        return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    }
    Eigen::SelfAdjointEigenSolver<MatX> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues().array().max(ridge).log().sum();
}

/// Sum over Gaussians of logdet(block + ridge I).
inline double logdet(const HessianBlocks& h, double ridge = 1e-6) {
    double sum = 0.0;
    for (const auto& b : h.blocks) {
        sum += block_logdet(b, ridge);
    }
    return sum;
}

/// Diagnostic CSV: gaussian_id,kind,logdet.
inline void write_logdet_csv(std::ostream& os, const HessianBlocks& h, double ridge) {
    os << "gaussian_id,kind,logdet\n";
    for (std::size_t g = 0; g < h.size(); ++g) {
        os << g << ',' << kind_name(h.kind) << ',' << block_logdet(h.blocks[g], ridge) << '\n';
    }
}

} // namespace snbv
