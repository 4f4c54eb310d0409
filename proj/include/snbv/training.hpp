#pragma once

#include "snbv/gaussian_map.hpp"
#include "snbv/losses.hpp"
#include "snbv/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace snbv {

struct Box3 {
    Vec3 lo = Vec3::Constant(-1.0);
    Vec3 hi = Vec3::Constant(1.0);
    [[nodiscard]] Vec3 extent() const { return hi - lo; }
    [[nodiscard]] Vec3 center() const { return 0.5 * (lo + hi); }
};

/// Adam learning rates per parameter group. The position rate is scaled by
/// the scene extent and decays exponentially over each optimize call.
struct LearningRates {
    double position = 1.6e-4;
    double position_final = 1.6e-6;
    double scale = 5e-3;
    double rotation = 1e-3;
    double opacity = 5e-2;
    double color = 2.5e-3;
    double obj = 2.5e-2;
};

struct DensifyConfig {
    bool enabled = true;
    int interval = 200;
    double start_fraction = 0.2;
    double end_fraction = 0.8;
    double grad_threshold = 2e-4; // mean screen-space positional gradient norm
    double percent_dense = 0.01;  // clone below this fraction of the scene extent, split above
    double max_growth = 2.0;      // cap on the Gaussian count relative to the initial count
};

struct TrainConfig {
    LossWeights loss;
    double delta_obj = 0.1;
    double opacity_prune = 0.005;
    LearningRates lr;
    int iters_per_view = 100;
    int final_iters = 3000;
    int final_sh_degree = 3;
    int init_count = 2000;
    double init_opacity = 0.1;
    DensifyConfig densify;
    std::uint64_t seed = 0;
    Box3 init_bounds;

    [[nodiscard]] double scene_extent() const { return init_bounds.extent().norm(); }

    void validate(int n_objects) const {
        auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
        if (!in01(loss.lambda_ssim) || !in01(loss.lambda_obj) || !in01(loss.lambda_dice)) {
            throw std::invalid_argument("train config: loss weights must lie in [0, 1]");
        }
        if (!(delta_obj > 0.0) || delta_obj > 1.0 / (n_objects + 1) + 0.1) {
            throw std::invalid_argument("train config: delta_obj outside (0, 1/(n+1) + 0.1]");
        }
        if (iters_per_view <= 0 || final_iters <= 0 || init_count <= 0) {
            throw std::invalid_argument("train config: iteration and Gaussian counts must be positive");
        }
        if (final_sh_degree < 0 || final_sh_degree > kMaxShDegree) {
            throw std::invalid_argument("train config: final_sh_degree outside [0, 3]");
        }
    }
};

struct TrainingView {
    int id = 0;
    Camera camera;
    Observation obs;
};

struct OptimizeStats {
    int iterations = 0;
    std::vector<double> losses;
    int densified = 0;
    int pruned = 0;
};

/// Removes Gaussians whose max object probability is below delta_obj or whose
/// opacity is below opacity_prune. Survivor order is preserved.
inline GaussianMap prune(const GaussianMap& map, const TrainConfig& cfg) {
    GaussianMap out = map;
    out.gaussians.clear();
    for (const auto& g : map.gaussians) {
        const double pmax = softmax(g.obj_logits).maxCoeff();
        if (pmax < cfg.delta_obj || sigmoid(g.opacity_logit) < cfg.opacity_prune) {
            continue;
        }
        out.gaussians.push_back(g);
    }
    return out;
}

namespace detail {

inline std::vector<int> keep_indices(const GaussianMap& map, const TrainConfig& cfg) {
    std::vector<int> keep;
    for (std::size_t i = 0; i < map.size(); ++i) {
        const Gaussian& g = map.gaussians[i];
        if (softmax(g.obj_logits).maxCoeff() >= cfg.delta_obj && sigmoid(g.opacity_logit) >= cfg.opacity_prune) {
            keep.push_back(static_cast<int>(i));
        }
    }
    return keep;
}

/// Adam state for the flat parameter records of a map.
class Adam {
public:
    Adam(std::size_t count, int param_count) : m_(count, VecX::Zero(param_count)), v_(count, VecX::Zero(param_count)) {}

    void step(GaussianMap& map, const std::vector<VecX>& grads, const VecX& lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(kBeta1, t_);
        const double bc2 = 1.0 - std::pow(kBeta2, t_);
        for (std::size_t i = 0; i < map.size(); ++i) {
            const VecX& g = grads[i];
            m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * g;
            v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * g.cwiseProduct(g);
            VecX p = map.flatten(i);
            p.array() -= lr.array() * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + kEps);
            map.unflatten(i, p);
            Gaussian& gs = map.gaussians[i];
            gs.rot = normalized_quat(gs.rot);
        }
    }

    void keep(const std::vector<int>& indices) {
        std::vector<VecX> m, v;
        for (int i : indices) {
            m.push_back(m_[i]);
            v.push_back(v_[i]);
        }
        m_ = std::move(m);
        v_ = std::move(v);
    }

    void append_zero(int param_count) {
        m_.push_back(VecX::Zero(param_count));
        v_.push_back(VecX::Zero(param_count));
    }

private:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-15;
    std::vector<VecX> m_;
    std::vector<VecX> v_;
    int t_ = 0;
};

inline VecX learning_rate_vector(const GaussianMap& map, const TrainConfig& cfg, double position_lr) {
    VecX lr(map.param_count());
    lr.segment<3>(param::kMu).setConstant(position_lr);
    lr.segment<3>(param::kLogScale).setConstant(cfg.lr.scale);
    lr.segment<4>(param::kRot).setConstant(cfg.lr.rotation);
    lr[param::kOpacity] = cfg.lr.opacity;
    lr.segment(param::kColor, map.color_size()).setConstant(cfg.lr.color);
    lr.segment(map.obj_offset(), map.n_objects + 1).setConstant(cfg.lr.obj);
    return lr;
}

/// Clone small Gaussians and split large ones whose mean positional gradient
/// exceeds the threshold. Returns the number of Gaussians added.
inline int densify(GaussianMap& map, Adam& adam, std::vector<double>& grad_accum, std::vector<int>& visible_count,
                   const TrainConfig& cfg, std::size_t max_count, std::mt19937_64& rng) {
    const double extent = cfg.scene_extent();
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t original = map.size();
    std::vector<int> remove;
    int added = 0;
    for (std::size_t i = 0; i < original && map.size() < max_count; ++i) {
        if (visible_count[i] == 0 || grad_accum[i] / visible_count[i] <= cfg.densify.grad_threshold) {
            continue;
        }
        const Gaussian g = map.gaussians[i];
        const Vec3 s = g.log_scale.array().exp().matrix();
        if (s.maxCoeff() <= cfg.densify.percent_dense * extent) {
            map.gaussians.push_back(g);
            adam.append_zero(map.param_count());
            ++added;
        } else {
            const Mat3 r = quat_to_rotmat(g.rot);
            for (int c = 0; c < 2; ++c) {
                Gaussian child = g;
                const Vec3 sample(normal(rng) * s[0], normal(rng) * s[1], normal(rng) * s[2]);
                child.mu = g.mu + r * sample;
                child.log_scale = (s / 1.6).array().log().matrix();
                map.gaussians.push_back(child);
                adam.append_zero(map.param_count());
            }
            remove.push_back(static_cast<int>(i));
            added += 1;
        }
    }
    if (!remove.empty()) {
        std::vector<int> keep;
        std::size_t r = 0;
        for (std::size_t i = 0; i < map.size(); ++i) {
            if (r < remove.size() && remove[r] == static_cast<int>(i)) {
                ++r;
                continue;
            }
            keep.push_back(static_cast<int>(i));
        }
        std::vector<Gaussian> kept;
        for (int i : keep) {
            kept.push_back(map.gaussians[i]);
        }
        map.gaussians = std::move(kept);
        adam.keep(keep);
    }
    grad_accum.assign(map.size(), 0.0);
    visible_count.assign(map.size(), 0);
    return added;
}

} // namespace detail

/// Adam optimization of the map against the training views, one uniformly
/// sampled view per iteration. Deterministic for a fixed seed.
inline GaussianMap optimize(GaussianMap map, std::span<const TrainingView> views, int iters, const TrainConfig& cfg,
                            std::uint64_t seed, OptimizeStats* stats = nullptr) {
    if (views.empty()) {
        throw NoViews();
    }
    if (iters <= 0) {
        throw std::invalid_argument("optimize: iteration count must be positive");
    }
    map.validate();
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, views.size() - 1);
    detail::Adam adam(map.size(), map.param_count());
    std::vector<double> grad_accum(map.size(), 0.0);
    std::vector<int> visible_count(map.size(), 0);
    const std::size_t max_count =
        static_cast<std::size_t>(std::max<double>(map.size(), cfg.densify.max_growth * cfg.init_count));
    const double extent = cfg.scene_extent();
    const int densify_start = static_cast<int>(cfg.densify.start_fraction * iters);
    const int densify_end = static_cast<int>(cfg.densify.end_fraction * iters);
    OptimizeStats local;

    for (int it = 0; it < iters; ++it) {
        const TrainingView& view = views[pick(rng)];
        const RenderGradients rg = render_gradients(map, view.camera, view.obs, cfg.loss);
        local.losses.push_back(rg.loss);

        const double frac = iters > 1 ? static_cast<double>(it) / (iters - 1) : 0.0;
        const double pos_lr = std::exp((1.0 - frac) * std::log(cfg.lr.position * extent) +
                                       frac * std::log(cfg.lr.position_final * extent));
        adam.step(map, rg.grads.params, detail::learning_rate_vector(map, cfg, pos_lr));

        for (std::size_t i = 0; i < map.size(); ++i) {
            if (rg.grads.mean2d_norm[i] > 0.0) {
                grad_accum[i] += rg.grads.mean2d_norm[i];
                ++visible_count[i];
            }
        }
        const int step = it + 1;
        if (step % cfg.densify.interval == 0 && step >= densify_start && step <= densify_end) {
            if (cfg.densify.enabled) {
                local.densified += detail::densify(map, adam, grad_accum, visible_count, cfg, max_count, rng);
            }
            const std::vector<int> keep = detail::keep_indices(map, cfg);
            if (keep.size() != map.size()) {
                local.pruned += static_cast<int>(map.size() - keep.size());
                std::vector<Gaussian> kept;
                for (int i : keep) {
                    kept.push_back(map.gaussians[i]);
                }
                map.gaussians = std::move(kept);
                adam.keep(keep);
            }
            grad_accum.assign(map.size(), 0.0);
            visible_count.assign(map.size(), 0);
        }
    }
    local.iterations = iters;
    if (stats) {
        stats->iterations += local.iterations;
        stats->losses.insert(stats->losses.end(), local.losses.begin(), local.losses.end());
        stats->densified += local.densified;
        stats->pruned += local.pruned;
    }
    return map;
}

/// Mean nearest-neighbor distance (brute force).
inline double mean_nearest_neighbor(const std::vector<Vec3>& points) {
    if (points.size() < 2) {
        return 1.0;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < points.size(); ++j) {
            if (i != j) {
                best = std::min(best, (points[i] - points[j]).squaredNorm());
            }
        }
        sum += std::sqrt(best);
    }
    return sum / static_cast<double>(points.size());
}

/// Fresh random map: uniform positions in the bounds, isotropic scale equal
/// to the mean nearest-neighbor spacing, low opacity, uniform object logits.
inline GaussianMap random_initial_map(int n_objects, int sh_degree, const Vec3& background, const TrainConfig& cfg,
                                      std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Vec3> pts(cfg.init_count);
    const Vec3 ext = cfg.init_bounds.extent();
    for (auto& p : pts) {
        const double a = u(rng), b = u(rng), c = u(rng);
        p = cfg.init_bounds.lo + Vec3(a * ext.x(), b * ext.y(), c * ext.z());
    }
    const double spacing = mean_nearest_neighbor(pts);
    GaussianMap map;
    map.n_objects = n_objects;
    map.sh_degree = sh_degree;
    map.background_color = background;
    map.gaussians.reserve(pts.size());
    for (const auto& p : pts) {
        Gaussian g;
        g.mu = p;
        g.log_scale = Vec3::Constant(std::log(spacing));
        g.opacity_logit = logit(cfg.init_opacity);
        g.color = VecX::Zero(3 * sh_coeff_count(sh_degree));
        g.obj_logits = VecX::Zero(n_objects + 1);
        map.gaussians.push_back(g);
    }
    return map;
}

struct RoundInfo {
    int index = 0;
    bool final_round = false;
};

/// Seed for one refinement round, derived from the run seed.
inline std::uint64_t round_seed(std::uint64_t seed, int round_index, bool final_round) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(round_index), static_cast<std::uint32_t>(final_round ? 1 : 0)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

/// One incremental refinement: discard the previous map, reinitialize from
/// random points and optimize for iters_per_view * m iterations at SH degree 0,
/// or final_iters at the final SH degree for the final round.
inline GaussianMap refine_round(const GaussianMap& previous, std::span<const TrainingView> views,
                                const TrainConfig& cfg, const RoundInfo& round, OptimizeStats* stats = nullptr) {
    if (views.empty()) {
        throw NoViews();
    }
    cfg.validate(previous.n_objects);
    const std::uint64_t seed = round_seed(cfg.seed, round.index, round.final_round);
    const int degree = round.final_round ? cfg.final_sh_degree : 0;
    GaussianMap init = random_initial_map(previous.n_objects, degree, previous.background_color, cfg, seed);
    const int iters = round.final_round ? cfg.final_iters : cfg.iters_per_view * static_cast<int>(views.size());
    return optimize(std::move(init), views, iters, cfg, seed ^ 0x9e3779b97f4a7c15ULL, stats);
}

} // namespace snbv
