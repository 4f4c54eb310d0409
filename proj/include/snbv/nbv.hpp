#pragma once

// Next-best-view selection: information gains, per-output normalization,
// fusion, baseline policies and the incremental reconstruction loop.

#include "snbv/harness.hpp"
#include "snbv/training.hpp"
#include "snbv/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace snbv {

enum class Policy { Ours, FisherRF, Random, Spiral, Fps };

inline const char* policy_name(Policy p) {
    switch (p) {
    case Policy::Ours: return "ours";
    case Policy::FisherRF: return "fisherrf";
    case Policy::Random: return "random";
    case Policy::Spiral: return "spiral";
    case Policy::Fps: return "fps";
    }
    return "?";
}

inline std::optional<Policy> parse_policy(const std::string& s) {
    for (Policy p : {Policy::Ours, Policy::FisherRF, Policy::Random, Policy::Spiral, Policy::Fps}) {
        if (s == policy_name(p)) {
            return p;
        }
    }
    return std::nullopt;
}

struct NBVConfig {
    double beta_d = 10.0;
    double beta_o = 1.0;
    double alpha_obj = 0.3;
    double alpha_opa = 0.3;
    double ridge = 1e-6;
    bool normalize = true;
    Policy policy = Policy::Ours;
    std::optional<int> target; // object-centric mode when set
    int init_views = 4;
    int add_views = 6;
    std::uint64_t seed = 0;

    void validate(std::size_t candidate_count) const {
        if (beta_d < 0.0 || beta_o < 0.0) {
            throw std::invalid_argument("nbv config: beta weights must be non-negative");
        }
        if (!(ridge > 0.0)) {
            throw std::invalid_argument("nbv config: ridge must be positive");
        }
        if (init_views < 1 || add_views < 0) {
            throw std::invalid_argument("nbv config: init_views >= 1 and add_views >= 0 required");
        }
        if (static_cast<std::size_t>(init_views + add_views) > candidate_count) {
            throw std::invalid_argument("nbv config: add_views exceeds candidate count minus init_views");
        }
    }

    /// Parameters actually used by the gain pipeline for this policy.
    [[nodiscard]] NBVConfig effective() const {
        NBVConfig e = *this;
        if (policy == Policy::FisherRF) {
            e.alpha_obj = 0.0;
            e.alpha_opa = 0.0;
            e.beta_d = 0.0;
            e.beta_o = 0.0;
            e.normalize = false;
        }
        return e;
    }
};

inline constexpr double kGainFloor = 1e-12;

/// Incremental gain per Gaussian block, with the base log-determinants cached.
class GainEvaluator {
public:
    GainEvaluator(HessianBlocks base, double ridge) : base_(std::move(base)), ridge_(ridge) {
        base_logdet_.reserve(base_.size());
        for (const auto& b : base_.blocks) {
            base_logdet_.push_back(block_logdet(b, ridge_));
        }
    }

    /// logdet(H_T + H_c) - logdet(H_T); Gaussians with zero candidate blocks add nothing.
    [[nodiscard]] double gain(const HessianBlocks& cand) const {
        if (cand.kind != base_.kind || cand.l != base_.l) {
            throw KindMismatch();
        }
        if (cand.size() != base_.size()) {
            throw LengthMismatch();
        }
        double sum = 0.0;
        for (std::size_t g = 0; g < cand.size(); ++g) {
            const MatX& c = cand.blocks[g];
            if (c.isZero(0.0)) {
                continue;
            }
            sum += block_logdet(base_.blocks[g] + c, ridge_) - base_logdet_[g];
        }
        return sum;
    }

    [[nodiscard]] const HessianBlocks& base() const { return base_; }

private:
    HessianBlocks base_;
    double ridge_;
    std::vector<double> base_logdet_;
};

inline double information_gain(const HessianBlocks& h_train, const HessianBlocks& h_cand, double ridge = 1e-6) {
    if (h_train.kind != h_cand.kind || h_train.l != h_cand.l) {
        throw KindMismatch();
    }
    return GainEvaluator(h_train, ridge).gain(h_cand);
}

inline double normalized_gain(double raw, const std::vector<double>& training_gains) {
    if (training_gains.empty()) {
        throw NoViews();
    }
    double mean = 0.0;
    for (double g : training_gains) {
        mean += g;
    }
    mean /= static_cast<double>(training_gains.size());
    return raw / std::max(mean, kGainFloor);
}

inline double fused_gain(double g_rgb, double g_d, double g_o, double beta_d, double beta_o) {
    return g_rgb + beta_d * g_d + beta_o * g_o;
}

inline double fused_gain(double g_rgb, double g_d, double g_o, const NBVConfig& cfg) {
    return fused_gain(g_rgb, g_d, g_o, cfg.beta_d, cfg.beta_o);
}

struct CandidateGain {
    int view_id = 0;
    std::array<double, 3> raw{};        // indexed by OutputKind; NaN when not evaluated
    std::array<double, 3> normalized{};
    double fused = 0.0;
    bool selected = false;
};

struct GainReport {
    int round = 0;
    std::vector<CandidateGain> candidates;
    std::vector<CandidateGain> training; // the same quantities for the training views
    std::array<double, 3> training_mean{};
    int selected_id = -1;
};

struct Selection {
    int view_id = -1;
    GainReport report;
};

namespace detail {

inline std::vector<OutputKind> active_kinds(const NBVConfig& e) {
    std::vector<OutputKind> kinds{OutputKind::Rgb};
    if (e.beta_d > 0.0) {
        kinds.push_back(OutputKind::Depth);
    }
    if (e.beta_o > 0.0) {
        kinds.push_back(OutputKind::Object);
    }
    return kinds;
}

inline int argmax_lowest_id(const std::vector<CandidateGain>& c) {
    int best = -1;
    double best_val = -std::numeric_limits<double>::infinity();
    int best_id = std::numeric_limits<int>::max();
    for (std::size_t i = 0; i < c.size(); ++i) {
        const double v = c[i].fused;
        if (v > best_val || (v == best_val && c[i].view_id < best_id)) {
            best = static_cast<int>(i);
            best_val = v;
            best_id = c[i].view_id;
        }
    }
    return best;
}

} // namespace detail

/// Greedy information-gain selection among the candidates.
inline Selection select_next_view(const GaussianMap& map, const ViewSet& training, const ViewSet& candidates,
                                  const NBVConfig& cfg) {
    if (candidates.views.empty()) {
        throw EmptyCandidates();
    }
    if (training.views.empty()) {
        throw NoViews();
    }
    const NBVConfig e = cfg.effective();
    const std::vector<OutputKind> kinds = detail::active_kinds(e);
    const ConfidenceWeights conf = confidence_weights(map, ConfidenceConfig{e.alpha_obj, e.alpha_opa, e.target});
    const double nan = std::numeric_limits<double>::quiet_NaN();

    // weighted per-view blocks of the training views
    std::array<std::vector<HessianBlocks>, 3> train_blocks;
    for (const auto& v : training.views) {
        ViewHessians vh = jacobian_blocks_all(map, v.camera, v.id);
        for (OutputKind k : kinds) {
            const HessianBlocks one[] = {std::move(vh.get(k))};
            train_blocks[static_cast<int>(k)].push_back(weighted_accumulate(one, conf));
        }
    }
    std::array<std::optional<GainEvaluator>, 3> eval;
    const ConfidenceWeights unit{std::vector<double>(map.size(), 1.0), 0.0, 0.0, std::nullopt};
    for (OutputKind k : kinds) {
        eval[static_cast<int>(k)].emplace(weighted_accumulate(train_blocks[static_cast<int>(k)], unit), e.ridge);
    }

    Selection sel;
    GainReport& rep = sel.report;
    for (const auto& v : training.views) {
        CandidateGain cg;
        cg.view_id = v.id;
        cg.raw.fill(nan);
        rep.training.push_back(cg);
    }
    rep.training_mean.fill(nan);
    for (OutputKind k : kinds) {
        const int ki = static_cast<int>(k);
        std::vector<double> gains;
        for (std::size_t t = 0; t < training.views.size(); ++t) {
            const double g = eval[ki]->gain(train_blocks[ki][t]);
            rep.training[t].raw[ki] = g;
            gains.push_back(g);
        }
        double mean = 0.0;
        for (double g : gains) {
            mean += g;
        }
        rep.training_mean[ki] = mean / static_cast<double>(gains.size());
    }
    auto finish = [&](CandidateGain& cg) {
        for (int ki = 0; ki < 3; ++ki) {
            if (std::isnan(cg.raw[ki])) {
                cg.normalized[ki] = nan;
            } else {
                cg.normalized[ki] = e.normalize ? cg.raw[ki] / std::max(rep.training_mean[ki], kGainFloor) : cg.raw[ki];
            }
        }
        auto term = [&](OutputKind k) {
            const double v = cg.normalized[static_cast<int>(k)];
            return std::isnan(v) ? 0.0 : v;
        };
        cg.fused = term(OutputKind::Rgb);
        if (e.beta_d > 0.0) {
            cg.fused += e.beta_d * term(OutputKind::Depth);
        }
        if (e.beta_o > 0.0) {
            cg.fused += e.beta_o * term(OutputKind::Object);
        }
    };
    for (auto& t : rep.training) {
        finish(t);
    }

    for (const auto& v : candidates.views) {
        CandidateGain cg;
        cg.view_id = v.id;
        cg.raw.fill(nan);
        ViewHessians vh = jacobian_blocks_all(map, v.camera, v.id);
        for (OutputKind k : kinds) {
            const HessianBlocks one[] = {std::move(vh.get(k))};
            cg.raw[static_cast<int>(k)] = eval[static_cast<int>(k)]->gain(weighted_accumulate(one, conf));
        }
        finish(cg);
        rep.candidates.push_back(cg);
    }
    const int best = detail::argmax_lowest_id(rep.candidates);
    rep.candidates[best].selected = true;
    rep.selected_id = rep.candidates[best].view_id;
    sel.view_id = rep.selected_id;
    return sel;
}

/// Non-information baselines. `spiral_order` lists ring view ids in visiting order.
inline int baseline_select(Policy policy, const ViewSet& training, const ViewSet& candidates, std::uint64_t seed,
                           const std::vector<int>& spiral_order = {}) {
    if (candidates.views.empty()) {
        throw EmptyCandidates();
    }
    switch (policy) {
    case Policy::Random: {
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<std::size_t> pick(0, candidates.views.size() - 1);
        return candidates.views[pick(rng)].id;
    }
    case Policy::Spiral: {
        for (int id : spiral_order) {
            if (candidates.find(id) && !training.find(id)) {
                return id;
            }
        }
        int lowest = std::numeric_limits<int>::max();
        for (const auto& v : candidates.views) {
            lowest = std::min(lowest, v.id);
        }
        return lowest;
    }
    case Policy::Fps: {
        int best = -1;
        double best_d = -1.0;
        for (const auto& c : candidates.views) {
            double dmin = std::numeric_limits<double>::infinity();
            for (const auto& t : training.views) {
                dmin = std::min(dmin, (c.camera.center() - t.camera.center()).norm());
            }
            if (dmin > best_d || (dmin == best_d && c.id < best)) {
                best_d = dmin;
                best = c.id;
            }
        }
        return best;
    }
    default:
        throw std::invalid_argument(std::string("baseline_select: not a baseline policy: ") + policy_name(policy));
    }
}

struct RunConfig {
    NBVConfig nbv;
    TrainConfig train;
    Intrinsics intrinsics{64, 64, 50.0};
    int n_spiral = 48;
    int n_random = 16;
    double radius = 3.2;
    int n_test = 8;
    std::uint64_t view_seed = 0;  // candidate and test view sampling
    std::vector<int> eval_counts; // training-set sizes (<= init + add) evaluated with a final round; empty = init + add
    bool keep_renders = false;
};

/// Per-object masked depth error pooled over the test views.
struct ObjectError {
    double abs_sum = 0.0;
    std::size_t pixels = 0;
    [[nodiscard]] double mae() const {
        return pixels ? abs_sum / static_cast<double>(pixels) : std::numeric_limits<double>::quiet_NaN();
    }
};

struct Evaluation {
    int views = 0;
    Metrics mean;                      // averaged over test views
    std::vector<ObjectError> objects;  // index = object id, 0 unused
    std::vector<int> training_ids;
    int gaussians = 0;
    std::vector<RenderOutput> renders; // test views, when requested
    GaussianMap map;
};

/// One refine_round call: training-set size, iterations spent, SH degree used.
struct RefineTrace {
    int round = 0;
    bool final_round = false;
    int views = 0;
    int iterations = 0;
    int sh_degree = 0;
};

struct RunRecord {
    std::vector<int> init_ids;
    std::vector<int> selected_ids;
    std::vector<GainReport> reports;
    std::vector<Evaluation> evaluations;
    std::vector<RefineTrace> refinements;
    int total_iterations = 0;
    int final_sh_degree = 0;
};

struct RunContext {
    ViewSet candidates;
    ViewSet test;
    std::vector<int> spiral_order;
    std::vector<OracleImage> test_gt;
};

inline RunContext make_context(const PrimitiveScene& scene, const RunConfig& rc, int planned_views) {
    RunContext ctx;
    const Vec3 centroid = scene.bounds().center();
    ctx.candidates = sample_candidate_views(centroid, rc.radius, rc.n_spiral, rc.n_random, rc.view_seed, rc.intrinsics);
    ctx.test = sample_test_views(centroid, rc.radius, rc.n_test, rc.view_seed, rc.intrinsics);
    ctx.spiral_order = spiral_sequence(rc.n_spiral, planned_views);
    for (const auto& v : ctx.test.views) {
        ctx.test_gt.push_back(oracle_render(scene, v.camera));
    }
    return ctx;
}

inline Evaluation evaluate(const GaussianMap& map, const RunContext& ctx, int n_objects, bool keep_renders) {
    Evaluation ev;
    ev.objects.assign(n_objects + 1, ObjectError{});
    ev.gaussians = static_cast<int>(map.size());
    for (std::size_t i = 0; i < ctx.test.views.size(); ++i) {
        const RenderOutput r = rasterize(map, ctx.test.views[i].camera);
        const OracleImage& gt = ctx.test_gt[i];
        const Metrics m = metrics(r, gt);
        ev.mean.psnr += m.psnr;
        ev.mean.ssim += m.ssim;
        ev.mean.depth_mae += m.depth_mae;
        for (std::size_t p = 0; p < gt.mask.size(); ++p) {
            const int id = gt.mask[p];
            if (id > 0) {
                ev.objects[id].abs_sum += std::abs(r.depth.data[p] - gt.depth.data[p]);
                ++ev.objects[id].pixels;
            }
        }
        if (keep_renders) {
            ev.renders.push_back(r);
        }
    }
    const double n = static_cast<double>(ctx.test.views.size());
    ev.mean.psnr /= n;
    ev.mean.ssim /= n;
    ev.mean.depth_mae /= n;
    return ev;
}

/// Initial views, then alternating refinement and selection until the
/// largest evaluation count; a final high-degree round is run and evaluated
/// at every requested count.
inline RunRecord run_nbv(const PrimitiveScene& scene, const RunConfig& rc) {
    scene.validate();
    const NBVConfig& cfg = rc.nbv;
    std::vector<int> counts = rc.eval_counts;
    if (counts.empty()) {
        counts.push_back(cfg.init_views + cfg.add_views);
    }
    std::sort(counts.begin(), counts.end());
    counts.erase(std::unique(counts.begin(), counts.end()), counts.end());
    if (counts.front() < cfg.init_views) {
        throw std::invalid_argument("run_nbv: evaluation count below init_views");
    }
    const int max_views = counts.back();
    const int planned = cfg.init_views + cfg.add_views;
    if (max_views > planned) {
        throw std::invalid_argument("run_nbv: evaluation count exceeds init_views + add_views");
    }
    cfg.validate(static_cast<std::size_t>(rc.n_spiral + rc.n_random));
    if (max_views > rc.n_spiral + rc.n_random) {
        throw std::invalid_argument("run_nbv: evaluation count exceeds the candidate pool");
    }
    if (cfg.init_views > rc.n_spiral) {
        throw std::invalid_argument("run_nbv: init_views exceeds the spiral ring");
    }
    if (cfg.target && (*cfg.target < 1 || *cfg.target > scene.n_objects)) {
        throw UnknownTarget(*cfg.target);
    }

    TrainConfig tc = rc.train;
    const Box3 b = scene.bounds();
    tc.init_bounds = Box3{b.lo - Vec3::Constant(0.05), b.hi + Vec3::Constant(0.05)};
    tc.seed = cfg.seed;
    tc.validate(scene.n_objects);

    RunContext ctx = make_context(scene, rc, planned);
    ViewSet remaining = ctx.candidates;
    ViewSet training;
    training.role = ViewRole::Training;
    std::vector<TrainingView> train_views;
    auto acquire = [&](int id) {
        const auto it = std::find_if(remaining.views.begin(), remaining.views.end(),
                                     [id](const ViewEntry& v) { return v.id == id; });
        const ViewEntry v = *it;
        remaining.views.erase(it);
        training.views.push_back(v);
        train_views.push_back({v.id, v.camera, make_observation(oracle_render(scene, v.camera), scene.n_objects)});
    };

    RunRecord rec;
    for (int i = 0; i < cfg.init_views; ++i) {
        rec.init_ids.push_back(ctx.spiral_order[i]);
        acquire(ctx.spiral_order[i]);
    }
    std::mt19937_64 baseline_rng(round_seed(cfg.seed, -1, false));
    GaussianMap map;
    map.n_objects = scene.n_objects;
    map.background_color = scene.background_color;
    OptimizeStats stats;

    for (int k = cfg.init_views; k <= max_views; ++k) {
        const int round = k - cfg.init_views;
        if (std::binary_search(counts.begin(), counts.end(), k)) {
            const int before = stats.iterations;
            const GaussianMap fin = refine_round(map, train_views, tc, RoundInfo{round, true}, &stats);
            rec.refinements.push_back({round, true, k, stats.iterations - before, fin.sh_degree});
            Evaluation ev = evaluate(fin, ctx, scene.n_objects, rc.keep_renders);
            ev.views = k;
            for (const auto& v : training.views) {
                ev.training_ids.push_back(v.id);
            }
            rec.final_sh_degree = fin.sh_degree;
            ev.map = fin;
            rec.evaluations.push_back(std::move(ev));
        }
        if (k == max_views) {
            break;
        }
        int next = -1;
        if (cfg.policy == Policy::Ours || cfg.policy == Policy::FisherRF) {
            const int before = stats.iterations;
            map = refine_round(map, train_views, tc, RoundInfo{round, false}, &stats);
            rec.refinements.push_back({round, false, k, stats.iterations - before, map.sh_degree});
            Selection s = select_next_view(map, training, remaining, cfg);
            s.report.round = round;
            next = s.view_id;
            rec.reports.push_back(std::move(s.report));
        } else {
            // every round starts from a fresh map, so baselines skip the unused intermediate fits
            next = baseline_select(cfg.policy, training, remaining, baseline_rng(), ctx.spiral_order);
        }
        rec.selected_ids.push_back(next);
        acquire(next);
    }
    rec.total_iterations = stats.iterations;
    return rec;
}

} // namespace snbv
