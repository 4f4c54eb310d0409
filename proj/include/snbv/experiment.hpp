#pragma once

// Experiment orchestration shared by the command-line tool and the acceptance
// suite: sweeps of (scene, policy, seed, target) jobs and their artifacts.

#include "snbv/io.hpp"
#include "snbv/nbv.hpp"

#include <json.hpp>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace snbv {

struct SceneSource {
    std::string label; // CSV "scene" column
    PrimitiveScene scene;
    std::uint64_t view_seed = 0;
};

struct Job {
    std::size_t scene_index = 0;
    Policy policy = Policy::Ours;
    std::uint64_t seed = 0;
    std::optional<int> target;
};

struct JobResult {
    Job job;
    RunRecord record;
};

inline std::string job_label(const SceneSource& s, const Job& j) {
    std::string out = s.label + "_" + policy_name(j.policy) + "_s" + std::to_string(j.seed);
    if (j.target) {
        out += "_t" + std::to_string(*j.target);
    }
    return out;
}

/// Worker count from SNBV_THREADS (default 1).
inline int thread_budget() {
    const char* env = std::getenv("SNBV_THREADS");
    if (!env || !*env) {
        return 1;
    }
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) {
        throw std::invalid_argument("SNBV_THREADS must be a positive integer");
    }
    return static_cast<int>(std::min<long>(v, 256));
}

inline RunConfig job_config(const RunConfig& base, const SceneSource& s, const Job& j) {
    RunConfig rc = base;
    rc.nbv.policy = j.policy;
    rc.nbv.seed = j.seed;
    rc.nbv.target = j.target;
    rc.view_seed = s.view_seed;
    return rc;
}

/// Runs every job; results come back in job order regardless of scheduling.
inline std::vector<JobResult> run_jobs(const std::vector<SceneSource>& scenes, const std::vector<Job>& jobs,
                                       const RunConfig& base, int threads) {
    std::vector<JobResult> results(jobs.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            try {
                const Job& j = jobs[i];
                const SceneSource& s = scenes.at(j.scene_index);
                results[i] = {j, run_nbv(s.scene, job_config(base, s, j))};
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
                next = jobs.size();
            }
        }
    };
    const int n = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n; ++t) {
            pool.emplace_back(worker);
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
    return results;
}

// ---- tables ----

inline std::string fmt(double v) {
    if (std::isnan(v)) {
        return "";
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.8g", v);
    return buf;
}

inline std::string join_ids(const std::vector<int>& ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        s += (i ? ";" : "") + std::to_string(ids[i]);
    }
    return s;
}

inline const char* kMetricsHeader = "scene,policy,seed,target,views,psnr,ssim,depth_mae,gaussians,selected_ids,"
                                    "mean_selected_gain\n";

/// One row per evaluation; the gain column stays empty for baselines.
inline void write_metrics_rows(std::ostream& os, const std::vector<SceneSource>& scenes,
                               const std::vector<JobResult>& results) {
    for (const auto& r : results) {
        double gain = std::numeric_limits<double>::quiet_NaN();
        if (!r.record.reports.empty()) {
            gain = 0.0;
            for (const auto& rep : r.record.reports) {
                for (const auto& c : rep.candidates) {
                    if (c.view_id == rep.selected_id) {
                        gain += c.fused;
                    }
                }
            }
            gain /= static_cast<double>(r.record.reports.size());
        }
        for (const auto& ev : r.record.evaluations) {
            os << scenes[r.job.scene_index].label << ',' << policy_name(r.job.policy) << ',' << r.job.seed << ','
               << (r.job.target ? std::to_string(*r.job.target) : "") << ',' << ev.views << ',' << fmt(ev.mean.psnr)
               << ',' << fmt(ev.mean.ssim) << ',' << fmt(ev.mean.depth_mae) << ',' << ev.gaussians << ','
               << join_ids(ev.training_ids) << ',' << fmt(gain) << '\n';
        }
    }
}

namespace detail {

inline nlohmann::json gain_json(const CandidateGain& c) {
    auto arr = [](const std::array<double, 3>& a) {
        nlohmann::json j;
        for (OutputKind k : kOutputKinds) {
            const double v = a[static_cast<int>(k)];
            j[kind_name(k)] = std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v);
        }
        return j;
    };
    return {{"id", c.view_id}, {"raw", arr(c.raw)}, {"normalized", arr(c.normalized)}, {"fused", c.fused}};
}

} // namespace detail

inline nlohmann::json results_json(const std::vector<SceneSource>& scenes, const std::vector<JobResult>& results) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : results) {
        nlohmann::json rounds = nlohmann::json::array();
        for (const auto& rep : r.record.reports) {
            nlohmann::json cands = nlohmann::json::array();
            for (const auto& c : rep.candidates) {
                cands.push_back(detail::gain_json(c));
            }
            nlohmann::json train = nlohmann::json::array();
            for (const auto& c : rep.training) {
                train.push_back(detail::gain_json(c));
            }
            rounds.push_back({{"round", rep.round},
                              {"selected_id", rep.selected_id},
                              {"candidates", cands},
                              {"training", train}});
        }
        nlohmann::json evals = nlohmann::json::array();
        for (const auto& ev : r.record.evaluations) {
            nlohmann::json objects = nlohmann::json::object();
            for (std::size_t k = 1; k < ev.objects.size(); ++k) {
                const double m = ev.objects[k].mae();
                objects[std::to_string(k)] = std::isnan(m) ? nlohmann::json(nullptr) : nlohmann::json(m);
            }
            evals.push_back({{"views", ev.views},
                             {"psnr", ev.mean.psnr},
                             {"ssim", ev.mean.ssim},
                             {"depth_mae", ev.mean.depth_mae},
                             {"gaussians", ev.gaussians},
                             {"object_depth_mae", objects}});
        }
        runs.push_back({{"scene", scenes[r.job.scene_index].label},
                        {"policy", policy_name(r.job.policy)},
                        {"seed", r.job.seed},
                        {"target", r.job.target ? nlohmann::json(*r.job.target) : nlohmann::json(nullptr)},
                        {"init_ids", r.record.init_ids},
                        {"selected_ids", r.record.selected_ids},
                        {"total_iterations", r.record.total_iterations},
                        {"rounds", rounds},
                        {"final_metrics", evals}});
    }
    return runs;
}

/// Rendered test views of every evaluation plus the oracle images once per scene.
inline void write_images(const std::filesystem::path& dir, const std::vector<SceneSource>& scenes,
                         const std::vector<JobResult>& results, const RunConfig& base) {
    namespace fs = std::filesystem;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        RunConfig rc = base;
        rc.view_seed = scenes[s].view_seed;
        const ViewSet test = sample_test_views(scenes[s].scene.bounds().center(), rc.radius, rc.n_test,
                                               rc.view_seed, rc.intrinsics);
        const fs::path gt_dir = dir / (scenes[s].label + "_gt");
        fs::create_directories(gt_dir);
        for (const auto& v : test.views) {
            const OracleImage gt = oracle_render(scenes[s].scene, v.camera);
            const std::string stem = "view" + std::to_string(v.id);
            write_file((gt_dir / (stem + "_rgb.ppm")).string(), gt.rgb, write_ppm);
            write_file((gt_dir / (stem + "_depth.pfm")).string(), gt.depth, write_pfm);
            write_file((gt_dir / (stem + "_labels.pgm")).string(),
                       one_hot(gt.mask, gt.depth.width, gt.depth.height, scenes[s].scene.n_objects),
                       write_label_pgm);
        }
        for (const auto& r : results) {
            if (r.job.scene_index != s) {
                continue;
            }
            for (const auto& ev : r.record.evaluations) {
                const fs::path run_dir =
                    dir / (job_label(scenes[s], r.job) + "_v" + std::to_string(ev.views));
                fs::create_directories(run_dir);
                for (std::size_t i = 0; i < ev.renders.size(); ++i) {
                    const std::string stem = "view" + std::to_string(test.views[i].id);
                    const RenderOutput& out = ev.renders[i];
                    write_file((run_dir / (stem + "_rgb.ppm")).string(), out.rgb, write_ppm);
                    write_file((run_dir / (stem + "_depth.pfm")).string(), out.depth, write_pfm);
                    write_file((run_dir / (stem + "_alpha.pfm")).string(), out.alpha, write_pfm);
                    write_file((run_dir / (stem + "_labels.pgm")).string(), out.obj_prob, write_label_pgm);
                }
            }
        }
    }
}

// ---- object-centric study ----

inline constexpr int kCornerObjects = 4;

/// Per-object masked depth error of one run: the four corner objects, the
/// remaining (center) objects pooled, and all objects pooled.
struct ObjectRow {
    std::string scene;
    std::uint64_t seed = 0;
    std::optional<int> target;
    std::array<double, kCornerObjects> corner{};
    double center = 0.0;
    double total = 0.0;
};

inline ObjectRow object_row(const SceneSource& s, const JobResult& r) {
    const Evaluation& ev = r.record.evaluations.back();
    ObjectRow row;
    row.scene = s.label;
    row.seed = r.job.seed;
    row.target = r.job.target;
    ObjectError center;
    ObjectError total;
    for (std::size_t k = 1; k < ev.objects.size(); ++k) {
        if (k <= kCornerObjects) {
            row.corner[k - 1] = ev.objects[k].mae();
        } else {
            center.abs_sum += ev.objects[k].abs_sum;
            center.pixels += ev.objects[k].pixels;
        }
        total.abs_sum += ev.objects[k].abs_sum;
        total.pixels += ev.objects[k].pixels;
    }
    row.center = center.mae();
    row.total = total.mae();
    return row;
}

inline std::string target_name(const std::optional<int>& t) {
    return t ? "object" + std::to_string(*t) : "scene";
}

inline void write_object_rows(std::ostream& os, const std::vector<ObjectRow>& rows) {
    os << "scene,seed,target,corner1,corner2,corner3,corner4,center,total\n";
    for (const auto& r : rows) {
        os << r.scene << ',' << r.seed << ',' << target_name(r.target);
        for (double v : r.corner) {
            os << ',' << fmt(v);
        }
        os << ',' << fmt(r.center) << ',' << fmt(r.total) << '\n';
    }
}

/// Rows averaged per target over all (scene, seed) pairs, NaN cells skipped.
inline std::vector<ObjectRow> mean_object_rows(const std::vector<ObjectRow>& rows) {
    std::vector<ObjectRow> out;
    for (int t = 0; t <= kCornerObjects; ++t) {
        const std::optional<int> target = t == 0 ? std::nullopt : std::optional<int>(t);
        ObjectRow m;
        m.scene = "mean";
        m.target = target;
        std::array<int, kCornerObjects + 2> n{};
        std::array<double, kCornerObjects + 2> sum{};
        for (const auto& r : rows) {
            if (r.target != target) {
                continue;
            }
            for (int k = 0; k < kCornerObjects + 2; ++k) {
                const double v = k < kCornerObjects ? r.corner[k] : (k == kCornerObjects ? r.center : r.total);
                if (!std::isnan(v)) {
                    sum[k] += v;
                    ++n[k];
                }
            }
        }
        auto avg = [&](int k) { return n[k] ? sum[k] / n[k] : std::numeric_limits<double>::quiet_NaN(); };
        for (int k = 0; k < kCornerObjects; ++k) {
            m.corner[k] = avg(k);
        }
        m.center = avg(kCornerObjects);
        m.total = avg(kCornerObjects + 1);
        out.push_back(m);
    }
    return out;
}

/// Counts (scene, seed, corner) cells where the corner's own targeted run
/// has lower error than the whole-scene run.
struct CornerComparison {
    int wins = 0;
    int cells = 0;
    double mean_reduction = 0.0; // relative, averaged over cells
};

inline CornerComparison compare_corners(const std::vector<ObjectRow>& rows) {
    CornerComparison c;
    for (const auto& whole : rows) {
        if (whole.target) {
            continue;
        }
        for (const auto& own : rows) {
            if (!own.target || own.scene != whole.scene || own.seed != whole.seed || *own.target > kCornerObjects) {
                continue;
            }
            const int k = *own.target - 1;
            if (std::isnan(own.corner[k]) || std::isnan(whole.corner[k])) {
                continue;
            }
            ++c.cells;
            c.wins += own.corner[k] < whole.corner[k] ? 1 : 0;
            c.mean_reduction += (whole.corner[k] - own.corner[k]) / whole.corner[k];
        }
    }
    if (c.cells) {
        c.mean_reduction /= c.cells;
    }
    return c;
}

/// Whole-scene run plus one object-centric run per corner object, for every
/// (scene, seed) pair; jobs ordered scene, seed, target.
inline std::vector<Job> object_study_jobs(std::size_t scene_count, const std::vector<std::uint64_t>& seeds,
                                          Policy policy) {
    std::vector<Job> jobs;
    for (std::size_t s = 0; s < scene_count; ++s) {
        for (auto seed : seeds) {
            jobs.push_back({s, policy, seed, std::nullopt});
            for (int t = 1; t <= kCornerObjects; ++t) {
                jobs.push_back({s, policy, seed, t});
            }
        }
    }
    return jobs;
}

} // namespace snbv
