// snbv_cli: run NBV experiments on synthetic primitive scenes.
//
//   snbv_cli run --scene-seed 7 --policy ours,random --seeds 1,2,3 --out out/
//   snbv_cli object-study --scene-seed 1,2,3 --seeds 1 --out study/
//   snbv_cli convergence --scene-seed 7 --policy ours,fps --seeds 1 --out curve/
//
// Exit codes: 0 success, 1 configuration error (nothing written), 2 runtime failure.

#include "snbv/experiment.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace snbv;

namespace {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    std::vector<std::uint64_t> scene_seeds{7};
    std::string scene_file;
    int objects = 7;
    double difficulty = 0.5;
    std::vector<std::string> policies{"ours"};
    std::vector<std::uint64_t> seeds{1};
    int init_views = 4;
    int add_views = 6;
    int image_size = 64;
    int candidates_spiral = 48;
    int candidates_random = 16;
    int target_object = 0;
    double beta_d = 10.0;
    double beta_o = 1.0;
    double alpha_obj = 0.3;
    double alpha_opa = 0.3;
    double ridge = 1e-6;
    double radius = 3.2;
    int test_views = 8;
    int final_iters = 3000;
    int iters_per_view = 100;
    int min_views = 5;
    int max_views = 12;
    std::string out = "snbv_out";
    bool save_images = false;
    bool save_map = false;
    std::string load_map;
};

void add_options(CLI::App& app, Options& o) {
    app.add_option("--scene-seed", o.scene_seeds, "generator seed(s) for synthetic scenes")->delimiter(',');
    app.add_option("--scene-file", o.scene_file, "scene JSON (overrides --scene-seed)");
    app.add_option("--objects", o.objects, "objects per generated scene")->check(CLI::Range(2, 12));
    app.add_option("--difficulty", o.difficulty, "generator overlap/stacking level")->check(CLI::Range(0.0, 1.0));
    app.add_option("--policy", o.policies, "ours, fisherrf, random, spiral, fps")->delimiter(',');
    app.add_option("--seeds", o.seeds, "run seeds")->delimiter(',');
    app.add_option("--init-views", o.init_views)->check(CLI::PositiveNumber);
    app.add_option("--add-views", o.add_views)->check(CLI::NonNegativeNumber);
    app.add_option("--image-size", o.image_size)->check(CLI::Range(8, 1024));
    app.add_option("--candidates-spiral", o.candidates_spiral)->check(CLI::PositiveNumber);
    app.add_option("--candidates-random", o.candidates_random)->check(CLI::NonNegativeNumber);
    app.add_option("--target-object", o.target_object, "object-centric target id (0 = whole scene)")
        ->check(CLI::NonNegativeNumber);
    app.add_option("--beta-d", o.beta_d);
    app.add_option("--beta-o", o.beta_o);
    app.add_option("--alpha-obj", o.alpha_obj);
    app.add_option("--alpha-opa", o.alpha_opa);
    app.add_option("--ridge", o.ridge);
    app.add_option("--radius", o.radius, "candidate sphere radius");
    app.add_option("--test-views", o.test_views)->check(CLI::PositiveNumber);
    app.add_option("--final-iters", o.final_iters)->check(CLI::PositiveNumber);
    app.add_option("--iters-per-view", o.iters_per_view)->check(CLI::PositiveNumber);
    app.add_option("--min-views", o.min_views, "convergence: smallest view count")->check(CLI::PositiveNumber);
    app.add_option("--max-views", o.max_views, "convergence: largest view count")->check(CLI::PositiveNumber);
    app.add_option("--out", o.out, "output directory");
    app.add_flag("--save-images", o.save_images, "dump rendered test views");
    app.add_flag("--save-map", o.save_map, "write final map checkpoints");
    app.add_option("--load-map", o.load_map, "evaluate a saved map instead of running NBV");
    app.set_config("--config", "", "flat key = value file; flags override it");
}

std::string num(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

template <class T>
std::string list_str(const std::vector<T>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        os << (i ? "," : "") << v[i];
    }
    return os.str();
}

/// Effective configuration in the --config file format.
std::string config_echo(const std::string& command, const Options& o) {
    std::ostringstream os;
    os << "# snbv_cli " << command << "\n";
    if (o.scene_file.empty()) {
        os << "scene-seed = " << list_str(o.scene_seeds) << "\n";
    } else {
        os << "scene-file = \"" << o.scene_file << "\"\n";
    }
    os << "objects = " << o.objects << "\ndifficulty = " << num(o.difficulty) << "\npolicy = " << list_str(o.policies)
       << "\nseeds = " << list_str(o.seeds) << "\ninit-views = " << o.init_views << "\nadd-views = " << o.add_views
       << "\nimage-size = " << o.image_size << "\ncandidates-spiral = " << o.candidates_spiral
       << "\ncandidates-random = " << o.candidates_random << "\ntarget-object = " << o.target_object
       << "\nbeta-d = " << num(o.beta_d) << "\nbeta-o = " << num(o.beta_o) << "\nalpha-obj = " << o.alpha_obj
       << "\nalpha-opa = " << num(o.alpha_opa) << "\nridge = " << num(o.ridge) << "\nradius = " << o.radius
       << "\ntest-views = " << o.test_views << "\nfinal-iters = " << o.final_iters
       << "\niters-per-view = " << o.iters_per_view << "\nmin-views = " << o.min_views
       << "\nmax-views = " << o.max_views << "\nout = \"" << o.out << "\"\nsave-images = " << std::boolalpha
       << o.save_images << "\nsave-map = " << o.save_map << "\n";
    if (!o.load_map.empty()) {
        os << "load-map = \"" << o.load_map << "\"\n";
    }
    return os.str();
}

RunConfig make_run_config(const Options& o) {
    RunConfig rc;
    rc.nbv.beta_d = o.beta_d;
    rc.nbv.beta_o = o.beta_o;
    rc.nbv.alpha_obj = o.alpha_obj;
    rc.nbv.alpha_opa = o.alpha_opa;
    rc.nbv.ridge = o.ridge;
    rc.nbv.init_views = o.init_views;
    rc.nbv.add_views = o.add_views;
    rc.intrinsics = Intrinsics{o.image_size, o.image_size, 50.0};
    rc.n_spiral = o.candidates_spiral;
    rc.n_random = o.candidates_random;
    rc.radius = o.radius;
    rc.n_test = o.test_views;
    rc.train.final_iters = o.final_iters;
    rc.train.iters_per_view = o.iters_per_view;
    rc.keep_renders = o.save_images;
    return rc;
}

std::vector<SceneSource> load_scenes(const Options& o, bool corner_layout) {
    std::vector<SceneSource> scenes;
    try {
        if (!o.scene_file.empty()) {
            scenes.push_back({fs::path(o.scene_file).stem().string(), load_scene(o.scene_file), 0});
        } else {
            if (o.scene_seeds.empty()) {
                throw ConfigError("at least one scene seed is required");
            }
            for (auto s : o.scene_seeds) {
                scenes.push_back({"scene" + std::to_string(s),
                                  generate_scene(s, corner_layout ? std::max(o.objects, 4) : o.objects,
                                                 o.difficulty, corner_layout),
                                  s});
            }
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    return scenes;
}

std::vector<Policy> parse_policies(const Options& o) {
    std::vector<Policy> out;
    for (const auto& name : o.policies) {
        const auto p = parse_policy(name);
        if (!p) {
            throw ConfigError("unknown policy '" + name + "'");
        }
        out.push_back(*p);
    }
    if (out.empty()) {
        throw ConfigError("at least one policy is required");
    }
    return out;
}

void validate_common(const Options& o, const RunConfig& rc, const std::vector<SceneSource>& scenes) {
    if (o.seeds.empty()) {
        throw ConfigError("at least one seed is required");
    }
    try {
        rc.nbv.validate(static_cast<std::size_t>(rc.n_spiral + rc.n_random));
        if (rc.nbv.init_views > rc.n_spiral) {
            throw std::invalid_argument("init_views exceeds the spiral ring");
        }
        for (const auto& s : scenes) {
            if (!(rc.radius > s.scene.bounds().extent().norm() * 0.5)) {
                throw std::invalid_argument("candidate radius must exceed the scene extent");
            }
            if (o.target_object > s.scene.n_objects) {
                throw UnknownTarget(o.target_object);
            }
        }
        thread_budget();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw Error("cannot write " + path.string());
    }
    os << text;
}

fs::path prepare_out(const Options& o, const std::string& command, const std::vector<SceneSource>& scenes) {
    const fs::path dir(o.out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
    }
    write_text(dir / "config.txt", config_echo(command, o));
    if (scenes.size() == 1) {
        write_text(dir / "scene.json", scene_to_json(scenes[0].scene).dump(2) + "\n");
    } else {
        for (const auto& s : scenes) {
            write_text(dir / (s.label + ".json"), scene_to_json(s.scene).dump(2) + "\n");
        }
    }
    return dir;
}

void save_artifacts(const fs::path& dir, const Options& o, const RunConfig& rc, const std::vector<SceneSource>& scenes,
                    const std::vector<JobResult>& results) {
    write_text(dir / "gains.json", results_json(scenes, results).dump(1) + "\n");
    if (o.save_images) {
        write_images(dir / "images", scenes, results, rc);
    }
    if (o.save_map) {
        fs::create_directories(dir / "maps");
        for (const auto& r : results) {
            for (const auto& ev : r.record.evaluations) {
                save_map((dir / "maps" /
                          (job_label(scenes[r.job.scene_index], r.job) + "_v" + std::to_string(ev.views) + ".snbv"))
                             .string(),
                         ev.map);
            }
        }
    }
}

/// Metrics of a stored map on each scene's test views.
int evaluate_loaded(const Options& o, const RunConfig& rc,
                    const std::vector<SceneSource>& scenes) {
    GaussianMap map;
    try {
        map = load_map(o.load_map);
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    const fs::path dir = prepare_out(o, "run", scenes);
    std::ostringstream csv;
    csv << kMetricsHeader;
    for (const auto& s : scenes) {
        if (map.n_objects != s.scene.n_objects) {
            throw ConfigError("map object count does not match the scene");
        }
        RunConfig r = rc;
        r.view_seed = s.view_seed;
        const RunContext ctx = make_context(s.scene, r, rc.nbv.init_views + rc.nbv.add_views);
        const Evaluation ev = evaluate(map, ctx, s.scene.n_objects, false);
        csv << s.label << ",loaded,,,," << fmt(ev.mean.psnr) << ',' << fmt(ev.mean.ssim) << ','
            << fmt(ev.mean.depth_mae) << ',' << ev.gaussians << ",,\n";
    }
    write_text(dir / "metrics.csv", csv.str());
    return 0;
}

int cmd_run(const Options& o) {
    const auto scenes = load_scenes(o, false);
    RunConfig rc = make_run_config(o);
    validate_common(o, rc, scenes);
    if (!o.load_map.empty()) {
        return evaluate_loaded(o, rc, scenes);
    }
    const auto policies = parse_policies(o);
    std::vector<Job> jobs;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        for (Policy p : policies) {
            for (auto seed : o.seeds) {
                jobs.push_back({s, p, seed, o.target_object ? std::optional<int>(o.target_object) : std::nullopt});
            }
        }
    }
    const fs::path dir = prepare_out(o, "run", scenes);
    const auto results = run_jobs(scenes, jobs, rc, thread_budget());
    std::ostringstream csv;
    csv << kMetricsHeader;
    write_metrics_rows(csv, scenes, results);
    write_text(dir / "metrics.csv", csv.str());
    save_artifacts(dir, o, rc, scenes, results);
    std::cout << csv.str();
    return 0;
}

int cmd_object_study(const Options& o) {
    const auto scenes = load_scenes(o, true);
    RunConfig rc = make_run_config(o);
    validate_common(o, rc, scenes);
    for (const auto& s : scenes) {
        if (s.scene.n_objects < kCornerObjects) {
            throw ConfigError("object study needs at least 4 objects");
        }
    }
    const auto policies = parse_policies(o);
    if (policies.size() != 1) {
        throw ConfigError("object study takes exactly one policy");
    }
    const auto jobs = object_study_jobs(scenes.size(), o.seeds, policies.front());
    const fs::path dir = prepare_out(o, "object-study", scenes);
    const auto results = run_jobs(scenes, jobs, rc, thread_budget());
    std::vector<ObjectRow> rows;
    for (const auto& r : results) {
        rows.push_back(object_row(scenes[r.job.scene_index], r));
    }
    std::ostringstream table;
    write_object_rows(table, rows);
    write_text(dir / "objects.csv", table.str());
    std::ostringstream mean;
    write_object_rows(mean, mean_object_rows(rows));
    write_text(dir / "objects_mean.csv", mean.str());
    std::ostringstream csv;
    csv << kMetricsHeader;
    write_metrics_rows(csv, scenes, results);
    write_text(dir / "metrics.csv", csv.str());
    save_artifacts(dir, o, rc, scenes, results);
    const CornerComparison c = compare_corners(rows);
    std::cout << mean.str() << "corner cells improved by own target: " << c.wins << "/" << c.cells
              << " (mean reduction " << fmt(100.0 * c.mean_reduction) << "%)\n";
    return 0;
}

int cmd_convergence(const Options& o) {
    const auto scenes = load_scenes(o, false);
    Options adj = o;
    if (o.min_views < o.init_views || o.max_views < o.min_views) {
        throw ConfigError("need init_views <= min_views <= max_views");
    }
    adj.add_views = o.max_views - o.init_views;
    RunConfig rc = make_run_config(adj);
    for (int k = o.min_views; k <= o.max_views; ++k) {
        rc.eval_counts.push_back(k);
    }
    validate_common(adj, rc, scenes);
    const auto policies = parse_policies(o);
    std::vector<Job> jobs;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        for (Policy p : policies) {
            for (auto seed : o.seeds) {
                jobs.push_back({s, p, seed, o.target_object ? std::optional<int>(o.target_object) : std::nullopt});
            }
        }
    }
    const fs::path dir = prepare_out(adj, "convergence", scenes);
    const auto results = run_jobs(scenes, jobs, rc, thread_budget());
    std::ostringstream csv;
    csv << kMetricsHeader;
    write_metrics_rows(csv, scenes, results);
    write_text(dir / "curve.csv", csv.str());
    save_artifacts(dir, o, rc, scenes, results);
    std::cout << csv.str();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Object-aware next-best-view experiments on synthetic scenes"};
    app.require_subcommand(1);
    Options o;
    add_options(app, o);
    CLI::App* run = app.add_subcommand("run", "policy x seed sweep with final metrics")->fallthrough();
    CLI::App* study = app.add_subcommand("object-study", "whole-scene vs per-corner-object NBV")->fallthrough();
    app.add_subcommand("convergence", "metrics as a function of view count")->fallthrough();
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    try {
        if (run->parsed()) {
            return cmd_run(o);
        }
        if (study->parsed()) {
            if (app.get_option("--objects")->count() == 0) {
                o.objects = 6;
            }
            return cmd_object_study(o);
        }
        return cmd_convergence(o);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
